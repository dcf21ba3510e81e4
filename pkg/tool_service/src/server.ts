/**
 * HTTP server: POST /v1/invoke plus the GET /healthz probe.
 *
 * Stateless: identical requests yield identical responses. Malformed
 * bodies (bad JSON or schema violations) return 400; unknown actions
 * return an error-status ToolResponse with 200.
 */
import { readFileSync } from 'node:fs';
import { createServer, IncomingMessage, Server, ServerResponse } from 'node:http';

import { ToolRequestSchema } from './protocol.js';
import { DEFAULT_CONFIG, StubConfig, handleInvoke, validateConfig } from './stub.js';

function readBody(request: IncomingMessage): Promise<Buffer> {
  return new Promise((resolve, reject) => {
    const chunks: Buffer[] = [];
    request.on('data', (chunk) => chunks.push(chunk));
    request.on('end', () => resolve(Buffer.concat(chunks)));
    request.on('error', reject);
  });
}

function sendJson(response: ServerResponse, status: number, body: unknown): void {
  const payload = Buffer.from(JSON.stringify(body), 'utf-8');
  response.writeHead(status, {
    'content-type': 'application/json',
    'content-length': payload.length,
  });
  response.end(payload);
}

export function createToolServer(config: StubConfig = DEFAULT_CONFIG): Server {
  validateConfig(config);
  return createServer(async (request, response) => {
    try {
      if (request.method === 'GET' && request.url === '/healthz') {
        response.writeHead(200, { 'content-type': 'text/plain' });
        response.end('ok');
        return;
      }
      if (request.method === 'POST' && request.url === '/v1/invoke') {
        const raw = await readBody(request);
        let parsed: unknown;
        try {
          parsed = JSON.parse(raw.toString('utf-8'));
        } catch {
          sendJson(response, 400, { error: { type: 'SchemaError', message: 'malformed JSON body' } });
          return;
        }
        const result = ToolRequestSchema.safeParse(parsed);
        if (!result.success) {
          sendJson(response, 400, {
            error: { type: 'SchemaError', message: result.error.issues[0]?.message ?? 'invalid request' },
          });
          return;
        }
        sendJson(response, 200, handleInvoke(result.data, config));
        return;
      }
      sendJson(response, 404, { error: { type: 'NotFound', message: `no route ${request.url}` } });
    } catch (err) {
      sendJson(response, 500, {
        error: { type: 'Internal', message: err instanceof Error ? err.message : String(err) },
      });
    }
  });
}

function parseArgs(argv: string[]): { port: number; configPath: string | null } {
  let port = 8184;
  let configPath: string | null = null;
  for (let i = 0; i < argv.length; i += 1) {
    if (argv[i] === '--port' && argv[i + 1]) {
      port = Number.parseInt(argv[i + 1], 10);
      i += 1;
    } else if (argv[i] === '--config' && argv[i + 1]) {
      configPath = argv[i + 1];
      i += 1;
    }
  }
  return { port, configPath };
}

function isMain(): boolean {
  return process.argv[1] !== undefined && import.meta.url.endsWith(process.argv[1].split('/').pop() as string);
}

if (isMain()) {
  const { port, configPath } = parseArgs(process.argv.slice(2));
  const config: StubConfig = configPath
    ? { ...DEFAULT_CONFIG, ...JSON.parse(readFileSync(configPath, 'utf-8')) }
    : DEFAULT_CONFIG;
  const server = createToolServer(config);
  server.listen(port, '127.0.0.1', () => {
    console.log(`reference tool service listening on 127.0.0.1:${port}`);
  });
}
