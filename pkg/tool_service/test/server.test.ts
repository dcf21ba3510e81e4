import { AddressInfo } from 'node:net';
import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import { serializePgm } from '../src/pgm.js';
import { createToolServer } from '../src/server.js';

let baseUrl = '';
let server: ReturnType<typeof createToolServer>;

beforeAll(async () => {
  server = createToolServer();
  await new Promise<void>((resolve) => server.listen(0, '127.0.0.1', resolve));
  const { port } = server.address() as AddressInfo;
  baseUrl = `http://127.0.0.1:${port}`;
});

afterAll(() => {
  server.close();
});

describe('http surface', () => {
  it('answers the health probe', async () => {
    const response = await fetch(`${baseUrl}/healthz`);
    expect(response.status).toBe(200);
    expect(await response.text()).toBe('ok');
  });

  it('serves a segmentation request end to end', async () => {
    const pixels = new Uint8Array(64 * 64).fill(30);
    for (let i = 20; i < 40; i += 1) {
      for (let j = 20; j < 40; j += 1) pixels[i * 64 + j] = 210;
    }
    const body = {
      request_id: 'wire-1',
      tool_id: 'stub-seg',
      action: 'segment_cup_disc',
      inputs: [
        {
          name: 'fundus',
          type: 'fundus-2d',
          payload: {
            inline_base64: serializePgm({ width: 64, height: 64, pixels }).toString('base64'),
          },
        },
      ],
      params: {},
    };
    const response = await fetch(`${baseUrl}/v1/invoke`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
    });
    expect(response.status).toBe(200);
    const doc = await response.json();
    expect(doc.request_id).toBe('wire-1');
    expect(doc.status).toBe('ok');
    expect(doc.outputs[0].type).toBe('mask-2d');
  });

  it('rejects malformed JSON with 400', async () => {
    const response = await fetch(`${baseUrl}/v1/invoke`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: '{broken',
    });
    expect(response.status).toBe(400);
  });

  it('rejects schema violations with 400', async () => {
    const response = await fetch(`${baseUrl}/v1/invoke`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ request_id: 'x', unexpected: true }),
    });
    expect(response.status).toBe(400);
    const doc = await response.json();
    expect(doc.error.type).toBe('SchemaError');
  });

  it('404s unknown routes', async () => {
    const response = await fetch(`${baseUrl}/v1/unknown`);
    expect(response.status).toBe(404);
  });
});
