/**
 * Wire protocol types for tool agents.
 *
 * Mirrors the engine's ToolRequest/ToolResponse JSON exactly: a request
 * carries ordered inputs (the first entry is the step's object artifact)
 * whose payloads are either inline base64 or a file path on a shared
 * volume; a response echoes the request_id and reports ok/error.
 */
import { readFileSync } from 'node:fs';
import { z } from 'zod';

export const PayloadSchema = z
  .object({
    inline_base64: z.string().optional(),
    path: z.string().optional(),
  })
  .strict()
  .refine(
    (p) => (p.inline_base64 === undefined) !== (p.path === undefined),
    { message: 'payload needs exactly one of inline_base64 or path' },
  );

export const ToolArtifactSchema = z
  .object({
    name: z.string().min(1),
    type: z.string().min(1),
    payload: PayloadSchema,
  })
  .strict();

export const ToolRequestSchema = z
  .object({
    request_id: z.string().min(1),
    tool_id: z.string().min(1),
    action: z.string().min(1),
    inputs: z.array(ToolArtifactSchema).min(1),
    params: z.record(z.unknown()).default({}),
  })
  .strict();

export type Payload = z.infer<typeof PayloadSchema>;
export type ToolArtifact = z.infer<typeof ToolArtifactSchema>;
export type ToolRequest = z.infer<typeof ToolRequestSchema>;

export interface EvidenceRef {
  kind: 'mask-file' | 'crop-region' | 'text-excerpt' | 'numeric-trace';
  locator: string;
  description: string;
}

export interface ToolResponse {
  request_id: string;
  status: 'ok' | 'error';
  outputs: ToolArtifact[];
  confidence: number | null;
  message: string | null;
  evidence: EvidenceRef[];
}

export function okResponse(
  requestId: string,
  outputs: ToolArtifact[],
  evidence: EvidenceRef[] = [],
): ToolResponse {
  return {
    request_id: requestId,
    status: 'ok',
    outputs,
    confidence: null,
    message: null,
    evidence,
  };
}

export function errorResponse(requestId: string, message: string): ToolResponse {
  return {
    request_id: requestId,
    status: 'error',
    outputs: [],
    confidence: null,
    message,
    evidence: [],
  };
}

export function inlinePayload(data: Buffer): Payload {
  return { inline_base64: data.toString('base64') };
}

export function readPayload(payload: Payload): Buffer {
  if (payload.inline_base64 !== undefined) {
    return Buffer.from(payload.inline_base64, 'base64');
  }
  // Path payloads assume a shared volume with the caller.
  return readFileSync(payload.path as string);
}
