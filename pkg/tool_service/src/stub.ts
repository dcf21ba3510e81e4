/**
 * Stub tool implementations behind the invoke protocol.
 *
 * Segmentation is a pure intensity threshold over the grayscale fundus:
 * pixels at or above cup_threshold become label 2 (cup), at or above
 * disc_threshold label 1 (disc), everything else 0. VQA returns canned
 * answers matched by question substring. The point is a bit-exact,
 * stateless protocol peer, not model quality.
 */
import { parsePgm, serializePgm } from './pgm.js';
import {
  ToolRequest,
  ToolResponse,
  errorResponse,
  inlinePayload,
  okResponse,
  readPayload,
} from './protocol.js';

export interface StubConfig {
  disc_threshold: number;
  cup_threshold: number;
  /** canned answer per lowercase question-substring key */
  vqa_answers: Record<string, string>;
  default_answer: string;
}

export const DEFAULT_CONFIG: StubConfig = {
  disc_threshold: 128,
  cup_threshold: 200,
  vqa_answers: {
    hemorrhage: 'No hemorrhage is visible on the optic disc.',
    atrophy: 'No atrophy is seen; the peripapillary region appears normal.',
  },
  default_answer: 'Image quality too poor to assess.',
};

export function validateConfig(config: StubConfig): void {
  const { disc_threshold: disc, cup_threshold: cup } = config;
  if (!(disc > 0 && disc < 255 && cup > 0 && cup < 255)) {
    throw new Error('thresholds must lie in (0, 255)');
  }
  if (cup <= disc) {
    throw new Error('cup_threshold must exceed disc_threshold');
  }
  if (Object.keys(config.vqa_answers).length === 0) {
    throw new Error('vqa_answers must be nonempty');
  }
  for (const text of Object.values(config.vqa_answers)) {
    if (!text) throw new Error('canned answers must be nonempty');
  }
}

function segmentCupDisc(request: ToolRequest, config: StubConfig): ToolResponse {
  const image = parsePgm(readPayload(request.inputs[0].payload));
  const labels = new Uint8Array(image.pixels.length);
  for (let i = 0; i < image.pixels.length; i += 1) {
    const value = image.pixels[i];
    labels[i] = value >= config.cup_threshold ? 2 : value >= config.disc_threshold ? 1 : 0;
  }
  const mask = serializePgm({ width: image.width, height: image.height, pixels: labels });
  return okResponse(
    request.request_id,
    [{ name: 'mask', type: 'mask-2d', payload: inlinePayload(mask) }],
    [
      {
        kind: 'numeric-trace',
        locator: `disc_threshold=${config.disc_threshold} cup_threshold=${config.cup_threshold}`,
        description: 'intensity thresholds used for cup/disc labeling',
      },
    ],
  );
}

function answerQuestion(request: ToolRequest, config: StubConfig): ToolResponse {
  const question = String(request.params['question'] ?? '').toLowerCase();
  let answer = config.default_answer;
  for (const [key, text] of Object.entries(config.vqa_answers)) {
    if (question.includes(key.toLowerCase())) {
      answer = text;
      break;
    }
  }
  return okResponse(
    request.request_id,
    [{ name: 'answer', type: 'text', payload: inlinePayload(Buffer.from(answer, 'utf-8')) }],
    [{ kind: 'text-excerpt', locator: answer, description: 'canned vqa answer' }],
  );
}

export function handleInvoke(request: ToolRequest, config: StubConfig): ToolResponse {
  try {
    switch (request.action) {
      case 'segment_cup_disc':
        return segmentCupDisc(request, config);
      case 'vqa':
      case 'query':
        return answerQuestion(request, config);
      default:
        return errorResponse(request.request_id, `unknown action: ${request.action}`);
    }
  } catch (err) {
    return errorResponse(request.request_id, err instanceof Error ? err.message : String(err));
  }
}
