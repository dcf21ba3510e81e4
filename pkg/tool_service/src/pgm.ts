/** Binary PGM (P5, maxval 255) parsing and serialization. */

export interface GrayImage {
  width: number;
  height: number;
  pixels: Uint8Array; // row-major
}

export function parsePgm(data: Buffer): GrayImage {
  if (data.length < 2 || data[0] !== 0x50 || data[1] !== 0x35) {
    throw new Error('not a binary PGM (P5) file');
  }
  const tokens: string[] = [];
  let pos = 2;
  while (tokens.length < 3) {
    while (pos < data.length && isWhitespace(data[pos])) pos += 1;
    if (pos < data.length && data[pos] === 0x23 /* # */) {
      while (pos < data.length && data[pos] !== 0x0a) pos += 1;
      continue;
    }
    const start = pos;
    while (pos < data.length && !isWhitespace(data[pos])) pos += 1;
    if (start === pos) throw new Error('truncated PGM header');
    tokens.push(data.subarray(start, pos).toString('ascii'));
  }
  pos += 1; // single whitespace byte after maxval
  const [width, height, maxval] = tokens.map((t) => Number.parseInt(t, 10));
  if (!Number.isFinite(width) || !Number.isFinite(height) || maxval !== 255) {
    throw new Error('malformed PGM header');
  }
  const body = data.subarray(pos, pos + width * height);
  if (body.length !== width * height) {
    throw new Error(`PGM body has ${body.length} bytes, expected ${width * height}`);
  }
  return { width, height, pixels: new Uint8Array(body) };
}

export function serializePgm(image: GrayImage): Buffer {
  const header = Buffer.from(`P5\n${image.width} ${image.height}\n255\n`, 'ascii');
  return Buffer.concat([header, Buffer.from(image.pixels)]);
}

function isWhitespace(byte: number): boolean {
  return byte === 0x20 || byte === 0x09 || byte === 0x0a || byte === 0x0d;
}
