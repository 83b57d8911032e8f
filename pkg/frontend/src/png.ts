/**
 * Minimal PNG codec for mask transport.
 *
 * Masks are exported as 8-bit grayscale PNGs holding only 0 and 255, using
 * stored (uncompressed) deflate blocks. That keeps the bytes deterministic
 * across browsers and makes the server's >127 decode threshold lossless.
 * The decoder only accepts this same stored-deflate subset; for arbitrary
 * PNGs (like server results) only the dimensions are parsed.
 */

import type { Raster } from "./raster.js";

const SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(bytes: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < bytes.length; i++) {
    c = CRC_TABLE[(c ^ bytes[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

function adler32(bytes: Uint8Array): number {
  let a = 1;
  let b = 0;
  for (let i = 0; i < bytes.length; i++) {
    a = (a + bytes[i]) % 65521;
    b = (b + a) % 65521;
  }
  return ((b << 16) | a) >>> 0;
}

function u32be(value: number): Uint8Array {
  return new Uint8Array([(value >>> 24) & 0xff, (value >>> 16) & 0xff, (value >>> 8) & 0xff, value & 0xff]);
}

function chunk(type: string, data: Uint8Array): Uint8Array {
  const typeBytes = new TextEncoder().encode(type);
  const body = new Uint8Array(typeBytes.length + data.length);
  body.set(typeBytes);
  body.set(data, typeBytes.length);
  const out = new Uint8Array(4 + body.length + 4);
  out.set(u32be(data.length));
  out.set(body, 4);
  out.set(u32be(crc32(body)), 4 + body.length);
  return out;
}

function zlibStored(raw: Uint8Array): Uint8Array {
  const blocks: Uint8Array[] = [new Uint8Array([0x78, 0x01])];
  const MAX = 0xffff;
  let offset = 0;
  do {
    const len = Math.min(MAX, raw.length - offset);
    const final = offset + len >= raw.length ? 1 : 0;
    const header = new Uint8Array(5);
    header[0] = final;
    header[1] = len & 0xff;
    header[2] = (len >>> 8) & 0xff;
    header[3] = ~len & 0xff;
    header[4] = (~len >>> 8) & 0xff;
    blocks.push(header, raw.subarray(offset, offset + len));
    offset += len;
  } while (offset < raw.length);
  blocks.push(u32be(adler32(raw)));
  return concat(blocks);
}

function concat(parts: Uint8Array[]): Uint8Array {
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let o = 0;
  for (const p of parts) {
    out.set(p, o);
    o += p.length;
  }
  return out;
}

function ihdr(width: number, height: number, colorType: number): Uint8Array {
  const data = new Uint8Array(13);
  data.set(u32be(width));
  data.set(u32be(height), 4);
  data[8] = 8; // bit depth
  data[9] = colorType;
  return data;
}

/** Encode a binary raster as a pure 0/255 grayscale PNG. */
export function encodeMaskPng(raster: Raster): Uint8Array {
  const { width, height, data } = raster;
  const raw = new Uint8Array(height * (width + 1));
  for (let y = 0; y < height; y++) {
    const row = y * (width + 1);
    raw[row] = 0; // filter: none
    for (let x = 0; x < width; x++) {
      raw[row + 1 + x] = data[y * width + x] ? 255 : 0;
    }
  }
  return concat([
    new Uint8Array(SIGNATURE),
    chunk("IHDR", ihdr(width, height, 0)),
    chunk("IDAT", zlibStored(raw)),
    chunk("IEND", new Uint8Array(0)),
  ]);
}

/** Encode an RGB buffer (row-major, 3 bytes per pixel). */
export function encodeRgbPng(width: number, height: number, rgb: Uint8Array): Uint8Array {
  if (rgb.length !== width * height * 3) {
    throw new Error(`rgb buffer has ${rgb.length} bytes, expected ${width * height * 3}`);
  }
  const stride = width * 3;
  const raw = new Uint8Array(height * (stride + 1));
  for (let y = 0; y < height; y++) {
    const row = y * (stride + 1);
    raw[row] = 0;
    raw.set(rgb.subarray(y * stride, (y + 1) * stride), row + 1);
  }
  return concat([
    new Uint8Array(SIGNATURE),
    chunk("IHDR", ihdr(width, height, 2)),
    chunk("IDAT", zlibStored(raw)),
    chunk("IEND", new Uint8Array(0)),
  ]);
}

function checkSignature(bytes: Uint8Array): void {
  for (let i = 0; i < SIGNATURE.length; i++) {
    if (bytes[i] !== SIGNATURE[i]) throw new Error("not a PNG");
  }
}

function readU32be(bytes: Uint8Array, at: number): number {
  return ((bytes[at] << 24) | (bytes[at + 1] << 16) | (bytes[at + 2] << 8) | bytes[at + 3]) >>> 0;
}

/** Width/height of any PNG (IHDR is always the first chunk). */
export function parsePngDims(bytes: Uint8Array): { width: number; height: number } {
  checkSignature(bytes);
  const type = new TextDecoder().decode(bytes.subarray(12, 16));
  if (type !== "IHDR") throw new Error("missing IHDR");
  return { width: readU32be(bytes, 16), height: readU32be(bytes, 20) };
}

function inflateStored(z: Uint8Array): Uint8Array {
  let at = 2; // skip the zlib header
  const parts: Uint8Array[] = [];
  for (;;) {
    const head = z[at];
    const btype = (head >>> 1) & 3;
    if (btype !== 0) throw new Error("only stored deflate blocks are supported");
    const len = z[at + 1] | (z[at + 2] << 8);
    parts.push(z.subarray(at + 5, at + 5 + len));
    at += 5 + len;
    if (head & 1) break;
  }
  const raw = concat(parts);
  const expected = readU32be(z, at);
  if (adler32(raw) !== expected) throw new Error("zlib checksum mismatch");
  return raw;
}

/** Decode a mask PNG produced by encodeMaskPng back to a 0/1 raster. */
export function decodeMaskPng(bytes: Uint8Array): Raster {
  checkSignature(bytes);
  let at = 8;
  let width = 0;
  let height = 0;
  const idat: Uint8Array[] = [];
  while (at < bytes.length) {
    const len = readU32be(bytes, at);
    const type = new TextDecoder().decode(bytes.subarray(at + 4, at + 8));
    const data = bytes.subarray(at + 8, at + 8 + len);
    if (type === "IHDR") {
      width = readU32be(data, 0);
      height = readU32be(data, 4);
      if (data[8] !== 8 || data[9] !== 0 || data[12] !== 0) {
        throw new Error("expected 8-bit non-interlaced grayscale");
      }
    } else if (type === "IDAT") {
      idat.push(data);
    } else if (type === "IEND") {
      break;
    }
    at += 12 + len;
  }
  const raw = inflateStored(concat(idat));
  const out = { width, height, data: new Uint8Array(width * height) };
  for (let y = 0; y < height; y++) {
    const row = y * (width + 1);
    if (raw[row] !== 0) throw new Error("unsupported PNG row filter");
    for (let x = 0; x < width; x++) {
      out.data[y * width + x] = raw[row + 1 + x] > 127 ? 1 : 0;
    }
  }
  return out;
}
