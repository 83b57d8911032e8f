/**
 * Binary mask rasters and brush operations.
 *
 * Rasters are row-major Uint8Arrays holding 0/1. All drawing clamps to the
 * canvas bounds, so strokes near edges never throw.
 */

export interface Raster {
  width: number;
  height: number;
  data: Uint8Array;
}

export function createRaster(width: number, height: number): Raster {
  return { width, height, data: new Uint8Array(width * height) };
}

export function cloneRaster(r: Raster): Raster {
  return { width: r.width, height: r.height, data: new Uint8Array(r.data) };
}

export function rasterEquals(a: Raster, b: Raster): boolean {
  if (a.width !== b.width || a.height !== b.height) return false;
  for (let i = 0; i < a.data.length; i++) {
    if (a.data[i] !== b.data[i]) return false;
  }
  return true;
}

export function fillRaster(r: Raster, value: 0 | 1): void {
  r.data.fill(value);
}

export function countOn(r: Raster): number {
  let n = 0;
  for (let i = 0; i < r.data.length; i++) n += r.data[i];
  return n;
}

/** Paint a filled circle; value 1 draws, 0 erases. */
export function stampCircle(
  r: Raster,
  cx: number,
  cy: number,
  radius: number,
  value: 0 | 1,
): void {
  const r2 = radius * radius;
  const y0 = Math.max(0, Math.floor(cy - radius));
  const y1 = Math.min(r.height - 1, Math.ceil(cy + radius));
  const x0 = Math.max(0, Math.floor(cx - radius));
  const x1 = Math.min(r.width - 1, Math.ceil(cx + radius));
  for (let y = y0; y <= y1; y++) {
    for (let x = x0; x <= x1; x++) {
      const dx = x - cx;
      const dy = y - cy;
      if (dx * dx + dy * dy <= r2) r.data[y * r.width + x] = value;
    }
  }
}

/** Dense circle stamps along a segment so fast pointer moves leave no gaps. */
export function strokeLine(
  r: Raster,
  x0: number,
  y0: number,
  x1: number,
  y1: number,
  radius: number,
  value: 0 | 1,
): void {
  const dist = Math.hypot(x1 - x0, y1 - y0);
  const steps = Math.max(1, Math.ceil(dist / Math.max(1, radius / 2)));
  for (let i = 0; i <= steps; i++) {
    const t = i / steps;
    stampCircle(r, x0 + (x1 - x0) * t, y0 + (y1 - y0) * t, radius, value);
  }
}

export function fillRect(
  r: Raster,
  left: number,
  top: number,
  width: number,
  height: number,
  value: 0 | 1,
): void {
  const x1 = Math.min(r.width, left + width);
  const y1 = Math.min(r.height, top + height);
  for (let y = Math.max(0, top); y < y1; y++) {
    for (let x = Math.max(0, left); x < x1; x++) {
      r.data[y * r.width + x] = value;
    }
  }
}
