// Client-side mirror of the server's edit semantics.
//
// The canvas preview and the server must produce the same pixels from the
// same edit list, so every operation here follows the server's exact
// integer arithmetic: strokes use an exact integer point-to-segment
// distance predicate, and alpha compositing rounds half up.

import type { Edit, StrokeEdit } from "./types.js";

export interface RawImage {
  width: number;
  height: number;
  data: Uint8ClampedArray | Uint8Array; // RGBA, row-major
}

export function cloneImage(img: RawImage): RawImage {
  return { width: img.width, height: img.height, data: img.data.slice() };
}

function cropImage(img: RawImage, x: number, y: number, w: number, h: number): RawImage {
  if (w < 1 || h < 1 || x < 0 || y < 0 || x + w > img.width || y + h > img.height) {
    throw new Error(`crop (${x},${y},${w},${h}) does not fit ${img.width}x${img.height}`);
  }
  const out = new Uint8ClampedArray(w * h * 4);
  for (let row = 0; row < h; row++) {
    const src = ((y + row) * img.width + x) * 4;
    out.set(img.data.subarray(src, src + w * 4), row * w * 4);
  }
  return { width: w, height: h, data: out };
}

function flipImage(img: RawImage): RawImage {
  const { width, height } = img;
  const out = new Uint8ClampedArray(img.data.length);
  for (let row = 0; row < height; row++) {
    for (let col = 0; col < width; col++) {
      const src = (row * width + (width - 1 - col)) * 4;
      const dst = (row * width + col) * 4;
      out[dst] = img.data[src];
      out[dst + 1] = img.data[src + 1];
      out[dst + 2] = img.data[src + 2];
      out[dst + 3] = img.data[src + 3];
    }
  }
  return { width, height, data: out };
}

// Exact integer predicate: distance(point, segment) <= radius.
function withinSegment(
  px: number,
  py: number,
  x1: number,
  y1: number,
  x2: number,
  y2: number,
  r2: number,
): boolean {
  const abx = x2 - x1;
  const aby = y2 - y1;
  const apx = px - x1;
  const apy = py - y1;
  const len2 = abx * abx + aby * aby;
  if (len2 === 0) return apx * apx + apy * apy <= r2;
  const tNum = apx * abx + apy * aby;
  if (tNum <= 0) return apx * apx + apy * apy <= r2;
  if (tNum >= len2) {
    const bpx = px - x2;
    const bpy = py - y2;
    return bpx * bpx + bpy * bpy <= r2;
  }
  const ap2 = apx * apx + apy * apy;
  return ap2 * len2 - tNum * tNum <= r2 * len2;
}

function strokeImage(img: RawImage, edit: StrokeEdit): RawImage {
  const out = cloneImage(img);
  const [r, g, b] = edit.color;
  const r2 = edit.radius * edit.radius;
  const points = edit.points.length === 1 ? [edit.points[0], edit.points[0]] : edit.points;
  for (let s = 0; s + 1 < points.length; s++) {
    const [x1, y1] = points[s];
    const [x2, y2] = points[s + 1];
    const xLo = Math.max(0, Math.min(x1, x2) - edit.radius);
    const xHi = Math.min(img.width - 1, Math.max(x1, x2) + edit.radius);
    const yLo = Math.max(0, Math.min(y1, y2) - edit.radius);
    const yHi = Math.min(img.height - 1, Math.max(y1, y2) + edit.radius);
    for (let py = yLo; py <= yHi; py++) {
      for (let px = xLo; px <= xHi; px++) {
        if (withinSegment(px, py, x1, y1, x2, y2, r2)) {
          const i = (py * img.width + px) * 4;
          out.data[i] = r;
          out.data[i + 1] = g;
          out.data[i + 2] = b;
          out.data[i + 3] = 255; // paint is opaque
        }
      }
    }
  }
  return out;
}

export function applyEdits(img: RawImage, edits: Edit[]): RawImage {
  let current = img;
  for (const edit of edits) {
    if (edit.op === "crop") {
      current = cropImage(current, edit.x, edit.y, edit.w, edit.h);
    } else if (edit.op === "flip") {
      current = flipImage(current);
    } else {
      current = strokeImage(current, edit);
    }
  }
  return current;
}

// RGBA over a white background; matches the server's integer rounding.
export function compositeOverWhite(img: RawImage): RawImage {
  const out = cloneImage(img);
  for (let i = 0; i < out.data.length; i += 4) {
    const a = img.data[i + 3];
    for (let c = 0; c < 3; c++) {
      out.data[i + c] = Math.floor((img.data[i + c] * a + 255 * (255 - a) + 127) / 255);
    }
    out.data[i + 3] = 255;
  }
  return out;
}

export function clampCropToBounds(
  img: RawImage,
  x: number,
  y: number,
  w: number,
  h: number,
): { x: number; y: number; w: number; h: number } | null {
  const x0 = Math.max(0, Math.min(Math.round(x), img.width - 1));
  const y0 = Math.max(0, Math.min(Math.round(y), img.height - 1));
  const x1 = Math.max(0, Math.min(Math.round(x + w), img.width));
  const y1 = Math.max(0, Math.min(Math.round(y + h), img.height));
  if (x1 - x0 < 1 || y1 - y0 < 1) return null;
  return { x: x0, y: y0, w: x1 - x0, h: y1 - y0 };
}
