// Contract test against the real server: the edit semantics used for the
// on-canvas preview must reproduce, pixel for pixel, what the server
// computes from the same edit list (checked through the echo backend,
// which returns the preprocessed input unchanged).

import { spawn, ChildProcess } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join, dirname } from "node:path";
import { fileURLToPath } from "node:url";
import { PNG } from "pngjs";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { applyEdits, compositeOverWhite, RawImage } from "../src/edits.js";
import type { Edit } from "../src/types.js";

const here = dirname(fileURLToPath(import.meta.url));
const repoRoot = join(here, "..", "..");

const CONFIG = `
title: Contract
inputs:
  - kind: image_in
outputs:
  - kind: image_out
backend:
  mode: builtin_echo
`;

let server: ChildProcess;
let base: string;

async function waitForServer(port: number): Promise<void> {
  const deadline = Date.now() + 15000;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`http://127.0.0.1:${port}/healthz`);
      if (response.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((resolve) => setTimeout(resolve, 100));
  }
  throw new Error("server never became healthy");
}

beforeAll(async () => {
  const dir = mkdtempSync(join(tmpdir(), "webui-contract-"));
  writeFileSync(join(dir, "config.yaml"), CONFIG);
  const port = 17000 + Math.floor(Math.random() * 20000);
  base = `http://127.0.0.1:${port}`;
  server = spawn(
    "python3",
    ["-m", "demoserve", "serve", "--config", join(dir, "config.yaml"), "--port", String(port)],
    {
      cwd: dir,
      env: { ...process.env, PYTHONPATH: join(repoRoot, "src") },
      stdio: ["ignore", "pipe", "pipe"],
    },
  );
  await waitForServer(port);
}, 30000);

afterAll(() => {
  server?.kill("SIGTERM");
});

function randomImage(width: number, height: number, seed: number): RawImage {
  // Small deterministic PRNG so the test is reproducible.
  let state = seed >>> 0;
  const next = () => {
    state = (state * 1664525 + 1013904223) >>> 0;
    return state & 0xff;
  };
  const data = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < data.length; i++) data[i] = next();
  return { width, height, data };
}

function toPngDataUrl(img: RawImage): string {
  const png = new PNG({ width: img.width, height: img.height });
  png.data = Buffer.from(img.data);
  return "data:image/png;base64," + PNG.sync.write(png).toString("base64");
}

function fromPngDataUrl(url: string): RawImage {
  expect(url.startsWith("data:image/png;base64,")).toBe(true);
  const png = PNG.sync.read(Buffer.from(url.split(",")[1], "base64"));
  return { width: png.width, height: png.height, data: new Uint8ClampedArray(png.data) };
}

async function predict(dataUrl: string, edits: Edit[]): Promise<string> {
  const response = await fetch(`${base}/api/predict`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ data: [dataUrl], edits: [edits] }),
  });
  expect(response.status).toBe(200);
  const body = (await response.json()) as { data: string[] };
  return body.data[0];
}

describe("preview/server pixel contract", () => {
  it("paint stroke: server pixels equal the canvas preview pixels", async () => {
    const img = randomImage(40, 30, 7);
    const edits: Edit[] = [
      { op: "stroke", color: [255, 0, 0], radius: 4, points: [[5, 5], [30, 20], [10, 25]] },
    ];
    const serverPixels = fromPngDataUrl(await predict(toPngDataUrl(img), edits));
    const preview = compositeOverWhite(applyEdits(img, edits));
    expect(serverPixels.width).toBe(preview.width);
    expect(serverPixels.height).toBe(preview.height);
    // The server strips alpha (composites to RGB); compare channel-wise.
    expectSameRgb(serverPixels, preview);
  });

  it("crop + flip + stroke pipeline matches exactly", async () => {
    const img = randomImage(64, 48, 99);
    const edits: Edit[] = [
      { op: "crop", x: 8, y: 4, w: 40, h: 36 },
      { op: "flip", axis: "vertical" },
      { op: "stroke", color: [0, 255, 33], radius: 2, points: [[3, 3], [36, 30]] },
    ];
    const serverPixels = fromPngDataUrl(await predict(toPngDataUrl(img), edits));
    const preview = compositeOverWhite(applyEdits(img, edits));
    expect([serverPixels.width, serverPixels.height]).toEqual([40, 36]);
    expectSameRgb(serverPixels, preview);
  });

  it("no edits: the round-tripped image is pixel-identical", async () => {
    const img = randomImage(16, 16, 3);
    // Opaque image: compositing is a no-op, so this isolates transport.
    for (let i = 3; i < img.data.length; i += 4) img.data[i] = 255;
    const serverPixels = fromPngDataUrl(await predict(toPngDataUrl(img), []));
    expectSameRgb(serverPixels, img);
  });

  it("server rejects out-of-bounds crops the preview would reject too", async () => {
    const img = randomImage(10, 10, 1);
    const edits: Edit[] = [{ op: "crop", x: 8, y: 8, w: 5, h: 5 }];
    expect(() => applyEdits(img, edits)).toThrow();
    const response = await fetch(`${base}/api/predict`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ data: [toPngDataUrl(img)], edits: [edits] }),
    });
    expect(response.status).toBe(400);
    const body = (await response.json()) as { error_code: string };
    expect(body.error_code).toBe("edit_bounds");
  });
});

function expectSameRgb(a: RawImage, b: RawImage): void {
  expect(a.width).toBe(b.width);
  expect(a.height).toBe(b.height);
  let mismatches = 0;
  for (let p = 0; p < a.width * a.height; p++) {
    for (let c = 0; c < 3; c++) {
      if (a.data[p * 4 + c] !== b.data[p * 4 + c]) mismatches++;
    }
  }
  expect(mismatches).toBe(0);
}
