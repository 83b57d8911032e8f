/**
 * Integration against a live edit service (spawned by globalSetup): the mask
 * round trip must be lossless and the full drawing-to-result flow must work.
 */

import { readFileSync } from "node:fs";
import { join } from "node:path";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";

import { EditServiceClient, EditServiceError } from "../src/api.js";
import { presentResult } from "../src/main.js";
import { encodeMaskPng, encodeRgbPng } from "../src/png.js";
import { createRaster, fillRect, rasterEquals } from "../src/raster.js";
import {
  addLayer,
  buildSubmission,
  newSession,
  recordSubmission,
} from "../src/session.js";
import { randomScribble } from "./scribble.js";

const here = fileURLToPath(new URL(".", import.meta.url));

function serviceUrl(): string {
  return readFileSync(join(here, ".service-url"), "utf-8").trim();
}

function sourcePng64(): Uint8Array {
  const rgb = new Uint8Array(64 * 64 * 3);
  for (let y = 0; y < 64; y++) {
    for (let x = 0; x < 64; x++) {
      const o = (y * 64 + x) * 3;
      rgb[o] = x * 4;
      rgb[o + 1] = y * 4;
      rgb[o + 2] = ((x ^ y) * 4) & 0xff;
    }
  }
  return encodeRgbPng(64, 64, rgb);
}

describe("mask round trip through the service", () => {
  it("10 random scribbles decode server-side to the drawn raster exactly", async () => {
    const client = new EditServiceClient(serviceUrl());
    for (let seed = 1; seed <= 10; seed++) {
      const drawn = randomScribble(64, 64, seed * 104729);
      const decoded = await client.decodeMask(encodeMaskPng(drawn));
      expect(decoded.width).toBe(64);
      expect(decoded.height).toBe(64);
      expect(rasterEquals(drawn, decoded), `seed ${seed}`).toBe(true);
    }
  });
});

describe("end-to-end UI flow", () => {
  it("draws two overlapping layers, submits, and displays the result", async () => {
    const client = new EditServiceClient(serviceUrl());
    const session = newSession(64, 64);

    const a = addLayer(session);
    a.prompt = "a yellow sun";
    fillRect(a.raster, 8, 8, 24, 24, 1);
    const b = addLayer(session);
    b.prompt = "a sailing boat";
    fillRect(b.raster, 20, 20, 28, 28, 1); // overlaps layer a

    const { masks, request } = buildSubmission(session);
    request.config.steps = 5;
    expect(request.pairs.map((p) => p.order)).toEqual([1, 2]);

    const { id } = await client.submit(sourcePng64(), masks, request);
    const entry = recordSubmission(session, id, request);

    const progress: number[] = [];
    const status = await client.pollUntilDone(
      id,
      (s) => {
        entry.state = s.state;
        progress.push(s.progress.step);
      },
      100,
    );
    expect(status.state).toBe("DONE");
    expect(progress.every((p, i) => i === 0 || p >= progress[i - 1])).toBe(true);

    const bytes = await client.fetchResult(id);
    const shown = presentResult(bytes);
    expect(shown.width).toBe(64);
    expect(shown.height).toBe(64);
    expect(session.history[0].state).toBe("DONE");
  });

  it("surfaces service validation errors with the offending mask index", async () => {
    const client = new EditServiceClient(serviceUrl());
    const wrongSize = createRaster(32, 32);
    fillRect(wrongSize, 0, 0, 10, 10, 1);
    await expect(
      client.submit(sourcePng64(), [wrongSize], {
        pairs: [{ prompt: "x", order: 1, group: 1, mask_index: 0 }],
        config: {
          steps: 2,
          text_scale: 7.5,
          image_scale: 1.5,
          seed: 0,
          boost_weight: 0.3,
          enable_cross: true,
          enable_self: true,
          enable_boost: true,
        },
      }),
    ).rejects.toSatisfy((err: unknown) => {
      expect(err).toBeInstanceOf(EditServiceError);
      const e = err as EditServiceError;
      expect(e.status).toBe(400);
      expect(e.payload.message).toContain("mask 0");
      return true;
    });
  });

  it("identical submissions return the same job id", async () => {
    const client = new EditServiceClient(serviceUrl());
    const session = newSession(64, 64);
    const layer = addLayer(session);
    layer.prompt = "a copper kettle";
    fillRect(layer.raster, 8, 8, 16, 16, 1);
    const { masks, request } = buildSubmission(session);
    request.config.steps = 3;
    const first = await client.submit(sourcePng64(), masks, request);
    const second = await client.submit(sourcePng64(), masks, request);
    expect(second.id).toBe(first.id);
  });
});
