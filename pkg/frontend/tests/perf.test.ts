// First-frame budget on the 100k-splat fixture. Headless, so the GL
// upload and draw are out of reach; everything the host CPU does
// before that first draw is on the clock: disk read, parse, texture
// pack, slice cull, depth sort, draw-list build.

import { readFileSync } from "node:fs";

import { expect, it } from "vitest";

import { defaultOrbit, orbitPose } from "../src/camera.js";
import { parsePly } from "../src/ply.js";
import { buildDrawList, packSplatTexture } from "../src/renderer.js";
import { makePlane } from "../src/slice.js";
import { fixturePath } from "./helpers.js";

it("prepares the first frame of 100k splats in under 2 seconds", () => {
  const path = fixturePath("splats_100k.ply");

  const t0 = performance.now();
  const raw = readFileSync(path);
  const set = parsePly(raw.buffer.slice(raw.byteOffset, raw.byteOffset + raw.byteLength));
  const tex = packSplatTexture(set);
  const depths = new Float32Array(set.count);
  const ids = new Uint32Array(set.count);
  const stats = buildDrawList(set, orbitPose(defaultOrbit()), {
    plane: makePlane([0, 1, 0], 0.05),
    pointBudget: 0,
    alphaMin: 0,
    background: [0, 0, 0],
  }, depths, ids);
  const elapsed = performance.now() - t0;

  expect(set.count).toBe(100000);
  expect(tex.data.length).toBeGreaterThanOrEqual(set.count * 16);
  expect(stats.sliceCulled).toBeGreaterThan(0);
  expect(stats.drawn).toBeGreaterThan(0);
  expect(stats.drawn).toBeLessThanOrEqual(set.count - stats.sliceCulled);
  // Sorted front to back: depths along the draw list never decrease.
  for (let k = 1; k < Math.min(stats.drawn, 5000); k++) {
    expect(depths[ids[k]]).toBeGreaterThanOrEqual(depths[ids[k - 1]]);
  }
  expect(elapsed).toBeLessThan(2000);
});
