import { describe, expect, it } from "vitest";

import {
  defaultOrbit, orbitPose, panOrbit, poseFromQuat, rotateOrbit, viewMatrix, zoomOrbit,
} from "../src/camera.js";

describe("orbit controls", () => {
  it("returns to the starting view after a full turn", () => {
    let s = defaultOrbit();
    const start = orbitPose(s);
    for (let k = 0; k < 8; k++) s = rotateOrbit(s, Math.PI / 4, 0);
    const end = orbitPose(s);
    for (let i = 0; i < 9; i++) expect(end.r[i]).toBeCloseTo(start.r[i], 9);
    for (let i = 0; i < 3; i++) expect(end.t[i]).toBeCloseTo(start.t[i], 9);
    // Azimuth wraps to the start angle, not to a grown one.
    const wrap = Math.min(s.azimuth, 2 * Math.PI - s.azimuth);
    expect(wrap).toBeLessThan(1e-9);
  });

  it("keeps the radius positive under any zoom", () => {
    let s = defaultOrbit();
    for (let k = 0; k < 50; k++) s = zoomOrbit(s, 0.1);
    expect(s.radius).toBeGreaterThan(0);
    s = zoomOrbit(s, 1e30);
    expect(Number.isFinite(s.radius)).toBe(true);
  });

  it("clamps elevation away from the poles", () => {
    const up = rotateOrbit(defaultOrbit(), 0, 100);
    const down = rotateOrbit(defaultOrbit(), 0, -100);
    expect(up.elevation).toBeLessThan(Math.PI / 2);
    expect(down.elevation).toBeGreaterThan(-Math.PI / 2);
    for (const v of orbitPose(up).r) expect(Number.isFinite(v)).toBe(true);
  });

  it("pans without changing the view direction", () => {
    const s = defaultOrbit();
    const moved = panOrbit(s, 0.2, -0.1);
    expect(moved.target).not.toEqual(s.target);
    const a = orbitPose(s);
    const b = orbitPose(moved);
    for (let i = 0; i < 9; i++) expect(b.r[i]).toBeCloseTo(a.r[i], 12);
  });

  it("keeps the camera centered on the target", () => {
    // The target must project to the principal axis: R*target + t is
    // a pure +z vector at the orbit radius.
    const s = rotateOrbit(defaultOrbit(), 1.1, -0.4);
    const { r, t } = orbitPose(s);
    const [x, y, z] = s.target;
    const px = r[0] * x + r[1] * y + r[2] * z + t[0];
    const py = r[3] * x + r[4] * y + r[5] * z + t[1];
    const pz = r[6] * x + r[7] * y + r[8] * z + t[2];
    expect(px).toBeCloseTo(0, 12);
    expect(py).toBeCloseTo(0, 12);
    expect(pz).toBeCloseTo(s.radius, 12);
  });
});

describe("pose helpers", () => {
  it("maps the identity quaternion to the identity rotation", () => {
    const pose = poseFromQuat([1, 0, 0, 0], [0.5, -1, 2]);
    expect(Array.from(pose.r)).toEqual([1, 0, 0, 0, 1, 0, 0, 0, 1]);
    expect(Array.from(pose.t)).toEqual([0.5, -1, 2]);
  });

  it("normalizes an unnormalized quaternion", () => {
    const a = poseFromQuat([2, 0, 0, 0], [0, 0, 0]);
    const b = poseFromQuat([1, 0, 0, 0], [0, 0, 0]);
    expect(Array.from(a.r)).toEqual(Array.from(b.r));
  });

  it("lays the view matrix out column-major with translation last", () => {
    const m = viewMatrix(poseFromQuat([1, 0, 0, 0], [3, 4, 5]));
    expect(m[0]).toBe(1);
    expect(m[5]).toBe(1);
    expect(m[10]).toBe(1);
    expect([m[12], m[13], m[14], m[15]]).toEqual([3, 4, 5, 1]);
  });
});
