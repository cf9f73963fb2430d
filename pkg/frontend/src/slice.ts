// Slice-plane culling. A splat survives when the signed distance of
// its center, dot(normal, p) + offset, is >= 0; the plane equation
// matches the exporter-side counting used in the debug overlay.

import type { SplatSet } from "./ply.js";

export interface SlicePlane {
  normal: [number, number, number]; // unit length
  offset: number;
  enabled: boolean;
}

export function makePlane(
  normal: [number, number, number], offset: number, enabled = true,
): SlicePlane {
  const n = Math.hypot(normal[0], normal[1], normal[2]);
  if (!(n > 0) || !Number.isFinite(n)) {
    throw new Error("slice plane normal must have positive length");
  }
  return {
    normal: [normal[0] / n, normal[1] / n, normal[2] / n],
    offset,
    enabled,
  };
}

export function flipPlane(p: SlicePlane): SlicePlane {
  return {
    normal: [-p.normal[0], -p.normal[1], -p.normal[2]],
    offset: -p.offset,
    enabled: p.enabled,
  };
}

export interface CullResult {
  mask: Uint8Array; // 1 = kept
  kept: number;
  culled: number;
}

export function cullSplats(set: SplatSet, plane: SlicePlane | null): CullResult {
  const mask = new Uint8Array(set.count);
  if (plane === null || !plane.enabled) {
    mask.fill(1);
    return { mask, kept: set.count, culled: 0 };
  }
  const [nx, ny, nz] = plane.normal;
  const { positions } = set;
  let kept = 0;
  for (let i = 0; i < set.count; i++) {
    const d =
      nx * positions[i * 3] +
      ny * positions[i * 3 + 1] +
      nz * positions[i * 3 + 2] +
      plane.offset;
    if (d >= 0) {
      mask[i] = 1;
      kept++;
    }
  }
  return { mask, kept, culled: set.count - kept };
}
