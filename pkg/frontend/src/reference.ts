// CPU compositor, kept semantically identical to the exporter's
// renderer: same pinhole projection, covariance chain, 3-sigma
// truncation with smoothstep taper, and front-to-back alpha blend in
// global depth order with submission-index tie-break. It exists so
// consistency against exporter-rendered fixtures can run headless;
// the GL path mirrors the same math per splat.

import type { Intrinsics, Pose } from "./camera.js";
import type { SplatSet } from "./ply.js";

export const MIN_DEPTH = 1e-6;
export const TRUNCATION_Q = 9.0;
const TAPER_Q = 0.5;
const COV_EPS = 1e-12;

export interface ReferenceResult {
  color: Float32Array; // (H*W*3) row-major, rows top to bottom
  alpha: Float32Array; // (H*W) accumulated splat weight
}

// Rotation from a unit wxyz quaternion, row-major into out.
function quatToMat(w: number, x: number, y: number, z: number, out: Float64Array): void {
  out[0] = 1 - 2 * (y * y + z * z);
  out[1] = 2 * (x * y - w * z);
  out[2] = 2 * (x * z + w * y);
  out[3] = 2 * (x * y + w * z);
  out[4] = 1 - 2 * (x * x + z * z);
  out[5] = 2 * (y * z - w * x);
  out[6] = 2 * (x * z - w * y);
  out[7] = 2 * (y * z + w * x);
  out[8] = 1 - 2 * (x * x + y * y);
}

export function renderReference(
  set: SplatSet,
  pose: Pose,
  cam: Intrinsics,
  background: [number, number, number] = [0, 0, 0],
  mask?: Uint8Array,
): ReferenceResult {
  const { width: w, height: h } = cam;
  const r = pose.r;
  const t = pose.t;
  const npix = w * h;

  // Camera-frame depths; splats at or behind the near plane drop out.
  const zs = new Float64Array(set.count);
  const order: number[] = [];
  for (let i = 0; i < set.count; i++) {
    const px = set.positions[i * 3];
    const py = set.positions[i * 3 + 1];
    const pz = set.positions[i * 3 + 2];
    zs[i] = r[6] * px + r[7] * py + r[8] * pz + t[2];
    if (zs[i] > MIN_DEPTH && (mask === undefined || mask[i] !== 0)) {
      order.push(i);
    }
  }
  order.sort((a, b) => zs[a] - zs[b] || a - b);

  // Accumulate in doubles and quantize once at the end, like the
  // exporter renders in doubles and saves single precision.
  const acc = new Float64Array(npix * 3);
  const trans = new Float64Array(npix).fill(1);
  const rg = new Float64Array(9);
  const covW = new Float64Array(9);
  const covC = new Float64Array(9);

  for (const i of order) {
    const wx = set.positions[i * 3];
    const wy = set.positions[i * 3 + 1];
    const wz = set.positions[i * 3 + 2];
    const xc = r[0] * wx + r[1] * wy + r[2] * wz + t[0];
    const yc = r[3] * wx + r[4] * wy + r[5] * wz + t[1];
    const zc = zs[i];

    const cx = (cam.fx * xc) / zc + cam.cx;
    const cy = (cam.fy * yc) / zc + cam.cy;

    // Projection Jacobian rows at the center.
    const j00 = cam.fx / zc;
    const j02 = (-cam.fx * xc) / (zc * zc);
    const j11 = cam.fy / zc;
    const j12 = (-cam.fy * yc) / (zc * zc);

    quatToMat(set.quats[i * 4], set.quats[i * 4 + 1], set.quats[i * 4 + 2], set.quats[i * 4 + 3], rg);
    const s0 = set.scales[i * 3] ** 2;
    const s1 = set.scales[i * 3 + 1] ** 2;
    const s2 = set.scales[i * 3 + 2] ** 2;
    // covW = Rg diag(s^2) Rg^T, covC = R covW R^T.
    for (let a = 0; a < 3; a++) {
      for (let b = 0; b < 3; b++) {
        covW[a * 3 + b] =
          rg[a * 3] * s0 * rg[b * 3] +
          rg[a * 3 + 1] * s1 * rg[b * 3 + 1] +
          rg[a * 3 + 2] * s2 * rg[b * 3 + 2];
      }
    }
    for (let a = 0; a < 3; a++) {
      for (let b = 0; b < 3; b++) {
        let acc = 0;
        for (let k = 0; k < 3; k++) {
          acc +=
            r[a * 3 + k] *
            (covW[k * 3] * r[b * 3] + covW[k * 3 + 1] * r[b * 3 + 1] + covW[k * 3 + 2] * r[b * 3 + 2]);
        }
        covC[a * 3 + b] = acc;
      }
    }

    // cov2d = J covC J^T with only the nonzero Jacobian entries.
    const m00 = j00 * (covC[0] * j00 + covC[2] * j02) + j02 * (covC[6] * j00 + covC[8] * j02) + COV_EPS;
    const m01 = j00 * (covC[1] * j11 + covC[2] * j12) + j02 * (covC[7] * j11 + covC[8] * j12);
    const m11 = j11 * (covC[4] * j11 + covC[5] * j12) + j12 * (covC[7] * j11 + covC[8] * j12) + COV_EPS;

    const det = m00 * m11 - m01 * m01;
    const ia = m11 / det;
    const ib = -m01 / det;
    const ic = m00 / det;

    const rx = 3 * Math.sqrt(m00);
    const ry = 3 * Math.sqrt(m11);
    const x0 = Math.min(Math.max(Math.ceil(cx - rx), 0), w);
    const x1 = Math.min(Math.max(Math.floor(cx + rx), -1), w - 1);
    const y0 = Math.min(Math.max(Math.ceil(cy - ry), 0), h);
    const y1 = Math.min(Math.max(Math.floor(cy + ry), -1), h - 1);

    const alpha = set.alphas[i];
    const cr = set.colors[i * 3];
    const cg = set.colors[i * 3 + 1];
    const cb = set.colors[i * 3 + 2];

    for (let py = y0; py <= y1; py++) {
      const dy = py - cy;
      for (let px = x0; px <= x1; px++) {
        const dx = px - cx;
        const q = ia * dx * dx + 2 * ib * dx * dy + ic * dy * dy;
        if (q > TRUNCATION_Q) continue;
        const u = Math.min(Math.max((TRUNCATION_Q - q) / TAPER_Q, 0), 1);
        const g = Math.exp(-0.5 * q) * u * u * (3 - 2 * u);
        const atilde = alpha * g;
        const p = py * w + px;
        const weight = trans[p] * atilde;
        acc[p * 3] += weight * cr;
        acc[p * 3 + 1] += weight * cg;
        acc[p * 3 + 2] += weight * cb;
        trans[p] *= 1 - atilde;
      }
    }
  }

  const color = new Float32Array(npix * 3);
  const alphaOut = new Float32Array(npix);
  for (let p = 0; p < npix; p++) {
    color[p * 3] = acc[p * 3] + trans[p] * background[0];
    color[p * 3 + 1] = acc[p * 3 + 1] + trans[p] * background[1];
    color[p * 3 + 2] = acc[p * 3 + 2] + trans[p] * background[2];
    alphaOut[p] = 1 - trans[p];
  }
  return { color, alpha: alphaOut };
}
