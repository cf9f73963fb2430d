// Binary PLY loader for the reconstruction pipeline's splat export.
// The layout is fixed: 14 little-endian floats per vertex, scales
// stored as logs, opacity as a logit, colors as degree-0 SH
// coefficients. Anything else is rejected with a message the UI can
// show as-is.

export const PLY_FIELDS = [
  "x", "y", "z",
  "scale_0", "scale_1", "scale_2",
  "rot_0", "rot_1", "rot_2", "rot_3",
  "f_dc_0", "f_dc_1", "f_dc_2",
  "opacity",
] as const;

export const SH_C0 = 0.28209479177387814;

export interface SplatSet {
  count: number;
  positions: Float32Array; // (n*3) x, y, z
  scales: Float32Array;    // (n*3) linear, exp-decoded
  quats: Float32Array;     // (n*4) wxyz, renormalized
  colors: Float32Array;    // (n*3) in [0, 1]
  alphas: Float32Array;    // (n) in (0, 1)
}

export class PlyError extends Error {}

const HEADER_LIMIT = 4096;

function parseHeader(buffer: ArrayBuffer): { count: number; body: number } {
  const head = new TextDecoder("ascii").decode(
    buffer.slice(0, Math.min(HEADER_LIMIT, buffer.byteLength)),
  );
  if (!head.startsWith("ply\n")) {
    throw new PlyError("not a PLY file (bad magic)");
  }
  const endTag = "end_header\n";
  const end = head.indexOf(endTag);
  if (end < 0) {
    throw new PlyError("PLY header end not found");
  }

  let count = -1;
  const props: string[] = [];
  for (const line of head.slice(0, end).split("\n")) {
    if (line.startsWith("format") && !line.includes("binary_little_endian")) {
      throw new PlyError(`unsupported PLY format: ${line}`);
    } else if (line.startsWith("element vertex ")) {
      count = parseInt(line.split(" ")[2], 10);
    } else if (line.startsWith("element ") ) {
      throw new PlyError(`unexpected element: ${line}`);
    } else if (line.startsWith("property ")) {
      const parts = line.split(" ");
      if (parts[1] !== "float") {
        throw new PlyError(`unsupported property type: ${line}`);
      }
      props.push(parts[2]);
    }
  }
  if (count < 0 || !Number.isFinite(count)) {
    throw new PlyError("PLY header has no vertex count");
  }
  if (props.length !== PLY_FIELDS.length || props.some((p, i) => p !== PLY_FIELDS[i])) {
    throw new PlyError(`unexpected vertex layout: ${props.join(",")}`);
  }
  return { count, body: end + endTag.length };
}

export function parsePly(buffer: ArrayBuffer): SplatSet {
  const { count, body } = parseHeader(buffer);
  const stride = PLY_FIELDS.length;
  const expected = count * stride * 4;
  if (buffer.byteLength - body !== expected) {
    throw new PlyError(
      `PLY body is ${buffer.byteLength - body} bytes, expected ${expected} for ${count} vertices`,
    );
  }
  // The header length is rarely 4-byte aligned, so view a copy.
  const raw = new Float32Array(buffer.slice(body, body + expected));

  const positions = new Float32Array(count * 3);
  const scales = new Float32Array(count * 3);
  const quats = new Float32Array(count * 4);
  const colors = new Float32Array(count * 3);
  const alphas = new Float32Array(count);

  for (let i = 0; i < count; i++) {
    const r = i * stride;
    positions[i * 3 + 0] = raw[r + 0];
    positions[i * 3 + 1] = raw[r + 1];
    positions[i * 3 + 2] = raw[r + 2];
    scales[i * 3 + 0] = Math.exp(raw[r + 3]);
    scales[i * 3 + 1] = Math.exp(raw[r + 4]);
    scales[i * 3 + 2] = Math.exp(raw[r + 5]);
    const qw = raw[r + 6], qx = raw[r + 7], qy = raw[r + 8], qz = raw[r + 9];
    const qn = Math.hypot(qw, qx, qy, qz) || 1;
    quats[i * 4 + 0] = qw / qn;
    quats[i * 4 + 1] = qx / qn;
    quats[i * 4 + 2] = qy / qn;
    quats[i * 4 + 3] = qz / qn;
    colors[i * 3 + 0] = clamp01(0.5 + SH_C0 * raw[r + 10]);
    colors[i * 3 + 1] = clamp01(0.5 + SH_C0 * raw[r + 11]);
    colors[i * 3 + 2] = clamp01(0.5 + SH_C0 * raw[r + 12]);
    alphas[i] = 1 / (1 + Math.exp(-raw[r + 13]));
  }
  return { count, positions, scales, quats, colors, alphas };
}

function clamp01(v: number): number {
  return v < 0 ? 0 : v > 1 ? 1 : v;
}
