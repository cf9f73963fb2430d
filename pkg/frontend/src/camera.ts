// Orbit camera over the splat cloud. The pose convention matches the
// exporter: world-to-camera, p_cam = R * p_world + t, camera looks
// down +z with y down (image rows grow downward).

export interface OrbitState {
  azimuth: number;   // radians around the world y axis
  elevation: number; // radians above the equator, clamped off the poles
  radius: number;    // > 0
  target: [number, number, number];
}

export interface Pose {
  r: Float64Array; // 3x3 row-major world-to-camera rotation
  t: Float64Array; // length 3
}

export interface Intrinsics {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
}

const MIN_RADIUS = 1e-3;
const MAX_ELEVATION = Math.PI / 2 - 1e-4;

export function defaultOrbit(): OrbitState {
  return { azimuth: 0, elevation: 0.35, radius: 2.5, target: [0, 0, 1] };
}

export function rotateOrbit(s: OrbitState, dAz: number, dEl: number): OrbitState {
  let az = (s.azimuth + dAz) % (2 * Math.PI);
  if (az < 0) az += 2 * Math.PI;
  const el = Math.min(MAX_ELEVATION, Math.max(-MAX_ELEVATION, s.elevation + dEl));
  return { ...s, azimuth: az, elevation: el };
}

export function zoomOrbit(s: OrbitState, factor: number): OrbitState {
  return { ...s, radius: Math.max(MIN_RADIUS, s.radius * factor) };
}

export function panOrbit(s: OrbitState, dx: number, dy: number): OrbitState {
  // Move the target in the camera's image plane, scaled by distance.
  const { r } = orbitPose(s);
  const k = s.radius;
  return {
    ...s,
    target: [
      s.target[0] + k * (dx * r[0] + dy * r[3]),
      s.target[1] + k * (dx * r[1] + dy * r[4]),
      s.target[2] + k * (dx * r[2] + dy * r[5]),
    ],
  };
}

export function orbitEye(s: OrbitState): [number, number, number] {
  const ce = Math.cos(s.elevation);
  return [
    s.target[0] + s.radius * ce * Math.sin(s.azimuth),
    s.target[1] - s.radius * Math.sin(s.elevation),
    s.target[2] - s.radius * ce * Math.cos(s.azimuth),
  ];
}

export function orbitPose(s: OrbitState): Pose {
  const eye = orbitEye(s);
  // Forward axis (+z of the camera) points from the eye to the target.
  let fx = s.target[0] - eye[0];
  let fy = s.target[1] - eye[1];
  let fz = s.target[2] - eye[2];
  const fn = Math.hypot(fx, fy, fz) || 1;
  fx /= fn; fy /= fn; fz /= fn;

  // Right = forward x worldDown; worldDown = +y matches image rows.
  const down: [number, number, number] = [0, 1, 0];
  let rx = fy * down[2] - fz * down[1];
  let ry = fz * down[0] - fx * down[2];
  let rz = fx * down[1] - fy * down[0];
  const rn = Math.hypot(rx, ry, rz) || 1;
  rx /= rn; ry /= rn; rz /= rn;

  // Camera-down completes the right-handed frame.
  const dx = fz * ry - fy * rz;
  const dy = fx * rz - fz * rx;
  const dz = fy * rx - fx * ry;

  const r = new Float64Array([rx, ry, rz, dx, dy, dz, fx, fy, fz]);
  const t = new Float64Array([
    -(r[0] * eye[0] + r[1] * eye[1] + r[2] * eye[2]),
    -(r[3] * eye[0] + r[4] * eye[1] + r[5] * eye[2]),
    -(r[6] * eye[0] + r[7] * eye[1] + r[8] * eye[2]),
  ]);
  return { r, t };
}

export function poseFromQuat(qWxyz: number[], t: number[]): Pose {
  const [w, x, y, z] = qWxyz;
  const n = Math.hypot(w, x, y, z) || 1;
  const qw = w / n, qx = x / n, qy = y / n, qz = z / n;
  const r = new Float64Array([
    1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qw * qz), 2 * (qx * qz + qw * qy),
    2 * (qx * qy + qw * qz), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qw * qx),
    2 * (qx * qz - qw * qy), 2 * (qy * qz + qw * qx), 1 - 2 * (qx * qx + qy * qy),
  ]);
  return { r, t: new Float64Array(t) };
}

// Column-major 4x4 view matrix from a pose, for the vertex shader.
// Projection stays analytic in the shader (splats need the Jacobian
// anyway), so no GL projection matrix exists.
export function viewMatrix(pose: Pose): Float32Array {
  const { r, t } = pose;
  return new Float32Array([
    r[0], r[3], r[6], 0,
    r[1], r[4], r[7], 0,
    r[2], r[5], r[8], 0,
    t[0], t[1], t[2], 1,
  ]);
}
