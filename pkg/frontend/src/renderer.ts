// WebGL2 splat renderer: one instanced quad per Gaussian, blended
// front to back with premultiplied alpha so the framebuffer alpha
// carries the running opacity (1 - transmittance). Splat parameters
// live in a float texture uploaded once; per frame only the
// depth-sorted index buffer changes. Slice culling and the display
// limits run host-side while that buffer is rebuilt, so the overlay
// counts and the drawn set come from the same pass. The per-splat
// math in the shaders mirrors the reference compositor.

import type { Intrinsics, Pose } from "./camera.js";
import { viewMatrix } from "./camera.js";
import type { SplatSet } from "./ply.js";
import type { SlicePlane } from "./slice.js";
import { cullSplats } from "./slice.js";
import { sortByDepth } from "./sort.js";

const MIN_DEPTH = 1e-6;
// Exact in float32 and above every finite depth under the radix key
// map, so the kept-splat walk can stop at the first one.
const BEHIND_CAMERA = Infinity;
const TEX_WIDTH = 1024; // texels per row, 4 texels per splat

const VERT_SRC = `#version 300 es
precision highp float;
precision highp int;
layout(location = 0) in vec2 corner;
layout(location = 1) in uint splatId;
uniform highp sampler2D splatTex;
uniform mat4 view;
uniform vec2 focal;
uniform vec2 principal;
uniform vec2 viewport;
out vec2 vOff;
flat out vec3 vConic;
flat out vec4 vColor;

mat3 quatMat(vec4 q) {
  float w = q.x, x = q.y, y = q.z, z = q.w;
  // Columns of the rotation for a unit wxyz quaternion.
  return mat3(
    1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y + w * z), 2.0 * (x * z - w * y),
    2.0 * (x * y - w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z + w * x),
    2.0 * (x * z + w * y), 2.0 * (y * z - w * x), 1.0 - 2.0 * (x * x + y * y));
}

vec4 fetchTexel(int t) {
  return texelFetch(splatTex, ivec2(t % ${TEX_WIDTH}, t / ${TEX_WIDTH}), 0);
}

void main() {
  int base = int(splatId) * 4;
  vec4 posAlpha = fetchTexel(base);
  vec4 scales = fetchTexel(base + 1);
  vec4 quat = fetchTexel(base + 2);
  vec4 color = fetchTexel(base + 3);

  vec3 pc = (view * vec4(posAlpha.xyz, 1.0)).xyz;
  if (pc.z <= ${MIN_DEPTH}) {
    gl_Position = vec4(0.0, 0.0, 2.0, 1.0);
    return;
  }
  vec2 center = focal * pc.xy / pc.z + principal;

  mat3 rot = mat3(view);
  mat3 rotG = quatMat(quat);
  vec3 s2 = scales.xyz * scales.xyz;
  mat3 covW = rotG * mat3(s2.x, 0.0, 0.0, 0.0, s2.y, 0.0, 0.0, 0.0, s2.z) * transpose(rotG);
  mat3 covC = rot * covW * transpose(rot);

  vec3 j0 = vec3(focal.x / pc.z, 0.0, -focal.x * pc.x / (pc.z * pc.z));
  vec3 j1 = vec3(0.0, focal.y / pc.z, -focal.y * pc.y / (pc.z * pc.z));
  float a = dot(j0, covC * j0) + 1e-12;
  float b = dot(j0, covC * j1);
  float c = dot(j1, covC * j1) + 1e-12;
  float det = a * c - b * b;
  vConic = vec3(c, -b, a) / det;

  vOff = corner * (3.0 * sqrt(vec2(a, c)));
  // Half-pixel shift: the exporter samples at integer pixel
  // coordinates, GL fragments sit at half-integers.
  vec2 px = center + 0.5 + vOff;
  gl_Position = vec4(
    px.x / viewport.x * 2.0 - 1.0,
    1.0 - px.y / viewport.y * 2.0,
    0.0, 1.0);
  vColor = vec4(color.rgb, posAlpha.w);
}
`;

const FRAG_SRC = `#version 300 es
precision highp float;
in vec2 vOff;
flat in vec3 vConic;
flat in vec4 vColor;
out vec4 frag;

void main() {
  float q = vConic.x * vOff.x * vOff.x
    + 2.0 * vConic.y * vOff.x * vOff.y
    + vConic.z * vOff.y * vOff.y;
  if (q > 9.0) discard;
  float u = clamp((9.0 - q) / 0.5, 0.0, 1.0);
  float g = exp(-0.5 * q) * u * u * (3.0 - 2.0 * u);
  float a = vColor.a * g;
  frag = vec4(vColor.rgb * a, a);
}
`;

// Composites the background through the remaining transmittance and
// saturates destination alpha, using the same front-to-back blend.
const BG_VERT_SRC = `#version 300 es
layout(location = 0) in vec2 corner;
void main() { gl_Position = vec4(corner, 0.0, 1.0); }
`;

const BG_FRAG_SRC = `#version 300 es
precision highp float;
uniform vec3 bg;
out vec4 frag;
void main() { frag = vec4(bg, 1.0); }
`;

export interface DrawOptions {
  plane: SlicePlane | null;
  pointBudget: number; // 0 means no limit
  alphaMin: number;    // hide splats with opacity below this
  background: [number, number, number];
}

export interface DrawStats {
  total: number;
  sliceCulled: number;
  drawn: number;
}

// Splat parameters packed 4 texels wide: xyz+alpha, scales, quat,
// color. Pure so the first-frame CPU path is testable without a GL
// context.
export function packSplatTexture(set: SplatSet, width = TEX_WIDTH): {
  data: Float32Array; rows: number;
} {
  const rows = Math.max(1, Math.ceil((set.count * 4) / width));
  const data = new Float32Array(width * rows * 4);
  for (let i = 0; i < set.count; i++) {
    const o = i * 16;
    data[o] = set.positions[i * 3];
    data[o + 1] = set.positions[i * 3 + 1];
    data[o + 2] = set.positions[i * 3 + 2];
    data[o + 3] = set.alphas[i];
    data[o + 4] = set.scales[i * 3];
    data[o + 5] = set.scales[i * 3 + 1];
    data[o + 6] = set.scales[i * 3 + 2];
    data[o + 8] = set.quats[i * 4];
    data[o + 9] = set.quats[i * 4 + 1];
    data[o + 10] = set.quats[i * 4 + 2];
    data[o + 11] = set.quats[i * 4 + 3];
    data[o + 12] = set.colors[i * 3];
    data[o + 13] = set.colors[i * 3 + 1];
    data[o + 14] = set.colors[i * 3 + 2];
  }
  return { data, rows };
}

// Cull, depth-sort, and clamp to the display limits; fills `out` with
// the draw order. `depths` and `out` are caller-owned scratch of
// length set.count.
export function buildDrawList(
  set: SplatSet,
  pose: Pose,
  opts: DrawOptions,
  depths: Float32Array,
  out: Uint32Array,
): DrawStats {
  const { r, t } = pose;
  for (let i = 0; i < set.count; i++) {
    const z =
      r[6] * set.positions[i * 3] +
      r[7] * set.positions[i * 3 + 1] +
      r[8] * set.positions[i * 3 + 2] +
      t[2];
    depths[i] = z > MIN_DEPTH ? z : BEHIND_CAMERA;
  }
  const cull = cullSplats(set, opts.plane);
  const order = sortByDepth(depths, set.count);

  const budget = opts.pointBudget > 0 ? opts.pointBudget : set.count;
  let drawn = 0;
  for (let k = 0; k < set.count && drawn < budget; k++) {
    const i = order[k];
    if (depths[i] >= BEHIND_CAMERA) break;
    if (cull.mask[i] === 0) continue;
    if (set.alphas[i] < opts.alphaMin) continue;
    out[drawn++] = i;
  }
  return { total: set.count, sliceCulled: cull.culled, drawn };
}

function compile(gl: WebGL2RenderingContext, type: number, src: string): WebGLShader {
  const sh = gl.createShader(type)!;
  gl.shaderSource(sh, src);
  gl.compileShader(sh);
  if (!gl.getShaderParameter(sh, gl.COMPILE_STATUS)) {
    throw new Error(`shader compile failed: ${gl.getShaderInfoLog(sh)}`);
  }
  return sh;
}

function link(gl: WebGL2RenderingContext, vert: string, frag: string): WebGLProgram {
  const prog = gl.createProgram()!;
  gl.attachShader(prog, compile(gl, gl.VERTEX_SHADER, vert));
  gl.attachShader(prog, compile(gl, gl.FRAGMENT_SHADER, frag));
  gl.linkProgram(prog);
  if (!gl.getProgramParameter(prog, gl.LINK_STATUS)) {
    throw new Error(`program link failed: ${gl.getProgramInfoLog(prog)}`);
  }
  return prog;
}

export class SplatRenderer {
  private gl: WebGL2RenderingContext;
  private program!: WebGLProgram;
  private bgProgram!: WebGLProgram;
  private splatVao!: WebGLVertexArrayObject;
  private bgVao!: WebGLVertexArrayObject;
  private indexBuffer!: WebGLBuffer;
  private dataTex!: WebGLTexture;
  private uniforms!: { view: WebGLUniformLocation; focal: WebGLUniformLocation;
    principal: WebGLUniformLocation; viewport: WebGLUniformLocation };
  private bgUniform!: WebGLUniformLocation;

  private set: SplatSet | null = null;
  private depths = new Float32Array(0);
  private drawIds = new Uint32Array(0);
  private lost = false;

  constructor(
    readonly canvas: HTMLCanvasElement,
    private onStatus: (msg: string) => void = () => {},
  ) {
    const gl = canvas.getContext("webgl2", { antialias: false, depth: false });
    if (gl === null) throw new Error("WebGL2 is not available in this browser");
    this.gl = gl;
    canvas.addEventListener("webglcontextlost", (e) => {
      e.preventDefault();
      this.lost = true;
      this.onStatus("WebGL context lost; waiting for the browser to restore it");
    });
    canvas.addEventListener("webglcontextrestored", () => {
      this.lost = false;
      this.initGl();
      if (this.set !== null) this.uploadSplats(this.set);
      this.onStatus("WebGL context restored");
    });
    this.initGl();
  }

  get contextLost(): boolean {
    return this.lost;
  }

  private initGl(): void {
    const gl = this.gl;
    this.program = link(gl, VERT_SRC, FRAG_SRC);
    this.bgProgram = link(gl, BG_VERT_SRC, BG_FRAG_SRC);
    this.uniforms = {
      view: gl.getUniformLocation(this.program, "view")!,
      focal: gl.getUniformLocation(this.program, "focal")!,
      principal: gl.getUniformLocation(this.program, "principal")!,
      viewport: gl.getUniformLocation(this.program, "viewport")!,
    };
    this.bgUniform = gl.getUniformLocation(this.bgProgram, "bg")!;

    const quad = gl.createBuffer()!;
    gl.bindBuffer(gl.ARRAY_BUFFER, quad);
    gl.bufferData(gl.ARRAY_BUFFER, new Float32Array([-1, -1, 1, -1, -1, 1, 1, 1]), gl.STATIC_DRAW);

    this.indexBuffer = gl.createBuffer()!;

    this.splatVao = gl.createVertexArray()!;
    gl.bindVertexArray(this.splatVao);
    gl.bindBuffer(gl.ARRAY_BUFFER, quad);
    gl.enableVertexAttribArray(0);
    gl.vertexAttribPointer(0, 2, gl.FLOAT, false, 0, 0);
    gl.bindBuffer(gl.ARRAY_BUFFER, this.indexBuffer);
    gl.enableVertexAttribArray(1);
    gl.vertexAttribIPointer(1, 1, gl.UNSIGNED_INT, 0, 0);
    gl.vertexAttribDivisor(1, 1);

    this.bgVao = gl.createVertexArray()!;
    gl.bindVertexArray(this.bgVao);
    gl.bindBuffer(gl.ARRAY_BUFFER, quad);
    gl.enableVertexAttribArray(0);
    gl.vertexAttribPointer(0, 2, gl.FLOAT, false, 0, 0);
    gl.bindVertexArray(null);

    this.dataTex = gl.createTexture()!;
    gl.bindTexture(gl.TEXTURE_2D, this.dataTex);
    gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_MIN_FILTER, gl.NEAREST);
    gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_MAG_FILTER, gl.NEAREST);
    gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_WRAP_S, gl.CLAMP_TO_EDGE);
    gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_WRAP_T, gl.CLAMP_TO_EDGE);

    gl.disable(gl.DEPTH_TEST);
    gl.enable(gl.BLEND);
    gl.blendFunc(gl.ONE_MINUS_DST_ALPHA, gl.ONE);
  }

  setSplats(set: SplatSet): void {
    this.set = set;
    this.depths = new Float32Array(set.count);
    this.drawIds = new Uint32Array(set.count);
    this.uploadSplats(set);
  }

  private uploadSplats(set: SplatSet): void {
    const gl = this.gl;
    const { data, rows } = packSplatTexture(set);
    const max = gl.getParameter(gl.MAX_TEXTURE_SIZE) as number;
    if (rows > max) {
      throw new Error(`splat set too large for this GPU (${set.count} splats)`);
    }
    gl.bindTexture(gl.TEXTURE_2D, this.dataTex);
    gl.texImage2D(gl.TEXTURE_2D, 0, gl.RGBA32F, TEX_WIDTH, rows, 0, gl.RGBA, gl.FLOAT, data);
    gl.bindBuffer(gl.ARRAY_BUFFER, this.indexBuffer);
    gl.bufferData(gl.ARRAY_BUFFER, set.count * 4, gl.DYNAMIC_DRAW);
  }

  // Rebuilds the draw list (cull, sort, clamp) and composites a frame.
  render(pose: Pose, cam: Intrinsics, opts: DrawOptions): DrawStats {
    const set = this.set;
    if (set === null || this.lost) {
      return { total: set === null ? 0 : set.count, sliceCulled: 0, drawn: 0 };
    }
    const gl = this.gl;
    const stats = buildDrawList(set, pose, opts, this.depths, this.drawIds);

    gl.bindBuffer(gl.ARRAY_BUFFER, this.indexBuffer);
    gl.bufferSubData(gl.ARRAY_BUFFER, 0, this.drawIds.subarray(0, stats.drawn));

    gl.viewport(0, 0, cam.width, cam.height);
    gl.clearColor(0, 0, 0, 0);
    gl.clear(gl.COLOR_BUFFER_BIT);

    gl.useProgram(this.program);
    gl.uniformMatrix4fv(this.uniforms.view, false, viewMatrix(pose));
    gl.uniform2f(this.uniforms.focal, cam.fx, cam.fy);
    gl.uniform2f(this.uniforms.principal, cam.cx, cam.cy);
    gl.uniform2f(this.uniforms.viewport, cam.width, cam.height);
    gl.bindTexture(gl.TEXTURE_2D, this.dataTex);
    gl.bindVertexArray(this.splatVao);
    gl.drawArraysInstanced(gl.TRIANGLE_STRIP, 0, 4, stats.drawn);

    gl.useProgram(this.bgProgram);
    gl.uniform3f(this.bgUniform, ...opts.background);
    gl.bindVertexArray(this.bgVao);
    gl.drawArrays(gl.TRIANGLE_STRIP, 0, 4);
    gl.bindVertexArray(null);

    return stats;
  }
}
