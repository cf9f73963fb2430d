// Entry point: wires the canvas, pointer input, slice and display
// controls, and the load paths (?url= fetch or file drop). All state
// lives in one ViewerState object; the loop re-renders only after
// something changed it.

import { defaultOrbit, orbitPose, panOrbit, rotateOrbit, zoomOrbit } from "./camera.js";
import type { Intrinsics, OrbitState } from "./camera.js";
import { parsePly } from "./ply.js";
import type { SplatSet } from "./ply.js";
import { SplatRenderer } from "./renderer.js";
import { flipPlane, makePlane } from "./slice.js";
import type { SlicePlane } from "./slice.js";

const VERTICAL_FOV = (50 * Math.PI) / 180;

interface ViewerState {
  orbit: OrbitState;
  plane: SlicePlane;
  pointBudget: number; // 0 draws everything
  alphaMin: number;
}

const canvas = document.getElementById("view") as HTMLCanvasElement;
const statusEl = document.getElementById("status")!;
const overlayEl = document.getElementById("overlay")!;
const fileInput = document.getElementById("file") as HTMLInputElement;

const controls = {
  sliceOn: document.getElementById("slice-on") as HTMLInputElement,
  nx: document.getElementById("slice-nx") as HTMLInputElement,
  ny: document.getElementById("slice-ny") as HTMLInputElement,
  nz: document.getElementById("slice-nz") as HTMLInputElement,
  offset: document.getElementById("slice-offset") as HTMLInputElement,
  flip: document.getElementById("slice-flip") as HTMLButtonElement,
  budget: document.getElementById("budget") as HTMLInputElement,
  alphaMin: document.getElementById("alpha-min") as HTMLInputElement,
};

const state: ViewerState = {
  orbit: defaultOrbit(),
  plane: makePlane([0, 1, 0], 0, false),
  pointBudget: 0,
  alphaMin: 0,
};
let splats: SplatSet | null = null;
let dirty = true;

function status(msg: string): void {
  statusEl.textContent = msg;
}

let renderer: SplatRenderer;
try {
  renderer = new SplatRenderer(canvas, (msg) => {
    status(msg);
    dirty = true;
  });
} catch (err) {
  status(err instanceof Error ? err.message : String(err));
  throw err;
}

// ---- URL parameters (documented in the page footer): url, az, el, r,
// tx/ty/tz target, snx/sny/snz + soff slice plane, slice=1 to enable,
// budget, amin.

const params = new URLSearchParams(location.search);

function numParam(name: string): number | null {
  const raw = params.get(name);
  if (raw === null) return null;
  const v = Number(raw);
  return Number.isFinite(v) ? v : null;
}

const cameraFromUrl = ["az", "el", "r", "tx", "ty", "tz"].some((k) => params.has(k));
state.orbit = {
  azimuth: numParam("az") ?? state.orbit.azimuth,
  elevation: numParam("el") ?? state.orbit.elevation,
  radius: Math.max(1e-3, numParam("r") ?? state.orbit.radius),
  target: [
    numParam("tx") ?? state.orbit.target[0],
    numParam("ty") ?? state.orbit.target[1],
    numParam("tz") ?? state.orbit.target[2],
  ],
};
{
  const nx = numParam("snx");
  const ny = numParam("sny");
  const nz = numParam("snz");
  const off = numParam("soff");
  if (nx !== null || ny !== null || nz !== null || off !== null) {
    try {
      state.plane = makePlane([nx ?? 0, ny ?? 0, nz ?? 0], off ?? 0, params.get("slice") !== "0");
    } catch {
      status("ignoring slice parameters: zero-length normal");
    }
  } else if (params.get("slice") === "1") {
    state.plane = { ...state.plane, enabled: true };
  }
}
state.pointBudget = Math.max(0, Math.floor(numParam("budget") ?? 0));
state.alphaMin = Math.min(1, Math.max(0, numParam("amin") ?? 0));

// ---- Controls

function syncControls(): void {
  controls.sliceOn.checked = state.plane.enabled;
  controls.nx.value = state.plane.normal[0].toFixed(2);
  controls.ny.value = state.plane.normal[1].toFixed(2);
  controls.nz.value = state.plane.normal[2].toFixed(2);
  controls.offset.value = String(state.plane.offset);
  controls.budget.value = String(state.pointBudget);
  controls.alphaMin.value = String(state.alphaMin);
}

function readPlaneInputs(): void {
  const n: [number, number, number] = [
    Number(controls.nx.value),
    Number(controls.ny.value),
    Number(controls.nz.value),
  ];
  try {
    state.plane = makePlane(n, Number(controls.offset.value) || 0, controls.sliceOn.checked);
  } catch {
    status("slice normal must be nonzero");
    return;
  }
  dirty = true;
}

for (const el of [controls.nx, controls.ny, controls.nz, controls.offset, controls.sliceOn]) {
  el.addEventListener("input", readPlaneInputs);
}
controls.flip.addEventListener("click", () => {
  state.plane = flipPlane(state.plane);
  syncControls();
  dirty = true;
});
controls.budget.addEventListener("input", () => {
  state.pointBudget = Math.max(0, Math.floor(Number(controls.budget.value) || 0));
  dirty = true;
});
controls.alphaMin.addEventListener("input", () => {
  state.alphaMin = Math.min(1, Math.max(0, Number(controls.alphaMin.value) || 0));
  dirty = true;
});

// ---- Pointer input: left drag orbits, right or shift drag pans,
// wheel zooms.

let dragButton = -1;
let lastX = 0;
let lastY = 0;

canvas.addEventListener("contextmenu", (e) => e.preventDefault());
canvas.addEventListener("pointerdown", (e) => {
  dragButton = e.shiftKey ? 2 : e.button;
  lastX = e.clientX;
  lastY = e.clientY;
  canvas.setPointerCapture(e.pointerId);
});
canvas.addEventListener("pointermove", (e) => {
  if (dragButton < 0) return;
  const dx = e.clientX - lastX;
  const dy = e.clientY - lastY;
  lastX = e.clientX;
  lastY = e.clientY;
  if (dragButton === 2) {
    state.orbit = panOrbit(state.orbit, -dx / canvas.clientHeight, -dy / canvas.clientHeight);
  } else {
    state.orbit = rotateOrbit(state.orbit, dx * 0.005, dy * 0.005);
  }
  dirty = true;
});
canvas.addEventListener("pointerup", () => {
  dragButton = -1;
});
canvas.addEventListener("wheel", (e) => {
  e.preventDefault();
  state.orbit = zoomOrbit(state.orbit, Math.exp(e.deltaY * 0.001));
  dirty = true;
}, { passive: false });

// ---- Loading

function frameCloud(set: SplatSet): void {
  if (set.count === 0) return;
  let mx = 0, my = 0, mz = 0;
  for (let i = 0; i < set.count; i++) {
    mx += set.positions[i * 3];
    my += set.positions[i * 3 + 1];
    mz += set.positions[i * 3 + 2];
  }
  mx /= set.count; my /= set.count; mz /= set.count;
  let rr = 0;
  for (let i = 0; i < set.count; i++) {
    const dx = set.positions[i * 3] - mx;
    const dy = set.positions[i * 3 + 1] - my;
    const dz = set.positions[i * 3 + 2] - mz;
    rr += dx * dx + dy * dy + dz * dz;
  }
  const rms = Math.sqrt(rr / set.count);
  state.orbit = { ...state.orbit, target: [mx, my, mz], radius: Math.max(0.5, 3 * rms) };
}

function loadBuffer(buf: ArrayBuffer, label: string): void {
  const t0 = performance.now();
  let set: SplatSet;
  try {
    set = parsePly(buf);
  } catch (err) {
    status(`failed to load ${label}: ${err instanceof Error ? err.message : err}`);
    return;
  }
  const parseMs = performance.now() - t0;
  splats = set;
  renderer.setSplats(set);
  if (!cameraFromUrl) frameCloud(set);
  dirty = true;
  status(`${label}: ${set.count} splats, parsed in ${parseMs.toFixed(0)} ms`);
}

async function loadUrl(url: string): Promise<void> {
  status(`fetching ${url} ...`);
  try {
    const resp = await fetch(url);
    if (!resp.ok) throw new Error(`HTTP ${resp.status}`);
    loadBuffer(await resp.arrayBuffer(), url.split("/").pop() ?? url);
  } catch (err) {
    status(`failed to fetch ${url}: ${err instanceof Error ? err.message : err}`);
  }
}

document.body.addEventListener("dragover", (e) => e.preventDefault());
document.body.addEventListener("drop", (e) => {
  e.preventDefault();
  const file = e.dataTransfer?.files[0];
  if (file) void file.arrayBuffer().then((buf) => loadBuffer(buf, file.name));
});
fileInput.addEventListener("change", () => {
  const file = fileInput.files?.[0];
  if (file) void file.arrayBuffer().then((buf) => loadBuffer(buf, file.name));
});

// ---- Render loop

function intrinsics(): Intrinsics {
  const w = canvas.width;
  const h = canvas.height;
  const f = (0.5 * h) / Math.tan(VERTICAL_FOV / 2);
  return { fx: f, fy: f, cx: w / 2, cy: h / 2, width: w, height: h };
}

function resize(): void {
  const dpr = window.devicePixelRatio || 1;
  const w = Math.round(canvas.clientWidth * dpr);
  const h = Math.round(canvas.clientHeight * dpr);
  if (w !== canvas.width || h !== canvas.height) {
    canvas.width = w;
    canvas.height = h;
    dirty = true;
  }
}
window.addEventListener("resize", () => {
  dirty = true;
});

function frame(): void {
  resize();
  if (dirty && splats !== null && canvas.width > 0 && !renderer.contextLost) {
    dirty = false;
    const t0 = performance.now();
    const stats = renderer.render(orbitPose(state.orbit), intrinsics(), {
      plane: state.plane,
      pointBudget: state.pointBudget,
      alphaMin: state.alphaMin,
      background: [0, 0, 0],
    });
    const ms = performance.now() - t0;
    overlayEl.textContent =
      `${stats.total} splats | slice culled ${stats.sliceCulled} | ` +
      `drawn ${stats.drawn} | submit ${ms.toFixed(1)} ms`;
  }
  requestAnimationFrame(frame);
}

syncControls();
resize();
requestAnimationFrame(frame);

const urlParam = params.get("url");
if (urlParam !== null) {
  void loadUrl(urlParam);
} else {
  status("drop a .ply splat export here, or pass ?url=");
}
