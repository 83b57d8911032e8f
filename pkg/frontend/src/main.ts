/** Mask studio: draw mask layers over an image and submit them as one edit. */

import { EditServiceClient, EditServiceError, type JobStatus } from "./api.js";
import { parsePngDims } from "./png.js";
import { strokeLine } from "./raster.js";
import {
  GROUP_COLORS,
  addLayer,
  beginStroke,
  buildSubmission,
  groupIdOf,
  iterateFrom,
  moveLayer,
  newSession,
  recordSubmission,
  removeLayer,
  type JobEntry,
  type MaskLayer,
  type Session,
  undoStroke,
  validateForSubmit,
} from "./session.js";

/** Pure result-presentation step, exercised directly by the tests. */
export function presentResult(pngBytes: Uint8Array): {
  width: number;
  height: number;
  bytes: Uint8Array;
} {
  const { width, height } = parsePngDims(pngBytes);
  return { width, height, bytes: pngBytes };
}

interface AppState {
  session: Session | null;
  sourcePng: Uint8Array | null;
  sourceBitmap: ImageBitmap | null;
  activeLayerId: number | null;
  brushSize: number;
  erasing: boolean;
  inFlight: boolean;
  resultPng: Uint8Array | null;
  resultBitmap: ImageBitmap | null;
  showDiff: boolean;
  issues: Map<number, string>;
}

const state: AppState = {
  session: null,
  sourcePng: null,
  sourceBitmap: null,
  activeLayerId: null,
  brushSize: 12,
  erasing: false,
  inFlight: false,
  resultPng: null,
  resultBitmap: null,
  showDiff: false,
  issues: new Map(),
};

function $(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el;
}

function client(): EditServiceClient {
  const url = ($("service-url") as HTMLInputElement).value.trim() || defaultServiceUrl();
  return new EditServiceClient(url);
}

function defaultServiceUrl(): string {
  return window.location.pathname.startsWith("/ui")
    ? window.location.origin
    : "http://127.0.0.1:8321";
}

function activeLayer(): MaskLayer | null {
  if (!state.session || state.activeLayerId === null) return null;
  return state.session.layers.find((l) => l.id === state.activeLayerId) ?? null;
}

// ---------------------------------------------------------------------------
// canvas rendering
// ---------------------------------------------------------------------------

function renderCanvas(): void {
  const canvas = $("editor-canvas") as HTMLCanvasElement;
  const ctx = canvas.getContext("2d")!;
  if (!state.session || !state.sourceBitmap) {
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    return;
  }
  const { imageWidth: w, imageHeight: h } = state.session;
  canvas.width = w;
  canvas.height = h;
  ctx.drawImage(state.sourceBitmap, 0, 0);
  const overlay = ctx.getImageData(0, 0, w, h);
  for (const layer of state.session.layers) {
    if (!layer.visible) continue;
    const color = hexToRgb(GROUP_COLORS[layer.colorIndex]);
    const strong = layer.id === state.activeLayerId ? 0.55 : 0.35;
    for (let i = 0; i < layer.raster.data.length; i++) {
      if (!layer.raster.data[i]) continue;
      const o = i * 4;
      overlay.data[o] = overlay.data[o] * (1 - strong) + color[0] * strong;
      overlay.data[o + 1] = overlay.data[o + 1] * (1 - strong) + color[1] * strong;
      overlay.data[o + 2] = overlay.data[o + 2] * (1 - strong) + color[2] * strong;
    }
  }
  ctx.putImageData(overlay, 0, 0);
}

function hexToRgb(hex: string): [number, number, number] {
  return [
    parseInt(hex.slice(1, 3), 16),
    parseInt(hex.slice(3, 5), 16),
    parseInt(hex.slice(5, 7), 16),
  ];
}

async function renderResult(): Promise<void> {
  const canvas = $("result-canvas") as HTMLCanvasElement;
  const ctx = canvas.getContext("2d")!;
  if (!state.resultBitmap || !state.sourceBitmap) {
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    return;
  }
  canvas.width = state.resultBitmap.width;
  canvas.height = state.resultBitmap.height;
  ctx.drawImage(state.resultBitmap, 0, 0);
  if (state.showDiff) {
    const res = ctx.getImageData(0, 0, canvas.width, canvas.height);
    const srcCanvas = document.createElement("canvas");
    srcCanvas.width = canvas.width;
    srcCanvas.height = canvas.height;
    const sctx = srcCanvas.getContext("2d")!;
    sctx.drawImage(state.sourceBitmap, 0, 0);
    const src = sctx.getImageData(0, 0, canvas.width, canvas.height);
    for (let i = 0; i < res.data.length; i += 4) {
      for (let c = 0; c < 3; c++) {
        res.data[i + c] = Math.min(255, Math.abs(res.data[i + c] - src.data[i + c]) * 4);
      }
    }
    ctx.putImageData(res, 0, 0);
  }
}

// ---------------------------------------------------------------------------
// layer panel
// ---------------------------------------------------------------------------

function renderLayers(): void {
  const list = $("layer-list");
  list.innerHTML = "";
  if (!state.session) return;
  const layers = [...state.session.layers].reverse(); // top of stack first
  for (const layer of layers) {
    const index = state.session.layers.indexOf(layer);
    const row = document.createElement("div");
    row.className = "layer-row" + (layer.id === state.activeLayerId ? " active" : "");
    row.addEventListener("click", () => {
      state.activeLayerId = layer.id;
      refresh();
    });

    const swatch = document.createElement("select");
    swatch.title = "color group (shared color = shared self-attention group)";
    GROUP_COLORS.forEach((c, i) => {
      const opt = document.createElement("option");
      opt.value = String(i);
      opt.textContent = `group ${i + 1}`;
      opt.style.background = c;
      swatch.appendChild(opt);
    });
    swatch.value = String(layer.colorIndex);
    swatch.style.background = GROUP_COLORS[layer.colorIndex];
    swatch.addEventListener("change", () => {
      layer.colorIndex = Number(swatch.value);
      refresh();
    });
    swatch.addEventListener("click", (e) => e.stopPropagation());

    const prompt = document.createElement("input");
    prompt.placeholder = "prompt for this mask";
    prompt.value = layer.prompt;
    prompt.addEventListener("input", () => {
      layer.prompt = prompt.value;
    });
    prompt.addEventListener("click", (e) => e.stopPropagation());

    const order = document.createElement("span");
    order.className = "order-badge";
    order.textContent = `z${index + 1}`;
    order.title = "z-order; higher wins overlaps";

    const up = button("↑", () => {
      moveLayer(state.session!, index, index + 1);
      refresh();
    });
    const down = button("↓", () => {
      moveLayer(state.session!, index, index - 1);
      refresh();
    });
    const vis = button(layer.visible ? "👁" : "–", () => {
      layer.visible = !layer.visible;
      refresh();
    });
    const del = button("✕", () => {
      removeLayer(state.session!, layer.id);
      if (state.activeLayerId === layer.id) state.activeLayerId = null;
      refresh();
    });

    row.append(swatch, prompt, order, up, down, vis, del);
    const issue = state.issues.get(layer.id);
    if (issue) {
      const err = document.createElement("div");
      err.className = "layer-error";
      err.textContent = issue;
      row.appendChild(err);
    }
    list.appendChild(row);
  }
}

function button(label: string, onClick: () => void): HTMLButtonElement {
  const b = document.createElement("button");
  b.textContent = label;
  b.addEventListener("click", (e) => {
    e.stopPropagation();
    onClick();
  });
  return b;
}

// ---------------------------------------------------------------------------
// history
// ---------------------------------------------------------------------------

function renderHistory(): void {
  const list = $("history-list");
  list.innerHTML = "";
  if (!state.session) return;
  for (const entry of [...state.session.history].reverse()) {
    const row = document.createElement("div");
    row.className = "history-row";
    if (entry.thumbnailDataUrl) {
      const thumb = document.createElement("img");
      thumb.src = entry.thumbnailDataUrl;
      thumb.width = 28;
      thumb.height = 28;
      row.appendChild(thumb);
    }
    const label = document.createElement("span");
    label.textContent = `${entry.jobId.slice(0, 8)} · ${entry.state}`;
    row.appendChild(label);
    if (entry.state === "DONE") {
      row.appendChild(button("view", () => void showEntry(entry)));
      row.appendChild(button("iterate", () => void iterateFromEntry(entry)));
    }
    list.appendChild(row);
  }
}

async function attachThumbnail(entry: JobEntry, bytes: Uint8Array): Promise<void> {
  const bitmap = await createImageBitmap(new Blob([bytes.slice().buffer], { type: "image/png" }));
  const canvas = document.createElement("canvas");
  canvas.width = 28;
  canvas.height = 28;
  canvas.getContext("2d")!.drawImage(bitmap, 0, 0, 28, 28);
  entry.thumbnailDataUrl = canvas.toDataURL();
}

async function showEntry(entry: JobEntry): Promise<void> {
  const bytes = await client().fetchResult(entry.jobId);
  state.resultPng = bytes;
  state.resultBitmap = await createImageBitmap(new Blob([bytes.slice().buffer], { type: "image/png" }));
  await renderResult();
}

async function iterateFromEntry(entry: JobEntry): Promise<void> {
  if (!state.session) return;
  const bytes = await client().fetchResult(entry.jobId);
  const { width, height } = presentResult(bytes);
  state.sourcePng = bytes;
  state.sourceBitmap = await createImageBitmap(new Blob([bytes.slice().buffer], { type: "image/png" }));
  state.session = iterateFrom(state.session, width, height);
  state.activeLayerId = null;
  state.resultPng = null;
  state.resultBitmap = null;
  refresh();
}

// ---------------------------------------------------------------------------
// submission
// ---------------------------------------------------------------------------

function readParams(): void {
  if (!state.session) return;
  const p = state.session.params;
  p.steps = int("param-steps", p.steps);
  const bs = ($("param-blend-stop") as HTMLInputElement).value.trim();
  p.blendStop = bs === "" ? null : Number(bs);
  p.textScale = num("param-text-scale", p.textScale);
  p.imageScale = num("param-image-scale", p.imageScale);
  p.boostWeight = num("param-boost", p.boostWeight);
  p.seed = int("param-seed", p.seed);
  p.enableCross = ($("param-cross") as HTMLInputElement).checked;
  p.enableSelf = ($("param-self") as HTMLInputElement).checked;
  p.enableBoost = ($("param-boost-on") as HTMLInputElement).checked;
}

function int(id: string, fallback: number): number {
  const v = parseInt(($(id) as HTMLInputElement).value, 10);
  return Number.isFinite(v) ? v : fallback;
}

function num(id: string, fallback: number): number {
  const v = parseFloat(($(id) as HTMLInputElement).value);
  return Number.isFinite(v) ? v : fallback;
}

async function submit(): Promise<void> {
  if (!state.session || !state.sourcePng || state.inFlight) return;
  readParams();
  state.issues = new Map();
  const issues = validateForSubmit(state.session);
  if (issues.length > 0) {
    for (const issue of issues) state.issues.set(issue.layerId, issue.message);
    setStatus("fix the flagged layers first");
    refresh();
    return;
  }
  const { masks, request } = buildSubmission(state.session);
  state.inFlight = true;
  setStatus("submitting…");
  try {
    const { id } = await client().submit(state.sourcePng, masks, request);
    const entry = recordSubmission(state.session, id, request);
    renderHistory();
    const status = await client().pollUntilDone(id, (s: JobStatus) => {
      entry.state = s.state;
      setProgress(s.progress.step, s.progress.total);
      setStatus(`${s.state} ${s.progress.step}/${s.progress.total}`);
    });
    entry.state = status.state;
    if (status.state === "FAILED") {
      setStatus(`job failed: ${status.error}`);
    } else {
      const bytes = await client().fetchResult(id);
      const shown = presentResult(bytes);
      state.resultPng = shown.bytes;
      state.resultBitmap = await createImageBitmap(
        new Blob([shown.bytes.slice().buffer], { type: "image/png" }),
      );
      await attachThumbnail(entry, shown.bytes);
      setStatus(`done: ${shown.width}x${shown.height}`);
      await renderResult();
    }
  } catch (err) {
    if (err instanceof EditServiceError && typeof err.payload.message === "string") {
      // surface service validation against the offending layer when it names one
      const match = err.payload.message.match(/mask (\d+)/);
      if (match && state.session) {
        const idx = Number(match[1]);
        const layer = state.session.layers[idx];
        if (layer) state.issues.set(layer.id, err.payload.message);
      }
      setStatus(`rejected: ${err.payload.message}`);
    } else {
      setStatus(`error: ${String(err)}`);
    }
  } finally {
    state.inFlight = false;
    renderHistory();
    renderLayers();
  }
}

function setStatus(text: string): void {
  $("status-line").textContent = text;
}

function setProgress(step: number, total: number): void {
  const bar = $("progress-bar") as HTMLProgressElement;
  bar.max = Math.max(1, total);
  bar.value = step;
}

// ---------------------------------------------------------------------------
// wiring
// ---------------------------------------------------------------------------

function refresh(): void {
  renderLayers();
  renderHistory();
  renderCanvas();
}

async function loadImageFile(file: File): Promise<void> {
  const bytes = new Uint8Array(await file.arrayBuffer());
  const dims = parsePngDims(bytes);
  state.sourcePng = bytes;
  state.sourceBitmap = await createImageBitmap(new Blob([bytes.slice().buffer], { type: "image/png" }));
  state.session = newSession(dims.width, dims.height);
  state.activeLayerId = null;
  state.resultPng = null;
  state.resultBitmap = null;
  setStatus(`loaded ${dims.width}x${dims.height}`);
  refresh();
}

function canvasPos(e: PointerEvent): { x: number; y: number } {
  const canvas = $("editor-canvas") as HTMLCanvasElement;
  const rect = canvas.getBoundingClientRect();
  return {
    x: ((e.clientX - rect.left) / rect.width) * canvas.width,
    y: ((e.clientY - rect.top) / rect.height) * canvas.height,
  };
}

export function init(): void {
  let painting = false;
  let last: { x: number; y: number } | null = null;

  ($("image-input") as HTMLInputElement).addEventListener("change", (e) => {
    const file = (e.target as HTMLInputElement).files?.[0];
    if (file) void loadImageFile(file);
  });

  $("add-layer").addEventListener("click", () => {
    if (!state.session) return;
    const layer = addLayer(state.session);
    state.activeLayerId = layer.id;
    refresh();
  });

  $("undo-stroke").addEventListener("click", () => {
    const layer = activeLayer();
    if (layer && undoStroke(layer)) renderCanvas();
  });

  ($("brush-size") as HTMLInputElement).addEventListener("input", (e) => {
    state.brushSize = Number((e.target as HTMLInputElement).value);
  });

  ($("erase-toggle") as HTMLInputElement).addEventListener("change", (e) => {
    state.erasing = (e.target as HTMLInputElement).checked;
  });

  ($("diff-toggle") as HTMLInputElement).addEventListener("change", (e) => {
    state.showDiff = (e.target as HTMLInputElement).checked;
    void renderResult();
  });

  $("submit").addEventListener("click", () => void submit());

  const canvas = $("editor-canvas") as HTMLCanvasElement;
  canvas.addEventListener("pointerdown", (e) => {
    const layer = activeLayer();
    if (!layer) {
      setStatus("select a layer to paint on");
      return;
    }
    painting = true;
    last = canvasPos(e);
    beginStroke(layer);
    strokeLine(layer.raster, last.x, last.y, last.x, last.y, state.brushSize, state.erasing ? 0 : 1);
    canvas.setPointerCapture(e.pointerId);
    renderCanvas();
  });
  canvas.addEventListener("pointermove", (e) => {
    if (!painting || !last) return;
    const layer = activeLayer();
    if (!layer) return;
    const pos = canvasPos(e);
    strokeLine(layer.raster, last.x, last.y, pos.x, pos.y, state.brushSize, state.erasing ? 0 : 1);
    last = pos;
    renderCanvas();
  });
  const stop = () => {
    painting = false;
    last = null;
  };
  canvas.addEventListener("pointerup", stop);
  canvas.addEventListener("pointercancel", stop);

  ($("service-url") as HTMLInputElement).value = defaultServiceUrl();
  setStatus("load an image to begin");
}

if (typeof document !== "undefined" && document.getElementById("editor-canvas")) {
  init();
}
