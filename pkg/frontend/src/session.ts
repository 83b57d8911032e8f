/**
 * Session state and pure reducers for the mask studio.
 *
 * Layers map 1:1 to mask-prompt pairs. Color is the visual encoding of the
 * self-attention group: two layers with the same color share a group. Stack
 * position encodes z-order (top of the stack wins overlaps).
 */

import { cloneRaster, countOn, createRaster, type Raster } from "./raster.js";

export const GROUP_COLORS = [
  "#e6194b",
  "#3cb44b",
  "#4363d8",
  "#f58231",
  "#911eb4",
  "#46f0f0",
  "#f032e6",
  "#bcf60c",
];

export const UNDO_DEPTH = 20;

export interface MaskLayer {
  id: number;
  prompt: string;
  colorIndex: number;
  visible: boolean;
  raster: Raster;
  undo: Raster[];
}

export interface Params {
  steps: number;
  blendStop: number | null;
  textScale: number;
  imageScale: number;
  boostWeight: number;
  seed: number;
  enableCross: boolean;
  enableSelf: boolean;
  enableBoost: boolean;
}

export const DEFAULT_PARAMS: Params = {
  steps: 20,
  blendStop: null,
  textScale: 7.5,
  imageScale: 1.5,
  boostWeight: 0.3,
  seed: 0,
  enableCross: true,
  enableSelf: true,
  enableBoost: true,
};

export interface JobEntry {
  jobId: string;
  state: string;
  submittedAt: number;
  /** Frozen snapshot of the exact request body that was sent. */
  config: Readonly<SubmissionRequest>;
  /** Set once the result is first fetched (browser only). */
  thumbnailDataUrl?: string;
}

export interface Session {
  imageWidth: number;
  imageHeight: number;
  layers: MaskLayer[];
  params: Params;
  history: JobEntry[];
  nextLayerId: number;
}

export interface SubmissionPair {
  prompt: string;
  order: number;
  group: number;
  mask_index: number;
}

export interface SubmissionRequest {
  pairs: SubmissionPair[];
  config: {
    steps: number;
    blend_stop?: number;
    text_scale: number;
    image_scale: number;
    seed: number;
    boost_weight: number;
    enable_cross: boolean;
    enable_self: boolean;
    enable_boost: boolean;
  };
}

export function newSession(imageWidth: number, imageHeight: number, params?: Params): Session {
  return {
    imageWidth,
    imageHeight,
    layers: [],
    params: { ...(params ?? DEFAULT_PARAMS) },
    history: [],
    nextLayerId: 1,
  };
}

export function addLayer(session: Session): MaskLayer {
  const used = new Set(session.layers.map((l) => l.colorIndex));
  let colorIndex = 0;
  while (used.has(colorIndex) && colorIndex < GROUP_COLORS.length - 1) colorIndex++;
  const layer: MaskLayer = {
    id: session.nextLayerId++,
    prompt: "",
    colorIndex,
    visible: true,
    raster: createRaster(session.imageWidth, session.imageHeight),
    undo: [],
  };
  session.layers.push(layer);
  return layer;
}

export function removeLayer(session: Session, layerId: number): void {
  session.layers = session.layers.filter((l) => l.id !== layerId);
}

/** Reorder the stack; position in `layers` IS the z-order (later = on top). */
export function moveLayer(session: Session, from: number, to: number): void {
  if (from < 0 || from >= session.layers.length) return;
  const clamped = Math.max(0, Math.min(session.layers.length - 1, to));
  const [layer] = session.layers.splice(from, 1);
  session.layers.splice(clamped, 0, layer);
}

export function orderOf(session: Session, layer: MaskLayer): number {
  return session.layers.indexOf(layer) + 1;
}

export function groupIdOf(layer: MaskLayer): number {
  return layer.colorIndex + 1;
}

export function beginStroke(layer: MaskLayer): void {
  layer.undo.push(cloneRaster(layer.raster));
  if (layer.undo.length > UNDO_DEPTH) layer.undo.shift();
}

export function undoStroke(layer: MaskLayer): boolean {
  const snapshot = layer.undo.pop();
  if (!snapshot) return false;
  layer.raster = snapshot;
  return true;
}

export interface LayerIssue {
  layerId: number;
  message: string;
}

export function validateForSubmit(session: Session): LayerIssue[] {
  const issues: LayerIssue[] = [];
  if (session.layers.length === 0) {
    issues.push({ layerId: -1, message: "add at least one mask layer" });
    return issues;
  }
  for (const layer of session.layers) {
    if (countOn(layer.raster) === 0) {
      issues.push({ layerId: layer.id, message: "mask is empty" });
    }
    if (layer.prompt.trim() === "") {
      issues.push({ layerId: layer.id, message: "prompt is empty" });
    }
  }
  return issues;
}

export function buildSubmission(session: Session): {
  masks: Raster[];
  request: SubmissionRequest;
} {
  const issues = validateForSubmit(session);
  if (issues.length > 0) {
    throw new Error(`session not submittable: ${issues.map((i) => i.message).join("; ")}`);
  }
  const p = session.params;
  const request: SubmissionRequest = {
    pairs: session.layers.map((layer, i) => ({
      prompt: layer.prompt.trim(),
      order: i + 1,
      group: groupIdOf(layer),
      mask_index: i,
    })),
    config: {
      steps: p.steps,
      ...(p.blendStop !== null ? { blend_stop: p.blendStop } : {}),
      text_scale: p.textScale,
      image_scale: p.imageScale,
      seed: p.seed,
      boost_weight: p.boostWeight,
      enable_cross: p.enableCross,
      enable_self: p.enableSelf,
      enable_boost: p.enableBoost,
    },
  };
  return { masks: session.layers.map((l) => l.raster), request };
}

export function recordSubmission(session: Session, jobId: string, request: SubmissionRequest): JobEntry {
  const entry: JobEntry = {
    jobId,
    state: "QUEUED",
    submittedAt: Date.now(),
    config: Object.freeze(structuredClone(request)),
  };
  session.history.push(entry);
  return entry;
}

/**
 * Start the next round: the finished result becomes the new source, layers
 * reset, parameters and history carry over.
 */
export function iterateFrom(session: Session, width: number, height: number): Session {
  return {
    imageWidth: width,
    imageHeight: height,
    layers: [],
    params: { ...session.params },
    history: session.history,
    nextLayerId: session.nextLayerId,
  };
}
