/** HTTP client for the edit service; the UI's only backend surface. */

import { encodeMaskPng } from "./png.js";
import type { Raster } from "./raster.js";
import type { SubmissionRequest } from "./session.js";

export interface JobStatus {
  id: string;
  state: "QUEUED" | "RUNNING" | "DONE" | "FAILED";
  progress: { step: number; total: number };
  error: string | null;
  result_url: string | null;
  config_url: string | null;
}

export interface ServiceError {
  code: string;
  message: string;
  detail?: unknown;
}

export class EditServiceError extends Error {
  constructor(
    public status: number,
    public payload: ServiceError,
  ) {
    super(`${payload.code}: ${payload.message}`);
  }
}

async function raiseForStatus(resp: Response): Promise<void> {
  if (resp.ok) return;
  let payload: ServiceError;
  try {
    payload = (await resp.json()) as ServiceError;
  } catch {
    payload = { code: "http_error", message: resp.statusText };
  }
  throw new EditServiceError(resp.status, payload);
}

export class EditServiceClient {
  constructor(readonly baseUrl: string) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  async submit(imagePng: Uint8Array, masks: Raster[], request: SubmissionRequest): Promise<{ id: string; state: string }> {
    const form = new FormData();
    form.append("image", new Blob([imagePng.slice().buffer], { type: "image/png" }), "image.png");
    for (let i = 0; i < masks.length; i++) {
      const png = encodeMaskPng(masks[i]);
      form.append("masks", new Blob([png.slice().buffer], { type: "image/png" }), `mask_${i}.png`);
    }
    form.append("request", JSON.stringify(request));
    const resp = await fetch(this.url("/v1/edits"), { method: "POST", body: form });
    await raiseForStatus(resp);
    return (await resp.json()) as { id: string; state: string };
  }

  async status(jobId: string): Promise<JobStatus> {
    const resp = await fetch(this.url(`/v1/edits/${jobId}`));
    await raiseForStatus(resp);
    return (await resp.json()) as JobStatus;
  }

  resultUrl(jobId: string): string {
    return this.url(`/v1/edits/${jobId}/result`);
  }

  async fetchResult(jobId: string): Promise<Uint8Array> {
    const resp = await fetch(this.resultUrl(jobId));
    await raiseForStatus(resp);
    return new Uint8Array(await resp.arrayBuffer());
  }

  async capabilities(): Promise<unknown> {
    const resp = await fetch(this.url("/v1/capabilities"));
    await raiseForStatus(resp);
    return resp.json();
  }

  /** Server-side decode of a mask PNG; the round-trip check behind the UI. */
  async decodeMask(png: Uint8Array): Promise<Raster> {
    const form = new FormData();
    form.append("mask", new Blob([png.slice().buffer], { type: "image/png" }), "mask.png");
    const resp = await fetch(this.url("/v1/masks/decode"), { method: "POST", body: form });
    await raiseForStatus(resp);
    const body = (await resp.json()) as { width: number; height: number; pixels_base64: string };
    const bin = atob(body.pixels_base64);
    const data = new Uint8Array(bin.length);
    for (let i = 0; i < bin.length; i++) data[i] = bin.charCodeAt(i);
    return { width: body.width, height: body.height, data };
  }

  /** Poll at a fixed interval until the job leaves the queue/run states. */
  async pollUntilDone(
    jobId: string,
    onProgress?: (status: JobStatus) => void,
    intervalMs = 500,
  ): Promise<JobStatus> {
    for (;;) {
      const status = await this.status(jobId);
      onProgress?.(status);
      if (status.state === "DONE" || status.state === "FAILED") return status;
      await new Promise((resolve) => setTimeout(resolve, intervalMs));
    }
  }
}
