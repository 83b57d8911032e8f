"""Job execution: FIFO queue, one backend instance per worker thread."""

from __future__ import annotations

import json
import queue
import threading
import time

from ..backends import create_backend
from ..imageio import decode_image, decode_mask, encode_png
from ..masks import MaskSpec
from ..sampling import EditRequest, SamplerConfig, resolved_config_dict, run_edit
from .config import Settings
from .models import EditSubmission
from .store import DONE, FAILED, QUEUED, RUNNING, JobStore


def build_edit_request(
    image_bytes: bytes, mask_bytes: list[bytes], submission: EditSubmission
) -> EditRequest:
    """Decode payload parts into a validated pipeline request."""
    from ..errors import InvalidInputError

    image = decode_image(image_bytes)
    rasters = [decode_mask(b) for b in mask_bytes]
    pairs = []
    for i, pm in enumerate(submission.pairs):
        if pm.mask_index >= len(rasters):
            raise InvalidInputError(
                f"pairs[{i}].mask_index {pm.mask_index} out of range "
                f"({len(rasters)} masks uploaded)"
            )
        raster = rasters[pm.mask_index]
        if raster.shape != image.shape[:2]:
            raise InvalidInputError(
                f"mask {pm.mask_index} is {raster.shape[1]}x{raster.shape[0]}, "
                f"image is {image.shape[1]}x{image.shape[0]}"
            )
        group = pm.group if pm.group is not None else i + 1
        pairs.append(
            (
                MaskSpec(raster, order=pm.order, group_id=group, prompt_index=i + 1),
                pm.prompt,
            )
        )
    cfg_dict = submission.config.model_dump(exclude={"backend"})
    return EditRequest(image=image, pairs=pairs, config=SamplerConfig.from_dict(cfg_dict))


def execute_job(store: JobStore, settings: Settings, job_id: str) -> None:
    rec = store.get(job_id)
    if rec is None or rec.state != QUEUED:
        return
    store.transition(job_id, RUNNING, started_at=time.time())
    try:
        req = rec.request
        submission = EditSubmission.model_validate(req["submission"])
        image_bytes = store.get_blob(req["image_blob"])
        mask_bytes = [store.get_blob(d) for d in req["mask_blobs"]]
        edit_request = build_edit_request(image_bytes, mask_bytes, submission)
        backend = create_backend(
            req["backend"],
            edit_request.image.shape[:2],
            steps=edit_request.config.steps,
        )
        result = run_edit(
            edit_request,
            backend.denoiser,
            backend.codec,
            backend.encoder,
            schedule=backend.schedule_factory(edit_request.config.steps),
            on_step=lambda step, total: store.set_progress(job_id, step, total),
        )
        result_blob = store.put_blob(encode_png(result.image))
        config_blob = store.put_blob(
            json.dumps(
                resolved_config_dict(edit_request, backend.name), indent=2, sort_keys=True
            ).encode()
        )
        store.transition(
            job_id,
            DONE,
            finished_at=time.time(),
            result_blob=result_blob,
            config_blob=config_blob,
            progress_step=edit_request.config.steps,
            progress_total=edit_request.config.steps,
        )
    except Exception as e:
        store.transition(
            job_id,
            FAILED,
            finished_at=time.time(),
            error=f"{type(e).__name__}: {e}",
        )


class WorkerPool:
    """FIFO job consumers; ``workers=0`` disables execution (useful in tests)."""

    def __init__(self, store: JobStore, settings: Settings):
        self._store = store
        self._settings = settings
        self._queue: queue.Queue[str] = queue.Queue()
        self._stop = threading.Event()
        self._threads = [
            threading.Thread(target=self._loop, name=f"maskedit-worker-{i}", daemon=True)
            for i in range(settings.workers)
        ]

    def start(self):
        for t in self._threads:
            t.start()

    def enqueue(self, job_id: str):
        self._queue.put(job_id)

    def _loop(self):
        while not self._stop.is_set():
            try:
                job_id = self._queue.get(timeout=0.2)
            except queue.Empty:
                continue
            try:
                execute_job(self._store, self._settings, job_id)
            finally:
                self._queue.task_done()

    def shutdown(self, timeout: float = 5.0):
        self._stop.set()
        for t in self._threads:
            t.join(timeout=timeout)
