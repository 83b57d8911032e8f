"""Benchmark harness: case manifests, pluggable adherence scorers, sweep reports.

A case directory holds one subdirectory per case with a ``case.json`` manifest
(schema in ``maskedit/data/schema/bench_case.schema.json``). Methods are named
sampler configurations; the runner fills a (case x method) grid, records every
failure without aborting the sweep, and aggregates per-metric means.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np
import yaml
from jsonschema import Draft7Validator
from PIL import Image

from .backends import create_backend
from .data import bench_case_schema_path, sample_cases_dir
from .errors import InvalidInputError
from .masks import MaskSpec, load_mask_png
from .sampling import EditRequest, SamplerConfig, run_edit

__all__ = [
    "BenchCase",
    "CaseEdit",
    "MethodConfig",
    "MetricReport",
    "ToyScorer",
    "ClipScorer",
    "PickScorer",
    "ablation_methods",
    "load_cases",
    "load_methods",
    "run_benchmark",
    "score_case",
    "sample_cases_dir",
    "write_report",
]


@dataclass(frozen=True)
class CaseEdit:
    mask_path: Path
    prompt: str
    order: int
    group: int = 1


@dataclass(frozen=True)
class BenchCase:
    id: str
    image_path: Path
    edits: list[CaseEdit]
    overrides: dict = field(default_factory=dict)

    def load_image(self) -> np.ndarray:
        with Image.open(self.image_path) as im:
            return np.asarray(im.convert("RGB"))

    def build_request(self, base: SamplerConfig) -> EditRequest:
        merged = {**_config_as_dict(base), **self.overrides}
        config = SamplerConfig.from_dict(merged)
        image = self.load_image()
        pairs = []
        for i, edit in enumerate(self.edits):
            raster = load_mask_png(edit.mask_path)
            pairs.append(
                (
                    MaskSpec(raster, order=edit.order, group_id=edit.group, prompt_index=i + 1),
                    edit.prompt,
                )
            )
        return EditRequest(image=image, pairs=pairs, config=config)


def _config_as_dict(cfg: SamplerConfig) -> dict:
    ctl = cfg.control
    return {
        "steps": cfg.steps,
        "blend_stop": cfg.resolved_blend_stop,
        "text_scale": cfg.text_scale,
        "image_scale": cfg.image_scale,
        "seed": cfg.seed,
        "boost_weight": ctl.boost_weight,
        "enable_cross": ctl.enable_cross,
        "enable_self": ctl.enable_self,
        "enable_boost": ctl.enable_boost,
        "background_policy": ctl.background_policy.value,
    }


_validator = Draft7Validator(json.loads(bench_case_schema_path().read_text()))


def _json_pointer(error) -> str:
    return "/" + "/".join(str(p) for p in error.absolute_path)


def load_cases(directory) -> list[BenchCase]:
    """Load and validate every case.json under ``directory``.

    All problems are gathered and raised together; each message names the
    offending manifest and the JSON-pointer path of the violation.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise InvalidInputError(f"case directory {directory} does not exist")
    cases: list[BenchCase] = []
    problems: list[str] = []
    for manifest in sorted(directory.rglob("case.json")):
        try:
            raw = json.loads(manifest.read_text())
        except json.JSONDecodeError as e:
            problems.append(f"{manifest}: invalid JSON: {e}")
            continue
        errors = sorted(_validator.iter_errors(raw), key=_json_pointer)
        if errors:
            problems.extend(
                f"{manifest}: {_json_pointer(e) or '/'}: {e.message}" for e in errors
            )
            continue
        base = manifest.parent
        image_path = base / raw["image"]
        if not image_path.is_file():
            problems.append(f"{manifest}: /image: file not found: {raw['image']}")
            continue
        with Image.open(image_path) as im:
            image_hw = (im.height, im.width)
        edits = []
        ok = True
        for i, e in enumerate(raw["edits"]):
            mask_path = base / e["mask"]
            if not mask_path.is_file():
                problems.append(f"{manifest}: /edits/{i}/mask: file not found: {e['mask']}")
                ok = False
                continue
            raster = load_mask_png(mask_path)
            if raster.shape != image_hw:
                problems.append(
                    f"{manifest}: /edits/{i}/mask: mask {raster.shape} does not match "
                    f"image {image_hw}"
                )
                ok = False
                continue
            edits.append(
                CaseEdit(
                    mask_path=mask_path,
                    prompt=e["prompt"],
                    order=e["order"],
                    group=e.get("group", 1),
                )
            )
        if ok:
            cases.append(
                BenchCase(
                    id=raw["id"],
                    image_path=image_path,
                    edits=edits,
                    overrides=raw.get("overrides", {}),
                )
            )
    if problems:
        raise InvalidInputError("invalid bench cases:\n" + "\n".join(problems))
    return sorted(cases, key=lambda c: c.id)


# ---------------------------------------------------------------------------
# Scorers
# ---------------------------------------------------------------------------

class ToyScorer:
    """Seeded embedding cosine; deterministic, dependency-free.

    An image scored against its own ``reconstruction_prompt`` yields 1.0, which
    anchors the scale without any pretrained weights.
    """

    name = "toy-cosine"

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim = dim
        self.seed = seed

    @property
    def identity(self) -> str:
        return f"{self.name}/dim={self.dim},seed={self.seed}"

    def available(self) -> bool:
        return True

    def _unit(self, key: int) -> np.ndarray:
        v = np.random.default_rng((self.seed, key)).standard_normal(self.dim)
        return v / np.linalg.norm(v)

    def _image_key(self, image: np.ndarray) -> int:
        digest = hashlib.blake2b(
            image.tobytes() + repr(image.shape).encode(), digest_size=8
        ).digest()
        return int.from_bytes(digest, "big")

    def reconstruction_prompt(self, image: np.ndarray) -> str:
        return f"image:{self._image_key(image):016x}"

    def _text_key(self, text: str) -> int:
        if text.startswith("image:"):
            try:
                return int(text[6:], 16)
            except ValueError:
                pass
        digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "big")

    def score(self, image: np.ndarray, prompt: str) -> float:
        return float(self._unit(self._image_key(image)) @ self._unit(self._text_key(prompt)))


class ClipScorer:
    """CLIP image-text similarity (scaled cosine); needs pretrained weights."""

    name = "clip-score"

    def __init__(self, model_ref: str = "openai/clip-vit-base-patch32"):
        self.model_ref = model_ref
        self._bundle = None
        self._error: Optional[str] = None

    @property
    def identity(self) -> str:
        return f"{self.name}/{self.model_ref}"

    def _load(self):
        if self._bundle is None and self._error is None:
            try:
                import torch  # noqa: F401
                from transformers import CLIPModel, CLIPProcessor

                model = CLIPModel.from_pretrained(self.model_ref)
                proc = CLIPProcessor.from_pretrained(self.model_ref)
                self._bundle = (model, proc)
            except Exception as e:
                self._error = str(e)
        return self._bundle

    def available(self) -> bool:
        return self._load() is not None

    def score(self, image: np.ndarray, prompt: str) -> float:
        import torch

        model, proc = self._load()
        inputs = proc(
            text=[prompt], images=Image.fromarray(image), return_tensors="pt", padding=True
        )
        with torch.no_grad():
            img = model.get_image_features(pixel_values=inputs.pixel_values)
            txt = model.get_text_features(
                input_ids=inputs.input_ids, attention_mask=inputs.attention_mask
            )
        cos = torch.nn.functional.cosine_similarity(img, txt).item()
        return max(100.0 * cos, 0.0)


class PickScorer:
    """Human-preference reward model scoring; needs pretrained weights."""

    name = "pick-score"

    def __init__(
        self,
        model_ref: str = "yuvalkirstain/PickScore_v1",
        processor_ref: str = "laion/CLIP-ViT-H-14-laion2B-s32B-b79K",
    ):
        self.model_ref = model_ref
        self.processor_ref = processor_ref
        self._bundle = None
        self._error: Optional[str] = None

    @property
    def identity(self) -> str:
        return f"{self.name}/{self.model_ref}"

    def _load(self):
        if self._bundle is None and self._error is None:
            try:
                import torch  # noqa: F401
                from transformers import AutoModel, AutoProcessor

                model = AutoModel.from_pretrained(self.model_ref)
                proc = AutoProcessor.from_pretrained(self.processor_ref)
                self._bundle = (model, proc)
            except Exception as e:
                self._error = str(e)
        return self._bundle

    def available(self) -> bool:
        return self._load() is not None

    def score(self, image: np.ndarray, prompt: str) -> float:
        import torch

        model, proc = self._load()
        image_inputs = proc(images=Image.fromarray(image), return_tensors="pt")
        text_inputs = proc(
            text=[prompt], padding=True, truncation=True, max_length=77, return_tensors="pt"
        )
        with torch.no_grad():
            img = model.get_image_features(**image_inputs)
            txt = model.get_text_features(**text_inputs)
            img = img / img.norm(dim=-1, keepdim=True)
            txt = txt / txt.norm(dim=-1, keepdim=True)
            score = model.logit_scale.exp() * (txt @ img.T)
        return float(score.item())


def scoring_prompt(case: BenchCase) -> str:
    """Single scoring prompt for multi-edit cases: prompts joined with ', '."""
    return ", ".join(e.prompt for e in case.edits)


def score_case(edited_image: np.ndarray, case: BenchCase, scorers) -> dict[str, Optional[float]]:
    """Higher is better; unavailable scorers mark their metric absent."""
    prompt = scoring_prompt(case)
    out: dict[str, Optional[float]] = {}
    for scorer in scorers:
        if not scorer.available():
            out[scorer.name] = None
            continue
        out[scorer.name] = float(scorer.score(edited_image, prompt))
    return out


# ---------------------------------------------------------------------------
# Methods and the sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MethodConfig:
    name: str
    backend: str = "toy"
    config: dict = field(default_factory=dict)

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig.from_dict(self.config)

    @property
    def fingerprint(self) -> str:
        blob = json.dumps(
            {"name": self.name, "backend": self.backend, "config": self.config},
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def ablation_methods(base: Optional[dict] = None, backend: str = "toy") -> list[MethodConfig]:
    """The four standard arms: full control plus one axis disabled at a time."""
    base = dict(base or {})
    return [
        MethodConfig("full", backend, base),
        MethodConfig("no-self", backend, {**base, "enable_self": False}),
        MethodConfig("no-cross", backend, {**base, "enable_cross": False}),
        MethodConfig("no-boost", backend, {**base, "enable_boost": False}),
    ]


def load_methods(path) -> list[MethodConfig]:
    raw = yaml.safe_load(Path(path).read_text())
    if not isinstance(raw, dict) or "methods" not in raw:
        raise InvalidInputError("methods file must contain a top-level 'methods' list")
    methods = []
    for i, m in enumerate(raw["methods"]):
        if "name" not in m:
            raise InvalidInputError(f"methods[{i}] is missing 'name'")
        methods.append(
            MethodConfig(
                name=m["name"],
                backend=m.get("backend", "toy"),
                config=m.get("config", {}),
            )
        )
    if not methods:
        raise InvalidInputError("methods file lists no methods")
    return methods


@dataclass
class MetricReport:
    cases: list[str]
    methods: list[str]
    cells: dict  # method -> case -> {status, metrics, runtime_s, error?}
    aggregates: dict  # method -> metric -> mean over scored cases
    scorer_identities: list[str]
    backend_identities: dict[str, str]
    method_fingerprints: dict[str, str]
    created_at: str

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)


def _run_cell(case: BenchCase, method: MethodConfig, scorers) -> dict:
    started = time.monotonic()
    try:
        request = case.build_request(method.sampler_config())
        backend = create_backend(
            method.backend, request.image.shape[:2], steps=request.config.steps
        )
        result = run_edit(
            request,
            backend.denoiser,
            backend.codec,
            backend.encoder,
            schedule=backend.schedule_factory(request.config.steps),
        )
        metrics = score_case(result.image, case, scorers)
        return {
            "status": "ok",
            "metrics": metrics,
            "runtime_s": time.monotonic() - started,
            "backend": backend.identity,
        }
    except Exception as e:
        return {
            "status": "failed",
            "error": f"{type(e).__name__}: {e}",
            "runtime_s": time.monotonic() - started,
        }


def run_benchmark(
    cases: list[BenchCase],
    methods: list[MethodConfig],
    scorers=None,
    workers: int = 1,
) -> MetricReport:
    """Fill the full (case x method) grid; cell failures never abort the sweep."""
    if not cases:
        raise InvalidInputError("no cases to run")
    if not methods:
        raise InvalidInputError("no methods to run")
    scorers = list(scorers) if scorers is not None else [ToyScorer()]

    grid = [(method, case) for method in methods for case in cases]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda mc: _run_cell(mc[1], mc[0], scorers), grid))
    else:
        results = [_run_cell(case, method, scorers) for method, case in grid]

    cells: dict[str, dict[str, dict]] = {m.name: {} for m in methods}
    for (method, case), cell in zip(grid, results):
        cells[method.name][case.id] = cell

    aggregates: dict[str, dict[str, float]] = {}
    for method in methods:
        agg: dict[str, float] = {}
        for scorer in scorers:
            vals = [
                c["metrics"][scorer.name]
                for c in cells[method.name].values()
                if c["status"] == "ok" and c["metrics"].get(scorer.name) is not None
            ]
            if vals:
                agg[scorer.name] = float(np.mean(vals))
        runtimes = [c["runtime_s"] for c in cells[method.name].values()]
        agg["runtime_s"] = float(np.mean(runtimes))
        aggregates[method.name] = agg

    backend_identities = {}
    for method in methods:
        seen = {c.get("backend") for c in cells[method.name].values() if c.get("backend")}
        backend_identities[method.name] = sorted(seen)[0] if seen else method.backend

    return MetricReport(
        cases=[c.id for c in cases],
        methods=[m.name for m in methods],
        cells=cells,
        aggregates=aggregates,
        scorer_identities=[s.identity for s in scorers],
        backend_identities=backend_identities,
        method_fingerprints={m.name: m.fingerprint for m in methods},
        created_at=datetime.now(timezone.utc).isoformat(),
    )


def write_report(report: MetricReport, out_base) -> tuple[Path, Path]:
    """Write ``<base>.json`` (stable machine interface) and ``<base>.md``."""
    base = Path(out_base)
    if base.suffix in (".json", ".md"):
        base = base.with_suffix("")
    json_path = base.with_suffix(".json")
    md_path = base.with_suffix(".md")
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(report.to_json())

    metrics = sorted({k for agg in report.aggregates.values() for k in agg})
    lines = ["# Benchmark report", ""]
    lines.append(f"- created: {report.created_at}")
    lines.append(f"- scorers: {', '.join(report.scorer_identities)}")
    lines.append(f"- cases: {len(report.cases)}")
    lines.append("")
    header = "| metric | " + " | ".join(report.methods) + " |"
    sep = "|---" * (len(report.methods) + 1) + "|"
    lines += [header, sep]
    for metric in metrics:
        row = [metric]
        for m in report.methods:
            val = report.aggregates[m].get(metric)
            row.append(f"{val:.4f}" if val is not None else "n/a")
        lines.append("| " + " | ".join(row) + " |")
    lines.append("")
    lines.append("## Per-case status")
    lines.append("")
    for m in report.methods:
        failed = [cid for cid, c in report.cells[m].items() if c["status"] != "ok"]
        note = f" (failed: {', '.join(failed)})" if failed else ""
        lines.append(f"- {m}: {len(report.cells[m]) - len(failed)}/{len(report.cells[m])} ok{note}")
    md_path.write_text("\n".join(lines) + "\n")
    return json_path, md_path
