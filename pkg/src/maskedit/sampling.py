"""End-to-end edit loop: pack prompts, composite masks, denoise with control hooks.

One run performs exactly T denoising steps with three guidance branches each
(fully unconditional, image-only, image+text), independent of how many
instructions are packed. Outside-region latent cells are re-anchored to the
forward-noised original while ``t > blend_stop``, which keeps the background
tied to the input image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .attention import AttentionControlConfig, AttentionDumpRecorder, install_hooks
from .errors import BackendError, InvalidInputError
from .masks import CompositeLabelMap, MaskSpec, build_pyramid, composite
from .prompts import PackedConditioning, concat_prompts, encode_prompts, unconditional_packing

_INIT_NOISE_TAG = 0x5EED_1417


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal fractions for steps 0..T; index 0 is the clean end."""

    alpha_bar: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha_bar, dtype=np.float64)
        if a.ndim != 1 or a.size < 2:
            raise InvalidInputError("alpha_bar must be a 1-D array of length T+1")
        if abs(a[0] - 1.0) > 1e-4:
            raise InvalidInputError(f"alpha_bar[0] must be ~1, got {a[0]}")
        if np.any(np.diff(a) >= 0) or np.any(a <= 0) or np.any(a > 1):
            raise InvalidInputError("alpha_bar must be strictly decreasing within (0, 1]")
        object.__setattr__(self, "alpha_bar", a)

    @property
    def steps(self) -> int:
        return self.alpha_bar.size - 1

    def sigma(self, t: int) -> float:
        """Noise-to-signal level at step t; 0 at the clean end."""
        a = self.alpha_bar[t]
        return math.sqrt((1.0 - a) / a)

    @classmethod
    def linear(cls, T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> "NoiseSchedule":
        if T < 1:
            raise InvalidInputError(f"T must be >= 1, got {T}")
        betas = np.linspace(beta_start, beta_end, T)
        return cls(alpha_bar=np.concatenate([[1.0], np.cumprod(1.0 - betas)]))


class NoiseStream:
    """Reproducible noise keyed by (seed, step), independent of draw order."""

    def __init__(self, seed: int):
        self.seed = int(seed) % 2**63

    def initial(self, shape) -> np.ndarray:
        rng = np.random.default_rng((self.seed, _INIT_NOISE_TAG))
        return rng.standard_normal(shape)

    def at(self, t: int, shape) -> np.ndarray:
        rng = np.random.default_rng((self.seed, int(t)))
        return rng.standard_normal(shape)


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 50
    blend_stop: Optional[int] = None  # None -> ceil(steps / 10)
    text_scale: float = 7.5
    image_scale: float = 1.5
    seed: int = 0
    control: AttentionControlConfig = field(default_factory=AttentionControlConfig)

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidInputError(f"steps must be >= 1, got {self.steps}")
        if self.text_scale < 0 or self.image_scale < 0:
            raise InvalidInputError("guidance scales must be >= 0")
        s = self.resolved_blend_stop
        if not 0 <= s <= self.steps:
            raise InvalidInputError(
                f"blend_stop must lie in [0, {self.steps}], got {s}"
            )

    @property
    def resolved_blend_stop(self) -> int:
        if self.blend_stop is None:
            return math.ceil(self.steps / 10)
        return self.blend_stop

    @classmethod
    def from_dict(cls, data: dict) -> "SamplerConfig":
        """Build a config from a flat mapping (file manifests, request JSON)."""
        from .attention import BackgroundPolicy

        data = dict(data)
        control_kwargs = {}
        for key in (
            "boost_weight",
            "neg_bias",
            "enable_cross",
            "enable_self",
            "enable_boost",
        ):
            if key in data:
                control_kwargs[key] = data.pop(key)
        if "background_policy" in data:
            control_kwargs["background_policy"] = BackgroundPolicy(data.pop("background_policy"))
        sampler_keys = {"steps", "blend_stop", "text_scale", "image_scale", "seed"}
        unknown = set(data) - sampler_keys
        if unknown:
            raise InvalidInputError(f"unknown sampler config keys: {sorted(unknown)}")
        return cls(control=AttentionControlConfig(**control_kwargs), **data)


@dataclass(frozen=True)
class EditRequest:
    image: np.ndarray  # H x W x 3 uint8
    pairs: list[tuple[MaskSpec, str]]
    config: SamplerConfig

    def __post_init__(self):
        img = np.asarray(self.image)
        if img.ndim != 3 or img.shape[2] != 3:
            raise InvalidInputError(f"image must be H x W x 3, got {img.shape}")
        if not self.pairs:
            raise InvalidInputError("at least one mask-prompt pair is required")
        for i, (mask, _prompt) in enumerate(self.pairs):
            if mask.raster.shape != img.shape[:2]:
                raise InvalidInputError(
                    f"mask {i} shape {mask.raster.shape} does not match image {img.shape[:2]}"
                )
            if mask.prompt_index != i + 1:
                raise InvalidInputError(
                    f"mask {i} must carry prompt_index {i + 1}, got {mask.prompt_index}"
                )
        object.__setattr__(self, "image", img.astype(np.uint8))


@dataclass
class RunStats:
    steps: int = 0
    denoiser_calls: int = 0
    blend_invocations: int = 0


@dataclass(frozen=True)
class EditResult:
    image: np.ndarray
    stats: RunStats
    composite: CompositeLabelMap


def forward_noise(
    z: np.ndarray, t: int, schedule: NoiseSchedule, stream: NoiseStream
) -> np.ndarray:
    """Analytic noising of a clean latent to step t: sqrt(a) z + sqrt(1-a) eps."""
    if not 0 <= t <= schedule.steps:
        raise InvalidInputError(f"t={t} outside [0, {schedule.steps}]")
    a = schedule.alpha_bar[t]
    eps = stream.at(t, z.shape)
    return math.sqrt(a) * z + math.sqrt(1.0 - a) * eps


def cfg_combine(
    eps_uu: np.ndarray,
    eps_iu: np.ndarray,
    eps_it: np.ndarray,
    s_image: float,
    s_text: float,
) -> np.ndarray:
    """Dual guidance over the image and text conditioning axes."""
    if not (eps_uu.shape == eps_iu.shape == eps_it.shape):
        raise InvalidInputError(
            f"guidance branches disagree on shape: {eps_uu.shape}, {eps_iu.shape}, {eps_it.shape}"
        )
    # factored form of uu + s_i (iu - uu) + s_t (it - iu): exact at unit scales
    return (1.0 - s_image) * eps_uu + (s_image - s_text) * eps_iu + s_text * eps_it


def blend(
    z_next: np.ndarray,
    z_orig: np.ndarray,
    t: int,
    mask_latent: np.ndarray,
    blend_stop: int,
    schedule: NoiseSchedule,
    stream: NoiseStream,
) -> np.ndarray:
    """Keep edited cells, re-anchor everything else to the noised original.

    Active only while ``t > blend_stop``; the replacement uses the same keyed
    noise stream, so it is reproducible regardless of evaluation order.
    """
    if t <= blend_stop:
        return z_next
    if mask_latent.shape != z_next.shape[:2]:
        raise InvalidInputError(
            f"blend mask shape {mask_latent.shape} does not match latent {z_next.shape[:2]}"
        )
    anchored = forward_noise(z_orig, t - 1, schedule, stream)
    keep = mask_latent.astype(bool)[:, :, None]
    return np.where(keep, z_next, anchored)


def ddim_step(
    z_t: np.ndarray, eps: np.ndarray, t: int, schedule: NoiseSchedule
) -> np.ndarray:
    a_t = schedule.alpha_bar[t]
    a_prev = schedule.alpha_bar[t - 1]
    x0 = (z_t - math.sqrt(1.0 - a_t) * eps) / math.sqrt(a_t)
    return math.sqrt(a_prev) * x0 + math.sqrt(1.0 - a_prev) * eps


def run_edit(
    request: EditRequest,
    denoiser,
    codec,
    encoder,
    *,
    schedule: Optional[NoiseSchedule] = None,
    on_step: Optional[Callable[[int, int], None]] = None,
    attention_recorder: Optional[AttentionDumpRecorder] = None,
) -> EditResult:
    """Execute the full single-pass edit and decode the result.

    Cross-attention control and the boost apply only to the text-conditional
    guidance branch (the others carry no prompt routing). Self-attention
    control applies to every branch: it depends only on the group raster, and
    leaving it off in the unconditional branches would let one region's
    evolving content bleed into another between steps.
    """
    cfg = request.config
    T = cfg.steps
    S = cfg.resolved_blend_stop
    if schedule is None:
        schedule = NoiseSchedule.linear(T)
    if schedule.steps != T:
        raise InvalidInputError(
            f"schedule has {schedule.steps} steps, config wants {T}"
        )

    masks = [m for m, _p in request.pairs]
    prompts = [p for _m, p in request.pairs]
    embeddings = encode_prompts(prompts, encoder)
    packed = concat_prompts(embeddings)
    packed_null = unconditional_packing(len(prompts), encoder)

    clm = composite(masks)
    try:
        z_orig = codec.encode(request.image)
    except InvalidInputError:
        raise
    except Exception as e:
        raise BackendError(f"latent encoding failed: {e}") from e

    latent_hw = z_orig.shape[:2]
    resolutions = [request.image.shape[:2], latent_hw]
    resolutions += [s.resolution for s in denoiser.attention_sites]
    pyramid = build_pyramid(clm, resolutions)
    blend_mask = pyramid.level(latent_hw).any_region

    hooked = install_hooks(
        denoiser,
        pyramid,
        packed,
        cfg.control,
        sigma_of_t=schedule.sigma,
        recorder=attention_recorder,
    )
    self_only = replace(cfg.control, enable_cross=False, enable_boost=False)
    hooked_null = install_hooks(
        denoiser, pyramid, packed_null, self_only, sigma_of_t=schedule.sigma
    )

    stream = NoiseStream(cfg.seed)
    z_t = stream.initial(z_orig.shape)
    stats = RunStats()
    for t in range(T, 0, -1):
        try:
            eps_uu = hooked_null.predict(z_t, t, None, packed_null)
            eps_iu = hooked_null.predict(z_t, t, z_orig, packed_null)
            eps_it = hooked.predict(z_t, t, z_orig, packed)
        except InvalidInputError:
            raise
        except Exception as e:
            raise BackendError(f"denoiser failed at step {t}: {e}") from e
        stats.denoiser_calls += 3
        eps = cfg_combine(eps_uu, eps_iu, eps_it, cfg.image_scale, cfg.text_scale)
        z_t = ddim_step(z_t, eps, t, schedule)
        if t > S:
            z_t = blend(z_t, z_orig, t, blend_mask, S, schedule, stream)
            stats.blend_invocations += 1
        if not np.all(np.isfinite(z_t)):
            raise BackendError(f"non-finite latent after step {t}")
        stats.steps += 1
        if on_step is not None:
            on_step(T - t + 1, T)

    try:
        image_out = codec.decode(z_t)
    except Exception as e:
        raise BackendError(f"latent decoding failed: {e}") from e
    return EditResult(image=image_out, stats=stats, composite=clm)


def resolved_config_dict(request: EditRequest, backend_name: str) -> dict:
    """Sidecar-friendly view of every knob that shaped a run."""
    cfg = request.config
    ctl = cfg.control
    return {
        "backend": backend_name,
        "steps": cfg.steps,
        "blend_stop": cfg.resolved_blend_stop,
        "text_scale": cfg.text_scale,
        "image_scale": cfg.image_scale,
        "seed": cfg.seed,
        "boost_weight": ctl.boost_weight,
        "neg_bias": ctl.neg_bias,
        "enable_cross": ctl.enable_cross,
        "enable_self": ctl.enable_self,
        "enable_boost": ctl.enable_boost,
        "background_policy": ctl.background_policy.value,
        "pairs": [
            {
                "prompt": prompt,
                "order": mask.order,
                "group": mask.group_id,
            }
            for mask, prompt in request.pairs
        ],
        "image_size": list(request.image.shape[:2]),
    }


def with_ablation(cfg: SamplerConfig, arm: str) -> SamplerConfig:
    """Derive one of the standard ablation arms from a base config."""
    ctl = cfg.control
    if arm == "full":
        return cfg
    if arm == "no-self":
        return replace(cfg, control=replace(ctl, enable_self=False))
    if arm == "no-cross":
        return replace(cfg, control=replace(ctl, enable_cross=False))
    if arm == "no-boost":
        return replace(cfg, control=replace(ctl, enable_boost=False))
    raise InvalidInputError(f"unknown ablation arm {arm!r}")
