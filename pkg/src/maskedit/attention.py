"""Mask-routed attention biasing for multi-instruction editing.

Two additive pre-softmax biases confine each instruction to its mask region:

* cross bias (pixels x tokens): a pixel in region k may only attend to the
  tokens of prompt k; content/end tokens of that span get a noise-dependent
  positive boost, start/padding tokens are left untouched, every other token
  is blocked with a large negative value.
* self bias (pixels x pixels): pixels may attend within their own group and to
  the background, never into a different group; background queries are free.

Blocked pairs use an additive ``-neg_bias`` (default 1e4) instead of -inf so
the math stays finite in reduced precision; post-softmax mass on blocked pairs
underflows to zero at the default magnitude.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Optional, Union

import numpy as np

from .backends.base import AttentionSite, BiasHookSet
from .errors import InvalidInputError
from .masks import LabelPyramid
from .prompts import PackedConditioning, Role


class BackgroundPolicy(str, enum.Enum):
    # Background pixels attend only to start/padding tokens, which steer
    # generation toward background content.
    SOT_PAD_ONLY = "sot_pad_only"
    # Background rows carry no cross-attention restriction at all.
    UNRESTRICTED = "unrestricted"


@dataclass(frozen=True)
class AttentionControlConfig:
    boost_weight: float = 0.3
    neg_bias: float = 1.0e4
    enable_cross: bool = True
    enable_self: bool = True
    enable_boost: bool = True
    background_policy: BackgroundPolicy = BackgroundPolicy.SOT_PAD_ONLY
    # Optional allow-list of attention resolutions; None applies control at
    # every site the adapter declares.
    resolution_filter: Optional[frozenset[tuple[int, int]]] = None

    def __post_init__(self):
        if self.neg_bias <= 0:
            raise InvalidInputError(f"neg_bias must be > 0, got {self.neg_bias}")
        if self.boost_weight < 0:
            raise InvalidInputError(f"boost_weight must be >= 0, got {self.boost_weight}")

    def applies_at(self, resolution: tuple[int, int]) -> bool:
        return self.resolution_filter is None or tuple(resolution) in self.resolution_filter


@dataclass(frozen=True)
class CrossAttentionBias:
    matrix: np.ndarray  # P x (packed length); entries in {-neg_bias} U [0, boost]


@dataclass(frozen=True)
class SelfAttentionBias:
    matrix: np.ndarray  # P x P; entries in {0, -neg_bias}


def boost_schedule(w: float, sigma_t: float, logits_max: float) -> float:
    """Noise-level-dependent enhancement magnitude: ``w * log(1 + sigma) * logits_max``."""
    return w * math.log1p(sigma_t) * logits_max


def _token_prompt_indices(packed: PackedConditioning) -> np.ndarray:
    out = np.zeros(packed.length, dtype=np.int64)
    for i, (a, b) in enumerate(packed.spans, start=1):
        out[a:b] = i
    return out


def build_cross_bias(
    labels_at_res: np.ndarray,
    packed: PackedConditioning,
    cfg: AttentionControlConfig,
    boost: Union[float, Mapping[int, float]] = 0.0,
) -> CrossAttentionBias:
    """Pixel-to-token bias for one attention resolution.

    ``boost`` is the enhancement applied at content/end positions of a pixel's
    own span, either one scalar or a per-region mapping; negative values are
    clamped to 0 so enhanced entries never fall below the unbiased score.
    """
    labels = np.asarray(labels_at_res).ravel().astype(np.int64)
    P = labels.size
    M = packed.length
    n = packed.n
    top = int(labels.max(initial=0))
    if top > n:
        raise InvalidInputError(f"label {top} has no matching prompt span (n={n})")
    if not cfg.enable_cross:
        return CrossAttentionBias(np.zeros((P, M)))

    per_label = np.zeros(n + 1)
    if isinstance(boost, Mapping):
        for k, v in boost.items():
            per_label[k] = max(0.0, float(v))
    else:
        per_label[1:] = max(0.0, float(boost))
    if not cfg.enable_boost:
        per_label[:] = 0.0

    token_prompt = _token_prompt_indices(packed)
    sotpad = (packed.roles == Role.SOT) | (packed.roles == Role.PAD)

    own_span = labels[:, None] == token_prompt[None, :]  # False on background rows
    matrix = np.full((P, M), -cfg.neg_bias)
    matrix = np.where(own_span & ~sotpad, per_label[labels][:, None], matrix)
    matrix = np.where(own_span & sotpad, 0.0, matrix)

    background = labels == 0
    if cfg.background_policy is BackgroundPolicy.SOT_PAD_ONLY:
        matrix[background] = np.where(sotpad, 0.0, -cfg.neg_bias)
    else:
        matrix[background] = 0.0
    return CrossAttentionBias(matrix)


def build_self_bias(
    groups_at_res: np.ndarray, cfg: AttentionControlConfig
) -> SelfAttentionBias:
    """Pixel-to-pixel bias: block pairs that sit in two different groups."""
    g = np.asarray(groups_at_res).ravel().astype(np.int64)
    P = g.size
    if not cfg.enable_self:
        return SelfAttentionBias(np.zeros((P, P)))
    blocked = (g[:, None] > 0) & (g[None, :] > 0) & (g[:, None] != g[None, :])
    return SelfAttentionBias(np.where(blocked, -cfg.neg_bias, 0.0))


def row_softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def biased_attention(
    Q: np.ndarray, K: np.ndarray, V: np.ndarray, bias: np.ndarray
) -> np.ndarray:
    """Reference biased attention: ``softmax(Q K^T / sqrt(d_k) + bias) V``."""
    Q, K, V, bias = (np.asarray(a) for a in (Q, K, V, bias))
    if Q.ndim != 2 or K.ndim != 2 or V.ndim != 2 or bias.ndim != 2:
        raise InvalidInputError("biased_attention expects 2-D Q, K, V, bias")
    P, dk = Q.shape
    M = K.shape[0]
    if K.shape[1] != dk:
        raise InvalidInputError(f"K width {K.shape[1]} != Q width {dk}")
    if V.shape[0] != M:
        raise InvalidInputError(f"V has {V.shape[0]} rows, expected {M}")
    if bias.shape != (P, M):
        raise InvalidInputError(f"bias shape {bias.shape}, expected {(P, M)}")
    if not np.all(np.isfinite(bias)):
        raise InvalidInputError("bias must be finite")
    logits = Q @ K.T / math.sqrt(dk) + bias
    return row_softmax(logits) @ V


class AttentionDumpRecorder:
    """Appends one JSON line per (step, site) with bias and leakage statistics."""

    def __init__(self, path, neg_bias: float = 1.0e4):
        self._fh = open(path, "w", encoding="utf-8")
        self._neg_bias = neg_bias

    def record(
        self, site: AttentionSite, t: int, logits: np.ndarray, bias: np.ndarray
    ) -> None:
        probs = row_softmax(logits + bias)
        probs = probs.reshape(-1, *probs.shape[-2:]).mean(axis=0)
        blocked = bias <= -self._neg_bias / 2
        leak = probs[blocked]
        entry = {
            "step": int(t),
            "site": site.site_id,
            "kind": site.kind,
            "resolution": list(site.resolution),
            "rows": int(bias.shape[0]),
            "bias_min": float(bias.min()),
            "bias_max": float(bias.max()),
            "blocked_fraction": float(blocked.mean()),
            "leak_mass_max": float(leak.max()) if leak.size else 0.0,
            "leak_mass_total": float(leak.sum()) if leak.size else 0.0,
        }
        self._fh.write(json.dumps(entry) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class ControlHookSet:
    """Realizes the bias construction per site, recomputing the boost per step.

    The enhancement magnitude is evaluated per mask-prompt pair from the raw
    scores inside that pair's own region/span block, so one instruction's
    tokens cannot shift the boost applied to another region.
    """

    def __init__(
        self,
        pyramid: LabelPyramid,
        packed: PackedConditioning,
        cfg: AttentionControlConfig,
        sigma_of_t: Optional[Callable[[int], float]] = None,
        recorder: Optional[AttentionDumpRecorder] = None,
    ):
        self.pyramid = pyramid
        self.packed = packed
        self.cfg = cfg
        self.sigma_of_t = sigma_of_t or (lambda t: 1.0)
        self.recorder = recorder

    def bias_for(
        self, site: AttentionSite, t: int, logits: np.ndarray
    ) -> Optional[np.ndarray]:
        cfg = self.cfg
        if not cfg.applies_at(site.resolution):
            return None
        if site.kind == "cross":
            if not cfg.enable_cross:
                return None
            level = self.pyramid.level(site.resolution)
            boost = self._region_boosts(level.labels, t, logits) if cfg.enable_boost else 0.0
            bias = build_cross_bias(level.labels, self.packed, cfg, boost).matrix
        elif site.kind == "self":
            if not cfg.enable_self:
                return None
            level = self.pyramid.level(site.resolution)
            bias = build_self_bias(level.groups, cfg).matrix
        else:
            raise InvalidInputError(f"unknown attention site kind {site.kind!r}")
        if self.recorder is not None:
            self.recorder.record(site, t, logits, bias)
        return bias

    def _region_boosts(
        self, labels: np.ndarray, t: int, logits: np.ndarray
    ) -> dict[int, float]:
        sigma = float(self.sigma_of_t(t))
        lab = np.asarray(labels).ravel()
        flat = logits.reshape(-1, logits.shape[-2], logits.shape[-1])
        boosts: dict[int, float] = {}
        for k in range(1, self.packed.n + 1):
            rows = lab == k
            if not rows.any():
                boosts[k] = 0.0
                continue
            block = flat[:, rows, self.packed.span_slice(k)]
            boosts[k] = boost_schedule(self.cfg.boost_weight, sigma, float(block.max()))
        return boosts


class HookedDenoiser:
    """Adapter wrapper that applies an installed hook set on every forward pass."""

    def __init__(self, adapter, hook_set: BiasHookSet):
        self.adapter = adapter
        self.hook_set = hook_set

    @property
    def attention_sites(self) -> tuple[AttentionSite, ...]:
        return self.adapter.attention_sites

    def predict(self, z_t, t, image_latent, cond, hooks=None, observer=None):
        if hooks is not None:
            raise InvalidInputError("hooks already installed on this adapter")
        return self.adapter.predict(
            z_t, t, image_latent, cond, hooks=self.hook_set, observer=observer
        )


def install_hooks(
    adapter,
    pyramid: LabelPyramid,
    packed: PackedConditioning,
    cfg: AttentionControlConfig,
    *,
    sigma_of_t: Optional[Callable[[int], float]] = None,
    recorder: Optional[AttentionDumpRecorder] = None,
) -> HookedDenoiser:
    """Wrap the adapter so every declared site receives its bias each step.

    Every site resolution the config applies at must have a pyramid level;
    missing levels are rejected here rather than mid-run.
    """
    for site in adapter.attention_sites:
        if cfg.applies_at(site.resolution) and tuple(site.resolution) not in pyramid.levels:
            raise InvalidInputError(
                f"attention site {site.site_id!r} at resolution {site.resolution} "
                "has no pyramid level"
            )
    if recorder is not None:
        recorder._neg_bias = cfg.neg_bias
    hook_set = ControlHookSet(pyramid, packed, cfg, sigma_of_t, recorder)
    return HookedDenoiser(adapter, hook_set)


def ablation_arms(base: AttentionControlConfig) -> dict[str, AttentionControlConfig]:
    """The four standard control configurations used for ablation sweeps."""
    return {
        "full": base,
        "no-self": replace(base, enable_self=False),
        "no-cross": replace(base, enable_cross=False),
        "no-boost": replace(base, enable_boost=False),
    }
