"""Adapter contracts for denoisers, latent codecs, and attention instrumentation.

A denoiser adapter declares its attention sites up front (id, kind, spatial
resolution) and accepts an optional hook set that contributes additive
pre-softmax bias per site, plus an optional observer that receives each site's
post-softmax attention for probing.
"""

from __future__ import annotations

from typing import Callable, NamedTuple, Optional, Protocol, runtime_checkable

import numpy as np

from ..errors import InvalidInputError
from ..prompts import PackedConditioning, PromptEmbedding


class AttentionSite(NamedTuple):
    site_id: str
    kind: str  # "cross" | "self"
    resolution: tuple[int, int]


# Called after softmax with the site's head-averaged, row-stochastic attention.
AttentionObserver = Callable[[AttentionSite, int, np.ndarray], None]


@runtime_checkable
class BiasHookSet(Protocol):
    """Supplies an additive pre-softmax bias for a site, or None for no bias.

    ``logits`` are the raw scaled scores (..., P, M); the returned bias has
    shape (P, M) and is broadcast uniformly across heads.
    """

    def bias_for(
        self, site: AttentionSite, t: int, logits: np.ndarray
    ) -> Optional[np.ndarray]: ...


@runtime_checkable
class DenoiserAdapter(Protocol):
    attention_sites: tuple[AttentionSite, ...]

    def predict(
        self,
        z_t: np.ndarray,
        t: int,
        image_latent: Optional[np.ndarray],
        cond: PackedConditioning,
        hooks: Optional[BiasHookSet] = None,
        observer: Optional[AttentionObserver] = None,
    ) -> np.ndarray: ...


@runtime_checkable
class LatentCodec(Protocol):
    def encode(self, image: np.ndarray) -> np.ndarray: ...

    def decode(self, latent: np.ndarray) -> np.ndarray: ...


@runtime_checkable
class TextEncoderAdapter(Protocol):
    dim: int

    def encode(self, text: str) -> PromptEmbedding: ...


def probe_attention(
    adapter,
    site_id: str,
    z_t: np.ndarray,
    t: int,
    image_latent: Optional[np.ndarray],
    cond: PackedConditioning,
    hooks: Optional[BiasHookSet] = None,
) -> np.ndarray:
    """Run one forward pass and return the post-softmax attention at one site.

    Works on raw adapters (pass ``hooks`` explicitly) and on hooked adapters
    (their installed hook set applies automatically).
    """
    declared = {s.site_id for s in adapter.attention_sites}
    if site_id not in declared:
        raise InvalidInputError(f"unknown attention site {site_id!r}; declared: {sorted(declared)}")

    captured: list[np.ndarray] = []

    def observer(site: AttentionSite, _t: int, probs: np.ndarray) -> None:
        if site.site_id == site_id:
            captured.append(probs)

    kwargs = {"observer": observer}
    if hooks is not None:
        kwargs["hooks"] = hooks
    adapter.predict(z_t, t, image_latent, cond, **kwargs)
    if not captured:
        raise InvalidInputError(f"site {site_id!r} was not exercised by the forward pass")
    return captured[-1]
