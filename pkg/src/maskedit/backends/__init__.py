"""Backend registry: toy (deterministic, dependency-free) and ip2p (pretrained)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from ..errors import InvalidInputError
from .base import (
    AttentionObserver,
    AttentionSite,
    BiasHookSet,
    DenoiserAdapter,
    LatentCodec,
    TextEncoderAdapter,
    probe_attention,
)
from .toy import ToyCodec, ToyDenoiser, ToyTextEncoder

BACKEND_NAMES = ("toy", "ip2p")


@dataclass(frozen=True)
class Backend:
    """One loaded backend bound to a concrete image geometry."""

    name: str
    denoiser: DenoiserAdapter
    codec: LatentCodec
    encoder: TextEncoderAdapter
    schedule_factory: Callable[[int], "object"]
    identity: str = ""


def create_toy_backend(
    image_hw: tuple[int, int], *, weights_seed: int = 0, text_dim: int = 32
) -> Backend:
    from ..sampling import NoiseSchedule

    codec = ToyCodec()
    h, w, channels = codec.latent_shape(image_hw)
    denoiser = ToyDenoiser(
        (h, w), latent_channels=channels, text_dim=text_dim, weights_seed=weights_seed
    )
    return Backend(
        name="toy",
        denoiser=denoiser,
        codec=codec,
        encoder=ToyTextEncoder(dim=text_dim, seed=weights_seed),
        schedule_factory=NoiseSchedule.linear,
        identity=f"toy/seed={weights_seed}",
    )


def create_backend(
    name: str, image_hw: tuple[int, int], *, steps: int = 50, **options
) -> Backend:
    """Instantiate a backend for one image geometry; heavy weights load lazily.

    ``steps`` only matters to pretrained backends, whose timestep mapping is
    bound at load time.
    """
    if name == "toy":
        return create_toy_backend(image_hw, **options)
    if name == "ip2p":
        from .ip2p import create_ip2p_backend

        return create_ip2p_backend(image_hw, steps=steps, **options)
    raise InvalidInputError(f"unknown backend {name!r}; available: {BACKEND_NAMES}")


__all__ = [
    "AttentionObserver",
    "AttentionSite",
    "Backend",
    "BACKEND_NAMES",
    "BiasHookSet",
    "DenoiserAdapter",
    "LatentCodec",
    "TextEncoderAdapter",
    "ToyCodec",
    "ToyDenoiser",
    "ToyTextEncoder",
    "create_backend",
    "create_toy_backend",
    "probe_attention",
]
