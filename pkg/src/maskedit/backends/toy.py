"""Deterministic desk-scale backend: real attention math, no downloads.

The denoiser is a small two-level network with genuine softmax cross- and
self-attention at two spatial resolutions, so bias hooks flow through the same
math as a full model. The codec is an exactly invertible space-to-depth
rearrangement, and the text encoder hashes whitespace tokens into seeded
embedding vectors with real start/end/padding tokenization.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from typing import Optional

import numpy as np

from ..errors import InvalidInputError
from ..prompts import SEQ_LEN, PackedConditioning, PromptEmbedding, Role
from .base import AttentionObserver, AttentionSite, BiasHookSet

_SOT_ID = 0
_EOT_ID = 1
_PAD_ID = 2
_WORD_BASE = 3
_VOCAB_BUCKETS = 1_000_003


def _word_token_id(word: str) -> int:
    digest = hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest()
    return _WORD_BASE + int.from_bytes(digest, "big") % _VOCAB_BUCKETS


class ToyTextEncoder:
    """Seeded hash-to-vector encoder; identical words yield identical embeddings."""

    def __init__(self, dim: int = 32, seed: int = 0):
        self.dim = dim
        self._seed = seed
        self._cache: dict[int, np.ndarray] = {}

    def _embedding(self, token_id: int) -> np.ndarray:
        vec = self._cache.get(token_id)
        if vec is None:
            rng = np.random.default_rng((self._seed, token_id))
            vec = rng.standard_normal(self.dim) / math.sqrt(self.dim)
            self._cache[token_id] = vec
        return vec

    def tokenize(self, text: str) -> tuple[list[int], np.ndarray]:
        """Token ids and roles for a fixed-length sequence: SOT words EOT PAD..."""
        words = text.split()
        limit = SEQ_LEN - 2
        if len(words) > limit:
            warnings.warn(
                f"prompt has {len(words)} tokens, truncating to {limit}",
                stacklevel=3,
            )
            words = words[:limit]
        ids = [_SOT_ID] + [_word_token_id(w) for w in words] + [_EOT_ID]
        roles = [Role.SOT] + [Role.CONTENT] * len(words) + [Role.EOT]
        pad = SEQ_LEN - len(ids)
        ids += [_PAD_ID] * pad
        roles += [Role.PAD] * pad
        return ids, np.array(roles, dtype=np.int8)

    def encode(self, text: str) -> PromptEmbedding:
        ids, roles = self.tokenize(text)
        matrix = np.stack([self._embedding(i) for i in ids])
        return PromptEmbedding(matrix=matrix, roles=roles)


class ToyCodec:
    """Exactly invertible latent codec: 8x8 pixel blocks become channels."""

    factor = 8

    def encode(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image)
        if image.ndim != 3 or image.shape[2] != 3:
            raise InvalidInputError(f"expected H x W x 3 image, got {image.shape}")
        H, W, C = image.shape
        f = self.factor
        if H % f or W % f:
            raise InvalidInputError(f"image dimensions must be divisible by {f}, got {H}x{W}")
        x = image.astype(np.float64) / 127.5 - 1.0
        h, w = H // f, W // f
        return x.reshape(h, f, w, f, C).transpose(0, 2, 1, 3, 4).reshape(h, w, f * f * C)

    def decode(self, latent: np.ndarray) -> np.ndarray:
        latent = np.asarray(latent)
        f = self.factor
        h, w, ch = latent.shape
        C = ch // (f * f)
        x = latent.reshape(h, w, f, f, C).transpose(0, 2, 1, 3, 4).reshape(h * f, w * f, C)
        return np.clip(np.rint((x + 1.0) * 127.5), 0, 255).astype(np.uint8)

    def latent_shape(self, image_hw: tuple[int, int]) -> tuple[int, int, int]:
        H, W = image_hw
        return H // self.factor, W // self.factor, self.factor * self.factor * 3


def _timestep_embedding(t: int, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = t * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])


class ToyDenoiser:
    """Two-level denoiser with self and cross attention at both resolutions.

    The output convexly mixes a bounded attention feature with the noisy input,
    keeping the sampling dynamics finite. Fully determined by ``weights_seed``.
    """

    def __init__(
        self,
        latent_hw: tuple[int, int],
        latent_channels: int = 192,
        text_dim: int = 32,
        d_model: int = 32,
        heads: int = 2,
        weights_seed: int = 0,
        mix: float = 0.3,
    ):
        h, w = latent_hw
        if h % 2 or w % 2:
            raise InvalidInputError(
                f"toy denoiser needs an even latent grid, got {h}x{w} "
                "(image dimensions must be divisible by 16)"
            )
        if d_model % heads:
            raise InvalidInputError("d_model must be divisible by heads")
        self.latent_hw = (h, w)
        self.latent_channels = latent_channels
        self.text_dim = text_dim
        self.d_model = d_model
        self.heads = heads
        self.mix = mix
        self.attention_sites = (
            AttentionSite("down.self", "self", (h, w)),
            AttentionSite("down.cross", "cross", (h, w)),
            AttentionSite("mid.self", "self", (h // 2, w // 2)),
            AttentionSite("mid.cross", "cross", (h // 2, w // 2)),
        )

        rng = np.random.default_rng((weights_seed, 0xA77E))
        d, c, td = d_model, latent_channels, text_dim

        def mat(fan_in, fan_out):
            return rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in)

        self.w_in = mat(c, d)
        self.w_img = mat(c, d)
        self.w_time = mat(d, d)
        self.w_out = mat(d, c)
        self.proj = {}
        for level in ("down", "mid"):
            self.proj[f"{level}.self"] = (mat(d, d), mat(d, d), mat(d, d), mat(d, d))
            self.proj[f"{level}.cross"] = (mat(d, d), mat(td, d), mat(td, d), mat(d, d))

    def _attend(
        self,
        queries: np.ndarray,
        keyvals: np.ndarray,
        site: AttentionSite,
        t: int,
        hooks: Optional[BiasHookSet],
        observer: Optional[AttentionObserver],
    ) -> np.ndarray:
        wq, wk, wv, wo = self.proj[site.site_id]
        P = queries.shape[0]
        M = keyvals.shape[0]
        dh = self.d_model // self.heads
        q = (queries @ wq).reshape(P, self.heads, dh).transpose(1, 0, 2)
        k = (keyvals @ wk).reshape(M, self.heads, dh).transpose(1, 0, 2)
        v = (keyvals @ wv).reshape(M, self.heads, dh).transpose(1, 0, 2)
        logits = q @ k.transpose(0, 2, 1) / math.sqrt(dh)
        if hooks is not None:
            bias = hooks.bias_for(site, t, logits)
            if bias is not None:
                logits = logits + bias[None, :, :]
        shifted = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        probs = e / e.sum(axis=-1, keepdims=True)
        if observer is not None:
            observer(site, t, probs.mean(axis=0))
        out = (probs @ v).transpose(1, 0, 2).reshape(P, self.d_model)
        return out @ wo

    def predict(
        self,
        z_t: np.ndarray,
        t: int,
        image_latent: Optional[np.ndarray],
        cond: PackedConditioning,
        hooks: Optional[BiasHookSet] = None,
        observer: Optional[AttentionObserver] = None,
    ) -> np.ndarray:
        h, w = self.latent_hw
        if z_t.shape != (h, w, self.latent_channels):
            raise InvalidInputError(
                f"latent shape {z_t.shape} does not match adapter geometry "
                f"{(h, w, self.latent_channels)}"
            )
        if cond.dim != self.text_dim:
            raise InvalidInputError(
                f"conditioning width {cond.dim} != adapter text width {self.text_dim}"
            )
        P = h * w
        z_flat = z_t.reshape(P, -1)
        base = z_flat @ self.w_in
        if image_latent is not None:
            base = base + image_latent.reshape(P, -1) @ self.w_img
        base = np.tanh(base + _timestep_embedding(t, self.d_model) @ self.w_time)

        # Both levels read from the shared pixelwise base features, so one
        # level's attention output never becomes another level's keys.
        a1 = self._attend(base, base, self.attention_sites[0], t, hooks, observer)
        b1 = self._attend(base + a1, cond.matrix, self.attention_sites[1], t, hooks, observer)
        x = base + a1 + b1

        h2, w2 = h // 2, w // 2
        y0 = base.reshape(h, w, -1).reshape(h2, 2, w2, 2, -1).mean(axis=(1, 3))
        y0 = y0.reshape(h2 * w2, -1)
        a2 = self._attend(y0, y0, self.attention_sites[2], t, hooks, observer)
        b2 = self._attend(y0 + a2, cond.matrix, self.attention_sites[3], t, hooks, observer)
        y = y0 + a2 + b2

        up = y.reshape(h2, w2, -1).repeat(2, axis=0).repeat(2, axis=1).reshape(P, -1)
        feat = np.tanh(np.tanh(x + up) @ self.w_out)
        eps = (1.0 - self.mix) * feat + self.mix * z_flat
        return eps.reshape(h, w, self.latent_channels)
