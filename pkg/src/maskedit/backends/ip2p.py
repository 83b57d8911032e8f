"""Pretrained instruction-editing backend over a diffusers pipeline.

Weights are configuration, never vendored: the model reference defaults to the
public instruct-pix2pix checkpoint and can point at any compatible local path.
All heavy imports are deferred so the rest of the package works without torch.

The adapter enumerates every cross/self attention layer of the UNet, replaces
its processor with one that adds the hook-supplied bias to the pre-softmax
scores (computed in float32), and exposes the same predict/probe surface as
the toy backend.
"""

from __future__ import annotations

import os
import re
from typing import Optional

import numpy as np

from ..errors import BackendError, InvalidInputError
from ..prompts import SEQ_LEN, PackedConditioning, PromptEmbedding, Role
from .base import AttentionObserver, AttentionSite, BiasHookSet

DEFAULT_MODEL_REF = "timbrooks/instruct-pix2pix"
_CLIP_SOT_ID = 49406
_CLIP_EOT_ID = 49407

_BLOCK_RE = re.compile(r"(down_blocks|up_blocks)\.(\d+)|(mid_block)")


def attention_site_from_name(name: str, latent_hw: tuple[int, int]) -> AttentionSite:
    """Map a UNet attention module path to (site id, kind, resolution).

    SD-1.x geometry: down block i runs at latent / 2^i, the mid block at
    latent / 8, and up block j at latent / 2^(3-j).
    """
    if ".attn1" in name:
        kind = "self"
    elif ".attn2" in name:
        kind = "cross"
    else:
        raise InvalidInputError(f"not an attention module path: {name!r}")
    m = _BLOCK_RE.search(name)
    if m is None:
        raise InvalidInputError(f"cannot locate UNet block in {name!r}")
    if m.group(3) == "mid_block":
        factor = 8
    else:
        block, idx = m.group(1), int(m.group(2))
        factor = 2**idx if block == "down_blocks" else 2 ** (3 - idx)
    h, w = latent_hw
    if h % factor or w % factor:
        raise InvalidInputError(
            f"latent {h}x{w} not divisible by block factor {factor} for {name!r}"
        )
    site_id = name.removesuffix(".processor")
    return AttentionSite(site_id, kind, (h // factor, w // factor))


def roles_from_clip_ids(
    ids, sot_id: int = _CLIP_SOT_ID, eot_id: int = _CLIP_EOT_ID
) -> np.ndarray:
    """Derive token roles from CLIP ids; padding reuses the end-of-text id."""
    roles = np.full(len(ids), Role.CONTENT, dtype=np.int8)
    roles[0] = Role.SOT
    seen_eot = False
    for i, tok in enumerate(ids):
        if i == 0:
            continue
        if tok == eot_id:
            roles[i] = Role.PAD if seen_eot else Role.EOT
            seen_eot = True
        elif seen_eot:
            roles[i] = Role.PAD
    if not seen_eot:
        raise InvalidInputError("token sequence has no end-of-text id")
    return roles


def subsample_alpha_bar(alphas_cumprod: np.ndarray, T: int) -> np.ndarray:
    """Pick T evenly spaced entries of a trained cumulative-alpha table.

    Returns length T+1 with a clean 1.0 prepended; entry t corresponds to the
    trained timestep used at sampling step t.
    """
    N = len(alphas_cumprod)
    if T < 1 or T > N:
        raise InvalidInputError(f"T must be in [1, {N}], got {T}")
    out = np.empty(T + 1)
    out[0] = 1.0
    for t in range(1, T + 1):
        out[t] = float(alphas_cumprod[round(t * N / T) - 1])
    return out


def model_timestep(t: int, T: int, trained_steps: int = 1000) -> int:
    return round(t * trained_steps / T) - 1


def _require_deps():
    try:
        import torch  # noqa: F401
        from diffusers import StableDiffusionInstructPix2PixPipeline  # noqa: F401
    except ImportError as e:
        raise BackendError(
            "the ip2p backend needs the optional 'real' dependencies; "
            "install them with: pip install 'maskedit[real]'"
        ) from e


class _RunContext:
    """Shared mutable state between one predict() call and its processors."""

    def __init__(self):
        self.hooks: Optional[BiasHookSet] = None
        self.observer: Optional[AttentionObserver] = None
        self.step: int = 0


class _BiasedProcessor:
    """Attention processor that adds the hook bias before softmax (float32)."""

    def __init__(self, site: AttentionSite, ctx: _RunContext):
        self.site = site
        self.ctx = ctx

    def __call__(self, attn, hidden_states, encoder_hidden_states=None, attention_mask=None, **kwargs):
        import torch

        residual = hidden_states
        if attn.group_norm is not None:
            hidden_states = attn.group_norm(hidden_states.transpose(1, 2)).transpose(1, 2)
        query = attn.to_q(hidden_states)
        context = hidden_states if encoder_hidden_states is None else encoder_hidden_states
        if attn.norm_cross is not None and encoder_hidden_states is not None:
            context = attn.norm_encoder_hidden_states(context)
        key = attn.to_k(context)
        value = attn.to_v(context)

        query = attn.head_to_batch_dim(query)
        key = attn.head_to_batch_dim(key)
        value = attn.head_to_batch_dim(value)

        scores = torch.baddbmm(
            torch.empty(query.shape[0], query.shape[1], key.shape[1], dtype=torch.float32, device=query.device),
            query.float(),
            key.float().transpose(-1, -2),
            beta=0,
            alpha=attn.scale,
        )
        ctx = self.ctx
        if ctx.hooks is not None:
            bias = ctx.hooks.bias_for(self.site, ctx.step, scores.cpu().numpy())
            if bias is not None:
                scores = scores + torch.as_tensor(bias, dtype=scores.dtype, device=scores.device)
        probs = scores.softmax(dim=-1)
        if ctx.observer is not None:
            ctx.observer(self.site, ctx.step, probs.mean(dim=0).cpu().numpy())
        hidden_states = torch.bmm(probs.to(value.dtype), value)
        hidden_states = attn.batch_to_head_dim(hidden_states)
        hidden_states = attn.to_out[0](hidden_states)
        hidden_states = attn.to_out[1](hidden_states)
        if attn.residual_connection:
            hidden_states = hidden_states + residual
        return hidden_states / attn.rescale_output_factor


class Ip2pTextEncoder:
    def __init__(self, tokenizer, text_encoder, device):
        self._tokenizer = tokenizer
        self._encoder = text_encoder
        self._device = device
        self.dim = text_encoder.config.hidden_size

    def encode(self, text: str) -> PromptEmbedding:
        import torch

        tok = self._tokenizer(
            text,
            padding="max_length",
            max_length=SEQ_LEN,
            truncation=True,
            return_tensors="pt",
        )
        ids = tok.input_ids[0].tolist()
        with torch.no_grad():
            out = self._encoder(tok.input_ids.to(self._device))[0][0]
        return PromptEmbedding(
            matrix=out.float().cpu().numpy(), roles=roles_from_clip_ids(ids)
        )


class Ip2pCodec:
    def __init__(self, vae, device):
        self._vae = vae
        self._device = device
        self._scale = vae.config.scaling_factor

    def encode(self, image: np.ndarray) -> np.ndarray:
        import torch

        x = image.astype(np.float32) / 127.5 - 1.0
        t = torch.from_numpy(x).permute(2, 0, 1)[None].to(self._device, self._vae.dtype)
        with torch.no_grad():
            posterior = self._vae.encode(t).latent_dist
        lat = posterior.mode()[0] * self._scale
        return lat.float().cpu().permute(1, 2, 0).numpy()

    def decode(self, latent: np.ndarray) -> np.ndarray:
        import torch

        t = torch.from_numpy(latent).permute(2, 0, 1)[None].to(self._device, self._vae.dtype)
        with torch.no_grad():
            img = self._vae.decode(t / self._scale).sample[0]
        img = ((img.float().cpu().permute(1, 2, 0).numpy() + 1.0) * 127.5).round()
        return np.clip(img, 0, 255).astype(np.uint8)


class Ip2pDenoiser:
    def __init__(self, unet, latent_hw: tuple[int, int], steps: int, device):
        self._unet = unet
        self._device = device
        self.latent_hw = latent_hw
        self._T = steps
        self._ctx = _RunContext()
        sites = []
        for name in unet.attn_processors:
            sites.append(attention_site_from_name(name, latent_hw))
        self.attention_sites = tuple(sites)
        unet.set_attn_processor(
            {
                f"{s.site_id}.processor": _BiasedProcessor(s, self._ctx)
                for s in self.attention_sites
            }
        )

    def predict(
        self,
        z_t: np.ndarray,
        t: int,
        image_latent: Optional[np.ndarray],
        cond: PackedConditioning,
        hooks: Optional[BiasHookSet] = None,
        observer: Optional[AttentionObserver] = None,
    ) -> np.ndarray:
        import torch

        h, w = self.latent_hw
        if z_t.shape[:2] != (h, w):
            raise InvalidInputError(f"latent shape {z_t.shape} != adapter geometry {(h, w)}")
        ctx = self._ctx
        ctx.hooks, ctx.observer, ctx.step = hooks, observer, t
        try:
            zt = torch.from_numpy(z_t).permute(2, 0, 1)[None].to(self._device, self._unet.dtype)
            if image_latent is None:
                img = torch.zeros_like(zt)
            else:
                img = (
                    torch.from_numpy(image_latent)
                    .permute(2, 0, 1)[None]
                    .to(self._device, self._unet.dtype)
                )
            sample = torch.cat([zt, img], dim=1)
            emb = torch.from_numpy(cond.matrix)[None].to(self._device, self._unet.dtype)
            ts = torch.tensor([model_timestep(t, self._T)], device=self._device)
            with torch.no_grad():
                eps = self._unet(sample, ts, encoder_hidden_states=emb).sample[0]
            return eps.float().cpu().permute(1, 2, 0).numpy()
        finally:
            ctx.hooks = ctx.observer = None


def create_ip2p_backend(
    image_hw: tuple[int, int],
    *,
    model_ref: Optional[str] = None,
    device: str = "cpu",
    steps: int = 50,
    local_files_only: Optional[bool] = None,
):
    """Load the pretrained pipeline and bind it to one image geometry.

    ``steps`` fixes the sampling-step-to-trained-timestep mapping, so it must
    match the sampler config the adapter will run under.
    """
    from . import Backend
    from ..sampling import NoiseSchedule

    _require_deps()
    import torch
    from diffusers import StableDiffusionInstructPix2PixPipeline

    model_ref = model_ref or os.environ.get("MASKEDIT_IP2P_MODEL", DEFAULT_MODEL_REF)
    if local_files_only is None:
        local_files_only = bool(os.environ.get("MASKEDIT_LOCAL_FILES_ONLY"))
    try:
        pipe = StableDiffusionInstructPix2PixPipeline.from_pretrained(
            model_ref,
            safety_checker=None,
            local_files_only=local_files_only,
            torch_dtype=torch.float32 if device == "cpu" else torch.float16,
        )
    except Exception as e:
        raise BackendError(
            f"could not load weights for {model_ref!r}: {e}\n"
            f"fetch them first, e.g.: huggingface-cli download {model_ref} "
            "--local-dir ./models/ip2p, then point MASKEDIT_IP2P_MODEL at that path"
        ) from e
    try:
        pipe = pipe.to(device)
    except Exception as e:
        raise BackendError(f"device {device!r} cannot hold the model: {e}") from e

    H, W = image_hw
    factor = 2 ** (len(pipe.vae.config.block_out_channels) - 1)
    if H % factor or W % factor:
        raise InvalidInputError(f"image dimensions must be divisible by {factor}")
    latent_hw = (H // factor, W // factor)
    alphas = pipe.scheduler.alphas_cumprod.cpu().numpy()

    def schedule_factory(T: int) -> NoiseSchedule:
        return NoiseSchedule(subsample_alpha_bar(alphas, T))

    return Backend(
        name="ip2p",
        denoiser=Ip2pDenoiser(pipe.unet, latent_hw, steps, device),
        codec=Ip2pCodec(pipe.vae, device),
        encoder=Ip2pTextEncoder(pipe.tokenizer, pipe.text_encoder, device),
        schedule_factory=schedule_factory,
        identity=f"ip2p/{model_ref}",
    )
