"""Per-prompt text encoding and fixed-stride packing into one conditioning sequence.

Each prompt is encoded in isolation (no cross-prompt context can leak between
instructions) to a fixed 77-token embedding, then the per-prompt embeddings are
concatenated row-wise. Span boundaries and per-token roles are kept alongside
the packed matrix so attention control can route image regions to the tokens of
their own instruction.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .errors import EncoderError, InvalidInputError

# Fixed per-prompt token length imposed by CLIP-style encoders.
SEQ_LEN = 77


class Role(enum.IntEnum):
    SOT = 0
    CONTENT = 1
    EOT = 2
    PAD = 3


@dataclass(frozen=True)
class PromptEmbedding:
    """A single prompt's 77 x d embedding plus the role of every position."""

    matrix: np.ndarray  # SEQ_LEN x d
    roles: np.ndarray  # SEQ_LEN, values from Role

    def __post_init__(self):
        m = np.asarray(self.matrix)
        r = np.asarray(self.roles, dtype=np.int8)
        if m.ndim != 2 or m.shape[0] != SEQ_LEN:
            raise InvalidInputError(f"embedding must be {SEQ_LEN} x d, got {m.shape}")
        if r.shape != (SEQ_LEN,):
            raise InvalidInputError(f"roles must have length {SEQ_LEN}, got {r.shape}")
        if r[0] != Role.SOT or np.count_nonzero(r == Role.SOT) != 1:
            raise InvalidInputError("exactly one SOT role required, at position 0")
        eots = np.flatnonzero(r == Role.EOT)
        if len(eots) != 1:
            raise InvalidInputError("exactly one EOT role required")
        if not np.all(r[eots[0] + 1 :] == Role.PAD):
            raise InvalidInputError("every position after EOT must be PAD")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "roles", r)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


class TextEncoder(Protocol):
    """Backend contract: encode one prompt to a fixed-length embedding."""

    dim: int

    def encode(self, text: str) -> PromptEmbedding: ...


@dataclass(frozen=True)
class PackedConditioning:
    """Concatenated conditioning of length 77n with span boundaries and roles."""

    matrix: np.ndarray  # (SEQ_LEN * n) x d
    spans: list[tuple[int, int]]  # half-open [start, end) per prompt, in order
    roles: np.ndarray  # SEQ_LEN * n

    @property
    def n(self) -> int:
        return len(self.spans)

    @property
    def length(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def span_slice(self, prompt_index: int) -> slice:
        """Row slice for prompt ``prompt_index`` (1-based)."""
        start, end = self.spans[prompt_index - 1]
        return slice(start, end)

    def token_prompt_indices(self) -> np.ndarray:
        """1-based prompt index owning each token position."""
        return np.arange(self.length) // SEQ_LEN + 1


def encode_prompts(prompts: list[str], encoder: TextEncoder) -> list[PromptEmbedding]:
    """Encode each prompt independently; failures carry the prompt index."""
    if not prompts:
        raise InvalidInputError("prompt list must not be empty")
    out = []
    for i, text in enumerate(prompts):
        try:
            out.append(encoder.encode(text))
        except Exception as e:
            raise EncoderError(f"encoding prompt {i} failed: {e}", prompt_index=i) from e
    return out


def concat_prompts(embeddings: list[PromptEmbedding]) -> PackedConditioning:
    """Row-wise concatenation in input order; spans tile [0, 77n) at stride 77."""
    if not embeddings:
        raise InvalidInputError("need at least one embedding to pack")
    d = embeddings[0].dim
    for i, e in enumerate(embeddings):
        if e.dim != d:
            raise InvalidInputError(
                f"embedding {i} has width {e.dim}, expected {d}"
            )
    matrix = np.concatenate([e.matrix for e in embeddings], axis=0)
    roles = np.concatenate([e.roles for e in embeddings])
    spans = [(SEQ_LEN * i, SEQ_LEN * (i + 1)) for i in range(len(embeddings))]
    return PackedConditioning(matrix=matrix, spans=spans, roles=roles)


def unconditional_packing(n: int, encoder: TextEncoder) -> PackedConditioning:
    """Null conditioning of the same shape as an n-prompt packing.

    Replicates the empty-prompt embedding n times so the unconditional guidance
    branch is shape-compatible with the conditional one.
    """
    if n < 1:
        raise InvalidInputError(f"n must be >= 1, got {n}")
    empty = encoder.encode("")
    return concat_prompts([empty] * n)
