"""Composite label maps from ordered user masks, plus multi-resolution pyramids.

Overlaps between masks are resolved by z-order: the covering mask with the
highest ``order`` wins, ties broken by position in the mask list. The composite
is a single integer raster (0 = background, k = region of prompt k) from which
per-region rasters and downsampled label/coverage pyramids are derived.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import InvalidInputError

# Grayscale decode threshold: pixel value > 127 means "inside the mask".
MASK_THRESHOLD = 127


@dataclass(frozen=True)
class MaskSpec:
    """One user mask: binary raster, z-order, self-attention group, prompt binding."""

    raster: np.ndarray  # H x W, values in {0, 1}
    order: int
    group_id: int
    prompt_index: int  # 1-based index into the prompt list

    def __post_init__(self):
        r = np.asarray(self.raster)
        if r.ndim != 2:
            raise InvalidInputError(f"mask raster must be 2-D, got shape {r.shape}")
        vals = np.unique(r)
        if not np.all(np.isin(vals, (0, 1))):
            raise InvalidInputError("mask raster values must be 0 or 1")
        if self.prompt_index < 1:
            raise InvalidInputError(f"prompt_index must be >= 1, got {self.prompt_index}")
        object.__setattr__(self, "raster", r.astype(np.uint8))


@dataclass(frozen=True)
class CompositeLabelMap:
    """Per-pixel winner raster: labels carry prompt indices, groups carry group ids.

    ``label_priority`` maps each label to the (order, list index) of the mask
    that painted it; ``label_group`` maps labels to group ids. Both are used by
    the pyramid's tie-breaking and group derivation.
    """

    labels: np.ndarray  # H x W int32, 0 = background
    groups: np.ndarray  # H x W int32, 0 = background
    n_regions: int
    label_priority: dict[int, tuple[int, int]] = field(default_factory=dict)
    label_group: dict[int, int] = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


@dataclass(frozen=True)
class PyramidLevel:
    labels: np.ndarray  # h x w int32
    groups: np.ndarray  # h x w int32
    any_region: np.ndarray  # h x w uint8, 1 where any source pixel in the cell is covered


@dataclass(frozen=True)
class LabelPyramid:
    levels: dict[tuple[int, int], PyramidLevel]
    n_regions: int

    def level(self, resolution: tuple[int, int]) -> PyramidLevel:
        try:
            return self.levels[tuple(resolution)]
        except KeyError:
            raise InvalidInputError(f"no pyramid level at resolution {resolution}") from None


def composite(masks: list[MaskSpec]) -> CompositeLabelMap:
    """Resolve overlapping masks into a single label map.

    Every covered pixel is labeled with the prompt index of the covering mask
    with the highest order value; ties go to the mask latest in the list.
    Uncovered pixels stay 0.
    """
    if not masks:
        raise InvalidInputError("composite needs at least one mask")
    shape = masks[0].raster.shape
    for i, m in enumerate(masks):
        if m.raster.shape != shape:
            raise InvalidInputError(
                f"mask {i} has shape {m.raster.shape}, expected {shape}"
            )
    n = len(masks)
    for i, m in enumerate(masks):
        if m.prompt_index > n:
            raise InvalidInputError(
                f"mask {i} prompt_index {m.prompt_index} exceeds mask count {n}"
            )

    labels = np.zeros(shape, dtype=np.int32)
    groups = np.zeros(shape, dtype=np.int32)
    label_priority: dict[int, tuple[int, int]] = {}
    label_group: dict[int, int] = {}
    # Paint in ascending (order, list index); later paints overwrite earlier,
    # which realizes highest-order-wins with list-index tie-break.
    for idx in sorted(range(n), key=lambda i: (masks[i].order, i)):
        m = masks[idx]
        inside = m.raster.astype(bool)
        labels[inside] = m.prompt_index
        groups[inside] = m.group_id
        label_priority[m.prompt_index] = (m.order, idx)
        label_group[m.prompt_index] = m.group_id
    return CompositeLabelMap(
        labels=labels,
        groups=groups,
        n_regions=n,
        label_priority=label_priority,
        label_group=label_group,
    )


def region_rasters(clm: CompositeLabelMap) -> list[np.ndarray]:
    """Split the label map into one binary raster per region, disjoint by construction."""
    return [
        (clm.labels == k).astype(np.uint8) for k in range(1, clm.n_regions + 1)
    ]


def _majority_labels(
    labels: np.ndarray, fh: int, fw: int, priority: dict[int, tuple[int, int]]
) -> np.ndarray:
    """Per-cell majority vote over labels; count ties go to the higher-priority label.

    Background participates in the vote and loses any tie against a region.
    """
    h, w = labels.shape[0] // fh, labels.shape[1] // fw
    cells = labels.reshape(h, fh, w, fw).transpose(0, 2, 1, 3).reshape(h, w, fh * fw)
    out = np.zeros((h, w), dtype=np.int32)
    lowest = (np.iinfo(np.int64).min, -1)
    for i in range(h):
        for j in range(w):
            vals, counts = np.unique(cells[i, j], return_counts=True)
            best = max(
                zip(vals.tolist(), counts.tolist()),
                key=lambda vc: (vc[1], priority.get(vc[0], lowest) if vc[0] != 0 else lowest),
            )
            out[i, j] = best[0]
    return out


def build_pyramid(
    clm: CompositeLabelMap, resolutions: list[tuple[int, int]]
) -> LabelPyramid:
    """Downsample the composite to each target resolution.

    Coverage uses max-pooling (a cell is covered if any source pixel is), so
    thin masks never vanish from the binary channel. Labels use a per-cell
    majority vote with order-based tie-breaking.
    """
    H, W = clm.shape
    covered = (clm.labels > 0).astype(np.uint8)
    group_of = np.zeros(clm.n_regions + 1, dtype=np.int32)
    for lbl, g in clm.label_group.items():
        group_of[lbl] = g

    levels: dict[tuple[int, int], PyramidLevel] = {}
    for h, w in dict.fromkeys((int(a), int(b)) for a, b in resolutions):
        if h <= 0 or w <= 0 or H % h != 0 or W % w != 0:
            raise InvalidInputError(
                f"target resolution ({h}, {w}) does not evenly divide source ({H}, {W})"
            )
        fh, fw = H // h, W // w
        if fh == 1 and fw == 1:
            lv_labels = clm.labels.copy()
            lv_any = covered.copy()
        else:
            lv_any = (
                covered.reshape(h, fh, w, fw).max(axis=(1, 3)).astype(np.uint8)
            )
            lv_labels = _majority_labels(clm.labels, fh, fw, clm.label_priority)
        levels[(h, w)] = PyramidLevel(
            labels=lv_labels,
            groups=group_of[lv_labels],
            any_region=lv_any,
        )
    return LabelPyramid(levels=levels, n_regions=clm.n_regions)


def load_mask_png(path) -> np.ndarray:
    """Decode a mask PNG to a binary raster (grayscale > 127 means inside)."""
    with Image.open(path) as im:
        gray = np.asarray(im.convert("L"))
    return (gray > MASK_THRESHOLD).astype(np.uint8)
