#!/usr/bin/env python3
"""Regenerate the bundled synthetic benchmark cases (deterministic output).

Five tiny 64x64 cases covering the interesting mask topologies: a single
region, disjoint regions, overlapping regions resolved by order, a three-way
intersection chain, and two regions sharing a self-attention group.
"""

import json
from pathlib import Path

import numpy as np
from PIL import Image

OUT = Path(__file__).resolve().parents[1] / "src" / "maskedit" / "data" / "sample_cases"
SIZE = 64
FAST = {"steps": 6, "seed": 0, "blend_stop": 1}


def gradient(seed, size=SIZE):
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:size, 0:size].astype(np.float64) / (size - 1)
    channels = []
    for _ in range(3):
        a, b, c = rng.uniform(0, 1, 3)
        channels.append((a * x + b * y + c * np.sin(6 * x * y)) % 1.0)
    img = np.stack(channels, axis=-1)
    return (img * 255).astype(np.uint8)


def checker(size=SIZE, tile=8):
    y, x = np.mgrid[0:size, 0:size]
    board = ((y // tile + x // tile) % 2).astype(np.uint8)
    img = np.stack([board * 180 + 40, board * 120 + 60, 255 - board * 160], axis=-1)
    return img.astype(np.uint8)


def rect(top, left, h, w, size=SIZE):
    m = np.zeros((size, size), np.uint8)
    m[top : top + h, left : left + w] = 255
    return m


def save_case(case_id, image, edits, overrides=FAST):
    case_dir = OUT / case_id
    case_dir.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image).save(case_dir / "image.png")
    manifest = {"id": case_id, "image": "image.png", "edits": [], "overrides": overrides}
    for i, (mask, prompt, order, group) in enumerate(edits, start=1):
        name = f"mask_{i}.png"
        Image.fromarray(mask, mode="L").save(case_dir / name)
        manifest["edits"].append(
            {"mask": name, "prompt": prompt, "order": order, "group": group}
        )
    (case_dir / "case.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {case_dir}")


def main():
    save_case(
        "01-single-region",
        gradient(10),
        [(rect(16, 16, 24, 32), "a red hot air balloon", 1, 1)],
    )
    save_case(
        "02-two-disjoint",
        gradient(20),
        [
            (rect(8, 8, 16, 16), "a yellow sun", 1, 1),
            (rect(40, 40, 16, 16), "a sailing boat", 2, 2),
        ],
    )
    save_case(
        "03-overlap-order",
        checker(),
        [
            (rect(8, 8, 32, 32), "a brick wall", 1, 1),
            (rect(24, 24, 32, 32), "a wooden door", 2, 2),
        ],
    )
    save_case(
        "04-intersection-chain",
        gradient(40),
        [
            (rect(0, 0, 40, 40), "a grassy hill", 1, 1),
            (rect(16, 16, 40, 40), "a stone tower", 2, 2),
            (rect(24, 24, 16, 16), "a round window", 3, 3),
        ],
    )
    save_case(
        "05-shared-group",
        gradient(50),
        [
            (rect(8, 8, 16, 16), "a lit candle", 1, 1),
            (rect(40, 40, 16, 16), "a lit candle", 2, 1),
        ],
    )


if __name__ == "__main__":
    main()
