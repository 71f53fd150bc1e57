#!/usr/bin/env python3
"""Render a grid showing the three mask families next to their source
segmentation, like a contact sheet for eyeballing the generators.

Usage: python scripts/make_demo_masks.py --out demo_masks.png [--seed 0]
"""

import argparse

import numpy as np
from PIL import Image

from painter import data, masks


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="demo_masks.png")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--rows", type=int, default=4)
    args = ap.parse_args()

    size = 128
    params = masks.MaskGenParams(seed=args.seed)
    sources = data.synthesize_records(args.rows, size=size, seed=args.seed)

    cols = []
    for i, src in enumerate(sources):
        rng = np.random.default_rng(args.seed + i)
        seg = src.seg_mask
        box = masks.gen_box_mask(seg, params, rng)
        irr = masks.gen_irregular_mask(seg, params, rng)
        row = np.concatenate(
            [src.image]
            + [np.stack([m * 255] * 3, axis=-1).astype(np.uint8) for m in (seg, box, irr)],
            axis=1,
        )
        cols.append(row)
    grid = np.concatenate(cols, axis=0)
    Image.fromarray(grid, mode="RGB").save(args.out)
    print(f"wrote {args.out} (columns: image, seg, box, irregular)")


if __name__ == "__main__":
    main()
