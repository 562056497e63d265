#!/usr/bin/env python3
"""Generate tests/data/interp_oracle.bin from torch's resampling kernels.

Run once by the implementer; torch is a generation-time dependency only.
Record layout (little-endian), repeated until EOF:
  u32 in_h, u32 in_w, u32 out_h, u32 out_w, u32 flags
  f32 input  [in_h * in_w]   row-major
  f32 output [out_h * out_w] row-major
flags bit 0: antialias, bit 1: nearest (else bilinear, align_corners=False).
"""

import struct
import sys

import numpy as np
import torch
import torch.nn.functional as F

FLAG_ANTIALIAS = 1
FLAG_NEAREST = 2

CASES = [
    # (in_h, in_w, out_h, out_w) upscales, downscales, identity, degenerate
    (1, 2, 1, 4),
    (2, 2, 8, 8),
    (3, 5, 9, 10),
    (8, 8, 8, 8),
    (8, 8, 3, 3),
    (8, 12, 24, 36),
    (24, 24, 48, 48),
    (17, 13, 40, 31),
    (16, 16, 7, 5),
    (37, 41, 12, 18),
    (48, 48, 17, 17),
    (96, 96, 24, 24),
    (96, 64, 31, 47),
    (1, 1, 4, 4),
    (5, 1, 3, 7),
    (33, 9, 9, 33),
    (24, 24, 96, 96),
    (40, 56, 56, 40),
]


def torch_resize(x: np.ndarray, out_h: int, out_w: int, flags: int) -> np.ndarray:
    t = torch.from_numpy(x.astype(np.float32))[None, None]
    if flags & FLAG_NEAREST:
        out = F.interpolate(t, size=(out_h, out_w), mode="nearest")
    else:
        out = F.interpolate(t, size=(out_h, out_w), mode="bilinear",
                            align_corners=False,
                            antialias=bool(flags & FLAG_ANTIALIAS))
    return out.numpy()[0, 0]


def main(out_path: str):
    rng = np.random.default_rng(20240817)
    n = 0
    with open(out_path, "wb") as f:
        for in_h, in_w, out_h, out_w in CASES:
            x = rng.random((in_h, in_w)).astype(np.float32)
            for flags in (0, FLAG_ANTIALIAS, FLAG_NEAREST):
                y = torch_resize(x, out_h, out_w, flags)
                f.write(struct.pack("<5I", in_h, in_w, out_h, out_w, flags))
                f.write(x.astype("<f4").tobytes())
                f.write(y.astype("<f4").tobytes())
                n += 1
    print(f"wrote {n} records to {out_path}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/data/interp_oracle.bin")
