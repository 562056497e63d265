"""Synthetic scenes, the binary dataset format and the patch tokenizer.

Scenes hold 1-4 non-overlapping colored shapes (rectangle / disc /
triangle) on a noisy background; half the multi-object scenes duplicate
one color so color alone cannot always identify the target. Queries are
short symbol sequences that identify exactly one object -- by color,
shape, a color+shape conjunction, an extremal position, or a relation to
a uniquely colored reference -- or reference an absent attribute (null
queries, empty mask).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError

# symbol vocabulary (ids are wire format, keep stable)
SHAPE_RECT, SHAPE_DISC, SHAPE_TRI = 0, 1, 2
COLOR_BASE = 3                      # 6 colors: ids 3..8
N_COLORS = 6
POS_LEFTMOST, POS_RIGHTMOST, POS_TOPMOST, POS_BOTTOMMOST = 9, 10, 11, 12
REL_ABOVE, REL_BELOW, REL_LEFTOF, REL_RIGHTOF = 13, 14, 15, 16
VOCAB_SIZE = 17

PALETTE = np.array([
    [0.90, 0.10, 0.10],
    [0.10, 0.80, 0.15],
    [0.15, 0.25, 0.95],
    [0.95, 0.85, 0.10],
    [0.90, 0.15, 0.85],
    [0.10, 0.85, 0.90],
])

MAGIC_DATA = b"ASG1"
DATA_VERSION = 1


@dataclass
class SceneSample:
    image: np.ndarray         # [h, w, c] float32 in [0, 1]
    mask: np.ndarray          # [h, w] uint8
    symbols: list[int]
    is_null: bool


@dataclass
class _Obj:
    shape: int
    color: int
    cy: float
    cx: float
    bbox: tuple[int, int, int, int]  # y0, x0, y1, x1 (exclusive)


def _paint_shape(rng, h, w, taken: list[tuple[int, int, int, int]]):
    """Place one shape with a non-overlapping bounding box, or return None."""
    shape = int(rng.integers(0, 3))
    half = int(rng.integers(10, 19))
    cy = int(rng.integers(half + 2, h - half - 2))
    cx = int(rng.integers(half + 2, w - half - 2))
    box = (cy - half - 2, cx - half - 2, cy + half + 3, cx + half + 3)
    for other in taken:
        if not (box[2] <= other[0] or other[2] <= box[0]
                or box[3] <= other[1] or other[3] <= box[1]):
            return None
    yy, xx = np.mgrid[0:h, 0:w]
    if shape == SHAPE_RECT:
        mask = ((np.abs(yy - cy) <= half) & (np.abs(xx - cx) <= half))
    elif shape == SHAPE_DISC:
        mask = ((yy - cy) ** 2 + (xx - cx) ** 2) <= half * half
    else:  # upward triangle
        dy = yy - (cy - half)
        mask = (dy >= 0) & (dy <= 2 * half) & (np.abs(xx - cx) <= dy / 2.0)
    return shape, cy, cx, box, mask


DUPLICATE_FRACTION = 0.5  # scenes where one color appears twice


def _scene_colors(rng, n_objects):
    colors = list(rng.permutation(N_COLORS)[:n_objects])
    if n_objects >= 2 and rng.random() < DUPLICATE_FRACTION:
        colors[int(rng.integers(1, n_objects))] = colors[0]
        rng.shuffle(colors)
    return colors


def _render(rng, h, w, n_objects):
    image = 0.12 + 0.10 * rng.random((h, w, 3))
    colors = _scene_colors(rng, n_objects)
    objs, masks, taken = [], [], []
    attempts = 0
    while len(objs) < n_objects:
        attempts += 1
        if attempts > 200:
            return None
        placed = _paint_shape(rng, h, w, taken)
        if placed is None:
            continue
        shape, cy, cx, box, mask = placed
        color = int(colors[len(objs)])
        image[mask] = PALETTE[color] + rng.normal(0.0, 0.02, size=3)
        objs.append(_Obj(shape, color, cy, cx, box))
        masks.append(mask)
        taken.append(box)
    np.clip(image, 0.0, 1.0, out=image)
    return image.astype(np.float32), objs, masks


def _unique_by(objs, key):
    counts = {}
    for o in objs:
        counts[key(o)] = counts.get(key(o), 0) + 1
    return [o for o in objs if counts[key(o)] == 1]


def _build_query(rng, objs: list[_Obj], null_fraction: float):
    """Pick (symbols, target index or None). None target means a null query."""
    if rng.random() < null_fraction:
        present = {o.color for o in objs}
        absent = [c for c in range(N_COLORS) if c not in present]
        syms = [COLOR_BASE + int(rng.choice(absent))]
        if rng.random() < 0.5:
            syms.append(int(rng.integers(0, 3)))
        return syms, None

    kind = rng.choice(["color", "shape", "both", "pos", "rel"],
                      p=[0.35, 0.20, 0.25, 0.12, 0.08])
    if kind == "color":
        cands = _unique_by(objs, lambda o: o.color)
        if cands:
            o = cands[int(rng.integers(len(cands)))]
            return [COLOR_BASE + o.color], objs.index(o)
    if kind == "shape":
        cands = _unique_by(objs, lambda o: o.shape)
        if cands:
            o = cands[int(rng.integers(len(cands)))]
            return [o.shape], objs.index(o)
    if kind == "both":
        cands = _unique_by(objs, lambda o: (o.color, o.shape))
        if cands:
            o = cands[int(rng.integers(len(cands)))]
            return [COLOR_BASE + o.color, o.shape], objs.index(o)
    if kind == "rel" and len(objs) >= 2:
        refs = _unique_by(objs, lambda o: o.color)
        rng.shuffle(refs)
        for ref in refs:
            rels = [(REL_ABOVE, lambda o: ref.cy - o.cy),
                    (REL_BELOW, lambda o: o.cy - ref.cy),
                    (REL_LEFTOF, lambda o: ref.cx - o.cx),
                    (REL_RIGHTOF, lambda o: o.cx - ref.cx)]
            rng.shuffle(rels)
            for sym, gap in rels:
                cands = [(gap(o), i) for i, o in enumerate(objs)
                         if o is not ref and gap(o) > 0]
                if cands:
                    _, idx = min(cands)  # nearest along the relation axis
                    return [int(sym), COLOR_BASE + ref.color], idx
    # extremal-position query: always identifies a unique object
    options = [(POS_LEFTMOST, "cx", 1), (POS_RIGHTMOST, "cx", -1),
               (POS_TOPMOST, "cy", 1), (POS_BOTTOMMOST, "cy", -1)]
    sym, axis, sign = options[int(rng.integers(len(options)))]
    vals = [sign * getattr(o, axis) for o in objs]
    return [int(sym)], int(np.argmin(vals))


def generate_scene(rng: np.random.Generator, h: int, w: int,
                   null_fraction: float) -> SceneSample:
    for retry in range(50):
        sub = np.random.default_rng(rng.integers(0, 2 ** 63 - 1))
        n_objects = int(sub.integers(1, 5))
        rendered = _render(sub, h, w, n_objects)
        if rendered is None:
            continue
        image, objs, masks = rendered
        symbols, target = _build_query(sub, objs, null_fraction)
        if target is None:
            mask = np.zeros((h, w), dtype=np.uint8)
            return SceneSample(image, mask, symbols, True)
        mask = masks[target].astype(np.uint8)
        if mask.sum() == 0:
            continue
        return SceneSample(image, mask, symbols, False)
    raise ContractError("scene generation failed after bounded retries")


def generate_dataset(n_samples: int, h: int, w: int, null_fraction: float,
                     seed: int) -> list[SceneSample]:
    rng = np.random.default_rng(seed)
    return [generate_scene(rng, h, w, null_fraction) for _ in range(n_samples)]


# ---------------------------------------------------------------------------
# binary dataset format
# ---------------------------------------------------------------------------

def write_dataset(path, samples: Sequence[SceneSample], g: int):
    if not samples:
        raise ContractError("refusing to write an empty dataset")
    h, w, c = samples[0].image.shape
    max_symbols = max(len(s.symbols) for s in samples)
    with open(path, "wb") as f:
        f.write(MAGIC_DATA)
        f.write(struct.pack("<II", DATA_VERSION, len(samples)))
        f.write(struct.pack("<5H", h, w, c, g, max_symbols))
        for s in samples:
            f.write(np.ascontiguousarray(s.image, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(s.mask, dtype=np.uint8).tobytes())
            f.write(struct.pack("<B", len(s.symbols)))
            f.write(struct.pack(f"<{len(s.symbols)}H", *s.symbols))
            f.write(struct.pack("<B", 1 if s.is_null else 0))


def read_dataset(path):
    """Returns (samples, header dict with h/w/c/G/max_symbols)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC_DATA:
            raise ContractError(f"bad dataset magic {magic!r}")
        version, n = struct.unpack("<II", f.read(8))
        if version != DATA_VERSION:
            raise ContractError(f"unsupported dataset version {version}")
        h, w, c, g, max_symbols = struct.unpack("<5H", f.read(10))
        samples = []
        for _ in range(n):
            img = np.frombuffer(f.read(4 * h * w * c), dtype="<f4").reshape(h, w, c)
            mask = np.frombuffer(f.read(h * w), dtype=np.uint8).reshape(h, w)
            (n_sym,) = struct.unpack("<B", f.read(1))
            syms = list(struct.unpack(f"<{n_sym}H", f.read(2 * n_sym)))
            (null_byte,) = struct.unpack("<B", f.read(1))
            samples.append(SceneSample(img.copy(), mask.copy(), syms, bool(null_byte)))
    header = {"h": h, "w": w, "c": c, "G": g, "max_symbols": max_symbols}
    return samples, header


# ---------------------------------------------------------------------------
# patch tokenizer
# ---------------------------------------------------------------------------

def encode_scene(image: np.ndarray, g: int, d_lm: int, seed: int) -> np.ndarray:
    """Non-overlapping GxG patch grid -> seeded random projection + 2-D code."""
    from .tensor import sinusoidal_codes_2d

    h, w, c = image.shape
    if h % g != 0 or w % g != 0:
        raise ConfigError(f"image extents {h}x{w} not divisible by grid {g}")
    ph, pw = h // g, w // g
    patches = image.reshape(g, ph, g, pw, c).transpose(0, 2, 1, 3, 4)
    patches = patches.reshape(g * g, ph * pw * c)
    rng = np.random.default_rng(seed)
    proj = rng.normal(0.0, 1.0 / np.sqrt(ph * pw * c),
                      size=(ph * pw * c, d_lm))
    pos = 0.5 * sinusoidal_codes_2d(g, g, d_lm, dtype=np.float64)
    return (patches.astype(np.float64) @ proj + pos).astype(np.float32)
