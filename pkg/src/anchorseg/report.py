"""Result aggregation: text tables, an SVG bar chart and PGM map dumps."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import model as Mo
from . import objectives as O
from . import tensor as T
from .metrics import CSV_HEADER, MetricsRow
from .scenes import SceneSample, encode_scene
from .training import split_indices


def parse_metrics_csv(path) -> list[MetricsRow]:
    rows = []
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"{path}:1: expected header {CSV_HEADER!r}")
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 7:
            raise ValueError(f"{path}:{ln}: expected 7 fields, got {len(parts)}")
        try:
            nacc = None if parts[6] == "" else float(parts[6])
            rows.append(MetricsRow(parts[0], parts[1], int(parts[2]),
                                   float(parts[3]), float(parts[4]),
                                   float(parts[5]), nacc))
        except ValueError as e:
            raise ValueError(f"{path}:{ln}: {e}") from None
    return rows


@dataclass
class Aggregate:
    ablation_id: str
    n_runs: int
    median_giou: float
    min_giou: float
    max_giou: float
    median_ciou: float


def aggregate(rows: Sequence[MetricsRow]) -> list[Aggregate]:
    order: list[str] = []
    groups: dict[str, list[MetricsRow]] = {}
    for r in rows:
        if r.ablation_id not in groups:
            order.append(r.ablation_id)
            groups[r.ablation_id] = []
        groups[r.ablation_id].append(r)
    out = []
    for aid in order:
        g = groups[aid]
        gious = [r.giou for r in g]
        out.append(Aggregate(aid, len(g), float(np.median(gious)),
                             min(gious), max(gious),
                             float(np.median([r.ciou for r in g]))))
    return out


def format_table(aggs: Sequence[Aggregate]) -> str:
    lines = [f"{'ablation':<10} {'runs':>4} {'gIoU med':>9} {'min':>7} "
             f"{'max':>7} {'cIoU med':>9}"]
    for a in aggs:
        lines.append(f"{a.ablation_id:<10} {a.n_runs:>4} {a.median_giou:>9.4f} "
                     f"{a.min_giou:>7.4f} {a.max_giou:>7.4f} {a.median_ciou:>9.4f}")
    return "\n".join(lines)


def write_svg_bars(path, aggs: Sequence[Aggregate]):
    """One bar per ablation, height = median gIoU."""
    bar_w, gap, height, base = 48, 16, 220, 40
    width = gap + len(aggs) * (bar_w + gap)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" '
        f'width="{width}" height="{height + 2 * base}">',
        f'<text x="{gap}" y="{base - 16}" font-size="13">median gIoU per ablation</text>',
    ]
    for i, a in enumerate(aggs):
        x = gap + i * (bar_w + gap)
        hpx = max(1.0, a.median_giou * height)
        y = base + (height - hpx)
        parts.append(f'<rect x="{x}" y="{y:.1f}" width="{bar_w}" '
                     f'height="{hpx:.1f}" fill="#4878a8"/>')
        parts.append(f'<text x="{x}" y="{base + height + 16}" '
                     f'font-size="11">{a.ablation_id}</text>')
        parts.append(f'<text x="{x}" y="{y - 4:.1f}" font-size="10">'
                     f'{a.median_giou:.3f}</text>')
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts) + "\n")


def write_pgm(path, values: np.ndarray):
    """Plain PGM (P2), values scaled from [0,1] to 0..255."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    ints = np.rint(v * 255).astype(int)
    h, w = ints.shape
    with open(path, "w") as f:
        f.write(f"P2\n{w} {h}\n255\n")
        for row in ints:
            f.write(" ".join(str(x) for x in row) + "\n")


def read_pgm(path) -> np.ndarray:
    with open(path) as f:
        tokens = f.read().split()
    if tokens[0] != "P2":
        raise ValueError(f"{path}: not a plain PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    data = np.array(tokens[4:4 + w * h], dtype=np.int64).reshape(h, w)
    return data / maxval


def dump_prior_maps(checkpoint_path, samples: Sequence[SceneSample],
                    out_dir, limit: Optional[int] = None) -> list[tuple[int, str, str]]:
    """Write the normalized token grid and image-extent similarity map per
    eval sample; returns (sample index, grid path, map path) triples."""
    params, cfg = Mo.load_checkpoint(checkpoint_path)
    split = split_indices(len(samples), cfg.train_fraction)
    idx = split.eval if limit is None else split.eval[:limit]
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for i in idx:
        s = samples[i]
        tokens = encode_scene(s.image, cfg.G, cfg.d_lm, cfg.seed)
        out = Mo.forward_sample(params, cfg, tokens, s.symbols, s.image)
        grid = out.s_norm.data.reshape(cfg.G, cfg.G)
        sim = O.token_map_upsampled(out.s_raw, cfg.h, cfg.w, cfg.L_vl).data
        gp = os.path.join(out_dir, f"sample_{i:04d}_tokens.pgm")
        mp = os.path.join(out_dir, f"sample_{i:04d}_sim.pgm")
        write_pgm(gp, grid)
        write_pgm(mp, sim)
        written.append((i, gp, mp))
    return written
