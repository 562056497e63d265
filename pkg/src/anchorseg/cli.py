"""Command line interface.

  anchorseg gen-data   --config cfg.ini --seed 0 --out data.bin
  anchorseg train      --config cfg.ini --data data.bin --out-dir runs/
  anchorseg eval       --checkpoint ckpt.bin --data data.bin
  anchorseg ablate     --config cfg.ini --data data.bin --out metrics.csv
  anchorseg grad-check [--module all|ops|full|reasoner|negative]
  anchorseg report     --metrics metrics.csv [--svg out.svg]
                       [--dump-prior dir --checkpoint ckpt.bin --data data.bin]
"""

from __future__ import annotations

import argparse
import os
import sys

from . import model as Mo
from . import report as R
from .config import RunConfig, load_config
from .scenes import generate_dataset, read_dataset, write_dataset
from .training import ablate, build_cache, evaluate, split_indices, train, \
    write_metrics_csv


def _load_cfg(path: str | None) -> RunConfig:
    return load_config(path) if path else RunConfig().validate()


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args.config)
    samples = generate_dataset(cfg.n_samples, cfg.h, cfg.w, cfg.null_fraction,
                               args.seed)
    write_dataset(args.out, samples, cfg.G)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args.config)
    samples, _ = read_dataset(args.data)
    os.makedirs(args.out_dir, exist_ok=True)
    result = train(cfg, samples, run_id="train", log=print)
    ckpt = os.path.join(args.out_dir, "checkpoint.bin")
    Mo.save_checkpoint(ckpt, result.params, cfg)
    write_metrics_csv(os.path.join(args.out_dir, "metrics.csv"), [result.row])
    with open(os.path.join(args.out_dir, "loss.txt"), "w") as f:
        f.writelines(f"{v:.6f}\n" for v in result.loss_history)
    print(f"checkpoint: {ckpt}")
    print(result.row.csv_line())
    return 0


def cmd_eval(args) -> int:
    params, cfg = Mo.load_checkpoint(args.checkpoint)
    samples, _ = read_dataset(args.data)
    split = split_indices(len(samples), cfg.train_fraction)
    cache = build_cache(samples, cfg, train_idx=[])
    giou, ciou, prec, nacc = evaluate(params, cfg, samples, cache, split.eval)
    nacc_str = "n/a" if nacc is None else f"{nacc:.4f}"
    print(f"giou {giou:.4f} ciou {ciou:.4f} prec@0.5 {prec:.4f} n-acc {nacc_str}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args.config)
    samples, _ = read_dataset(args.data)
    rows = ablate(cfg, samples, log=print)
    write_metrics_csv(args.out, rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_grad_check(args) -> int:
    from .gradcheck import run_suite

    results = run_suite(args.module)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        op = ">" if r.invert else "<"
        print(f"{status} {r.name}: max rel err {r.max_rel_err:.3e} "
              f"(want {op} {r.threshold:g})")
        failed += 0 if r.passed else 1
    return 1 if failed else 0


def cmd_report(args) -> int:
    rows = R.parse_metrics_csv(args.metrics)
    aggs = R.aggregate(rows)
    print(R.format_table(aggs))
    if args.svg:
        R.write_svg_bars(args.svg, aggs)
        print(f"svg: {args.svg}")
    if args.dump_prior:
        if not args.checkpoint or not args.data:
            print("--dump-prior needs --checkpoint and --data", file=sys.stderr)
            return 2
        samples, _ = read_dataset(args.data)
        written = R.dump_prior_maps(args.checkpoint, samples, args.dump_prior)
        print(f"dumped {len(written)} similarity maps to {args.dump_prior}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="anchorseg")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--config", default=None)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train one run")
    t.add_argument("--config", default=None)
    t.add_argument("--data", required=True)
    t.add_argument("--out-dir", required=True)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the eval split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("ablate", help="run the ablation grid")
    a.add_argument("--config", default=None)
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(fn=cmd_ablate)

    c = sub.add_parser("grad-check", help="finite-difference verification")
    c.add_argument("--module", default="all")
    c.set_defaults(fn=cmd_grad_check)

    r = sub.add_parser("report", help="aggregate metrics, plots and map dumps")
    r.add_argument("--metrics", required=True)
    r.add_argument("--svg", default=None)
    r.add_argument("--dump-prior", default=None)
    r.add_argument("--checkpoint", default=None)
    r.add_argument("--data", default=None)
    r.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
