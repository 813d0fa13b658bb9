"""Command-line interface.

Subcommands: gen-data, train, eval, predict, ablate, sweep-r, offset-report.
Run settings resolve as defaults < config file (--config, flat key = value)
< explicit flags; the output directory comes from --out-dir or the
MOMENTNET_OUTDIR environment variable. Failures exit nonzero after printing a
machine-readable JSON error to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from . import checkpoint as ckpt
from .config import (OUTPUT_DIR_ENV, RunConfig, build_config, load_config_file)
from .corpus import CorpusConfig, generate_corpus, read_corpus, write_corpus
from .train import (ABLATION_LADDER, ablate, evaluate_model, predict_records,
                    sweep_factor, train, write_predictions, write_table)


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    """One CLI flag per RunConfig field, e.g. --learning-rate, --use-cdd."""
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            parser.add_argument(flag, dest=f.name, default=None,
                                action=argparse.BooleanOptionalAction)
        else:
            kind = {"int": int, "float": float, "str": str}[f.type]
            parser.add_argument(flag, dest=f.name, type=kind, default=None)


def _resolve_config(args) -> RunConfig:
    entries = load_config_file(args.config) if args.config else {}
    overrides = {
        f.name: getattr(args, f.name)
        for f in dataclasses.fields(RunConfig)
        if getattr(args, f.name, None) is not None
    }
    return build_config(entries, overrides)


def _out_dir(args) -> Path:
    out = args.out_dir or os.environ.get(OUTPUT_DIR_ENV) or "runs"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_model(path):
    model, cfg, _ = ckpt.load_model(path)
    return model, cfg


def cmd_gen_data(args) -> int:
    out = _out_dir(args)
    base = CorpusConfig(
        num_clips=args.clips, num_tokens=args.tokens,
        video_dim=args.video_dim, query_dim=args.query_dim,
        num_distractors=args.distractors, noise_sigma=args.noise_sigma,
        seed=args.seed,
    )
    train_cfg = dataclasses.replace(base, num_samples=args.num_train)
    val_cfg = dataclasses.replace(base, num_samples=args.num_val, seed=args.seed + 1)
    write_corpus(generate_corpus(train_cfg), out / "train.jsonl")
    write_corpus(generate_corpus(val_cfg), out / "val.jsonl")
    print(f"wrote {args.num_train} train / {args.num_val} val samples to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args)
    result = train(cfg)
    ckpt.save_model(out / "model.ckpt", result.model, cfg, result.best_epoch)
    result.write_log(out / "train_log.jsonl")
    report = evaluate_model(result.model, read_corpus(cfg.val_corpus), cfg)
    (out / "metrics.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    print(f"best epoch {result.best_epoch} val mAP {result.best_map:.4f}; "
          f"artifacts in {out}")
    return 0


def cmd_eval(args) -> int:
    model, cfg = _load_model(args.checkpoint)
    report = evaluate_model(model, read_corpus(args.corpus), cfg)
    payload = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(payload)
    print(payload)
    return 0


def cmd_predict(args) -> int:
    model, cfg = _load_model(args.checkpoint)
    write_predictions(model, read_corpus(args.corpus), cfg, args.out)
    print(f"predictions written to {args.out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args)
    rows = ablate(cfg, ABLATION_LADDER)
    write_table(rows, out / "ablation.csv")
    for row in rows:
        print(row)
    return 0


def cmd_sweep_r(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args)
    factors = [int(v) for v in args.r_values.split(",")]
    rows = sweep_factor(cfg, factors)
    write_table(rows, out / "sweep_r.csv")
    for row in rows:
        print(row)
    return 0


def cmd_offset_report(args) -> int:
    model, cfg = _load_model(args.checkpoint)
    _, diagnostics = predict_records(model, read_corpus(args.corpus), cfg)
    diagnostics.write_csv(args.out)
    print(json.dumps({
        "hit_rate": diagnostics.hit_rate,
        "baseline_rate": diagnostics.baseline_rate,
    }, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="momentnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--num-train", type=int, default=500)
    p.add_argument("--num-val", type=int, default=100)
    p.add_argument("--clips", type=int, default=32)
    p.add_argument("--tokens", type=int, default=8)
    p.add_argument("--video-dim", type=int, default=32)
    p.add_argument("--query-dim", type=int, default=32)
    p.add_argument("--distractors", type=int, default=2)
    p.add_argument("--noise-sigma", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_gen_data)

    for name, func in [("train", cmd_train), ("ablate", cmd_ablate),
                       ("sweep-r", cmd_sweep_r)]:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat key = value file")
        p.add_argument("--out-dir", default=None)
        if name == "sweep-r":
            p.add_argument("--r-values", default="1,2,4,8")
        _add_run_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("eval")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("offset-report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_offset_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
