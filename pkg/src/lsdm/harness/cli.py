"""Command-line entry point (``lsdm`` / ``python -m lsdm``)."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from lsdm.core.autoencoder import AutoencoderPair, TrainingDivergedError
from lsdm.data import export_csv
from lsdm.harness.ablation import default_jobs, load_grid, run_ablation
from lsdm.harness.config import load_config, save_config
from lsdm.harness.io import load_checkpoint, save_checkpoint
from lsdm.harness.pipeline import (
    MetricsRecord,
    evaluate_bundle,
    prepare_data,
    run_pipeline,
    train_step_one,
    train_step_two,
)
from lsdm.harness.verify import SCOPES, run_verification_suite
from lsdm.rng import Rng


def _common(p):
    p.add_argument("--config", help="JSON experiment config (missing keys take defaults)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output directory (default: config out_dir)")
    p.add_argument("--jobs", type=int, default=None, help="parallel workers (default: CPU count)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lsdm", description="Latent-space distribution matching toolkit.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-ae", help="Step 1: fit the autoencoder on paired and unpaired responses")
    _common(p)

    p = sub.add_parser("train-gen", help="Step 2: fit the latent generator by adversarial matching")
    _common(p)
    p.add_argument("--variant", choices=["clsdm", "dlsdm"], default=None)
    p.add_argument("--divergence", choices=["w1", "js", "kl"], default=None)
    p.add_argument("--ae", help="autoencoder checkpoint to reuse instead of training one")

    p = sub.add_parser("train-diffusion", help="Step 2 alternative: conditional score model")
    _common(p)
    p.add_argument("--ae", help="autoencoder checkpoint to reuse instead of training one")

    p = sub.add_parser("eval", help="evaluate a saved bundle on the seed's test split")
    _common(p)
    p.add_argument("--bundle", required=True)

    p = sub.add_parser("run", help="full pipeline for every seed in the config")
    _common(p)

    p = sub.add_parser("ablate", help="run a grid of config deltas")
    _common(p)
    p.add_argument("--grid", required=True, help='JSON {"base": {...}, "cells": [...], "seeds": [...]}')

    p = sub.add_parser("verify", help="run the property-check suite")
    _common(p)
    p.add_argument("--scope", default="all", choices=("all",) + SCOPES)
    p.add_argument("--size", default="full", choices=("full", "quick"))

    p = sub.add_parser("export-data", help="write the seed's synthetic splits as CSV")
    _common(p)
    return ap


def _out(args, cfg) -> Path:
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _ae(args, cfg, paired, unpaired):
    if getattr(args, "ae", None):
        ae = load_checkpoint(args.ae)
        if not isinstance(ae, AutoencoderPair):
            raise SystemExit(f"{args.ae} is not an autoencoder checkpoint")
        return ae
    return train_step_one(cfg, args.seed, paired, unpaired)[0]


def cmd_train_ae(args, cfg):
    out = _out(args, cfg)
    paired, unpaired, test = prepare_data(cfg, args.seed)
    ae, hist = train_step_one(cfg, args.seed, paired, unpaired)
    path = out / "checkpoints" / f"autoencoder_s{args.seed}.json"
    save_checkpoint(ae, path)
    print(json.dumps({"checkpoint": str(path), "recon_test": ae.reconstruction_error(test.y),
                      "final_recon": hist["recon"][-1] if hist["recon"] else None}))


def cmd_train_step_two(args, cfg):
    if args.command == "train-diffusion":
        cfg = replace(cfg, generator="diffusion")
    else:
        cfg = replace(cfg, generator="lsdm")
        if args.variant:
            cfg.step_two = replace(cfg.step_two, variant=args.variant)
        if args.divergence:
            cfg.step_two = replace(cfg.step_two, divergence=args.divergence)
    out = _out(args, cfg)
    paired, unpaired, test = prepare_data(cfg, args.seed)
    ae = _ae(args, cfg, paired, unpaired)
    try:
        bundle = train_step_two(cfg, args.seed, ae, paired)
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    path = out / "checkpoints" / f"bundle_{cfg.hash()}_s{args.seed}.json"
    save_checkpoint(bundle, path)
    save_config(cfg, out / "config.json")
    metrics = evaluate_bundle(ae, bundle, test, Rng(args.seed).child("eval"), cfg.range_grid)
    print(json.dumps({"checkpoint": str(path), **metrics}))
    return 0


def cmd_eval(args, cfg):
    bundle = load_checkpoint(args.bundle)
    if getattr(bundle, "encoder", None) is None:
        raise SystemExit("bundle has no encoder; cannot evaluate the decomposition")
    ae = AutoencoderPair(bundle.encoder, bundle.decoder)
    _, _, test = prepare_data(cfg, args.seed)
    metrics = evaluate_bundle(ae, bundle, test, Rng(args.seed).child("eval"), cfg.range_grid)
    metrics["recon_test"] = ae.reconstruction_error(test.y)
    print(json.dumps(metrics))
    if args.out:
        out = _out(args, cfg)
        (out / "eval.json").write_text(json.dumps(metrics, indent=1))


def cmd_run(args, cfg):
    out = _out(args, cfg)
    seeds = [args.seed] if args.seed is not None and args.seed_given else cfg.seeds
    cols = MetricsRecord.columns()
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for s in seeds:
            rec = run_pipeline(cfg, s, out)
            w.writerow(rec.as_row())
            print(f"seed {s}: w1_joint_test={rec.w1_joint_test:.4f} status={rec.status}")


def cmd_ablate(args, cfg):
    base, cells, seeds, x_key = load_grid(args.grid)
    out = Path(args.out or base.out_dir)
    rows = run_ablation(base, cells, seeds, args.jobs or default_jobs(), out, x_key)
    print(f"{len(rows)} runs written to {out / 'metrics.csv'}")


def cmd_verify(args, cfg):
    out = _out(args, cfg)
    report = run_verification_suite(args.scope, args.size, args.seed, out=out / "report.json")
    for name, chk in report["checks"].items():
        print(f"{'PASS' if chk['passed'] else 'FAIL'}  {name:<11} n={chk['count']:<5} worst_slack={chk['worst_slack']:.3e}")
    return 0 if report["all_passed"] else 1


def cmd_export(args, cfg):
    out = _out(args, cfg)
    paired, unpaired, test = prepare_data(cfg, args.seed)
    path = out / f"circle_s{args.seed}.csv"
    export_csv(path, paired, unpaired, test)
    print(path)


COMMANDS = {
    "train-ae": cmd_train_ae,
    "train-gen": cmd_train_step_two,
    "train-diffusion": cmd_train_step_two,
    "eval": cmd_eval,
    "run": cmd_run,
    "ablate": cmd_ablate,
    "verify": cmd_verify,
    "export-data": cmd_export,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    args.seed_given = "--seed" in argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    cfg = load_config(args.config)
    return COMMANDS[args.command](args, cfg) or 0


if __name__ == "__main__":
    sys.exit(main())
