"""Grid runner: cells x seeds in a process pool, CSV rows, per-cell medians, plot data."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import threading
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path

import numpy as np

from lsdm.harness.config import ExperimentConfig
from lsdm.harness.pipeline import MetricsRecord, run_pipeline

log = logging.getLogger(__name__)

SUMMARY_METRICS = ("w1_joint_test", "w1_latent_test", "recon_test", "range_sup_dist")


def load_grid(path):
    """Read ``{"base": {...}, "cells": [{dotted: value}, ...], "seeds": [...], "x": key}``."""
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict) or "cells" not in doc:
        raise ValueError("grid file needs a 'cells' list")
    base = ExperimentConfig.from_dict(doc.get("base") or {})
    seeds = doc.get("seeds", base.seeds)
    return base, list(doc["cells"]), list(seeds), doc.get("x")


def _single_thread():
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = "1"


def _run_one(cfg_doc, seed, out_dir):
    cfg = ExperimentConfig.from_dict(cfg_doc)
    try:
        return run_pipeline(cfg, seed, out_dir).as_row()
    except Exception as exc:  # isolate the cell; the grid keeps going
        log.exception("run failed")
        s2 = cfg.step_two
        return MetricsRecord(
            run_id=f"{cfg.hash()}-s{seed}", seed=seed, variant=s2.variant, divergence=s2.divergence,
            n=cfg.data.n, N=cfg.data.N, m=cfg.m, d=cfg.d, c1=cfg.data.c1, c2=cfg.data.c2,
            status=f"error: {type(exc).__name__}", config_hash=cfg.hash(),
        ).as_row()


def default_jobs():
    return os.cpu_count() or 1


def run_ablation(base: ExperimentConfig, cells, seeds=None, jobs=None, out_dir="ablation", x_key=None):
    """Run every ``(cell, seed)`` and write metrics, medians and plot data.

    ``cells`` is a list of dotted-key deltas on ``base``. Each run seeds
    itself from its own seed alone, so adding or removing cells never changes
    another cell's numbers. Returns the rows in grid order.
    """
    if not cells:
        raise ValueError("empty grid")
    seeds = list(base.seeds if seeds is None else seeds)
    jobs = default_jobs() if jobs is None else max(1, int(jobs))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfgs = [base.with_delta(c) for c in cells]
    tasks = [(ci, seed) for ci in range(len(cfgs)) for seed in seeds]
    columns = ["cell"] + MetricsRecord.columns()
    lock = threading.Lock()
    rows = {}
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()

        def done(key, row):
            row = {"cell": key[0], **row}
            with lock:
                rows[key] = row
                writer.writerow(row)
                fh.flush()

        if jobs == 1:
            for ci, seed in tasks:
                done((ci, seed), _run_one(cfgs[ci].to_dict(), seed, out))
        else:
            with ProcessPoolExecutor(max_workers=jobs, initializer=_single_thread) as pool:
                futs = {pool.submit(_run_one, cfgs[ci].to_dict(), seed, str(out)): (ci, seed) for ci, seed in tasks}
                for fut in as_completed(futs):
                    done(futs[fut], fut.result())

    ordered = [rows[k] for k in tasks]
    # rewrite in grid order so the file does not depend on completion order
    _write_rows(out / "metrics.csv", columns, ordered)
    summary = summarize(ordered, cells)
    _write_rows(out / "summary.csv", list(summary[0].keys()), summary)
    write_plotdata(summary, cells, out / "plotdata", x_key)
    (out / "grid.json").write_text(json.dumps(
        {"base": base.to_dict(), "cells": cells, "seeds": seeds, "x": x_key}, indent=1))
    return ordered


def _write_rows(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        w.writerows(rows)


def summarize(rows, cells):
    """Median of each summary metric over the ok-status runs of each cell."""
    out = []
    for ci, delta in enumerate(cells):
        mine = [r for r in rows if int(r["cell"]) == ci]
        ok = [r for r in mine if r["status"] == "ok"]
        entry = {"cell": ci, "delta": json.dumps(delta, sort_keys=True), "runs": len(mine), "ok": len(ok)}
        for key in SUMMARY_METRICS:
            vals = [float(r[key]) for r in ok]
            entry[f"median_{key}"] = float(np.median(vals)) if vals else math.nan
        out.append(entry)
    return out


def write_plotdata(summary, cells, plot_dir, x_key=None):
    """One two-column TSV per varied knob: knob value, median joint W1."""
    plot_dir = Path(plot_dir)
    plot_dir.mkdir(parents=True, exist_ok=True)
    keys = [x_key] if x_key else sorted({k for c in cells for k in c})
    written = []
    for key in keys:
        pts = [(c[key], s["median_w1_joint_test"]) for c, s in zip(cells, summary) if key in c]
        if not pts:
            continue
        pts.sort()
        path = plot_dir / f"{key}.tsv"
        with open(path, "w") as fh:
            fh.write(f"{key}\tmedian_w1_joint_test\n")
            for xv, yv in pts:
                fh.write(f"{xv!r}\t{yv!r}\n")
        written.append(path)
    return written


def read_metrics(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
