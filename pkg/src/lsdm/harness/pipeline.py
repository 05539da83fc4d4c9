"""End-to-end run: data, Step 1, Step 2 (adversarial or diffusion), evaluation."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from lsdm.core.autoencoder import TrainingDivergedError, train_autoencoder
from lsdm.core.diagnostics import (
    joint,
    latent_probes,
    range_proximity,
    theorem1_decomposition,
    theorem2_check,
)
from lsdm.core.matching import train_latent_generator
from lsdm.data import dist_to_circle_support, sample_circle_model
from lsdm.diffusion import DiffusionBundle, train_score_net
from lsdm.harness.config import ExperimentConfig
from lsdm.harness.io import save_checkpoint
from lsdm.ot import w1_exact_equal
from lsdm.rng import Rng

log = logging.getLogger(__name__)


@dataclass
class MetricsRecord:
    run_id: str
    seed: int
    variant: str
    divergence: str
    n: int
    N: int
    m: int
    d: int
    c1: float
    c2: float
    recon_train: float = float("nan")
    recon_test: float = float("nan")
    w1_joint_test: float = float("nan")
    w1_latent_test: float = float("nan")
    thm1_lhs: float = float("nan")
    thm1_recon: float = float("nan")
    thm1_matched: float = float("nan")
    thm1_holds: bool = False
    thm2_holds: bool = False
    range_sup_dist: float = float("nan")
    critic_grad_norm_mean: float = float("nan")
    wallclock_s: float = 0.0
    status: str = "ok"
    config_hash: str = ""

    @classmethod
    def columns(cls):
        return [f.name for f in fields(cls)]

    def as_row(self) -> dict:
        return asdict(self)

    def comparable(self) -> dict:
        """Every field except wall-clock time."""
        row = self.as_row()
        row.pop("wallclock_s")
        return row


def stage_configs(cfg: ExperimentConfig):
    """Step configs with the experiment's ``m``, ``d`` and batch limits applied."""
    n_all = cfg.data.n + cfg.data.N
    s1 = replace(cfg.step_one, latent_dim=cfg.m, batch=min(cfg.step_one.batch, n_all))
    s2 = replace(cfg.step_two, noise_dim=cfg.d, batch=min(cfg.step_two.batch, cfg.data.n))
    dcfg = replace(cfg.diffusion, batch=min(cfg.diffusion.batch, cfg.data.n))
    return s1, s2, dcfg


def prepare_data(cfg: ExperimentConfig, seed: int):
    """``(paired, unpaired, test)`` for this seed, from the run's "data" stream."""
    return sample_circle_model(replace(cfg.data, seed=seed), Rng(seed).child("data"))


def evaluate_bundle(ae, bundle, test, rng, range_grid=200) -> dict:
    """Test-set metrics for a trained generator, keyed by MetricsRecord field."""
    t1 = theorem1_decomposition(ae, bundle, test, rng.child("generate"))
    gen_latent = bundle.latent(test.x, rng.child("generate"))
    codes = ae.encode(test.y)
    t2 = theorem2_check(ae.decoder, gen_latent, codes, x_a=test.x, x_b=test.x)
    probes = latent_probes(ae.encoder, test.y, range_grid)
    return {
        "w1_joint_test": t1["joint_w1"],
        "w1_latent_test": w1_exact_equal(joint(test.x, gen_latent), joint(test.x, codes))[0],
        "thm1_lhs": t1["joint_w1"],
        "thm1_recon": t1["recon_term"],
        "thm1_matched": t1["matched_w1"],
        "thm1_holds": t1["inequality_holds"],
        "thm2_holds": t2["holds"],
        "range_sup_dist": range_proximity(ae.decoder, probes, dist_to_circle_support),
    }


def train_step_one(cfg: ExperimentConfig, seed: int, paired, unpaired):
    s1 = stage_configs(cfg)[0]
    y_all = np.vstack([paired.y, unpaired.y])
    return train_autoencoder(y_all, s1, Rng(seed).child("step1"))


def train_step_two(cfg: ExperimentConfig, seed: int, ae, paired):
    """Adversarial or diffusion latent generator; raises TrainingDivergedError."""
    _, s2, dcfg = stage_configs(cfg)
    rng = Rng(seed).child("step2")
    if cfg.generator == "diffusion":
        score, hist = train_score_net(paired.x, ae.encode(paired.y), dcfg, rng, x_bounds=paired.x_bounds)
        return DiffusionBundle(ae.decoder, score, dcfg, paired.x_bounds, ae.encoder,
                               {"status": "ok", "history": {"loss": hist["loss"]}})
    bundle = train_latent_generator(paired, ae, s2, rng)
    if bundle.metadata["status"] != "ok":
        raise TrainingDivergedError("latent matching produced a non-finite loss", bundle.metadata["steps_run"])
    return bundle


def run_pipeline(cfg: ExperimentConfig, seed: int, out_dir=None) -> MetricsRecord:
    """Train and evaluate one (config, seed) cell.

    A diverged stage yields ``status="diverged"`` and whatever metrics were
    computed before it, rather than an exception. With ``out_dir`` the record
    (and, if enabled, the checkpoints) are written there.
    """
    t0 = time.perf_counter()
    chash = cfg.hash()
    diffusion = cfg.generator == "diffusion"
    rec = MetricsRecord(
        run_id=f"{chash}-s{seed}",
        seed=seed,
        variant="diffusion" if diffusion else cfg.step_two.variant,
        divergence="dsm" if diffusion else cfg.step_two.divergence,
        n=cfg.data.n,
        N=cfg.data.N,
        m=cfg.m,
        d=0 if diffusion else cfg.d,
        c1=cfg.data.c1,
        c2=cfg.data.c2,
        config_hash=chash,
    )
    paired, unpaired, test = prepare_data(cfg, seed)
    ae = bundle = None
    ae_hist = {}
    try:
        ae, ae_hist = train_step_one(cfg, seed, paired, unpaired)
        rec.recon_train = ae.reconstruction_error(np.vstack([paired.y, unpaired.y]))
        rec.recon_test = ae.reconstruction_error(test.y)
        bundle = train_step_two(cfg, seed, ae, paired)
    except TrainingDivergedError as exc:
        log.warning("run %s diverged: %s", rec.run_id, exc)
        rec.status = "diverged"
    if bundle is not None:
        if not diffusion:
            rec.critic_grad_norm_mean = bundle.metadata["critic_grad_norm_mean"]
        for key, value in evaluate_bundle(ae, bundle, test, Rng(seed).child("eval"), cfg.range_grid).items():
            setattr(rec, key, value)
    rec.wallclock_s = time.perf_counter() - t0
    if out_dir is not None:
        _persist(Path(out_dir), cfg, rec, ae, bundle, ae_hist)
    return rec


def _persist(out: Path, cfg, rec, ae, bundle, ae_hist):
    if cfg.save_checkpoints:
        if ae is not None:
            save_checkpoint(ae, out / "checkpoints" / f"{rec.run_id}_autoencoder.json")
        if bundle is not None:
            save_checkpoint(bundle, out / "checkpoints" / f"{rec.run_id}_bundle.json")
    (out / "records").mkdir(parents=True, exist_ok=True)
    doc = {"record": rec.as_row(), "config": cfg.to_dict(), "ae_history": ae_hist}
    (out / "records" / f"{rec.run_id}.json").write_text(json.dumps(doc, indent=1))
