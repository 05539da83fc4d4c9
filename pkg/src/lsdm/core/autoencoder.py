"""Step 1: autoencoder pre-training on all responses (paired and unpaired)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from lsdm.nn import AdamState, Network, adam_step, build_mlp, grad, lr_schedule_value
from lsdm.nn import autograd as T
from lsdm.nn.autograd import Tensor
from lsdm.ot import w1_exact_equal
from lsdm.rng import as_rng

HIDDEN_ACT = "leaky_relu(0.2)"


class TrainingDivergedError(RuntimeError):
    def __init__(self, msg, step=None):
        super().__init__(msg)
        self.step = step


@dataclass
class AutoencoderPair:
    encoder: Network
    decoder: Network

    def __post_init__(self):
        if self.encoder.out_dim != self.decoder.in_dim:
            raise ValueError("encoder output and decoder input dims differ")

    @property
    def latent_dim(self) -> int:
        return self.encoder.out_dim

    def encode(self, y) -> np.ndarray:
        return self.encoder.predict(y)

    def decode(self, z) -> np.ndarray:
        return self.decoder.predict(z)

    def reconstruct(self, y) -> np.ndarray:
        return self.decode(self.encode(y))

    def reconstruction_error(self, y) -> float:
        y = np.asarray(y, dtype=np.float64)
        return float(np.linalg.norm(y - self.reconstruct(y), axis=1).mean())

    def frozen(self) -> "AutoencoderPair":
        """Copies whose parameters are not tracked by the graph."""
        enc, dec = self.encoder.copy(), self.decoder.copy()
        for p in enc.parameters() + dec.parameters():
            p.requires_grad = False
        return AutoencoderPair(enc, dec)


@dataclass
class StepOneConfig:
    epochs: int = 200
    batch: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    milestones: list = None  # epochs; default 30/50/75% of ``epochs``
    wae_lambda: float = 0.0
    latent_dim: int = 1
    hidden: list = field(default_factory=lambda: [64, 64])
    encoder_out: str = "tanh"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch < 1 or (self.wae_lambda > 0 and self.batch < 2):
            raise ValueError("batch must be >= 2 when the WAE penalty is on")
        if self.wae_lambda < 0:
            raise ValueError("wae_lambda must be nonnegative")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")

    def resolved_milestones(self):
        if self.milestones is not None:
            return list(self.milestones)
        return sorted({max(1, int(round(f * self.epochs))) for f in (0.3, 0.5, 0.75)})


def build_autoencoder(q: int, cfg: StepOneConfig, rng) -> AutoencoderPair:
    m, hid = cfg.latent_dim, list(cfg.hidden)
    enc = build_mlp([q, *hid, m], [HIDDEN_ACT] * len(hid) + [cfg.encoder_out], rng.child("encoder"))
    dec = build_mlp([m, *hid, q], [HIDDEN_ACT] * len(hid) + ["linear"], rng.child("decoder"))
    return AutoencoderPair(enc, dec)


def wae_penalty(encoded: Tensor, prior) -> Tensor:
    """Assignment W1 between an encoded batch and a prior batch.

    The optimal matching is found on the values and then held fixed, so the
    gradient is that of ``mean ||e_i - z_pi(i)||`` with respect to ``e``.
    """
    prior = np.asarray(prior, dtype=np.float64).reshape(encoded.shape)
    if encoded.shape[0] < 2:
        raise ValueError("the WAE penalty needs at least two points per batch")
    _, match = w1_exact_equal(encoded.data, prior)
    return T.row_norm(encoded - prior[match.perm]).mean()


def reconstruction_loss(ae: AutoencoderPair, y) -> Tensor:
    y = y if isinstance(y, Tensor) else Tensor(y)
    return T.row_norm(y - ae.decoder(ae.encoder(y))).mean()


def train_autoencoder(y_all, cfg: StepOneConfig, rng=None, ae: AutoencoderPair | None = None):
    """Minimise mean (unsquared) reconstruction norm plus the optional WAE term.

    Returns ``(AutoencoderPair, history)``; ``history`` holds per-epoch mean
    reconstruction loss and the mean per-batch W1 between codes and prior
    draws (recorded even when the penalty is off).
    """
    rng = as_rng(cfg.seed if rng is None else rng)
    y_all = np.asarray(y_all, dtype=np.float64)
    if y_all.ndim != 2 or len(y_all) == 0:
        raise ValueError("no responses to train on")
    if len(y_all) < cfg.batch:
        raise ValueError(f"need at least batch={cfg.batch} responses, got {len(y_all)}")
    if ae is None:
        ae = build_autoencoder(y_all.shape[1], cfg, rng.child("init"))
    params = ae.encoder.parameters() + ae.decoder.parameters()
    opt = AdamState(cfg.lr, cfg.beta1, cfg.beta2)
    milestones = cfg.resolved_milestones()
    r_shuffle, r_prior = rng.child("shuffle"), rng.child("prior")
    per_epoch = len(y_all) // cfg.batch
    history = {"recon": [], "w1_prior": []}
    step = 0
    for epoch in range(cfg.epochs):
        opt.lr = lr_schedule_value(cfg.lr, epoch, milestones)
        order = r_shuffle.permutation(len(y_all))
        rec_sum = w_sum = 0.0
        for b in range(per_epoch):
            yb = y_all[order[b * cfg.batch : (b + 1) * cfg.batch]]
            codes = ae.encoder(Tensor(yb))
            rec = T.row_norm(Tensor(yb) - ae.decoder(codes)).mean()
            prior = r_prior.normal(size=codes.shape)
            if cfg.wae_lambda > 0:
                pen = wae_penalty(codes, prior)
                loss = rec + cfg.wae_lambda * pen
                w_sum += pen.item()
            else:
                loss = rec
                if len(yb) >= 2:
                    w_sum += w1_exact_equal(codes.data, prior)[0]
            if not np.isfinite(loss.item()):
                raise TrainingDivergedError(f"non-finite autoencoder loss at step {step}", step)
            adam_step(params, grad(loss, params), opt)
            rec_sum += rec.item()
            step += 1
        history["recon"].append(rec_sum / per_epoch)
        history["w1_prior"].append(w_sum / per_epoch)
    return ae, history
