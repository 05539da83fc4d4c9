"""Step 2: conditional latent distribution matching (cLSDM / dLSDM)."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from lsdm.core.autoencoder import HIDDEN_ACT, AutoencoderPair, TrainingDivergedError
from lsdm.data import PairedSet
from lsdm.nn import (
    AdamState,
    EmaState,
    Network,
    adam_step,
    build_mlp,
    ema_update,
    grad,
    input_gradient_node,
    lr_schedule_value,
)
from lsdm.nn import autograd as T
from lsdm.nn.autograd import Tensor
from lsdm.rng import as_rng

VARIANTS = ("clsdm", "dlsdm")
_DIVERGENCE_ALIASES = {"w1": "w1", "w1-gp": "w1", "js": "js", "kl": "kl"}


def normalize_divergence(name: str) -> str:
    try:
        return _DIVERGENCE_ALIASES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown divergence {name!r}; use w1, js or kl") from None


@dataclass
class StepTwoConfig:
    variant: str = "clsdm"
    divergence: str = "w1"
    critic_iters: int = 5
    gp_lambda: float = 10.0
    gp_mode: str = "interpolate"
    epochs: int = 200
    steps: int | None = None  # total generator updates; overrides epochs
    batch: int = 64
    gen_lr: float = 3e-4
    gen_betas: tuple = (0.0, 0.9)
    critic_lr: float = 3e-4
    critic_betas: tuple = (0.0, 0.9)
    milestones: list = None  # fractions of training length
    noise_dim: int = 2
    ema_decay: float = 0.999
    hidden: list = field(default_factory=lambda: [64, 64])
    critic_hidden: list = field(default_factory=lambda: [128, 128])
    seed: int = 0

    def __post_init__(self):
        self.variant = self.variant.lower()
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        self.divergence = normalize_divergence(self.divergence)
        if self.critic_iters < 1:
            raise ValueError("critic_iters must be >= 1")
        if self.gp_lambda < 0:
            raise ValueError("gp_lambda must be >= 0")
        if self.gp_mode not in ("interpolate", "real_point"):
            raise ValueError("gp_mode must be 'interpolate' or 'real_point'")
        if self.noise_dim < 0:
            raise ValueError("noise_dim must be >= 0")
        self.gen_betas = tuple(self.gen_betas)
        self.critic_betas = tuple(self.critic_betas)

    def resolved_milestones(self, total):
        fr = (0.3, 0.5, 0.75) if self.milestones is None else self.milestones
        return sorted({max(1, int(round(f * total))) for f in fr})


def scale_x(x, bounds):
    lo, hi = bounds
    return (np.asarray(x, dtype=np.float64) - lo) / (hi - lo if hi > lo else 1.0)


@dataclass
class GeneratorBundle:
    """Frozen decoder plus EMA latent generator; samples are ``D(H(x, eta))``."""

    decoder: Network
    generator: Network
    noise_dim: int
    x_bounds: tuple
    encoder: Network | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.generator.in_dim - self.noise_dim

    def _noise(self, count, rng):
        return rng.normal(size=(count, self.noise_dim)) if self.noise_dim else np.zeros((count, 0))

    def latent(self, x, rng) -> np.ndarray:
        """One latent draw per row of ``x``."""
        x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
        if x.shape[1] != self.p:
            raise ValueError(f"x has dim {x.shape[1]}, generator expects {self.p}")
        inp = np.hstack([scale_x(x, self.x_bounds), self._noise(len(x), rng)])
        return self.generator.predict(inp)

    def sample(self, x, rng) -> np.ndarray:
        return self.decoder.predict(self.latent(x, rng))


def generate_conditional(bundle: GeneratorBundle, x, count: int, rng) -> np.ndarray:
    """``count`` draws of ``D(H(x, eta_k))`` at a single predictor value ``x``."""
    rng = as_rng(rng)
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.ndim != 1 or x.shape[0] != bundle.p:
        raise ValueError(f"x must be a vector of length {bundle.p}")
    return bundle.sample(np.tile(x, (int(count), 1)), rng)


def gradient_penalty_term(critic: Network, x, z_real, z_fake, lam, mode="interpolate", rng=None):
    """``lam * mean((||grad_(x,z) f(x, z_hat)|| - 1)^2)`` as a differentiable scalar."""
    x = np.asarray(x, dtype=np.float64)
    z_real = np.asarray(z_real, dtype=np.float64)
    if mode == "interpolate":
        eps = as_rng(rng).uniform(size=(len(z_real), 1))
        z_hat = eps * z_real + (1.0 - eps) * np.asarray(z_fake, dtype=np.float64)
    elif mode == "real_point":
        z_hat = z_real
    else:
        raise ValueError(f"unknown gradient-penalty mode {mode!r}")
    v = Tensor(np.hstack([x, z_hat]), requires_grad=True)
    out = critic(v)
    if out.shape[1] != 1:
        raise ValueError("critic must output one scalar per sample")
    g = input_gradient_node(out, v)
    return lam * ((T.row_norm(g) - 1.0) ** 2).mean()


def _critic_loss(kind, f_real, f_fake):
    if kind == "w1":
        return f_real.mean() - f_fake.mean()
    if kind == "js":
        # real -> label 1, fake -> label 0
        return T.softplus(-f_real).mean() + T.softplus(f_fake).mean()
    # KL dual: sup E_real f - E_fake exp(f - 1)
    return -(f_real.mean() - T.exp(f_fake - 1.0).mean())


def _generator_loss(kind, f_fake):
    if kind == "w1":
        return f_fake.mean()
    if kind == "js":
        return T.softplus(-f_fake).mean()
    return -T.exp(f_fake - 1.0).mean()


def build_step_two_nets(p, m, target_dim, cfg: StepTwoConfig, rng):
    hid, chid = list(cfg.hidden), list(cfg.critic_hidden)
    gen = build_mlp([p + cfg.noise_dim, *hid, m], [HIDDEN_ACT] * len(hid) + ["linear"], rng.child("generator"))
    critic = build_mlp([p + target_dim, *chid, 1], [HIDDEN_ACT] * len(chid) + ["linear"], rng.child("critic"))
    return gen, critic


class LatentMatcher:
    """Holds the Step-2 training state so a batch objective can be inspected."""

    def __init__(self, paired: PairedSet, ae: AutoencoderPair, cfg: StepTwoConfig, rng):
        self.cfg = cfg
        self.ae = ae.frozen()
        self.x_bounds = paired.x_bounds
        self.xs = scale_x(paired.x, paired.x_bounds)
        codes = self.ae.encode(paired.y)
        self.targets = self.ae.decode(codes) if cfg.variant == "clsdm" else codes
        self.gen, self.critic = build_step_two_nets(
            paired.p, ae.latent_dim, self.targets.shape[1], cfg, rng.child("init")
        )

    def transport(self, xs, eta) -> Tensor:
        """``T_gamma``: the generator, composed with the decoder for cLSDM."""
        h = self.gen(Tensor(np.hstack([xs, eta])))
        return self.ae.decoder(h) if self.cfg.variant == "clsdm" else h

    def critic_objective(self, xs, z_real, fake, rng):
        cfg = self.cfg
        both = self.critic(Tensor(np.vstack([np.hstack([xs, z_real]), np.hstack([xs, fake])])))
        b = len(xs)
        loss = _critic_loss(cfg.divergence, both[:b], both[b:])
        if cfg.divergence == "w1" and cfg.gp_lambda > 0:
            loss = loss + gradient_penalty_term(
                self.critic, xs, z_real, fake, cfg.gp_lambda, cfg.gp_mode, rng
            )
        return loss

    def generator_objective(self, xs, eta):
        fake = self.transport(xs, eta)
        return _generator_loss(self.cfg.divergence, self.critic(T.concat([Tensor(xs), fake], axis=1)))

    def critic_gap(self, xs, z_real, fake) -> float:
        fr = self.critic.predict(np.hstack([xs, z_real]))
        ff = self.critic.predict(np.hstack([xs, fake]))
        return float(ff.mean() - fr.mean())

    def interpolate_grad_norm(self, xs, z_real, fake, rng) -> float:
        eps = rng.uniform(size=(len(xs), 1))
        v = Tensor(np.hstack([xs, eps * z_real + (1 - eps) * fake]), requires_grad=True)
        g = grad(self.critic(v).sum(), v)
        return float(np.linalg.norm(g.data, axis=1).mean())


def train_latent_generator(paired: PairedSet, ae: AutoencoderPair, cfg: StepTwoConfig, rng=None):
    """Adversarial Step 2 with ``J`` critic updates per generator update.

    The autoencoder is used through frozen copies and never updated. The
    returned bundle carries the EMA generator weights.
    """
    rng = as_rng(cfg.seed if rng is None else rng)
    n = len(paired)
    batch = cfg.batch
    if n < batch:
        raise ValueError(f"need at least batch={batch} pairs, got {n}")
    mt = LatentMatcher(paired, ae, cfg, rng)
    per_epoch = n // batch
    total = cfg.steps if cfg.steps is not None else cfg.epochs * per_epoch
    milestones = cfg.resolved_milestones(total)
    g_params, c_params = mt.gen.parameters(), mt.critic.parameters()
    g_opt = AdamState(cfg.gen_lr, *cfg.gen_betas)
    c_opt = AdamState(cfg.critic_lr, *cfg.critic_betas)
    ema = EmaState.from_params(g_params, cfg.ema_decay)
    r_batch, r_noise, r_gp = rng.child("batch"), rng.child("noise"), rng.child("gp")
    history = {"critic_loss": [], "gen_loss": [], "critic_gap": []}
    status, t0 = "ok", time.perf_counter()
    order = None
    for step in range(total):
        pos = step % per_epoch
        if pos == 0:
            order = r_batch.permutation(n)
        idx = order[pos * batch : (pos + 1) * batch]
        xs, z_real = mt.xs[idx], mt.targets[idx]
        eta = r_noise.normal(size=(batch, cfg.noise_dim))
        g_opt.lr = lr_schedule_value(cfg.gen_lr, step, milestones)
        c_opt.lr = lr_schedule_value(cfg.critic_lr, step, milestones)
        with T.no_grad():
            fake = mt.transport(xs, eta).data
        for _ in range(cfg.critic_iters):
            c_loss = mt.critic_objective(xs, z_real, fake, r_gp)
            if not np.isfinite(c_loss.item()):
                status = "diverged"
                break
            adam_step(c_params, grad(c_loss, c_params), c_opt)
        if status != "ok":
            break
        g_loss = mt.generator_objective(xs, eta)
        if not np.isfinite(g_loss.item()):
            status = "diverged"
            break
        adam_step(g_params, grad(g_loss, g_params), g_opt)
        ema_update(ema, g_params)
        history["critic_loss"].append(c_loss.item())
        history["gen_loss"].append(g_loss.item())
        history["critic_gap"].append(mt.critic_gap(xs, z_real, fake))

    if status == "ok" and any(not np.all(np.isfinite(s)) for s in ema.shadow):
        status = "diverged"
    final = mt.gen.copy()
    if status == "ok":
        final.load_state(ema.shadow)
    check = rng.child("diagnostic")
    idx = check.permutation(n)[:batch]
    fake = mt.transport(mt.xs[idx], check.normal(size=(len(idx), cfg.noise_dim))).data
    finite = np.all(np.isfinite(fake))
    meta = {
        "step_two": asdict(cfg),
        "status": status,
        "steps_run": len(history["gen_loss"]),
        "train_seconds": time.perf_counter() - t0,
        "critic_grad_norm_mean": (
            mt.interpolate_grad_norm(mt.xs[idx], mt.targets[idx], fake, check) if finite else float("nan")
        ),
        "history": history,
    }
    return GeneratorBundle(
        decoder=mt.ae.decoder,
        generator=final,
        noise_dim=cfg.noise_dim,
        x_bounds=tuple(mt.x_bounds),
        encoder=mt.ae.encoder,
        metadata=meta,
    )
