"""Training: weighted prediction-error objective with regularizers,
from-scratch AdamW, and a two-phase sequential schedule.

The objective over model parameters and all per-rollout initial states is

    (1 / (n_r N)) sum_ij ||y_ij - yhat_ij||^2_{W_y}  +  L_kin  +  L_dyn

with ``L_kin`` pulling the decoded segment lengths toward a target
discretization and ``L_dyn`` penalizing state magnitude (averaged over all
predicted states) plus an L1 term on the torque-network weights.

Joint optimization of lengths, inertias and torque parameters tends to bad
local minima, so training runs sequentially: phase 1 keeps the segment
lengths frozen at their target, phase 2 releases everything.  Initial
states start at rest (zero deflection and rates).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import jax
import jax.numpy as jnp
import numpy as np

from .datapipe import RolloutDataset
from .errors import DomainError, NonConvergence
from .gradients import FlatParams
from .integrators import IntegratorConfig, make_rollout
from .kinematics import kin_target  # re-exported: discretization targets
from .models import ModelArch, arch_of, decode_fn, init_params, rhs_fn
from .torques import l1_network_norm

__all__ = [
    "AdamWConfig", "AdamWState", "History", "LossBreakdown", "TrainConfig",
    "adamw_init", "adamw_step", "kin_target", "loss", "make_flat_loss", "train",
]

Array = jnp.ndarray


class LossBreakdown(NamedTuple):
    mse_y: float
    loss_kin: float
    loss_dyn: float
    total: float


@dataclass(frozen=True)
class TrainConfig:
    w_y: tuple = (1.0, 1.0, 1.0, 0.1, 0.1, 0.1)  # diagonal output weights
    lam_kin: float = 1e-2
    lam_q: float = 1e-4
    lam_qd: float = 1e-5
    lam_int: float = 1e-4
    kin_target: Optional[tuple] = None  # target lengths [m], length n_prb
    rollout_len: int = 250              # N, samples per prediction window
    lr: float = 3e-3
    lr_schedule: str = "cosine"         # "cosine" | "constant"
    lr_min_fraction: float = 0.01
    weight_decay: float = 1e-4
    epochs_phase1: int = 300
    epochs_phase2: int = 700
    batch: Optional[int] = None         # rollouts per optimizer step (None: all)
    x0_init: str = "ik"                 # "ik" (decoder fit per window) | "rest"
    seed: int = 0
    clip_norm: float = 100.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)

    def validate(self, n_prb: int) -> "TrainConfig":
        if min(self.w_y) < 0 or min(self.lam_kin, self.lam_q, self.lam_qd,
                                    self.lam_int) < 0:
            raise DomainError("weights and regularization factors must be >= 0")
        if self.rollout_len < 2:
            raise DomainError("rollout length must be at least 2 samples")
        if self.lr <= 0:
            raise DomainError("learning rate must be positive")
        if self.kin_target is not None and len(self.kin_target) != n_prb:
            raise DomainError("kin_target length must equal n_prb")
        return self


# ---------------------------------------------------------------------------
# AdamW (decoupled weight decay), operating on flat parameter vectors
# ---------------------------------------------------------------------------

class AdamWConfig(NamedTuple):
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    decay_mask: Optional[Array] = None  # 1 where decay applies (None: everywhere)


class AdamWState(NamedTuple):
    step: Array  # int
    m: Array
    v: Array


def adamw_init(n: int) -> AdamWState:
    return AdamWState(step=jnp.zeros((), jnp.int64), m=jnp.zeros(n), v=jnp.zeros(n))


def adamw_step(p: Array, g: Array, state: AdamWState, cfg: AdamWConfig,
               lr: Optional[Array] = None):
    """One AdamW update; ``lr`` overrides ``cfg.lr`` (for schedules).

    Weight decay is decoupled and restricted to coordinates selected by
    ``decay_mask``.
    """
    lr = cfg.lr if lr is None else lr
    t = state.step + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * g * g
    m_hat = m / (1.0 - cfg.beta1**t)
    v_hat = v / (1.0 - cfg.beta2**t)
    update = m_hat / (jnp.sqrt(v_hat) + cfg.eps)
    decay = p if cfg.decay_mask is None else cfg.decay_mask * p
    p_new = p - lr * update - lr * cfg.weight_decay * decay
    return p_new, AdamWState(step=t, m=m, v=v)


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def _loss_terms(arch: ModelArch, cfg: TrainConfig, params, x0, u_win, y_win):
    """Weighted MSE + regularizers for stacked windows.

    ``u_win``: (n_r, N+1, 18); ``y_win``: (n_r, N+1, 6); fitted samples are
    1..N of every window (the anchor sample only seeds the rollout).
    """
    n_r, n_steps = u_win.shape[0], u_win.shape[1] - 1
    roll = make_rollout(rhs_fn(arch), cfg.integrator, ad="reverse", jit_compile=False)
    states, stats = jax.vmap(lambda x, us: roll(x, us, params))(x0, u_win[:, :-1])
    decode = decode_fn(arch)
    y_hat = jax.vmap(jax.vmap(lambda x, u: decode(x, u, params)))(
        states[:, 1:], u_win[:, 1:]
    )
    err = y_hat - y_win[:, 1:]
    w_y = jnp.asarray(cfg.w_y)
    mse_y = jnp.sum(err * err * w_y) / (n_r * n_steps)

    lengths = params.kin.lengths
    if cfg.kin_target is not None:
        target = jnp.asarray(cfg.kin_target)
        loss_kin = cfg.lam_kin * jnp.sum((lengths - target) ** 2)
    else:
        loss_kin = jnp.zeros(())

    n_q = states.shape[-1] // 2
    q = states[:, 1:, :n_q]
    qd = states[:, 1:, n_q:]
    loss_dyn = (
        cfg.lam_q * jnp.sum(q * q) / (n_r * n_steps)
        + cfg.lam_qd * jnp.sum(qd * qd) / (n_r * n_steps)
        + cfg.lam_int * _l1_term(arch, params)
    )
    total = mse_y + loss_kin + loss_dyn
    failures = jnp.sum(~stats.converged)
    return total, (mse_y, loss_kin, loss_dyn, failures)


def _l1_term(arch: ModelArch, params):
    if arch.family == "prba":
        return l1_network_norm(params.torque)
    if arch.family == "node":
        return sum(jnp.sum(jnp.abs(w)) + jnp.sum(jnp.abs(b)) for w, b in params.layers)
    return jnp.zeros(())


def loss(params, x0, dataset: RolloutDataset, cfg: TrainConfig) -> LossBreakdown:
    """Objective value for given parameters and initial states.

    ``x0`` has one row per dataset window.  The decomposition satisfies
    ``total == mse_y + loss_kin + loss_dyn`` identically.
    """
    arch = arch_of(params)
    cfg.validate(arch.n_prb)
    if dataset.n_steps != cfg.rollout_len:
        raise DomainError("dataset window length differs from cfg.rollout_len")
    u_win = jnp.asarray(dataset.stacked_u())
    y_win = jnp.asarray(dataset.stacked_y())
    x0 = jnp.asarray(x0, jnp.float64)
    if x0.shape != (dataset.n_rollouts, arch.n_x):
        raise DomainError(f"x0 must have shape {(dataset.n_rollouts, arch.n_x)}")
    total, (mse_y, loss_kin, loss_dyn, fails) = _loss_terms(
        arch, cfg, params, x0, u_win, y_win
    )
    if int(fails) > 0:
        raise NonConvergence(
            f"integration failed in {int(fails)} step(s) while evaluating the loss"
        )
    return LossBreakdown(
        mse_y=float(mse_y), loss_kin=float(loss_kin), loss_dyn=float(loss_dyn),
        total=float(total),
    )


def make_flat_loss(dataset: RolloutDataset, cfg: TrainConfig, arch: ModelArch,
                   params=None, x0=None):
    """Jitted scalar loss over a flat (parameters, initial states) vector.

    Returns ``(loss_fn, value_and_grad_fn, flat0)`` where ``loss_fn`` maps a
    flat vector to the total loss and the second function also returns the
    (breakdown, failure-count) auxiliaries and the gradient.
    """
    arch.validate()
    cfg.validate(arch.n_prb)
    if params is None:
        if cfg.kin_target is None:
            raise DomainError("cfg.kin_target is required to initialize parameters")
        params = init_params(arch, np.asarray(cfg.kin_target), seed=cfg.seed)
    if x0 is None:
        x0 = jnp.zeros((dataset.n_rollouts, arch.n_x))
    flat0 = FlatParams.from_pytree({"model": params, "x0": jnp.asarray(x0)})
    u_win = jnp.asarray(dataset.stacked_u())
    y_win = jnp.asarray(dataset.stacked_y())

    def total_loss(vec, u_batch, y_batch, x0_sel):
        tree = flat0.unravel(vec)
        x0_all = tree["x0"]
        total, aux = _loss_terms(arch, cfg, tree["model"], x0_all[x0_sel],
                                 u_batch, y_batch)
        return total, aux

    all_idx = jnp.arange(dataset.n_rollouts)
    loss_fn = jax.jit(lambda vec: total_loss(vec, u_win, y_win, all_idx)[0])
    vag = jax.jit(jax.value_and_grad(total_loss, has_aux=True))

    def value_and_grad_fn(vec, batch_idx=None):
        if batch_idx is None:
            return vag(vec, u_win, y_win, all_idx)
        idx = jnp.asarray(batch_idx)
        return vag(vec, u_win[idx], y_win[idx], idx)

    return loss_fn, value_and_grad_fn, flat0


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class History:
    breakdowns: list = field(default_factory=list)   # LossBreakdown per epoch
    lengths: list = field(default_factory=list)      # decoded segment lengths
    phase: list = field(default_factory=list)        # 1 or 2
    failures: list = field(default_factory=list)     # integration failures

    def append(self, breakdown: LossBreakdown, lengths, phase: int, failures: int):
        self.breakdowns.append(breakdown)
        self.lengths.append(np.asarray(lengths).copy())
        self.phase.append(phase)
        self.failures.append(failures)

    @property
    def n_epochs(self) -> int:
        return len(self.breakdowns)

    def totals(self) -> np.ndarray:
        return np.asarray([b.total for b in self.breakdowns])

    def rows(self):
        for i, b in enumerate(self.breakdowns):
            yield {
                "epoch": i, "phase": self.phase[i], "mse_y": b.mse_y,
                "loss_kin": b.loss_kin, "loss_dyn": b.loss_dyn, "total": b.total,
                "failures": self.failures[i],
                **{f"length_{j}": v for j, v in enumerate(self.lengths[i])},
            }


def _lr_factor(cfg: TrainConfig, t: int, t_total: int) -> float:
    if cfg.lr_schedule == "constant" or t_total <= 1:
        return 1.0
    frac = t / max(t_total - 1, 1)
    return cfg.lr_min_fraction + (1.0 - cfg.lr_min_fraction) * 0.5 * (
        1.0 + np.cos(np.pi * frac)
    )


def train(dataset: RolloutDataset, cfg: TrainConfig, arch: ModelArch,
          init_model_params=None, init_x0=None, history: Optional[History] = None):
    """Fit a model to a rollout dataset.

    Phase 1 freezes the segment lengths at the target discretization while
    the remaining parameters and all initial states adapt; phase 2 releases
    every parameter (unless the architecture pins the discretization).
    Returns ``(params, x0, history)``.  Deterministic for a fixed seed.

    Raises :class:`NonConvergence` after more than three consecutive epochs
    with integration failures.
    """
    arch.validate()
    cfg.validate(arch.n_prb)
    if dataset.n_rollouts < 1:
        raise DomainError("dataset is empty")
    if dataset.n_steps != cfg.rollout_len:
        raise DomainError("dataset window length differs from cfg.rollout_len")
    if cfg.kin_target is None:
        raise DomainError("cfg.kin_target (target segment lengths) is required")

    if init_model_params is None:
        init_model_params = init_params(arch, np.asarray(cfg.kin_target),
                                        seed=cfg.seed)
    if init_x0 is None:
        init_x0 = initial_states(dataset, arch, init_model_params, cfg)
    loss_fn, vag_fn, flat = make_flat_loss(
        dataset, cfg, arch, params=init_model_params, x0=init_x0
    )
    del loss_fn
    vec = flat.vector

    kin_mask = flat.mask_for(lambda name: "kin" in name and name.startswith("model"))
    decay_mask = flat.mask_for(_is_network_weight)
    adam_cfg = AdamWConfig(
        lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps,
        weight_decay=cfg.weight_decay, decay_mask=jnp.asarray(decay_mask, jnp.float64),
    )

    @jax.jit
    def update(vec, opt_state, lr, grad_mask, u_idx):
        (total, aux), grad = vag_fn(vec, None) if u_idx is None else vag_fn(vec, u_idx)
        grad = grad * grad_mask
        norm = jnp.linalg.norm(grad)
        grad = grad * jnp.minimum(1.0, cfg.clip_norm / (norm + 1e-30))
        new_vec, new_state = adamw_step(vec, grad, opt_state, adam_cfg, lr=lr)
        return new_vec, new_state, total, aux

    history = history if history is not None else History()
    n_r = dataset.n_rollouts
    batch = cfg.batch if cfg.batch not in (None, 0) else n_r
    batch = min(batch, n_r)
    rng = np.random.default_rng(cfg.seed)

    consecutive_failures = 0
    for phase, n_epochs in ((1, cfg.epochs_phase1), (2, cfg.epochs_phase2)):
        trainable = np.ones(len(flat), dtype=float)
        if phase == 1 or arch.freeze_kin:
            trainable[kin_mask] = 0.0
        grad_mask = jnp.asarray(trainable)
        opt_state = adamw_init(len(flat))
        for epoch in range(n_epochs):
            lr = cfg.lr * _lr_factor(cfg, epoch, n_epochs)
            if batch >= n_r:
                vec, opt_state, total, aux = update(vec, opt_state, lr, grad_mask, None)
                epoch_vals = [(total, aux)]
            else:
                perm = rng.permutation(n_r)
                epoch_vals = []
                for k in range(n_r // batch):
                    idx = jnp.asarray(np.sort(perm[k * batch:(k + 1) * batch]))
                    vec, opt_state, total, aux = update(vec, opt_state, lr,
                                                        grad_mask, idx)
                    epoch_vals.append((total, aux))
            mse = float(np.mean([float(a[0]) for _, a in epoch_vals]))
            lk = float(np.mean([float(a[1]) for _, a in epoch_vals]))
            ld = float(np.mean([float(a[2]) for _, a in epoch_vals]))
            fails = int(np.sum([int(a[3]) for _, a in epoch_vals]))
            breakdown = LossBreakdown(mse_y=mse, loss_kin=lk, loss_dyn=ld,
                                      total=mse + lk + ld)
            tree = flat.unravel(vec)
            history.append(breakdown, tree["model"].kin.lengths, phase, fails)

            consecutive_failures = consecutive_failures + 1 if fails > 0 else 0
            if consecutive_failures > 3:
                raise NonConvergence(
                    f"integration kept failing for {consecutive_failures} consecutive "
                    f"epochs (epoch {history.n_epochs - 1})"
                )

    tree = flat.unravel(vec)
    return tree["model"], np.asarray(tree["x0"]), history


def initial_states(dataset: RolloutDataset, arch: ModelArch, params,
                   cfg: TrainConfig) -> np.ndarray:
    """Starting values for the per-window initial states.

    "rest" starts every window at zero deflection and rates; "ik" fits the
    decoder to each window's anchor sample (mid-trajectory windows start
    far from rest, where the zero guess stalls the joint optimization).
    """
    if cfg.x0_init == "rest":
        return np.zeros((dataset.n_rollouts, arch.n_x))
    if cfg.x0_init != "ik":
        raise DomainError(f"unknown x0_init {cfg.x0_init!r}")
    from .estimation import ik_initial_state
    from .models import Model

    probe = Model(arch=arch, params=params, integrator=cfg.integrator)
    x0 = np.zeros((dataset.n_rollouts, arch.n_x))
    for i, window in enumerate(dataset.windows):
        x0[i] = ik_initial_state(probe, window.u[0], window.y[0]).state
    return x0


def _is_network_weight(name: str) -> bool:
    """Coordinates subject to weight decay: torque-network / MLP weights only."""
    tokens = name.split("/")
    return ("torque" in tokens and any(t in tokens for t in ("w1", "w2", "b1", "b2"))) \
        or "layers" in tokens


def default_train_config(total_length: float, n_prb: int,
                         mode: str = "uniform", **overrides) -> TrainConfig:
    """TrainConfig with the discretization target filled in."""
    target = tuple(float(v) for v in np.asarray(kin_target(total_length, n_prb, mode)))
    return dataclasses.replace(TrainConfig(kin_target=target), **overrides)
