"""Initial-state recovery at test time.

Given a short window of past inputs and outputs, the latent state at the
window end is recovered by fitting the model's predicted outputs over the
window — a moving-horizon estimate.  The dynamics constraints are
eliminated by single shooting: the only decision variable is the state at
the window start, everything after follows from rollouts.  A damped
least-squares inverse-kinematics fit to the newest sample provides the warm
start and a cheap alternative estimator.
"""

from __future__ import annotations

from typing import NamedTuple, Optional

import jax
import jax.numpy as jnp
import numpy as np

from .errors import DomainError
from .integrators import make_rollout
from .kinematics import _fk_position
from .models import Model, decode_fn, rhs_fn

Array = jnp.ndarray


class MheConfig(NamedTuple):
    horizon: int = 25                 # m, samples before the anchor
    weights: Optional[tuple] = None   # m+1 nonnegative sample weights (None: all 1)
    solver: str = "gauss-newton"      # "gauss-newton" | "gradient-descent"
    max_iter: int = 40
    tol: float = 1e-12                # relative objective-decrease stop

    def validate(self) -> "MheConfig":
        if self.horizon < 0:
            raise DomainError("horizon must be >= 0")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (self.horizon + 1,) or (w < 0).any() or not w.any():
                raise DomainError("weights must be m+1 nonnegative values, not all zero")
        if self.solver not in ("gauss-newton", "gradient-descent"):
            raise DomainError(f"unknown solver {self.solver!r}")
        return self


class MheResult(NamedTuple):
    state: np.ndarray        # estimate at the window end (anchor sample)
    state_start: np.ndarray  # optimized state at the window start
    residual: float          # final objective value
    converged: bool
    iterations: int


class IkResult(NamedTuple):
    state: np.ndarray
    position_residual: float  # [m]
    converged: bool
    iterations: int


def _window_residual_fn(model: Model, inputs: Array, outputs: Array, weights: Array):
    """Weighted output-residual vector over the window as a function of the
    state at the window start; differentiable in forward mode through the
    implicit integration steps."""
    m = inputs.shape[0] - 1
    roll = make_rollout(rhs_fn(model.arch), model.integrator, ad="forward",
                        jit_compile=False)
    decode = decode_fn(model.arch)
    scale = jnp.sqrt(weights / max(m, 1))

    def residual(x_start):
        states, _ = roll(x_start, inputs[:-1], model.params) if m > 0 else (
            x_start[None, :], None)
        y_hat = jax.vmap(lambda x, u: decode(x, u, model.params))(states, inputs)
        return ((y_hat - outputs) * scale[:, None]).reshape(-1)

    def states_fn(x_start):
        if m == 0:
            return x_start[None, :]
        states, _ = roll(x_start, inputs[:-1], model.params)
        return states

    return residual, states_fn


def mhe_estimate(model: Model, inputs, outputs, cfg: MheConfig = MheConfig(),
                 x_init=None) -> MheResult:
    """Estimate the state at the window end from ``m+1`` input/output samples.

    Minimizes the weighted sum of squared output errors over the window,
    subject to the model dynamics (eliminated by single shooting).  The
    objective decreases monotonically across iterations; if the iteration
    budget runs out the best iterate found is returned with
    ``converged=False``.
    """
    cfg.validate()
    inputs = jnp.asarray(inputs, jnp.float64)
    outputs = jnp.asarray(outputs, jnp.float64)
    m = cfg.horizon
    if inputs.shape != (m + 1, 18) or outputs.shape != (m + 1, 6):
        raise DomainError(f"window must provide {m + 1} input and output samples")
    weights = jnp.ones(m + 1) if cfg.weights is None else jnp.asarray(cfg.weights)

    residual_fn, states_fn = _window_residual_fn(model, inputs, outputs, weights)
    residual_jit = jax.jit(residual_fn)
    jac_jit = jax.jit(jax.jacfwd(residual_fn))
    objective = lambda x: float(jnp.sum(residual_jit(x) ** 2))

    if x_init is None:
        ik = ik_initial_state(model, inputs[0], outputs[0])
        x = jnp.asarray(ik.state)
        # hold the fitted configuration, assume rest over the window
        x = x.at[model.arch.n_q:].set(0.0)
    else:
        x = jnp.asarray(x_init, jnp.float64)

    obj = objective(x)
    best_x, best_obj = x, obj
    lm_damping = 1e-10
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iter + 1):
        prev_obj = obj
        r = residual_jit(x)
        j = jac_jit(x)
        g = 2.0 * (j.T @ r)
        if cfg.solver == "gauss-newton":
            h = 2.0 * (j.T @ j)
            step_dir = jnp.linalg.solve(h + lm_damping * jnp.eye(h.shape[0]), -g)
        else:
            step_dir = -g

        # backtracking line search keeps the objective monotone
        alpha, accepted = 1.0, False
        for _ in range(25):
            trial = x + alpha * step_dir
            trial_obj = objective(trial)
            if np.isfinite(trial_obj) and trial_obj < obj:
                x, obj, accepted = trial, trial_obj, True
                break
            alpha *= 0.5
        if not accepted:
            lm_damping *= 100.0
            if lm_damping > 1e8:
                break
            continue
        lm_damping = max(lm_damping * 0.1, 1e-12)
        if obj < best_obj:
            best_x, best_obj = x, obj
        if prev_obj - obj <= cfg.tol * (1.0 + prev_obj) or \
                float(jnp.linalg.norm(g)) < 1e-14:
            converged = True
            break

    states = states_fn(best_x)
    return MheResult(
        state=np.asarray(states[-1]), state_start=np.asarray(best_x),
        residual=float(best_obj), converged=converged, iterations=iterations,
    )


def ik_initial_state(model: Model, u_0, y_0, damping: float = 1e-3,
                     max_iter: int = 200, tol: float = 1e-10) -> IkResult:
    """Damped least-squares inverse kinematics toward the newest sample.

    The joint angles are iterated so the decoded end position matches the
    measured one (the chain is redundant, so the state is feasible rather
    than unique); the rates follow from a least-squares fit of the decoder
    velocity relation.  Dynamics consistency is not enforced.
    """
    u_0 = jnp.asarray(u_0, jnp.float64)
    y_0 = jnp.asarray(y_0, jnp.float64)
    lengths = model.params.kin.lengths
    q_b, qd_b = u_0[:6], u_0[6:12]
    p_target, v_target = y_0[:3], y_0[3:]

    fk_q = jax.jit(lambda q: _fk_position(q_b, q, lengths))
    jac_q = jax.jit(jax.jacfwd(lambda q: _fk_position(q_b, q, lengths)))
    jac_b = jax.jit(jax.jacfwd(lambda qb, q: _fk_position(qb, q, lengths), argnums=0))

    q = jnp.zeros(model.arch.n_q)
    err = p_target - fk_q(q)
    it = 0
    for it in range(1, max_iter + 1):
        if float(jnp.linalg.norm(err)) < tol:
            break
        j = jac_q(q)
        gram = j @ j.T + damping**2 * jnp.eye(3)
        q = q + j.T @ jnp.linalg.solve(gram, err)
        err = p_target - fk_q(q)
    residual = float(jnp.linalg.norm(err))

    j_q = jac_q(q)
    j_b = jac_b(q_b, q)
    rhs = v_target - j_b @ qd_b
    qd, *_ = jnp.linalg.lstsq(j_q, rhs, rcond=None)
    state = np.concatenate([np.asarray(q), np.asarray(qd)])
    return IkResult(state=state, position_residual=residual,
                    converged=residual < max(tol, 1e-8) * max(1.0, float(jnp.linalg.norm(p_target))),
                    iterations=it)


def shape_fit_state(model: Model, u, positions, velocities, arc_params) -> np.ndarray:
    """Project a known DLO shape onto the model's chain state.

    Fits the joint angles so the chain passes through the given material
    points (sampled at arc parameters in [0, 1]) and the rates so the point
    velocities match in a least-squares sense.  Useful for initializing a
    coarse model from a finer reference whose full shape is known.
    """
    u = jnp.asarray(u, jnp.float64)
    positions = jnp.asarray(positions, jnp.float64)
    velocities = jnp.asarray(velocities, jnp.float64)
    arc = np.asarray(arc_params, dtype=float)
    if arc.ndim != 1 or arc.shape[0] != positions.shape[0]:
        raise DomainError("need one arc parameter per sample point")
    lengths = model.params.kin.lengths
    q_b, qd_b = u[:6], u[6:12]

    cum = np.cumsum(np.asarray(lengths))
    segs, priors = [], []
    for s in arc:
        seg = int(np.searchsorted(cum, s * cum[-1], side="left"))
        seg = min(seg, lengths.shape[0] - 1)
        segs.append(seg)
        priors.append(cum[seg - 1] if seg > 0 else 0.0)

    from .kinematics import body_transforms
    from .spatial import transform_apply

    def chain_points(qb, q):
        frames = body_transforms(qb, q, lengths)
        pts = []
        for s, seg, prior in zip(arc, segs, priors):
            local = jnp.array([s * jnp.sum(lengths) - prior, 0.0, 0.0])
            pts.append(transform_apply(frames[seg], local))
        return jnp.stack(pts)

    points_jit = jax.jit(lambda q: chain_points(q_b, q))
    jac_jit = jax.jit(jax.jacfwd(lambda q: chain_points(q_b, q)))
    jac_b_jit = jax.jit(jax.jacfwd(lambda qb, q: chain_points(qb, q), argnums=0))

    q = jnp.zeros(model.arch.n_q)
    for _ in range(100):
        err = (positions - points_jit(q)).reshape(-1)
        if float(jnp.linalg.norm(err)) < 1e-10:
            break
        j = jac_jit(q).reshape(-1, model.arch.n_q)
        gram = j.T @ j + 1e-6 * jnp.eye(model.arch.n_q)
        q = q + jnp.linalg.solve(gram, j.T @ err)

    j_q = jac_jit(q).reshape(-1, model.arch.n_q)
    j_b = jac_b_jit(q_b, q).reshape(-1, 6)
    rhs = velocities.reshape(-1) - j_b @ qd_b
    qd, *_ = jnp.linalg.lstsq(j_q, rhs, rcond=None)
    return np.concatenate([np.asarray(q), np.asarray(qd)])
