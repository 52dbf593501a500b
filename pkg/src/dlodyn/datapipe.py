"""Data pipeline: excitation synthesis, resampling, zero-phase filtering,
numerical differentiation, dataset assembly, and a synthetic ground-truth
generator.

The synthetic generator replaces a physical rig: a fine reference chain
(ten bodies, linear plus cubic joint stiffness) is driven by a multisine
base trajectory and its exact inputs/outputs are emitted on the uniform
4 ms grid.  The reference deliberately sits outside the learnable model
class (coarser trainees, different torque law) so identification stays
honest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import jax
import jax.numpy as jnp
import numpy as np
from scipy.signal import butter, sosfiltfilt

from .dynamics import ModelParams, init_dynamics_params
from .errors import DomainError, ParseError
from .integrators import IntegratorConfig, make_rollout
from .kinematics import KinematicsParams, _decode
from .models import Model, ModelArch, rhs_fn
from .torques import CubicTorque, init_torque_params

DT_DEFAULT = 0.004  # [s] uniform grid spacing

_U_COLS = [f"u{i}" for i in range(18)]
_Y_COLS = [f"y{i}" for i in range(6)]
CSV_COLUMNS = ["t"] + _U_COLS + _Y_COLS


@dataclass
class RawTrajectory:
    """Nonuniformly sampled recordings of base pose and endpoint position."""

    timestamps: np.ndarray  # (n,) [s], strictly increasing
    q_b: np.ndarray         # (n, 6) base pose [m, rad]
    p_e: np.ndarray         # (n, 3) endpoint position [m]

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        self.q_b = np.asarray(self.q_b, dtype=float)
        self.p_e = np.asarray(self.p_e, dtype=float)
        if self.timestamps.ndim != 1 or self.timestamps.shape[0] < 2:
            raise DomainError("raw trajectory needs at least two samples")
        if np.any(np.diff(self.timestamps) <= 0):
            raise DomainError("raw timestamps must be strictly increasing")


@dataclass
class UniformTrajectory:
    """Aligned input/output samples on a uniform grid."""

    dt: float               # [s]
    u: np.ndarray           # (n, 18)
    y: np.ndarray           # (n, 6)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.u.shape[0] != self.y.shape[0]:
            raise DomainError("input/output sample counts differ")
        if self.u.shape[1:] != (18,) or self.y.shape[1:] != (6,):
            raise DomainError("u must be (n, 18) and y (n, 6)")
        if not (np.isfinite(self.u).all() and np.isfinite(self.y).all()):
            raise DomainError("trajectory contains non-finite values")

    @property
    def n_samples(self) -> int:
        return self.u.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.dt


@dataclass
class RolloutWindow:
    """One prediction window plus its estimation prefix.

    ``u``/``y`` have ``n_steps + 1`` rows (the window anchor and every
    predicted sample); the prefix has ``prefix_len + 1`` rows and ends on
    the anchor sample.
    """

    u: np.ndarray
    y: np.ndarray
    prefix_u: np.ndarray
    prefix_y: np.ndarray
    start: int  # anchor sample index in the source trajectory


@dataclass
class RolloutDataset:
    windows: list
    dt: float
    n_steps: int     # prediction length N (samples)
    prefix_len: int  # estimation prefix m (samples)
    meta: dict = field(default_factory=dict)

    @property
    def n_rollouts(self) -> int:
        return len(self.windows)

    def stacked_u(self) -> np.ndarray:
        return np.stack([w.u for w in self.windows])

    def stacked_y(self) -> np.ndarray:
        return np.stack([w.y for w in self.windows])


def multisine_rate(t, alpha, beta, omega):
    """Rate signal of a multisine: sum of ``a_i w_i cos(w_i t) - b_i w_i sin(w_i t)``.

    ``alpha``/``beta`` may be (n_h,) for one channel or (C, n_h) for a bank
    of channels sharing the harmonic frequencies ``omega`` [rad/s].
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if alpha.shape != beta.shape or alpha.shape[-1] != omega.shape[0]:
        raise DomainError("coefficient arrays must share the harmonic axis")
    t = np.asarray(t, dtype=float)
    wt = np.multiply.outer(t, omega)  # (..., n_h)
    return np.cos(wt) @ (alpha * omega).T - np.sin(wt) @ (beta * omega).T


@dataclass
class MultisineExcitation:
    """Rest-to-rest multisine base motion on all six pose channels.

    Coefficient rows are projected so the rate and the acceleration vanish
    at t = 0; harmonics are integer multiples of ``2 pi / duration``, which
    makes the motion return to rest (and to the starting pose) at the end
    of the active window.  Outside ``[0, duration]`` the base holds still.
    """

    alpha: np.ndarray   # (6, n_h)
    beta: np.ndarray    # (6, n_h)
    omega: np.ndarray   # (n_h,) [rad/s]
    duration: float     # [s]

    def _active(self, t):
        t = np.asarray(t, dtype=float)
        return (t >= 0.0) & (t < self.duration)

    def offset(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        tc = np.clip(t, 0.0, self.duration)
        wt = np.multiply.outer(tc, self.omega)
        out = np.sin(wt) @ self.alpha.T + (np.cos(wt) - 1.0) @ self.beta.T
        return out

    def rate(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = multisine_rate(t, self.alpha, self.beta, self.omega)
        return out * self._active(t)[..., None] if out.ndim > 1 else out * self._active(t)

    def accel(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        wt = np.multiply.outer(t, self.omega)
        out = -np.sin(wt) @ (self.alpha * self.omega**2).T - np.cos(wt) @ (
            self.beta * self.omega**2
        ).T
        return out * self._active(t)[..., None] if out.ndim > 1 else out * self._active(t)

    def base_inputs(self, times, q_b0) -> np.ndarray:
        """Stacked 18-column inputs ``[q_b, qd_b, qdd_b]`` on a time grid."""
        q_b0 = np.asarray(q_b0, dtype=float)
        return np.concatenate(
            [q_b0[None, :] + self.offset(times), self.rate(times), self.accel(times)],
            axis=1,
        )

    def save(self, path) -> None:
        payload = {
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "omega_hz": (self.omega / (2 * np.pi)).tolist(),
            "duration": self.duration,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1)

    @classmethod
    def load(cls, path) -> "MultisineExcitation":
        with open(path, encoding="utf-8") as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"excitation file {path}: {exc}",
                                 line=exc.lineno, column=exc.colno) from exc
        for key in ("alpha", "beta", "omega_hz"):
            if key not in payload:
                raise ParseError(f"excitation file {path}: missing key {key!r}")
        return cls(
            alpha=np.asarray(payload["alpha"], dtype=float),
            beta=np.asarray(payload["beta"], dtype=float),
            omega=2 * np.pi * np.asarray(payload["omega_hz"], dtype=float),
            duration=float(payload.get("duration", 15.0)),
        )


def random_excitation(seed: int, n_h: int = 6, duration: float = 15.0,
                      freq_band=(0.3, 3.0), pos_amplitude: float = 0.12,
                      rot_amplitude: float = 0.25) -> MultisineExcitation:
    """Sample a rest-to-rest multisine excitation.

    Harmonics are distinct integer multiples of ``1/duration`` inside the
    frequency band; amplitudes are normalized so the peak pose offset of
    each channel group matches the requested amplitude.
    """
    rng = np.random.default_rng(seed)
    k_lo = max(1, int(np.ceil(freq_band[0] * duration)))
    k_hi = int(np.floor(freq_band[1] * duration))
    if k_hi - k_lo + 1 < n_h:
        raise DomainError("frequency band too narrow for the harmonic count")
    ks = np.sort(rng.choice(np.arange(k_lo, k_hi + 1), size=n_h, replace=False))
    omega = 2 * np.pi * ks / duration

    alpha = rng.uniform(-1.0, 1.0, size=(6, n_h)) / np.sqrt(n_h)
    beta = rng.uniform(-1.0, 1.0, size=(6, n_h)) / np.sqrt(n_h)
    # rest-to-rest: rate(0) = sum(a w) = 0 and accel(0) = -sum(b w^2) = 0
    alpha -= np.outer((alpha @ omega) / (omega @ omega), omega)
    beta -= np.outer((beta @ omega**2) / (omega**2 @ omega**2), omega**2)

    probe = np.linspace(0.0, duration, 2000)
    exc = MultisineExcitation(alpha=alpha, beta=beta, omega=omega, duration=duration)
    peaks = np.abs(exc.offset(probe)).max(axis=0)
    peaks = np.maximum(peaks, 1e-9)
    scale = np.concatenate([
        pos_amplitude / peaks[:3].max() * np.ones(3),
        rot_amplitude / peaks[3:].max() * np.ones(3),
    ])
    return MultisineExcitation(
        alpha=alpha * scale[:, None], beta=beta * scale[:, None],
        omega=omega, duration=duration,
    )


def butterworth_zero_phase(signal, fs: float, order: int = 8, fco: float = 3.5):
    """Forward-backward low-pass Butterworth: squared magnitude, zero phase.

    Edges are handled by reflective padding of ``3 * order`` samples.
    """
    signal = np.asarray(signal, dtype=float)
    n = signal.shape[0]
    if fco >= fs / 2:
        raise DomainError(f"cutoff {fco} Hz violates the Nyquist limit {fs / 2} Hz")
    if n <= 3 * order:
        raise DomainError(f"signal too short for zero-phase filtering ({n} samples)")
    sos = butter(order, fco, fs=fs, output="sos")
    return sosfiltfilt(sos, signal, axis=0, padtype="even", padlen=3 * order)


def central_diff(signal, dt: float):
    """Second-order central differences; first-order one-sided endpoints."""
    signal = np.asarray(signal, dtype=float)
    if signal.shape[0] < 3:
        raise DomainError("central differences need at least 3 samples")
    out = np.empty_like(signal)
    out[1:-1] = (signal[2:] - signal[:-2]) / (2.0 * dt)
    out[0] = (signal[1] - signal[0]) / dt
    out[-1] = (signal[-1] - signal[-2]) / dt
    return out


def resample_uniform(raw: RawTrajectory, dt: float, n_samples: Optional[int] = None):
    """Linear interpolation of a raw recording onto the grid t0, t0+dt, ...

    Returns ``(times, q_b, p_e)``.  The grid never extrapolates beyond the
    recorded span; requesting more samples than fit raises DomainError.
    """
    t0, t1 = raw.timestamps[0], raw.timestamps[-1]
    max_fit = int(np.floor((t1 - t0) / dt + 1e-12)) + 1
    if n_samples is None:
        n_samples = max_fit
    elif n_samples > max_fit:
        raise DomainError(
            f"grid of {n_samples} samples at dt={dt} exceeds the recorded span"
        )
    times = t0 + dt * np.arange(n_samples)
    q_b = np.stack([np.interp(times, raw.timestamps, raw.q_b[:, i]) for i in range(6)], axis=1)
    p_e = np.stack([np.interp(times, raw.timestamps, raw.p_e[:, i]) for i in range(3)], axis=1)
    return times, q_b, p_e


def process_raw(raw: RawTrajectory, dt: float = DT_DEFAULT, order: int = 8,
                fco: float = 3.5) -> UniformTrajectory:
    """Full preprocessing: resample, zero-phase filter, differentiate.

    Base rates/accelerations and the endpoint velocity are obtained by
    central differences of the filtered position signals.
    """
    _, q_b, p_e = resample_uniform(raw, dt)
    fs = 1.0 / dt
    q_b_f = butterworth_zero_phase(q_b, fs, order=order, fco=fco)
    p_e_f = butterworth_zero_phase(p_e, fs, order=order, fco=fco)
    qd_b = central_diff(q_b_f, dt)
    qdd_b = central_diff(qd_b, dt)
    pd_e = central_diff(p_e_f, dt)
    u = np.concatenate([q_b_f, qd_b, qdd_b], axis=1)
    y = np.concatenate([p_e_f, pd_e], axis=1)
    return UniformTrajectory(dt=dt, u=u, y=y, meta={"source": "processed"})


def reference_model(length: float = 1.9, n_prb: int = 10, radius: float = 0.03,
                    density: float = 120.0, stiffness: float = 4.0,
                    damping: float = 0.06, cubic: float = 12.0,
                    integrator: Optional[IntegratorConfig] = None) -> Model:
    """Fine-discretization ground-truth chain with linear + cubic stiffness.

    Plays the role the physical object plays on a real rig.  Per-joint
    stiffness/damping are given directly [N m/rad, N m s/rad]; the cubic
    coefficient adds a stiffening restoring torque ``k3 q^3``.
    """
    arch = ModelArch(family="prba", n_prb=n_prb, torque="cubic",
                     radius=radius, density=density)
    lengths = np.full(n_prb, length / n_prb)
    params = ModelParams(
        kin=KinematicsParams.from_lengths(lengths),
        dyn=init_dynamics_params(lengths, radius, density),
        torque=init_torque_params("cubic", n_prb - 1, stiffness=stiffness,
                                  damping=damping, cubic=cubic),
    )
    return Model(arch=arch, params=params,
                 integrator=integrator or IntegratorConfig())


def settle_to_equilibrium(model: Model, q_b0, duration: float = 12.0,
                          damping_boost: float = 25.0) -> np.ndarray:
    """Hanging equilibrium state found by a damped pre-rollout.

    The reference chain is released from the straight configuration under a
    static base with its damping temporarily boosted, then the final rates
    are squashed to zero.
    """
    from .kinematics import softplus, softplus_inverse

    torque = model.params.torque
    if not isinstance(torque, CubicTorque):
        raise DomainError("equilibrium settling expects the cubic reference chain")
    boosted = torque._replace(
        c_raw=softplus_inverse(damping_boost * softplus(torque.c_raw))
    )
    params = model.params._replace(torque=boosted)
    u0 = np.concatenate([np.asarray(q_b0, dtype=float), np.zeros(12)])
    n_steps = int(round(duration / model.integrator.dt))
    roll = make_rollout(rhs_fn(model.arch), model.integrator, ad=None)
    us = jnp.asarray(np.tile(u0, (n_steps, 1)))
    x0 = jnp.zeros(model.arch.n_x)
    states, stats = roll(x0, us, params)
    if not bool(jnp.all(stats.converged)):
        raise DomainError("equilibrium pre-rollout failed to integrate")
    x_eq = np.array(states[-1])
    x_eq[model.arch.n_q:] = 0.0
    return x_eq


def synth_generate(ref_model: Model, excitation: MultisineExcitation,
                   duration: float = 30.0, seed: int = 0,
                   noise_std: float = 0.0,
                   q_b0=(0.0, 0.0, 1.0, 0.0, 0.0, 0.0),
                   return_states: bool = False, x_init=None):
    """Simulate the reference chain under a multisine base excitation.

    Emits exact inputs and decoder outputs on the uniform grid (samples at
    t = 0, dt, ..., duration inclusive), optionally with additive Gaussian
    observation noise.  The chain starts at its hanging equilibrium.
    """
    dt = ref_model.integrator.dt
    n_steps = int(round(duration / dt))
    times = dt * np.arange(n_steps + 1)
    u_grid = excitation.base_inputs(times, q_b0)

    x_eq = settle_to_equilibrium(ref_model, q_b0) if x_init is None else np.asarray(x_init)
    roll = make_rollout(rhs_fn(ref_model.arch), ref_model.integrator, ad=None)
    states, stats = roll(jnp.asarray(x_eq), jnp.asarray(u_grid[:-1]), ref_model.params)
    ok = np.asarray(stats.converged)
    if not ok.all():
        idx = int(np.argmin(ok))
        raise DomainError(
            f"reference integration failed at step {idx} "
            f"(t = {idx * dt:.3f} s, residual {float(stats.residual[idx]):.3e})"
        )

    dec = jax.jit(jax.vmap(lambda x, u: _decode(x, u, ref_model.params.kin.lengths)))
    y_grid = np.asarray(dec(states, jnp.asarray(u_grid)))
    if noise_std > 0.0:
        rng = np.random.default_rng(seed)
        y_grid = y_grid + noise_std * rng.standard_normal(y_grid.shape)
    traj = UniformTrajectory(
        dt=dt, u=u_grid, y=y_grid,
        meta={
            "source": "synthetic", "seed": seed, "noise_std": noise_std,
            "length": float(np.sum(np.asarray(ref_model.params.kin.lengths))),
            "n_prb_reference": ref_model.arch.n_prb,
        },
    )
    if return_states:
        return traj, np.asarray(states)
    return traj


def build_dataset(traj: UniformTrajectory, n_steps: int, prefix_len: int = 0,
                  stride: Optional[int] = None) -> RolloutDataset:
    """Split a trajectory into prediction windows with estimation prefixes.

    Window anchors start at sample ``prefix_len`` and advance by ``stride``
    (default: the window length, giving non-overlapping windows).
    """
    if stride is None:
        stride = n_steps
    if stride < 1 or n_steps < 1 or prefix_len < 0:
        raise DomainError("need n_steps >= 1, stride >= 1, prefix_len >= 0")
    n = traj.n_samples
    last_anchor = n - 1 - n_steps
    if last_anchor < prefix_len:
        raise DomainError(
            f"trajectory too short: {n} samples cannot fit prefix {prefix_len} "
            f"plus window {n_steps}"
        )
    windows = []
    for start in range(prefix_len, last_anchor + 1, stride):
        windows.append(RolloutWindow(
            u=traj.u[start:start + n_steps + 1].copy(),
            y=traj.y[start:start + n_steps + 1].copy(),
            prefix_u=traj.u[start - prefix_len:start + 1].copy(),
            prefix_y=traj.y[start - prefix_len:start + 1].copy(),
            start=start,
        ))
    return RolloutDataset(windows=windows, dt=traj.dt, n_steps=n_steps,
                          prefix_len=prefix_len, meta=dict(traj.meta))


def save_csv(path, traj: UniformTrajectory) -> None:
    """Write the documented CSV schema at full (17 significant digit) precision."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for k in range(traj.n_samples):
            row = np.concatenate([[k * traj.dt], traj.u[k], traj.y[k]])
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def load_csv(path) -> UniformTrajectory:
    """Read the documented CSV schema; diagnostics carry line/column."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        names = [c.strip() for c in header.split(",")]
        missing = [c for c in CSV_COLUMNS if c not in names]
        if missing:
            raise ParseError(f"{path}: missing column(s) {', '.join(missing)}", line=1)
        if names != CSV_COLUMNS:
            raise ParseError(
                f"{path}: columns must appear in the order {','.join(CSV_COLUMNS)}",
                line=1,
            )
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(CSV_COLUMNS):
                raise ParseError(
                    f"{path}: expected {len(CSV_COLUMNS)} fields, got {len(parts)}",
                    line=lineno,
                )
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                bad = next(i for i, p in enumerate(parts) if not _is_float(p))
                raise ParseError(
                    f"{path}: field {CSV_COLUMNS[bad]!r} is not a number",
                    line=lineno, column=bad + 1,
                ) from None
    data = np.asarray(rows, dtype=float)
    if data.shape[0] < 2:
        raise ParseError(f"{path}: need at least two data rows")
    t = data[:, 0]
    dts = np.diff(t)
    if np.any(dts <= 0):
        bad = int(np.argmax(dts <= 0)) + 3  # +2 header/anchor, +1 one-based
        raise ParseError(f"{path}: time column is not strictly increasing", line=bad)
    dt = float(np.median(dts))
    if np.abs(dts - dt).max() > 1e-9:
        raise ParseError(f"{path}: time column is not on a uniform grid")
    return UniformTrajectory(dt=dt, u=data[:, 1:19], y=data[:, 19:25],
                             meta={"source": str(path)})


def _is_float(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False
