"""Interaction-torque models for the passive elastic joints.

Each elastic joint produces a restoring/dissipative torque from its two
bending angles and rates.  Variants:

* linear  — diagonal spring + damper, ``tau = k q + c qd``
* affine  — linear plus a constant offset capturing permanent deformation
* neural  — linear part with unconstrained gains plus a small residual MLP
  (one hidden layer of 8 SiLU units, bias added to the hidden activation,
  no first-layer bias), ``tau = k q + c qd + W2 @ (silu(W1 @ [q; qd]) + b2)``
* cubic   — linear plus a diagonal cubic spring; used for synthetic
  ground-truth chains, not part of the learnable family

Parameters are stored per joint with a leading joint axis, e.g. ``k`` has
shape ``(n_ej, 2)``.  For the linear/affine/cubic variants the gains are
kept nonnegative through a softplus reparameterization; the neural variant
leaves them unconstrained (the network can compensate).
"""

from __future__ import annotations

from typing import NamedTuple, Optional, Union

import jax
import jax.numpy as jnp
import numpy as np

from .kinematics import softplus, softplus_inverse

Array = jnp.ndarray


def silu(z):
    """SiLU activation, ``z * sigmoid(z)``, applied elementwise."""
    z = jnp.asarray(z)
    # sigmoid written via tanh keeps the whole expression in basic
    # primitives, which composes cleanly under nested jit/while tracing
    return z * 0.5 * (jnp.tanh(0.5 * z) + 1.0)


class LinearTorque(NamedTuple):
    k_raw: Array  # (n_ej, 2), softplus-decoded stiffness [N m/rad]
    c_raw: Array  # (n_ej, 2), softplus-decoded damping [N m s/rad]


class AffineTorque(NamedTuple):
    k_raw: Array
    c_raw: Array
    tau_o: Array  # (n_ej, 2) constant offset [N m]


class NeuralTorque(NamedTuple):
    k: Array   # (n_ej, 2), unconstrained
    c: Array   # (n_ej, 2), unconstrained
    w1: Array  # (n_ej, 8, 4), input ordering [q_i; qd_i]
    w2: Array  # (n_ej, 2, 8)
    b2: Array  # (n_ej, 8), added to the hidden activation
    b1: Optional[Array] = None  # (n_ej, 8), only when canonical_mlp is enabled


class CubicTorque(NamedTuple):
    k_raw: Array
    c_raw: Array
    k3_raw: Array  # (n_ej, 2), softplus-decoded cubic stiffness [N m/rad^3]


TorqueParams = Union[LinearTorque, AffineTorque, NeuralTorque, CubicTorque]


def _joint_torque(params: TorqueParams, q_i: Array, qd_i: Array) -> Array:
    if isinstance(params, NeuralTorque):
        tau = params.k * q_i + params.c * qd_i
        z = params.w1 @ jnp.concatenate([q_i, qd_i])
        if params.b1 is not None:
            z = z + params.b1
        return tau + params.w2 @ (silu(z) + params.b2)
    k = softplus(params.k_raw)
    c = softplus(params.c_raw)
    tau = k * q_i + c * qd_i
    if isinstance(params, AffineTorque):
        tau = tau + params.tau_o
    elif isinstance(params, CubicTorque):
        tau = tau + softplus(params.k3_raw) * q_i**3
    return tau


def eval_torque(params: TorqueParams, q_i, qd_i) -> Array:
    """Torque of a single elastic joint; ``params`` fields indexed to that
    joint (2-vectors / per-joint weight matrices)."""
    return _joint_torque(params, jnp.asarray(q_i, jnp.float64), jnp.asarray(qd_i, jnp.float64))


def eval_torques(params: TorqueParams, q_prb: Array, qd_prb: Array) -> Array:
    """Stacked joint torques for the whole chain, flattened like ``q_prb``."""
    n_ej = q_prb.shape[0] // 2
    q = q_prb.reshape(n_ej, 2)
    qd = qd_prb.reshape(n_ej, 2)
    tau = jax.vmap(_joint_torque)(params, q, qd)
    return tau.reshape(-1)


def joint_params(params: TorqueParams, j: int) -> TorqueParams:
    """Slice out the parameters of joint ``j``."""
    return jax.tree_util.tree_map(lambda a: a[j], params)


def l1_network_norm(params: TorqueParams) -> Array:
    """L1 norm of the neural residual weights (zero for physics-only variants)."""
    if isinstance(params, NeuralTorque):
        total = jnp.sum(jnp.abs(params.w1)) + jnp.sum(jnp.abs(params.w2)) + jnp.sum(
            jnp.abs(params.b2)
        )
        if params.b1 is not None:
            total = total + jnp.sum(jnp.abs(params.b1))
        return total
    return jnp.zeros(())


def init_torque_params(
    variant: str,
    n_ej: int,
    seed: int = 0,
    stiffness: float = 1.0,
    damping: float = 0.1,
    cubic: float = 1.0,
    hidden: int = 8,
    canonical_mlp: bool = False,
    weight_scale: float = 1e-2,
) -> TorqueParams:
    """Fresh torque parameters.

    Linear gains start at small positive constants; network weights are
    uniform in ``±weight_scale / sqrt(fan_in)`` so the neural variant starts
    near the linear regime.
    """
    k_raw = jnp.full((n_ej, 2), float(softplus_inverse(stiffness)))
    c_raw = jnp.full((n_ej, 2), float(softplus_inverse(damping)))
    variant = variant.lower()
    if variant == "linear":
        return LinearTorque(k_raw=k_raw, c_raw=c_raw)
    if variant == "affine":
        return AffineTorque(k_raw=k_raw, c_raw=c_raw, tau_o=jnp.zeros((n_ej, 2)))
    if variant == "cubic":
        return CubicTorque(
            k_raw=k_raw, c_raw=c_raw,
            k3_raw=jnp.full((n_ej, 2), float(softplus_inverse(cubic))),
        )
    if variant == "neural":
        rng = np.random.default_rng(seed)
        w1 = rng.uniform(-1, 1, size=(n_ej, hidden, 4)) * weight_scale / np.sqrt(4.0)
        w2 = rng.uniform(-1, 1, size=(n_ej, 2, hidden)) * weight_scale / np.sqrt(hidden)
        return NeuralTorque(
            k=jnp.full((n_ej, 2), stiffness),
            c=jnp.full((n_ej, 2), damping),
            w1=jnp.asarray(w1),
            w2=jnp.asarray(w2),
            b2=jnp.zeros((n_ej, hidden)),
            b1=jnp.zeros((n_ej, hidden)) if canonical_mlp else None,
        )
    raise ValueError(f"unknown torque variant {variant!r}")


def variant_name(params: TorqueParams) -> str:
    return {
        LinearTorque: "linear",
        AffineTorque: "affine",
        NeuralTorque: "neural",
        CubicTorque: "cubic",
    }[type(params)]
