"""Comparison dynamics models sharing the chain decoder.

All baselines keep the pseudo-rigid-body latent state and the forward
kinematics decoder (segment lengths stay learnable so the output map can
adapt); only the latent dynamics differ:

* LTI   — ``xdot = A x + B u + c``, a learned linearization
* NODE  — second-order neural ODE, ``xdot = [qd; MLP(x, u)]``
* VPRBA — the physics chain with linear interaction torques and a frozen
  heuristic discretization (only inertial/torque parameters and initial
  states are optimized)
"""

from __future__ import annotations

from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from .kinematics import KinematicsParams, kin_target
from .torques import silu

Array = jnp.ndarray


class LtiParams(NamedTuple):
    """Linear time-invariant latent dynamics plus decoder lengths."""

    kin: KinematicsParams
    a: Array  # (n_x, n_x)
    b: Array  # (n_x, 18)
    c: Array  # (n_x,)


class NodeParams(NamedTuple):
    """Second-order neural-ODE dynamics: an MLP predicts the joint
    accelerations, the first half of the state derivative is structural."""

    kin: KinematicsParams
    layers: tuple  # ((w, b), ...) with SiLU between hidden layers


def _lti_rhs(x, u, params: LtiParams):
    return params.a @ x + params.b @ u + params.c


def _node_mlp(params: NodeParams, x, u):
    h = jnp.concatenate([x, u])
    *hidden, last = params.layers
    for w, b in hidden:
        h = silu(w @ h + b)
    w, b = last
    return w @ h + b


def _node_rhs(x, u, params: NodeParams):
    n = x.shape[0] // 2
    return jnp.concatenate([x[n:], _node_mlp(params, x, u)])


def lti_rhs(params: LtiParams, x, u) -> Array:
    """State derivative of the LTI baseline."""
    return _lti_rhs(jnp.asarray(x, jnp.float64), jnp.asarray(u, jnp.float64), params)


def node_rhs(params: NodeParams, x, u) -> Array:
    """State derivative of the neural-ODE baseline; the upper half equals
    the joint rates exactly."""
    return _node_rhs(jnp.asarray(x, jnp.float64), jnp.asarray(u, jnp.float64), params)


def init_lti_params(arch, kin: KinematicsParams) -> LtiParams:
    """Stable damped-oscillator initialization: decoupled second-order modes
    with moderate frequency, zero input coupling."""
    n_q = arch.n_q
    omega, zeta = 6.0, 0.8
    a = np.zeros((arch.n_x, arch.n_x))
    a[:n_q, n_q:] = np.eye(n_q)
    a[n_q:, :n_q] = -(omega**2) * np.eye(n_q)
    a[n_q:, n_q:] = -2.0 * zeta * omega * np.eye(n_q)
    return LtiParams(
        kin=kin,
        a=jnp.asarray(a),
        b=jnp.zeros((arch.n_x, 18)),
        c=jnp.zeros(arch.n_x),
    )


def init_node_params(arch, kin: KinematicsParams, seed: int = 0) -> NodeParams:
    """Two SiLU hidden layers; the output layer starts at zero so the
    initial dynamics are a pure double integrator."""
    rng = np.random.default_rng(seed)
    sizes = [arch.n_x + 18, arch.node_width, arch.node_width, arch.n_q]
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        if i == len(sizes) - 2:
            w = np.zeros((n_out, n_in))
        else:
            w = rng.uniform(-1, 1, size=(n_out, n_in)) / np.sqrt(n_in)
        layers.append((jnp.asarray(w), jnp.zeros(n_out)))
    return NodeParams(kin=kin, layers=tuple(layers))


def vprba_model(total_length: float, n_prb: int, mode: str = "uniform",
                radius: float = 0.03, density: float = 200.0):
    """Vanilla chain baseline: linear torques, discretization frozen to the
    heuristic target.  Returns ``(arch, params)``; training with this arch
    optimizes only the inertial and torque parameters plus initial states.
    """
    from .models import ModelArch, init_params

    arch = ModelArch(
        family="prba", n_prb=n_prb, torque="linear", freeze_kin=True,
        radius=radius, density=density,
    )
    lengths = kin_target(total_length, n_prb, mode)
    return arch, init_params(arch, lengths)
