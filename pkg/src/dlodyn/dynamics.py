"""Hybrid dynamics of the pseudo-rigid-body chain.

The 6-DOF base joint follows prescribed motion (pose, rate, acceleration
supplied as the input ``u``) while the passive elastic joints obey forward
dynamics.  Internally every 2-DOF elastic joint is treated as two chained
1-DOF revolute joints (Y bend, then Z bend) with a massless intermediate
body, which keeps all joint motion subspaces constant in their own frames:

* mass matrix: composite-rigid-body accumulation over the passive nodes,
* bias forces: recursive Newton-Euler sweep with zero passive acceleration
  and the base spatial acceleration assembled from the input; gravity is
  injected by augmenting the base linear acceleration with ``+g * z``.

Sign convention: the interaction torque is restoring/dissipative and enters
the passive equations of motion as a resistance,

    M(q) qdd = -tau_int - bias(q, qd, u),

so a positive-definite linear spring-damper dissipates energy.  Flipping
this sign makes the rest state unstable, which the energy tests catch.

Per-body inertial parameters are stored as unconstrained 10-vectors that
parameterize a lower-triangular factor ``L`` (log diagonal) of the 4x4
pseudo-inertia ``J = L @ L.T``, so every decoded body is physically
consistent (positive mass, positive-definite pseudo-inertia) by
construction.
"""

from __future__ import annotations

from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from .errors import NumericalError, SingularOrientation
from .kinematics import (
    BaseInput,
    ChainState,
    KinematicsParams,
    body_transforms,
)
from .spatial import (
    GIMBAL_EPS,
    SpatialInertia,
    _euler_rate_map,
    euler_to_rotation,
    force_cross,
    motion_adjoint_to_child,
    motion_cross,
    motion_to_child,
    rotation_y,
    rotation_z,
    spatial_inertia_matrix,
)
from .torques import TorqueParams, eval_torques

Array = jnp.ndarray

GRAVITY = 9.81  # [m/s^2], acting along -Z of the inertial frame


class DynamicsParams(NamedTuple):
    """Unconstrained inertial parameters, one 10-vector per body.

    Layout per body: 4 log-diagonal entries of the lower-triangular
    pseudo-inertia factor followed by its 6 strictly-lower entries in
    row-major order.
    """

    raw: Array  # (n_prb, 10)

    @property
    def n_prb(self) -> int:
        return self.raw.shape[0]


class ModelParams(NamedTuple):
    """All learnable quantities of the grey-box chain model."""

    kin: KinematicsParams
    dyn: DynamicsParams
    torque: TorqueParams


def _pseudo_factor(raw10: Array) -> Array:
    diag = jnp.exp(raw10[:4])
    l = jnp.zeros((4, 4), dtype=raw10.dtype)
    l = l.at[jnp.diag_indices(4)].set(diag)
    rows, cols = jnp.tril_indices(4, k=-1)
    return l.at[rows, cols].set(raw10[4:])


def decode_inertia(raw10: Array) -> SpatialInertia:
    """Spatial inertia of one body from its unconstrained 10-vector."""
    l = _pseudo_factor(raw10)
    p = l @ l.T
    sigma = p[:3, :3]
    return SpatialInertia(
        mass=p[3, 3],
        moment=p[:3, 3],
        inertia=jnp.trace(sigma) * jnp.eye(3) - sigma,
    )


def encode_inertia(si: SpatialInertia) -> Array:
    """Inverse of :func:`decode_inertia` (requires physical consistency)."""
    sigma = 0.5 * np.trace(np.asarray(si.inertia)) * np.eye(3) - np.asarray(si.inertia)
    p = np.zeros((4, 4))
    p[:3, :3] = sigma
    p[:3, 3] = np.asarray(si.moment)
    p[3, :3] = np.asarray(si.moment)
    p[3, 3] = float(si.mass)
    try:
        l = np.linalg.cholesky(p)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("pseudo-inertia is not positive definite") from exc
    raw = np.zeros(10)
    raw[:4] = np.log(np.diag(l))
    rows, cols = np.tril_indices(4, k=-1)
    raw[4:] = l[rows, cols]
    return jnp.asarray(raw)


def cylinder_inertia(length: float, radius: float, density: float) -> SpatialInertia:
    """Uniform solid cylinder along +X with its frame at the proximal end."""
    mass = density * np.pi * radius**2 * length
    ixx = 0.5 * mass * radius**2
    iperp = mass * (length**2 / 3.0 + radius**2 / 4.0)
    return SpatialInertia(
        mass=jnp.asarray(mass),
        moment=jnp.asarray([mass * length / 2.0, 0.0, 0.0]),
        inertia=jnp.diag(jnp.asarray([ixx, iperp, iperp])),
    )


def init_dynamics_params(lengths, radius: float, density: float) -> DynamicsParams:
    """Per-body parameters of uniform-density cylinders matching the segments."""
    raws = [
        encode_inertia(cylinder_inertia(float(l), radius, density))
        for l in np.asarray(lengths)
    ]
    return DynamicsParams(raw=jnp.stack(raws))


def _body_inertia_matrices(dyn: DynamicsParams) -> Array:
    return jax.vmap(lambda r: spatial_inertia_matrix(decode_inertia(r)))(dyn.raw)


def _node_geometry(q_prb: Array, lengths: Array):
    """Local transforms and joint axes of the 1-DOF passive nodes.

    Node ``2j`` bends about Y after translating segment ``j``; node ``2j+1``
    bends about Z with no offset.  Returns lists of (rotation, translation,
    axis index).
    """
    n_ej = lengths.shape[0] - 1
    zeros3 = jnp.zeros(3)
    nodes = []
    for j in range(n_ej):
        t = jnp.array([1.0, 0.0, 0.0]) * lengths[j]
        nodes.append((rotation_y(q_prb[2 * j]), t, 1))
        nodes.append((rotation_z(q_prb[2 * j + 1]), zeros3, 2))
    return nodes


def _mass_matrix(q_prb: Array, lengths: Array, inertias: Array) -> Array:
    nodes = _node_geometry(q_prb, lengths)
    n_nodes = len(nodes)
    zero6 = jnp.zeros((6, 6))
    # real bodies hang off the Z nodes; Y nodes carry massless intermediates
    node_inertia = [
        inertias[k // 2 + 1] if k % 2 == 1 else zero6 for k in range(n_nodes)
    ]
    composite = [None] * n_nodes
    acc = node_inertia[-1]
    composite[-1] = acc
    for k in range(n_nodes - 2, -1, -1):
        r, t, _ = nodes[k + 1]
        ad = motion_adjoint_to_child(r, t)
        acc = node_inertia[k] + ad.T @ acc @ ad
        composite[k] = acc

    m = jnp.zeros((n_nodes, n_nodes))
    for k in range(n_nodes):
        axis_k = nodes[k][2]
        f = composite[k][:, axis_k]  # Gc @ S_k, S_k = angular unit vector
        m = m.at[k, k].set(f[axis_k])
        for j in range(k, 0, -1):
            r, t, _ = nodes[j]
            fp = r @ f[3:]
            f = jnp.concatenate([r @ f[:3] + jnp.cross(t, fp), fp])
            axis_p = nodes[j - 1][2]
            m = m.at[j - 1, k].set(f[axis_p])
            m = m.at[k, j - 1].set(f[axis_p])
    return m


def _base_twist(q_b: Array, qd_b: Array) -> Array:
    r = euler_to_rotation(q_b[3:6])
    w_world = _euler_rate_map(q_b[3:6]) @ qd_b[3:6]
    return jnp.concatenate([r.T @ w_world, r.T @ qd_b[:3]])


def _base_motion(u: Array, gravity: float) -> tuple[Array, Array]:
    """Base twist and spatial acceleration in base-frame coordinates.

    The acceleration is the exact time derivative of the base twist pushed
    through the chain rule of (q_b, qd_b), plus the fictitious ``+g z``
    linear term that injects gravity into the sweep.
    """
    q_b, qd_b, qdd_b = u[:6], u[6:12], u[12:18]
    v0, a0 = jax.jvp(_base_twist, (q_b, qd_b), (qd_b, qdd_b))
    r = euler_to_rotation(q_b[3:6])
    g_term = r.T @ jnp.array([0.0, 0.0, gravity])
    return v0, a0 + jnp.concatenate([jnp.zeros(3), g_term])


def _bias_forces(
    q_prb: Array, qd_prb: Array, u: Array, lengths: Array, inertias: Array,
    gravity: float,
) -> Array:
    nodes = _node_geometry(q_prb, lengths)
    n_nodes = len(nodes)
    zero6 = jnp.zeros((6, 6))
    node_inertia = [
        inertias[k // 2 + 1] if k % 2 == 1 else zero6 for k in range(n_nodes)
    ]

    v, a = _base_motion(u, gravity)
    vs, accs = [], []
    for k, (r, t, axis) in enumerate(nodes):
        v = motion_to_child(r, t, v)
        a = motion_to_child(r, t, a)
        s_qd = jnp.zeros(6).at[axis].set(qd_prb[k])
        v = v + s_qd
        a = a + motion_cross(v, s_qd)  # qdd = 0 in the bias sweep
        vs.append(v)
        accs.append(a)

    tau = [None] * n_nodes
    f = jnp.zeros(6)
    for k in range(n_nodes - 1, -1, -1):
        g = node_inertia[k]
        f_here = g @ accs[k] + force_cross(vs[k], g @ vs[k])
        if k < n_nodes - 1:
            r, t, _ = nodes[k + 1]
            fl = r @ f[3:]
            f = jnp.concatenate([r @ f[:3] + jnp.cross(t, fl), fl])
        else:
            f = jnp.zeros(6)
        f = f + f_here
        tau[k] = f[nodes[k][2]]
    return jnp.stack(tau)


def _forward_dynamics(
    q_prb: Array, qd_prb: Array, tau_int: Array, u: Array, params: ModelParams,
    gravity: float = GRAVITY,
) -> Array:
    lengths = params.kin.lengths
    inertias = _body_inertia_matrices(params.dyn)
    m = _mass_matrix(q_prb, lengths, inertias)
    bias = _bias_forces(q_prb, qd_prb, u, lengths, inertias, gravity)
    rhs = (-tau_int - bias)[:, None]
    chol = jax.lax.linalg.cholesky(m)
    half = jax.lax.linalg.triangular_solve(chol, rhs, left_side=True, lower=True)
    sol = jax.lax.linalg.triangular_solve(chol, half, left_side=True, lower=True,
                                          transpose_a=True)
    return sol[:, 0]


def _ode_rhs(x: Array, u: Array, params: ModelParams, gravity: float = GRAVITY) -> Array:
    n = x.shape[0] // 2
    q_prb, qd_prb = x[:n], x[n:]
    tau_int = eval_torques(params.torque, q_prb, qd_prb)
    qdd = _forward_dynamics(q_prb, qd_prb, tau_int, u, params, gravity)
    return jnp.concatenate([qd_prb, qdd])


_mass_matrix_jit = jax.jit(_mass_matrix)
_ode_rhs_jit = jax.jit(_ode_rhs, static_argnames=("gravity",))


def _check_base(u: Array) -> None:
    if abs(float(jnp.cos(jnp.asarray(u)[4]))) < GIMBAL_EPS:
        raise SingularOrientation("base pitch is at gimbal lock")


def mass_matrix(q_prb, q_b, params: ModelParams) -> Array:
    """Joint-space inertia of the passive chain; symmetric positive definite.

    Depends only on the joint configuration (rigid-motion invariance makes
    the base pose irrelevant); ``q_b`` is accepted for interface symmetry.
    """
    del q_b
    q_prb = jnp.asarray(q_prb, jnp.float64)
    inertias = _body_inertia_matrices(params.dyn)
    return _mass_matrix_jit(q_prb, params.kin.lengths, inertias)


def bias_forces(q_prb, qd_prb, u, params: ModelParams, gravity: float = GRAVITY) -> Array:
    """Generalized force the passive joints would need to produce zero
    acceleration: Coriolis/centrifugal, gravity, and prescribed-base coupling."""
    u = u.as_vector() if isinstance(u, BaseInput) else jnp.asarray(u, jnp.float64)
    _check_base(u)
    inertias = _body_inertia_matrices(params.dyn)
    return _bias_forces(
        jnp.asarray(q_prb, jnp.float64), jnp.asarray(qd_prb, jnp.float64),
        u, params.kin.lengths, inertias, gravity,
    )


def hybrid_forward_dynamics(
    q_prb, qd_prb, tau_int, u, params: ModelParams, gravity: float = GRAVITY,
) -> Array:
    """Passive-joint accelerations from M(q) qdd = -tau_int - bias."""
    u = u.as_vector() if isinstance(u, BaseInput) else jnp.asarray(u, jnp.float64)
    _check_base(u)
    qdd = _forward_dynamics(
        jnp.asarray(q_prb, jnp.float64), jnp.asarray(qd_prb, jnp.float64),
        jnp.asarray(tau_int, jnp.float64), u, params, gravity,
    )
    if not bool(jnp.all(jnp.isfinite(qdd))):
        raise NumericalError("forward dynamics produced non-finite accelerations")
    return qdd


def ode_rhs(x, u, params: ModelParams, gravity: float = GRAVITY) -> Array:
    """State-space right-hand side: stacks the joint rates on top of the
    forward dynamics with the interaction torques evaluated from ``params``."""
    x = x.as_vector() if isinstance(x, ChainState) else jnp.asarray(x, jnp.float64)
    u = u.as_vector() if isinstance(u, BaseInput) else jnp.asarray(u, jnp.float64)
    _check_base(u)
    return _ode_rhs_jit(x, u, params, gravity=gravity)


# -- energy bookkeeping (used by tests, the synthetic data generator and
#    demos; not part of the training path) --------------------------------

def kinetic_energy(x, u, params: ModelParams) -> Array:
    """Total kinetic energy of all bodies, including the prescribed first one."""
    x = x.as_vector() if isinstance(x, ChainState) else jnp.asarray(x, jnp.float64)
    u = u.as_vector() if isinstance(u, BaseInput) else jnp.asarray(u, jnp.float64)
    n = x.shape[0] // 2
    q_prb, qd_prb = x[:n], x[n:]
    inertias = _body_inertia_matrices(params.dyn)
    v, _ = _base_motion(u, gravity=0.0)
    energy = 0.5 * v @ (inertias[0] @ v)
    for k, (r, t, axis) in enumerate(_node_geometry(q_prb, params.kin.lengths)):
        v = motion_to_child(r, t, v) + jnp.zeros(6).at[axis].set(qd_prb[k])
        if k % 2 == 1:
            g = inertias[k // 2 + 1]
            energy = energy + 0.5 * v @ (g @ v)
    return energy


def gravity_potential(x, u, params: ModelParams, gravity: float = GRAVITY) -> Array:
    """Sum of m g z over body centers of mass (zero reference at z = 0)."""
    x = x.as_vector() if isinstance(x, ChainState) else jnp.asarray(x, jnp.float64)
    u = u.as_vector() if isinstance(u, BaseInput) else jnp.asarray(u, jnp.float64)
    n = x.shape[0] // 2
    frames = body_transforms(u[:6], x[:n], params.kin.lengths)
    total = jnp.zeros(())
    for i, frame in enumerate(frames):
        si = decode_inertia(params.dyn.raw[i])
        com_world = frame.rotation @ (si.moment / si.mass) + frame.translation
        total = total + si.mass * gravity * com_world[2]
    return total


def elastic_potential(torque_params: TorqueParams, q_prb: Array) -> Array:
    """Potential stored in the joint springs (linear/affine/cubic variants)."""
    from .torques import AffineTorque, CubicTorque, LinearTorque
    from .kinematics import softplus

    q = jnp.asarray(q_prb, jnp.float64)
    n_ej = q.shape[0] // 2
    qj = q.reshape(n_ej, 2)
    if isinstance(torque_params, (LinearTorque, AffineTorque, CubicTorque)):
        k = softplus(torque_params.k_raw)
        total = 0.5 * jnp.sum(k * qj**2)
        if isinstance(torque_params, AffineTorque):
            total = total + jnp.sum(torque_params.tau_o * qj)
        if isinstance(torque_params, CubicTorque):
            total = total + 0.25 * jnp.sum(softplus(torque_params.k3_raw) * qj**4)
        return total
    raise NumericalError("elastic potential undefined for neural torques")


def total_energy(x, u, params: ModelParams, gravity: float = GRAVITY) -> Array:
    x = x.as_vector() if isinstance(x, ChainState) else jnp.asarray(x, jnp.float64)
    q_prb = x[: x.shape[0] // 2]
    return (
        kinetic_energy(x, u, params)
        + gravity_potential(x, u, params, gravity)
        + elastic_potential(params.torque, q_prb)
    )
