"""Pseudo-rigid-body chain kinematics.

A deformable linear object is discretized into ``n_prb`` rigid segments of
learnable lengths.  Consecutive segments are connected by passive 2-DOF
elastic joints that bend about the local Y and Z axes (no twist about the
segment axis X).  The chain root follows a prescribed 6-DOF pose ``q_b``
and the free end carries the output frame at the tip of the last segment.
"""

from __future__ import annotations

from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from .errors import DomainError, SingularOrientation
from .spatial import (
    GIMBAL_EPS,
    Transform,
    euler_to_rotation,
    rotation_y,
    rotation_z,
    transform_apply,
    transform_compose,
)

Array = jnp.ndarray


def softplus(x):
    return jnp.logaddexp(x, 0.0)


def softplus_inverse(y):
    # x = y + log(1 - exp(-y)), stable for y > 0
    y = jnp.asarray(y, dtype=jnp.float64)
    return y + jnp.log(-jnp.expm1(-y))


class KinematicsParams(NamedTuple):
    """Learnable segment lengths, stored unconstrained and decoded through
    softplus so every length stays positive."""

    raw: Array  # (n_prb,)

    @property
    def n_prb(self) -> int:
        return self.raw.shape[0]

    @property
    def lengths(self) -> Array:
        return softplus(self.raw)

    @classmethod
    def from_lengths(cls, lengths) -> "KinematicsParams":
        lengths = jnp.asarray(lengths, dtype=jnp.float64)
        if lengths.shape[0] < 2:
            raise DomainError("a chain needs at least 2 segments")
        if bool(jnp.any(lengths <= 0)):
            raise DomainError("segment lengths must be positive")
        return cls(raw=softplus_inverse(lengths))


class ChainState(NamedTuple):
    """Passive-joint angles and rates, ``2 * (n_prb - 1)`` of each.

    Per joint the two angles are (bend about local Y, bend about local Z),
    flattened joint-major: ``[a_1, b_1, a_2, b_2, ...]``.
    """

    q_prb: Array   # (2 n_ej,) [rad]
    qd_prb: Array  # (2 n_ej,) [rad/s]

    def as_vector(self) -> Array:
        return jnp.concatenate([self.q_prb, self.qd_prb])

    @classmethod
    def from_vector(cls, x) -> "ChainState":
        x = jnp.asarray(x)
        n = x.shape[0] // 2
        return cls(q_prb=x[:n], qd_prb=x[n:])


class BaseInput(NamedTuple):
    """Prescribed motion of the actuated end: pose (position + X-Y-Z Euler
    angles), its rate, and its acceleration; 18 numbers total."""

    q_b: Array    # (6,) [m, rad]
    qd_b: Array   # (6,) [m/s, rad/s]
    qdd_b: Array  # (6,) [m/s^2, rad/s^2]

    def as_vector(self) -> Array:
        return jnp.concatenate([self.q_b, self.qd_b, self.qdd_b])

    @classmethod
    def from_vector(cls, u) -> "BaseInput":
        u = jnp.asarray(u)
        return cls(q_b=u[:6], qd_b=u[6:12], qdd_b=u[12:18])


class Observation(NamedTuple):
    """Free-end position and linear velocity; 6 numbers total."""

    p_e: Array   # (3,) [m]
    pd_e: Array  # (3,) [m/s]

    def as_vector(self) -> Array:
        return jnp.concatenate([self.p_e, self.pd_e])

    @classmethod
    def from_vector(cls, y) -> "Observation":
        y = jnp.asarray(y)
        return cls(p_e=y[:3], pd_e=y[3:6])


def base_transform(q_b: Array) -> Transform:
    return Transform(euler_to_rotation(q_b[3:6]), q_b[:3])


def joint_rotation(angles: Array) -> Array:
    """Rotation of one elastic joint: bend about local Y then local Z."""
    return rotation_y(angles[0]) @ rotation_z(angles[1])


def body_transforms(q_b: Array, q_prb: Array, lengths: Array) -> list[Transform]:
    """World poses of the segment frames 1..n_prb.

    Frame i sits at the proximal end of segment i with X along the segment;
    frame 1 coincides with the base frame.
    """
    x_axis = jnp.array([1.0, 0.0, 0.0])
    frames = [base_transform(q_b)]
    n_ej = lengths.shape[0] - 1
    for j in range(n_ej):
        step = Transform(joint_rotation(q_prb[2 * j:2 * j + 2]), lengths[j] * x_axis)
        frames.append(transform_compose(frames[-1], step))
    return frames


def _fk_position(q_b: Array, q_prb: Array, lengths: Array) -> Array:
    frames = body_transforms(q_b, q_prb, lengths)
    x_axis = jnp.array([1.0, 0.0, 0.0])
    return transform_apply(frames[-1], lengths[-1] * x_axis)


_fk_position_jit = jax.jit(_fk_position)


def forward_kinematics(q_b, q_prb, kin: KinematicsParams) -> Array:
    """Free-end position for a base pose and passive joint angles."""
    q_b = jnp.asarray(q_b, dtype=jnp.float64)
    q_prb = jnp.asarray(q_prb, dtype=jnp.float64)
    if q_prb.shape[0] != 2 * (kin.n_prb - 1):
        raise DomainError(
            f"expected {2 * (kin.n_prb - 1)} joint angles, got {q_prb.shape[0]}"
        )
    return _fk_position_jit(q_b, q_prb, kin.lengths)


def _decode(x_vec: Array, u_vec: Array, lengths: Array) -> Array:
    n = x_vec.shape[0] // 2
    q_prb, qd_prb = x_vec[:n], x_vec[n:]
    q_b, qd_b = u_vec[:6], u_vec[6:12]
    p_e, pd_e = jax.jvp(
        _fk_position,
        (q_b, q_prb, lengths),
        (qd_b, qd_prb, jnp.zeros_like(lengths)),
    )
    return jnp.concatenate([p_e, pd_e])


_decode_jit = jax.jit(_decode)


def decoder(x: ChainState, u: BaseInput, kin: KinematicsParams) -> Observation:
    """Free-end position and velocity.

    The velocity is the exact differential of the forward kinematics along
    the base and joint rates (machine-precision directional derivative, no
    finite differences).
    """
    if abs(float(jnp.cos(jnp.asarray(u.q_b)[4]))) < GIMBAL_EPS:
        raise SingularOrientation("base pitch is at gimbal lock")
    y = _decode_jit(x.as_vector(), u.as_vector(), kin.lengths)
    return Observation(p_e=y[:3], pd_e=y[3:])


def point_along_dlo(s: float, q_b, x: ChainState, kin: KinematicsParams):
    """Position and velocity of the material point at arc parameter ``s``.

    ``s`` runs from 0 (chain start) to 1 (free end); the point sits at arc
    length ``s * sum(lengths)`` measured along the undeformed segments.
    ``q_b`` may be the 6-vector base pose (base rates taken as zero), an
    18-vector base input, or a :class:`BaseInput`.
    """
    if not 0.0 <= s <= 1.0:
        raise DomainError(f"arc parameter must lie in [0, 1], got {s}")
    if isinstance(q_b, BaseInput):
        u = q_b
    else:
        q_b = jnp.asarray(q_b, dtype=jnp.float64)
        if q_b.shape[0] == 18:
            u = BaseInput.from_vector(q_b)
        else:
            u = BaseInput(q_b=q_b, qd_b=jnp.zeros(6), qdd_b=jnp.zeros(6))
    lengths = kin.lengths
    cum = np.cumsum(np.asarray(lengths))
    target = s * cum[-1]
    # containing segment (s = 1 clamps into the last one)
    seg = int(np.searchsorted(cum, target, side="left"))
    seg = min(seg, lengths.shape[0] - 1)
    prior = cum[seg - 1] if seg > 0 else 0.0

    def point(q_b_, q_prb_, lengths_):
        frames = body_transforms(q_b_, q_prb_, lengths_)
        local = jnp.array([s * jnp.sum(lengths_) - prior, 0.0, 0.0])
        return transform_apply(frames[seg], local)

    p, pd = jax.jvp(
        point,
        (u.q_b, x.q_prb, lengths),
        (u.qd_b, x.qd_prb, jnp.zeros_like(lengths)),
    )
    return p, pd


def kin_target(total_length: float, n_prb: int, mode: str = "uniform") -> Array:
    """Reference segment lengths used to regularize the learned discretization.

    ``uniform`` splits the length evenly.  ``start-heavy`` concentrates short
    0.1 m segments near the actuated end and lumps the remainder into the
    final segment, for objects that deform mostly near the base.
    """
    if total_length <= 0 or n_prb < 2:
        raise DomainError("need total_length > 0 and n_prb >= 2")
    key = mode.lower().replace("_", "-")
    if key == "uniform":
        return jnp.full((n_prb,), total_length / n_prb)
    if key == "start-heavy":
        residual = total_length - 0.1 * (n_prb - 1)
        if residual <= 0:
            raise DomainError(
                f"start-heavy split needs total_length > {0.1 * (n_prb - 1)!r} m"
            )
        return jnp.concatenate([jnp.full((n_prb - 1,), 0.1), jnp.array([residual])])
    raise DomainError(f"unknown discretization mode {mode!r}")
