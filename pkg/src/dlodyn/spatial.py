"""Minimal spatial algebra: rotations, rigid transforms, Euler-angle rate
maps and spatial inertia.

Conventions used throughout the toolkit:

* Euler angles follow the intrinsic X-Y-Z (roll-pitch-yaw) sequence,
  ``R = Rx(psi1) @ Ry(psi2) @ Rz(psi3)``.
* All lengths are meters, angles radians, masses kilograms.
* Spatial (6-)vectors stack the angular part on top of the linear part,
  ``[omega; v]``.
"""

from __future__ import annotations

from typing import NamedTuple

import jax.numpy as jnp
import numpy as np

from .errors import SingularOrientation

Array = jnp.ndarray

# Gimbal guard: |cos(pitch)| below this means the rate map is singular.
GIMBAL_EPS = 1e-6


class Transform(NamedTuple):
    """Rigid transform mapping child-frame points into the parent frame:
    ``p_parent = rotation @ p_child + translation``."""

    rotation: Array     # (3, 3) direction cosines
    translation: Array  # (3,) [m]


class SpatialInertia(NamedTuple):
    """Ten-parameter rigid-body inertia expressed at a body-fixed frame.

    ``moment`` is the first mass moment m*c (c = center of mass offset) and
    ``inertia`` the rotational inertia about the frame origin.  The kinetic
    energy of a body with frame twist [w; v] is ``0.5 * [w; v]^T G [w; v]``
    with ``G = [[inertia, hat(moment)], [hat(moment)^T, mass*I]]``.
    """

    mass: Array     # scalar [kg]
    moment: Array   # (3,) [kg m]
    inertia: Array  # (3, 3) [kg m^2], symmetric


def skew(v: Array) -> Array:
    """Cross-product matrix: skew(v) @ w == cross(v, w)."""
    v = jnp.asarray(v)
    z = jnp.zeros((), dtype=v.dtype)
    return jnp.array([
        [z, -v[2], v[1]],
        [v[2], z, -v[0]],
        [-v[1], v[0], z],
    ])


def rotation_x(a) -> Array:
    c, s = jnp.cos(a), jnp.sin(a)
    o, z = jnp.ones_like(c), jnp.zeros_like(c)
    return jnp.array([[o, z, z], [z, c, -s], [z, s, c]])


def rotation_y(a) -> Array:
    c, s = jnp.cos(a), jnp.sin(a)
    o, z = jnp.ones_like(c), jnp.zeros_like(c)
    return jnp.array([[c, z, s], [z, o, z], [-s, z, c]])


def rotation_z(a) -> Array:
    c, s = jnp.cos(a), jnp.sin(a)
    o, z = jnp.ones_like(c), jnp.zeros_like(c)
    return jnp.array([[c, -s, z], [s, c, z], [z, z, o]])


def euler_to_rotation(psi: Array) -> Array:
    """Rotation matrix of intrinsic X-Y-Z Euler angles ``psi = (roll, pitch, yaw)``."""
    psi = jnp.asarray(psi)
    return rotation_x(psi[0]) @ rotation_y(psi[1]) @ rotation_z(psi[2])


def _euler_rate_map(psi: Array) -> Array:
    # Columns are the world-frame axes about which each Euler rate acts:
    # omega_world = psidot1 * e_x + psidot2 * Rx e_y + psidot3 * Rx Ry e_z.
    c1, s1 = jnp.cos(psi[0]), jnp.sin(psi[0])
    c2, s2 = jnp.cos(psi[1]), jnp.sin(psi[1])
    o = jnp.ones_like(c1)
    z = jnp.zeros_like(c1)
    return jnp.array([
        [o, z, s2],
        [z, c1, -s1 * c2],
        [z, s1, c1 * c2],
    ])


def euler_rate_map(psi: Array) -> Array:
    """Map Euler-angle rates to the world-frame angular velocity.

    Returns E(psi) with ``omega = E(psi) @ psidot`` where omega is the
    angular velocity of ``euler_to_rotation(psi(t))``, i.e. ``vee(Rdot R^T)``.

    Raises
    ------
    SingularOrientation
        If ``|cos(psi[1])| < 1e-6`` (gimbal lock of the X-Y-Z sequence).
    """
    psi = jnp.asarray(psi)
    if abs(float(jnp.cos(psi[1]))) < GIMBAL_EPS:
        raise SingularOrientation(
            f"euler pitch {float(psi[1]):.9g} rad is within {GIMBAL_EPS} of gimbal lock"
        )
    return _euler_rate_map(psi)


def identity_transform() -> Transform:
    return Transform(jnp.eye(3), jnp.zeros(3))


def transform_compose(outer: Transform, inner: Transform) -> Transform:
    """outer ∘ inner: apply ``inner`` first, then ``outer``."""
    return Transform(
        outer.rotation @ inner.rotation,
        outer.rotation @ inner.translation + outer.translation,
    )


def transform_inverse(t: Transform) -> Transform:
    rt = t.rotation.T
    return Transform(rt, -rt @ t.translation)


def transform_apply(t: Transform, p: Array) -> Array:
    """Map a child-frame point into the parent frame: R @ p + translation."""
    return t.rotation @ jnp.asarray(p) + t.translation


def rotation_residuals(r: Array) -> tuple[float, float]:
    """(orthonormality residual, determinant residual) of a rotation candidate."""
    r = np.asarray(r)
    ortho = float(np.abs(r.T @ r - np.eye(3)).max())
    det = float(abs(np.linalg.det(r) - 1.0))
    return ortho, det


def spatial_inertia_matrix(si: SpatialInertia) -> Array:
    """Dense 6x6 inertia acting on frame twists [omega; v]."""
    h = skew(si.moment)
    top = jnp.concatenate([si.inertia, h], axis=1)
    bottom = jnp.concatenate([h.T, si.mass * jnp.eye(3)], axis=1)
    return jnp.concatenate([top, bottom], axis=0)


def pseudo_inertia(si: SpatialInertia) -> Array:
    """4x4 pseudo-inertia; positive definiteness certifies physical consistency."""
    sigma = 0.5 * jnp.trace(si.inertia) * jnp.eye(3) - si.inertia
    top = jnp.concatenate([sigma, si.moment[:, None]], axis=1)
    bottom = jnp.concatenate([si.moment[None, :], si.mass[None, None]], axis=1)
    return jnp.concatenate([top, bottom], axis=0)


def inertia_from_pseudo(p: Array) -> SpatialInertia:
    """Inverse of :func:`pseudo_inertia`."""
    sigma = p[:3, :3]
    return SpatialInertia(
        mass=p[3, 3],
        moment=p[:3, 3],
        inertia=jnp.trace(sigma) * jnp.eye(3) - sigma,
    )


def motion_cross(v: Array, m: Array) -> Array:
    """Spatial cross product of motion vectors, ad_v(m)."""
    w, vl = v[:3], v[3:]
    return jnp.concatenate([
        jnp.cross(w, m[:3]),
        jnp.cross(vl, m[:3]) + jnp.cross(w, m[3:]),
    ])


def force_cross(v: Array, f: Array) -> Array:
    """Spatial cross product of a motion vector with a force vector, v x* f."""
    w, vl = v[:3], v[3:]
    return jnp.concatenate([
        jnp.cross(w, f[:3]) + jnp.cross(vl, f[3:]),
        jnp.cross(w, f[3:]),
    ])


def motion_to_child(rotation: Array, translation: Array, v: Array) -> Array:
    """Express a parent-frame twist in the child frame of a local transform."""
    w, vl = v[:3], v[3:]
    wc = rotation.T @ w
    return jnp.concatenate([wc, rotation.T @ (vl + jnp.cross(w, translation))])


def wrench_to_parent(rotation: Array, translation: Array, f: Array) -> Array:
    """Express a child-frame wrench in the parent frame of a local transform."""
    n, fl = f[:3], f[3:]
    fp = rotation @ fl
    return jnp.concatenate([rotation @ n + jnp.cross(translation, fp), fp])


def motion_adjoint_to_child(rotation: Array, translation: Array) -> Array:
    """6x6 matrix form of :func:`motion_to_child` (used for inertia transport)."""
    rt = rotation.T
    top = jnp.concatenate([rt, jnp.zeros((3, 3))], axis=1)
    bottom = jnp.concatenate([-rt @ skew(translation), rt], axis=1)
    return jnp.concatenate([top, bottom], axis=0)
