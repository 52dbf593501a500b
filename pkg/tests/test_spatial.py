import numpy as np
import jax.numpy as jnp
import pytest
from hypothesis import given, settings, strategies as st

from dlodyn.errors import SingularOrientation
from dlodyn import spatial

from oracles import euler_xyz, rot_x, rot_y, rot_z

angles = st.floats(-1.4, 1.4)


def test_euler_zero_is_identity():
    np.testing.assert_allclose(spatial.euler_to_rotation(jnp.zeros(3)), np.eye(3),
                               atol=1e-15)


def test_euler_single_axis_quarter_turn():
    r = np.asarray(spatial.euler_to_rotation(jnp.array([np.pi / 2, 0.0, 0.0])))
    np.testing.assert_allclose(r @ np.array([0, 1, 0]), [0, 0, 1], atol=1e-15)
    np.testing.assert_allclose(r @ np.array([0, 0, 1]), [0, -1, 0], atol=1e-15)


def test_euler_matches_axis_product():
    psi = np.array([0.3, -0.2, 0.1])
    expected = rot_x(psi[0]) @ rot_y(psi[1]) @ rot_z(psi[2])
    np.testing.assert_allclose(spatial.euler_to_rotation(jnp.asarray(psi)),
                               expected, atol=1e-15)


def test_rotation_invariants_random(rng):
    for _ in range(1000):
        psi = rng.uniform(-np.pi, np.pi, 3)
        ortho, det = spatial.rotation_residuals(spatial.euler_to_rotation(jnp.asarray(psi)))
        assert ortho < 1e-12 and det < 1e-12


def test_rate_map_zero_angles_identity():
    np.testing.assert_allclose(spatial.euler_rate_map(jnp.zeros(3)), np.eye(3),
                               atol=1e-15)


def test_rate_map_gimbal_lock_raises():
    with pytest.raises(SingularOrientation):
        spatial.euler_rate_map(jnp.array([0.0, np.pi / 2, 0.0]))


def test_rate_map_matches_finite_difference(rng):
    h = 1e-7
    for _ in range(1000):
        psi = rng.uniform(-1.3, 1.3, 3)
        psidot = rng.standard_normal(3)
        e = np.asarray(spatial.euler_rate_map(jnp.asarray(psi)))
        omega = e @ psidot
        r0 = euler_xyz(psi - h * psidot)
        r1 = euler_xyz(psi + h * psidot)
        rdot = (r1 - r0) / (2 * h)
        w_hat = rdot @ euler_xyz(psi).T
        omega_fd = np.array([w_hat[2, 1], w_hat[0, 2], w_hat[1, 0]])
        assert np.linalg.norm(omega - omega_fd) <= 1e-6 * max(1.0, np.linalg.norm(omega_fd))


def test_transform_apply_identity_and_translation():
    p = jnp.array([0.1, -0.2, 0.3])
    np.testing.assert_allclose(
        spatial.transform_apply(spatial.identity_transform(), p), p, atol=0)
    t = spatial.Transform(jnp.eye(3), jnp.array([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(
        spatial.transform_apply(t, jnp.zeros(3)), [1, 2, 3], atol=0)


@settings(max_examples=50, deadline=None)
@given(st.lists(angles, min_size=6, max_size=6),
       st.lists(st.floats(-2, 2), min_size=9, max_size=9))
def test_transform_composition_law(psis, vals):
    t1 = spatial.Transform(spatial.euler_to_rotation(jnp.asarray(psis[:3])),
                           jnp.asarray(vals[:3]))
    t2 = spatial.Transform(spatial.euler_to_rotation(jnp.asarray(psis[3:])),
                           jnp.asarray(vals[3:6]))
    p = jnp.asarray(vals[6:9])
    lhs = spatial.transform_apply(spatial.transform_compose(t1, t2), p)
    rhs = spatial.transform_apply(t1, spatial.transform_apply(t2, p))
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_transform_associativity_and_inverse(rng):
    for _ in range(200):
        ts = [spatial.Transform(spatial.euler_to_rotation(jnp.asarray(rng.uniform(-3, 3, 3))),
                                jnp.asarray(rng.standard_normal(3)))
              for _ in range(3)]
        p = jnp.asarray(rng.standard_normal(3))
        left = spatial.transform_compose(spatial.transform_compose(ts[0], ts[1]), ts[2])
        right = spatial.transform_compose(ts[0], spatial.transform_compose(ts[1], ts[2]))
        np.testing.assert_allclose(spatial.transform_apply(left, p),
                                   spatial.transform_apply(right, p), atol=1e-12)
        roundtrip = spatial.transform_compose(ts[0], spatial.transform_inverse(ts[0]))
        np.testing.assert_allclose(roundtrip.rotation, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(roundtrip.translation, np.zeros(3), atol=1e-12)


def test_spatial_inertia_pseudo_roundtrip():
    si = spatial.SpatialInertia(
        mass=jnp.asarray(2.5),
        moment=jnp.asarray([0.3, -0.1, 0.05]),
        inertia=jnp.asarray([[0.4, 0.01, 0.0], [0.01, 0.5, -0.02], [0.0, -0.02, 0.45]]),
    )
    p = spatial.pseudo_inertia(si)
    assert np.linalg.eigvalsh(np.asarray(p)).min() > 0
    back = spatial.inertia_from_pseudo(p)
    np.testing.assert_allclose(back.mass, si.mass, rtol=1e-14)
    np.testing.assert_allclose(back.moment, si.moment, rtol=1e-14)
    np.testing.assert_allclose(back.inertia, si.inertia, atol=1e-14)


def test_spatial_inertia_kinetic_energy_form(rng):
    # 6x6 matrix form agrees with the point-mass decomposition 0.5 m |v_com|^2
    # + 0.5 w I_c w for a random twist
    mass, com = 1.7, np.array([0.2, -0.05, 0.1])
    i_c = np.diag([0.05, 0.08, 0.07])
    i_o = i_c + mass * ((com @ com) * np.eye(3) - np.outer(com, com))
    si = spatial.SpatialInertia(jnp.asarray(mass), jnp.asarray(mass * com),
                                jnp.asarray(i_o))
    g = np.asarray(spatial.spatial_inertia_matrix(si))
    for _ in range(20):
        w = rng.standard_normal(3)
        v = rng.standard_normal(3)
        v_com = v + np.cross(w, com)
        expected = 0.5 * mass * v_com @ v_com + 0.5 * w @ i_c @ w
        got = 0.5 * np.concatenate([w, v]) @ g @ np.concatenate([w, v])
        np.testing.assert_allclose(got, expected, rtol=1e-12)
