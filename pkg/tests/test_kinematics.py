import numpy as np
import jax.numpy as jnp
import pytest

from dlodyn.errors import DomainError, SingularOrientation
from dlodyn import kinematics as K

from oracles import fk_oracle


def make_kin(lengths):
    return K.KinematicsParams.from_lengths(lengths)


def test_softplus_lengths_positive(rng):
    raw = rng.standard_normal(5) * 3
    kin = K.KinematicsParams(raw=jnp.asarray(raw))
    assert np.all(np.asarray(kin.lengths) > 0)
    roundtrip = K.KinematicsParams.from_lengths([0.3, 0.7, 1.1])
    np.testing.assert_allclose(roundtrip.lengths, [0.3, 0.7, 1.1], rtol=1e-12)


def test_straight_chain_rod_length():
    kin = make_kin([0.64, 0.64, 0.64])
    p = K.forward_kinematics(jnp.zeros(6), jnp.zeros(4), kin)
    np.testing.assert_allclose(p, [1.92, 0.0, 0.0], atol=1e-12)


def test_straight_chain_yawed_base():
    kin = make_kin([0.64, 0.64, 0.64])
    q_b = jnp.array([0.0, 0.0, 0.0, 0.0, 0.0, np.pi / 2])
    p = K.forward_kinematics(q_b, jnp.zeros(4), kin)
    np.testing.assert_allclose(p, [0.0, 1.92, 0.0], atol=1e-12)


def test_fk_matches_homogeneous_oracle(rng):
    kin = make_kin([0.5, 0.8, 0.62])
    lengths = np.asarray(kin.lengths)
    worst = 0.0
    for _ in range(1000):
        q_b = np.concatenate([rng.uniform(-1, 1, 3), rng.uniform(-1.2, 1.2, 3)])
        q_prb = rng.uniform(-1.2, 1.2, 4)
        got = np.asarray(K.forward_kinematics(jnp.asarray(q_b), jnp.asarray(q_prb), kin))
        expected = fk_oracle(q_b, q_prb, lengths)
        worst = max(worst, np.abs(got - expected).max())
    assert worst < 1e-10


def test_chain_cannot_overextend(rng):
    kin = make_kin([0.4, 0.9, 0.3, 0.6])
    total = float(np.sum(np.asarray(kin.lengths)))
    for _ in range(300):
        q_b = np.concatenate([rng.uniform(-2, 2, 3), rng.uniform(-1.2, 1.2, 3)])
        q_prb = rng.uniform(-1.5, 1.5, 6)
        p = np.asarray(K.forward_kinematics(jnp.asarray(q_b), jnp.asarray(q_prb), kin))
        assert np.linalg.norm(p - q_b[:3]) <= total + 1e-12


def test_decoder_static_chain_zero_velocity():
    kin = make_kin([0.6, 0.7])
    x = K.ChainState(q_prb=jnp.array([0.2, -0.4]), qd_prb=jnp.zeros(2))
    u = K.BaseInput(q_b=jnp.array([0.1, 0.0, 1.0, 0.0, 0.2, -0.1]),
                    qd_b=jnp.zeros(6), qdd_b=jnp.zeros(6))
    obs = K.decoder(x, u, kin)
    np.testing.assert_allclose(obs.pd_e, np.zeros(3), atol=0)


def test_decoder_rigid_translation():
    kin = make_kin([0.6, 0.7])
    x = K.ChainState(q_prb=jnp.array([0.2, -0.4]), qd_prb=jnp.zeros(2))
    v = jnp.array([0.3, -0.1, 0.25])
    u = K.BaseInput(q_b=jnp.zeros(6),
                    qd_b=jnp.concatenate([v, jnp.zeros(3)]), qdd_b=jnp.zeros(6))
    obs = K.decoder(x, u, kin)
    np.testing.assert_allclose(obs.pd_e, v, atol=1e-14)


def test_decoder_velocity_matches_finite_difference(rng):
    # drive base pose and joints along a smooth trajectory; the decoder
    # velocity must match the centered difference of the decoded position
    kin = make_kin([0.5, 0.8, 0.62])
    amp_b = rng.uniform(-0.4, 0.4, 6)
    amp_q = rng.uniform(-0.5, 0.5, 4)
    freq_b = rng.uniform(0.5, 2.0, 6)
    freq_q = rng.uniform(0.5, 2.0, 4)

    def q_b(t):
        return amp_b * np.sin(freq_b * t)

    def q_prb(t):
        return amp_q * np.sin(freq_q * t + 0.3)

    for t0 in rng.uniform(0.0, 3.0, 25):
        qd_b = amp_b * freq_b * np.cos(freq_b * t0)
        qd_q = amp_q * freq_q * np.cos(freq_q * t0 + 0.3)
        x = K.ChainState(q_prb=jnp.asarray(q_prb(t0)), qd_prb=jnp.asarray(qd_q))
        u = K.BaseInput(q_b=jnp.asarray(q_b(t0)), qd_b=jnp.asarray(qd_b),
                        qdd_b=jnp.zeros(6))
        pd = np.asarray(K.decoder(x, u, kin).pd_e)
        h = 1e-6
        p_plus = np.asarray(K.forward_kinematics(jnp.asarray(q_b(t0 + h)),
                                                 jnp.asarray(q_prb(t0 + h)), kin))
        p_minus = np.asarray(K.forward_kinematics(jnp.asarray(q_b(t0 - h)),
                                                  jnp.asarray(q_prb(t0 - h)), kin))
        fd = (p_plus - p_minus) / (2 * h)
        assert np.linalg.norm(pd - fd) <= 1e-6 * max(1.0, np.linalg.norm(fd))


def test_decoder_gimbal_guard():
    kin = make_kin([0.6, 0.7])
    x = K.ChainState(q_prb=jnp.zeros(2), qd_prb=jnp.zeros(2))
    u = K.BaseInput(q_b=jnp.array([0, 0, 0, 0, np.pi / 2, 0.0]),
                    qd_b=jnp.zeros(6), qdd_b=jnp.zeros(6))
    with pytest.raises(SingularOrientation):
        K.decoder(x, u, kin)


def test_point_along_dlo_endpoints():
    kin = make_kin([0.5, 0.8, 0.62])
    x = K.ChainState(q_prb=jnp.array([0.3, -0.2, 0.1, 0.4]),
                     qd_prb=jnp.array([0.2, -0.1, 0.5, 0.05]))
    u = K.BaseInput(q_b=jnp.array([0.2, -0.1, 1.0, 0.1, -0.3, 0.2]),
                    qd_b=jnp.asarray(np.linspace(-0.2, 0.3, 6)), qdd_b=jnp.zeros(6))
    p0, v0 = K.point_along_dlo(0.0, u, x, kin)
    np.testing.assert_allclose(p0, u.q_b[:3], atol=1e-15)
    np.testing.assert_allclose(v0, u.qd_b[:3], atol=1e-15)

    p1, v1 = K.point_along_dlo(1.0, u, x, kin)
    obs = K.decoder(x, u, kin)
    np.testing.assert_allclose(p1, obs.p_e, rtol=1e-14, atol=1e-14)
    np.testing.assert_allclose(v1, obs.pd_e, rtol=1e-13, atol=1e-14)


def test_point_along_dlo_midpoint_straight_chain():
    kin = make_kin([0.7, 0.7])
    x = K.ChainState(q_prb=jnp.zeros(2), qd_prb=jnp.zeros(2))
    p, _ = K.point_along_dlo(0.5, jnp.zeros(6), x, kin)
    np.testing.assert_allclose(p, [0.7, 0.0, 0.0], atol=1e-14)


def test_point_along_dlo_continuity(rng):
    kin = make_kin([0.4, 0.65, 0.55])
    x = K.ChainState(q_prb=jnp.asarray(rng.uniform(-0.8, 0.8, 4)),
                     qd_prb=jnp.asarray(rng.standard_normal(4)))
    u = jnp.zeros(6)
    lengths = np.asarray(kin.lengths)
    cum = np.cumsum(lengths) / lengths.sum()
    for boundary in cum[:-1]:
        below, _ = K.point_along_dlo(boundary - 1e-13, u, x, kin)
        above, _ = K.point_along_dlo(boundary + 1e-13, u, x, kin)
        assert np.linalg.norm(np.asarray(below) - np.asarray(above)) < 1e-12


def test_point_along_dlo_domain():
    kin = make_kin([0.5, 0.5])
    x = K.ChainState(q_prb=jnp.zeros(2), qd_prb=jnp.zeros(2))
    with pytest.raises(DomainError):
        K.point_along_dlo(1.2, jnp.zeros(6), x, kin)
    with pytest.raises(DomainError):
        K.point_along_dlo(-0.1, jnp.zeros(6), x, kin)


def test_kin_target_uniform_rod():
    np.testing.assert_allclose(K.kin_target(1.92, 3, "uniform"),
                               [0.64, 0.64, 0.64], rtol=1e-15)


def test_kin_target_start_heavy_cylinder():
    np.testing.assert_allclose(K.kin_target(1.90, 5, "start-heavy"),
                               [0.1, 0.1, 0.1, 0.1, 1.5], rtol=1e-12)


def test_kin_target_start_heavy_negative_residual():
    with pytest.raises(DomainError):
        K.kin_target(0.3, 5, "start-heavy")
