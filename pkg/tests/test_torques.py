import numpy as np
import jax
import jax.numpy as jnp
import pytest
from hypothesis import given, settings, strategies as st

from dlodyn import torques as T
from dlodyn.kinematics import softplus_inverse

from oracles import mlp_torque_scalar


def test_silu_zero():
    assert float(T.silu(0.0)) == 0.0


def test_silu_positive_asymptote():
    assert abs(float(T.silu(20.0)) - 20.0) < 1e-7


def test_silu_scalar_value():
    # z / (1 + e^-z) at z = -1, frozen from an independent evaluation
    assert abs(float(T.silu(-1.0)) - (-0.2689414213699951)) < 1e-15


@settings(max_examples=100, deadline=None)
@given(st.floats(-30, 30))
def test_silu_matches_logistic_product(z):
    expected = z / (1.0 + np.exp(-z))
    assert abs(float(T.silu(z)) - expected) < 1e-12


def make_linear(k, c):
    k = np.asarray(k, dtype=float)
    c = np.asarray(c, dtype=float)
    return T.LinearTorque(k_raw=softplus_inverse(jnp.asarray(k)),
                          c_raw=softplus_inverse(jnp.asarray(c)))


def test_linear_rest_is_zero():
    params = make_linear([[2.0, 3.0]], [[0.5, 0.5]])
    tau = T.eval_torque(T.joint_params(params, 0), jnp.zeros(2), jnp.zeros(2))
    np.testing.assert_allclose(tau, [0.0, 0.0], atol=0)


def test_linear_direct_formula():
    params = make_linear([[2.0, 3.0]], [[1e-12, 1e-12]])
    tau = T.eval_torque(T.joint_params(params, 0), jnp.array([0.1, -0.2]), jnp.zeros(2))
    np.testing.assert_allclose(tau, [0.2, -0.6], rtol=1e-9, atol=1e-12)


def test_linear_odd_symmetry(rng):
    params = make_linear(rng.uniform(0.5, 3, (2, 2)), rng.uniform(0.05, 0.5, (2, 2)))
    for _ in range(50):
        q = jnp.asarray(rng.standard_normal(4))
        qd = jnp.asarray(rng.standard_normal(4))
        plus = T.eval_torques(params, q, qd)
        minus = T.eval_torques(params, -q, -qd)
        np.testing.assert_allclose(np.asarray(minus), -np.asarray(plus), atol=1e-15)


def test_neural_zero_network_is_bitwise_linear(rng):
    k_raw = jnp.asarray(rng.standard_normal((2, 2)))
    c_raw = jnp.asarray(rng.standard_normal((2, 2)))
    linear = T.LinearTorque(k_raw=k_raw, c_raw=c_raw)
    from dlodyn.kinematics import softplus
    neural = T.NeuralTorque(
        k=softplus(k_raw), c=softplus(c_raw),
        w1=jnp.zeros((2, 8, 4)), w2=jnp.zeros((2, 2, 8)), b2=jnp.zeros((2, 8)),
    )
    q = jnp.asarray(rng.standard_normal(4))
    qd = jnp.asarray(rng.standard_normal(4))
    lin = np.asarray(T.eval_torques(linear, q, qd))
    neu = np.asarray(T.eval_torques(neural, q, qd))
    assert (lin == neu).all()


def test_neural_matches_scalar_oracle(rng):
    n_ej = 3
    params = T.NeuralTorque(
        k=jnp.asarray(rng.uniform(0.5, 2, (n_ej, 2))),
        c=jnp.asarray(rng.uniform(0.05, 0.3, (n_ej, 2))),
        w1=jnp.asarray(0.3 * rng.standard_normal((n_ej, 8, 4))),
        w2=jnp.asarray(0.3 * rng.standard_normal((n_ej, 2, 8))),
        b2=jnp.asarray(0.2 * rng.standard_normal((n_ej, 8))),
    )
    q = rng.uniform(-1, 1, 2 * n_ej)
    qd = rng.uniform(-2, 2, 2 * n_ej)
    got = np.asarray(T.eval_torques(params, jnp.asarray(q), jnp.asarray(qd)))
    for j in range(n_ej):
        expected = mlp_torque_scalar(
            np.asarray(params.k[j]), np.asarray(params.c[j]),
            np.asarray(params.w1[j]), np.asarray(params.w2[j]),
            np.asarray(params.b2[j]), q[2 * j:2 * j + 2], qd[2 * j:2 * j + 2])
        np.testing.assert_allclose(got[2 * j:2 * j + 2], expected, atol=1e-12)


def test_canonical_mlp_adds_first_layer_bias(rng):
    base = T.init_torque_params("neural", 1, seed=3)
    with_bias = T.NeuralTorque(
        k=base.k, c=base.c, w1=base.w1, w2=base.w2, b2=base.b2,
        b1=jnp.asarray(rng.standard_normal((1, 8))),
    )
    q, qd = jnp.array([0.3, -0.1]), jnp.array([0.0, 0.2])
    expected = mlp_torque_scalar(
        np.asarray(with_bias.k[0]), np.asarray(with_bias.c[0]),
        np.asarray(with_bias.w1[0]), np.asarray(with_bias.w2[0]),
        np.asarray(with_bias.b2[0]), np.asarray(q), np.asarray(qd),
        b1=np.asarray(with_bias.b1[0]))
    got = T.eval_torque(T.joint_params(with_bias, 0), q, qd)
    np.testing.assert_allclose(np.asarray(got), expected, atol=1e-12)


@pytest.mark.parametrize("variant", ["linear", "affine", "neural", "cubic"])
def test_torque_jacobians_match_finite_differences(variant, rng):
    params = T.init_torque_params(variant, 2, seed=7)
    if variant == "neural":
        params = params._replace(
            w1=jnp.asarray(0.4 * rng.standard_normal((2, 8, 4))),
            w2=jnp.asarray(0.4 * rng.standard_normal((2, 2, 8))),
            b2=jnp.asarray(0.2 * rng.standard_normal((2, 8))))
    if variant == "affine":
        params = params._replace(tau_o=jnp.asarray(rng.standard_normal((2, 2))))
    fn = lambda q, qd: T.eval_torques(params, q, qd)
    jac_q = jax.jacfwd(fn, argnums=0)
    jac_qd = jax.jacfwd(fn, argnums=1)
    h = 1e-6
    for _ in range(20):
        q = jnp.asarray(rng.uniform(-1, 1, 4))
        qd = jnp.asarray(rng.uniform(-1, 1, 4))
        for argnum, jac in ((0, jac_q(q, qd)), (1, jac_qd(q, qd))):
            for i in range(4):
                e = jnp.zeros(4).at[i].set(h)
                if argnum == 0:
                    fd = (fn(q + e, qd) - fn(q - e, qd)) / (2 * h)
                else:
                    fd = (fn(q, qd + e) - fn(q, qd - e)) / (2 * h)
                num = np.abs(np.asarray(jac)[:, i] - np.asarray(fd))
                den = np.maximum(np.abs(np.asarray(fd)), 1.0)
                assert (num / den < 1e-5).all()


def test_affine_offset_enters_directly():
    params = T.AffineTorque(k_raw=softplus_inverse(jnp.full((1, 2), 1.0)),
                            c_raw=softplus_inverse(jnp.full((1, 2), 1e-12)),
                            tau_o=jnp.asarray([[0.7, -0.3]]))
    tau = T.eval_torque(T.joint_params(params, 0), jnp.zeros(2), jnp.zeros(2))
    np.testing.assert_allclose(np.asarray(tau), [0.7, -0.3], atol=1e-15)


def test_l1_norm_covers_network_weights_only():
    neural = T.init_torque_params("neural", 2, seed=0)
    neural = neural._replace(w1=jnp.ones_like(neural.w1),
                             w2=jnp.ones_like(neural.w2),
                             b2=jnp.ones_like(neural.b2))
    expected = neural.w1.size + neural.w2.size + neural.b2.size
    assert float(T.l1_network_norm(neural)) == expected
    linear = T.init_torque_params("linear", 2)
    assert float(T.l1_network_norm(linear)) == 0.0
