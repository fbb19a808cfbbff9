import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from learnreg import mlp
from oracles import central_diff, naive_forward, random_net, rel_err

KINDS = ["tanh", "softplus", "identity"]


def affine_pair():
    arch = mlp.Architecture((1, 1, 1), mlp.Activation("identity"))
    w = mlp.WeightVector(((np.array([[2.0]]), np.array([0.0])), (np.array([[3.0]]), np.array([1.0]))))
    return arch, w


def test_zero_weights_give_zero_output():
    arch = mlp.Architecture((3, 5, 4, 2), "tanh")
    value, _ = mlp.forward(mlp.zero_weights(arch), [0.3, -2.0, 7.0], arch)
    assert np.array_equal(value, np.zeros(2))


def test_affine_composition():
    arch, w = affine_pair()
    value, _ = mlp.forward(w, [1.0], arch)
    assert value.tolist() == [7.0]


@pytest.mark.parametrize("kind", KINDS)
def test_forward_matches_recursive_oracle(kind):
    rng = np.random.default_rng(3)
    for _ in range(10):
        arch, w = random_net(rng, (3, 6, 5, 2), kind)
        u = rng.uniform(-1, 1, 3)
        value, _ = mlp.forward(w, u, arch)
        np.testing.assert_allclose(value, naive_forward(w, u, kind), rtol=1e-14, atol=1e-14)


def test_forward_rejects_wrong_input_size():
    arch = mlp.Architecture((2, 3, 1), "tanh")
    with pytest.raises(ValueError, match="dimension"):
        mlp.forward(mlp.zero_weights(arch), [1.0, 2.0, 3.0], arch)


def test_weight_vector_rejects_broken_chain():
    with pytest.raises(ValueError, match="expects"):
        mlp.WeightVector(((np.zeros((3, 2)), np.zeros(3)), (np.zeros((1, 4)), np.zeros(1))))


def test_architecture_validation():
    with pytest.raises(ValueError):
        mlp.Architecture((2, 1))
    with pytest.raises(ValueError):
        mlp.Architecture((2, 0, 1))
    with pytest.raises(ValueError):
        mlp.Activation("relu")
    assert mlp.Architecture((4, 8, 8, 1)).hidden_size == 4 + 8


def test_activation_identity_derivatives():
    act = mlp.Activation("identity")
    x = np.linspace(-3, 3, 7)
    assert np.all(act.d1(x) == 1.0) and np.all(act.d2(x) == 0.0)


@pytest.mark.parametrize("kind", ["tanh", "softplus"])
def test_activation_derivatives_finite_for_extreme_inputs(kind):
    act = mlp.Activation(kind)
    x = np.array([-1e6, -50.0, 0.0, 50.0, 1e6])
    for f in (act, act.d1, act.d2):
        assert np.all(np.isfinite(f(x)))


@pytest.mark.parametrize("kind", ["tanh", "softplus"])
def test_activation_derivatives_match_differences(kind):
    act = mlp.Activation(kind)
    x = np.linspace(-3, 3, 13)
    h = 1e-6
    np.testing.assert_allclose(act.d1(x), (act(x + h) - act(x - h)) / (2 * h), rtol=1e-7, atol=1e-9)
    np.testing.assert_allclose(act.d2(x), (act.d1(x + h) - act.d1(x - h)) / (2 * h), rtol=1e-6, atol=1e-8)


def test_jacobian_identity_activation_is_matrix_product():
    rng = np.random.default_rng(0)
    arch, w = random_net(rng, (3, 4, 5, 2), "identity")
    _, tape = mlp.forward(w, rng.uniform(-1, 1, 3), arch)
    (A1, _), (A2, _), (A3, _) = w.layers
    np.testing.assert_allclose(mlp.jacobian_u(w, tape), A3 @ A2 @ A1, rtol=1e-14)


def test_jacobian_vanishes_with_zero_first_layer():
    rng = np.random.default_rng(1)
    arch, w = random_net(rng, (2, 3, 1), "tanh")
    w = mlp.WeightVector(((np.zeros((3, 2)), np.zeros(3)), w.layers[1]))
    _, tape = mlp.forward(w, [0.4, -0.2], arch)
    assert np.all(mlp.jacobian_u(w, tape) == 0.0)


@pytest.mark.parametrize("kind", KINDS)
def test_jacobian_u_against_differences(kind):
    rng = np.random.default_rng(11)
    arch, w = random_net(rng, (4, 8, 8, 1), kind)
    u = rng.uniform(-1, 1, 4)
    _, tape = mlp.forward(w, u, arch)
    fd = central_diff(lambda v: mlp.forward(w, v, arch)[0], u, 1e-5)
    assert rel_err(mlp.jacobian_u(w, tape), fd) <= 1e-6


def test_jacobian_w_last_layer_bias_direction():
    rng = np.random.default_rng(2)
    arch, w = random_net(rng, (3, 4, 2), "tanh")
    _, tape = mlp.forward(w, rng.uniform(-1, 1, 3), arch)
    b_dir = np.array([0.7, -1.3])
    np.testing.assert_array_equal(mlp.jacobian_w(w, tape, 2, np.zeros((2, 4)), b_dir), b_dir)


def test_jacobian_w_zero_direction():
    rng = np.random.default_rng(2)
    arch, w = random_net(rng, (3, 4, 2), "tanh")
    _, tape = mlp.forward(w, rng.uniform(-1, 1, 3), arch)
    assert np.all(mlp.jacobian_w(w, tape, 1, np.zeros((4, 3)), np.zeros(4)) == 0)


def test_jacobian_w_rejects_bad_layer_and_shape():
    arch = mlp.Architecture((2, 3, 1), "tanh")
    w = mlp.zero_weights(arch)
    _, tape = mlp.forward(w, [0.0, 0.0], arch)
    with pytest.raises(ValueError, match="layer index"):
        mlp.jacobian_w(w, tape, 3, np.zeros((1, 3)), np.zeros(1))
    with pytest.raises(ValueError, match="do not match"):
        mlp.jacobian_w(w, tape, 1, np.zeros((3, 3)), np.zeros(3))


def _perturbed(w, s, A_dir, b_dir, t):
    layers = list(w.layers)
    A, b = layers[s - 1]
    layers[s - 1] = (A + t * A_dir, b + t * b_dir)
    return mlp.WeightVector(tuple(layers))


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("s", [1, 2, 3])
def test_jacobian_w_against_differences(kind, s):
    rng = np.random.default_rng(100 + s)
    arch, w = random_net(rng, (3, 5, 4, 1), kind)
    u = rng.uniform(-1, 1, 3)
    A, b = w.layers[s - 1]
    A_dir, b_dir = rng.uniform(-1, 1, A.shape), rng.uniform(-1, 1, b.shape)
    _, tape = mlp.forward(w, u, arch)
    h = 1e-5
    fd = (
        mlp.forward(_perturbed(w, s, A_dir, b_dir, h), u, arch)[0]
        - mlp.forward(_perturbed(w, s, A_dir, b_dir, -h), u, arch)[0]
    ) / (2 * h)
    assert rel_err(mlp.jacobian_w(w, tape, s, A_dir, b_dir), fd) <= 1e-6


def test_hessian_identity_activation_is_zero():
    rng = np.random.default_rng(4)
    arch, w = random_net(rng, (3, 4, 2), "identity")
    _, tape = mlp.forward(w, rng.uniform(-1, 1, 3), arch)
    assert np.all(mlp.hessian_uu(w, tape) == 0)


def test_hessian_tanh_zero_bias_at_origin_is_zero():
    rng = np.random.default_rng(5)
    arch, w = random_net(rng, (3, 4, 4, 1), "tanh")
    w = mlp.WeightVector(tuple((A, np.zeros_like(b)) for A, b in w.layers))
    _, tape = mlp.forward(w, np.zeros(3), arch)
    assert np.all(mlp.hessian_uu(w, tape) == 0)


@pytest.mark.parametrize("kind", ["tanh", "softplus"])
def test_hessian_against_second_differences(kind):
    rng = np.random.default_rng(6)
    arch, w = random_net(rng, (3, 6, 5, 2), kind)
    u = rng.uniform(-1, 1, 3)
    _, tape = mlp.forward(w, u, arch)
    f = lambda v: mlp.forward(w, v, arch)[0]
    h = 1e-3
    fd = np.zeros((2, 3, 3))
    for i in range(3):
        for j in range(3):
            ei, ej = np.eye(3)[i] * h, np.eye(3)[j] * h
            fd[:, i, j] = (f(u + ei + ej) - f(u + ei - ej) - f(u - ei + ej) + f(u - ei - ej)) / (4 * h * h)
    assert rel_err(mlp.hessian_uu(w, tape), fd) <= 1e-4


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), kind=st.sampled_from(KINDS))
def test_hessian_symmetric(seed, kind):
    rng = np.random.default_rng(seed)
    arch, w = random_net(rng, (4, 8, 8, 3), kind)
    _, tape = mlp.forward(w, rng.uniform(-2, 2, 4), arch)
    H = mlp.hessian_uu(w, tape)
    assert np.max(np.abs(H - H.transpose(0, 2, 1))) <= 1e-12 * (1 + np.max(np.abs(H)))


def test_mixed_identity_last_layer():
    rng = np.random.default_rng(7)
    arch, w = random_net(rng, (3, 4, 5, 2), "identity")
    _, tape = mlp.forward(w, rng.uniform(-1, 1, 3), arch)
    A_dir = rng.uniform(-1, 1, (2, 5))
    (A1, _), (A2, _), _ = w.layers
    np.testing.assert_allclose(mlp.mixed_uw(w, tape, 3, A_dir, np.zeros(2)), A_dir @ A2 @ A1, rtol=1e-14)


def test_mixed_zero_direction():
    rng = np.random.default_rng(7)
    arch, w = random_net(rng, (3, 4, 1), "tanh")
    _, tape = mlp.forward(w, rng.uniform(-1, 1, 3), arch)
    assert np.all(mlp.mixed_uw(w, tape, 1, np.zeros((4, 3)), np.zeros(4)) == 0)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("s", [1, 2, 3])
def test_mixed_against_jacobian_differences(kind, s):
    rng = np.random.default_rng(200 + s)
    arch, w = random_net(rng, (4, 6, 5, 1), kind)
    u = rng.uniform(-1, 1, 4)
    A, b = w.layers[s - 1]
    A_dir, b_dir = rng.uniform(-1, 1, A.shape), rng.uniform(-1, 1, b.shape)
    _, tape = mlp.forward(w, u, arch)
    h = 1e-5

    def jac(t):
        wt = _perturbed(w, s, A_dir, b_dir, t)
        return mlp.jacobian_u(wt, mlp.forward(wt, u, arch)[1])

    fd = (jac(h) - jac(-h)) / (2 * h)
    assert rel_err(mlp.mixed_uw(w, tape, s, A_dir, b_dir), fd) <= 1e-4


def test_batched_directions_match_single_calls():
    rng = np.random.default_rng(8)
    arch, w = random_net(rng, (3, 4, 2), "softplus")
    _, tape = mlp.forward(w, rng.uniform(-1, 1, 3), arch)
    A_dirs, b_dirs = mlp.layer_basis(w, 1)
    dr, dJ = mlp.mixed_and_first(w, tape, 1, A_dirs, b_dirs)
    for i in range(len(A_dirs)):
        np.testing.assert_allclose(dr[i], mlp.jacobian_w(w, tape, 1, A_dirs[i], b_dirs[i]), atol=1e-15)
        np.testing.assert_allclose(dJ[i], mlp.mixed_uw(w, tape, 1, A_dirs[i], b_dirs[i]), atol=1e-15)


def test_layer_basis_follows_vector_order():
    rng = np.random.default_rng(9)
    arch, w = random_net(rng, (2, 3, 1), "tanh")
    A_dirs, b_dirs = mlp.layer_basis(w, 1)
    flat = np.concatenate([A_dirs.reshape(len(A_dirs), -1), b_dirs], axis=1)
    np.testing.assert_array_equal(flat, np.eye(9))


def test_weight_norm_examples():
    arch = mlp.Architecture((3, 2, 1), "tanh")
    assert mlp.weight_norm(mlp.zero_weights(arch)) == 0.0
    w = mlp.WeightVector(((np.array([[3.0, 4.0]]), np.array([0.0])),))
    assert mlp.weight_norm(w) == 5.0


def test_axpy_cancels():
    rng = np.random.default_rng(10)
    _, w = random_net(rng, (3, 4, 1))
    assert mlp.weight_norm(mlp.weight_axpy(-1.0, w, w)) == 0.0


def test_axpy_rejects_mismatch():
    a = mlp.zero_weights(mlp.Architecture((2, 3, 1)))
    b = mlp.zero_weights(mlp.Architecture((2, 4, 1)))
    with pytest.raises(ValueError, match="mismatch"):
        mlp.weight_axpy(1.0, a, b)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_vector_round_trip(seed):
    rng = np.random.default_rng(seed)
    widths = [int(rng.integers(1, 6)) for _ in range(int(rng.integers(3, 6)))]
    _, w = random_net(rng, widths)
    back = mlp.WeightVector.from_vector(w.to_vector(), widths)
    np.testing.assert_array_equal(back.to_vector(), w.to_vector())
    assert back.size == w.size == w.to_vector().size


def test_from_vector_rejects_wrong_length():
    with pytest.raises(ValueError, match="does not match"):
        mlp.WeightVector.from_vector(np.zeros(5), (2, 3, 1))


def test_lipschitz_examples():
    arch = mlp.Architecture((1, 1, 1), "tanh")
    w = mlp.WeightVector(((np.array([[2.0]]), np.zeros(1)), (np.array([[3.0]]), np.zeros(1))))
    assert mlp.lipschitz_bound(w, arch) == 6.0
    z = mlp.WeightVector(((np.zeros((1, 1)), np.zeros(1)), (np.array([[3.0]]), np.zeros(1))))
    assert mlp.lipschitz_bound(z, arch) == 0.0


@pytest.mark.parametrize("kind", KINDS)
def test_lipschitz_bound_holds_on_samples(kind):
    rng = np.random.default_rng(12)
    arch, w = random_net(rng, (4, 8, 8, 1), kind)
    bound = mlp.lipschitz_bound(w, arch)
    for _ in range(1000):
        u1, u2 = rng.uniform(-3, 3, (2, 4))
        gap = np.linalg.norm(mlp.forward(w, u1, arch)[0] - mlp.forward(w, u2, arch)[0])
        assert gap <= bound * np.linalg.norm(u1 - u2) * (1 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), alpha=st.floats(-2, 2))
def test_identity_network_is_affine(seed, alpha):
    rng = np.random.default_rng(seed)
    arch, w = random_net(rng, (3, 5, 4, 2), "identity")
    u1, u2 = rng.uniform(-1, 1, (2, 3))
    lhs = mlp.forward(w, alpha * u1 + (1 - alpha) * u2, arch)[0]
    rhs = alpha * mlp.forward(w, u1, arch)[0] + (1 - alpha) * mlp.forward(w, u2, arch)[0]
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_weights_are_read_only():
    w = mlp.zero_weights(mlp.Architecture((2, 3, 1)))
    with pytest.raises(ValueError):
        w.layers[0][0][0, 0] = 1.0
