import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from vvnet import nn
from vvnet.nn import NonFiniteError, Parameter, Tensor, numeric_grad, rel_error

SEEDS = range(5)


def _check(op, shapes, seed, tol=1e-4, positive=False):
    """Backprop a random projection of ``op(*inputs)`` and compare with central differences."""
    rng = np.random.default_rng(seed)
    vals = [rng.standard_normal(s) for s in shapes]
    if positive:
        vals = [np.abs(v) + 0.5 for v in vals]
    ts = [Tensor(v, True) for v in vals]
    out = op(*ts)
    up = rng.standard_normal(out.shape)
    out.backward(up)
    for t, v in zip(ts, vals):
        def f():
            return float(np.sum(op(*[Tensor(u) for u in vals]).value * up))
        assert rel_error(t.grad, numeric_grad(f, v)) < tol


@pytest.mark.parametrize("seed", SEEDS)
def test_linear_grad(seed):
    _check(nn.linear, [(4, 3, 5), (5, 2), (2,)], seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_relu_grad(seed):
    # standard normal draws land far from the kink at this step size
    _check(nn.relu, [(6, 7)], seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_elementwise_grads(seed):
    _check(nn.add, [(3, 4), (4,)], seed)
    _check(nn.mul, [(3, 4), (3, 1)], seed)
    _check(nn.exp, [(5,)], seed)
    _check(nn.square, [(5,)], seed)
    _check(nn.sigmoid, [(2, 5)], seed)
    _check(lambda a: nn.scale(a, -2.5), [(3,)], seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_structural_grads(seed):
    _check(lambda a, b: nn.concat([a, b], axis=-1), [(2, 3, 2), (2, 3, 4)], seed)
    _check(lambda a: nn.broadcast_points(a, 5), [(2, 3)], seed)
    _check(lambda a: nn.reshape(a, (6, 2)), [(3, 4)], seed)
    _check(nn.sum_all, [(3, 4)], seed)
    _check(nn.mean_all, [(3, 4)], seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_max_pool_grad_away_from_ties(seed):
    _check(nn.max_pool_points, [(2, 9, 4)], seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_cross_entropy_grad(seed):
    labels = np.random.default_rng(seed).integers(0, 4, size=(2, 6))
    _check(lambda s: nn.softmax_cross_entropy(s, labels), [(2, 6, 4)], seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_mlp_grad(seed):
    rng = np.random.default_rng(seed)
    params = nn.dense_params(rng, [3, 7, 4], "m", np.float64)
    for p in params[1::2]:
        p.tensor.value = rng.standard_normal(p.value.shape)
    x = rng.standard_normal((2, 5, 3))
    # keep every pre-activation clear of the relu kink
    h = x @ params[0].value + params[1].value
    assert np.abs(h).min() > 1e-3
    out = nn.shared_point_mlp(Tensor(x), params)
    up = rng.standard_normal(out.shape)
    out.backward(up)
    for p in params:
        def f():
            return float(np.sum(nn.shared_point_mlp(Tensor(x), params).value * up))
        assert rel_error(p.grad, numeric_grad(f, p.tensor.value)) < 1e-4


def test_max_pool_ties_route_to_first():
    f = Tensor(np.array([[[1.0, 5.0], [3.0, 5.0], [3.0, 2.0]]]), True)
    out = nn.max_pool_points(f)
    np.testing.assert_array_equal(out.value, [[3.0, 5.0]])
    out.backward(np.array([[10.0, 20.0]]))
    np.testing.assert_array_equal(f.grad[0], [[0, 20], [10, 0], [0, 0]])


def test_max_pool_is_permutation_invariant():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 10, 4))
    perm = rng.permutation(10)
    np.testing.assert_array_equal(nn.max_pool_points(Tensor(x)).value,
                                  nn.max_pool_points(Tensor(x[:, perm])).value)


def test_shared_mlp_is_permutation_equivariant():
    rng = np.random.default_rng(1)
    params = nn.dense_params(rng, [3, 64, 64], "p", np.float64)
    x = rng.standard_normal((12, 3))
    perm = rng.permutation(12)
    a = nn.shared_point_mlp(Tensor(x), params).value
    b = nn.shared_point_mlp(Tensor(x[perm]), params).value
    np.testing.assert_array_equal(a[perm], b)
    assert a.shape == (12, 64)


def test_shared_mlp_rejects_bad_shapes():
    params = nn.dense_params(np.random.default_rng(0), [3, 4], "p")
    with pytest.raises(ValueError):
        nn.shared_point_mlp(Tensor(np.zeros((5, 2))), params)
    with pytest.raises(ValueError):
        nn.shared_point_mlp(Tensor(np.zeros((0, 3))), params)


def test_cross_entropy_value_and_label_range():
    s = Tensor(np.array([[0.0, 0.0], [np.log(3.0), 0.0]]))
    loss = nn.softmax_cross_entropy(s, [0, 1])
    assert float(loss.value) == pytest.approx(0.5 * (np.log(2) + np.log(4)), abs=1e-12)
    with pytest.raises(ValueError):
        nn.softmax_cross_entropy(s, [0, 2])


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(2, 5)),
              elements=st.floats(-10, 10, allow_nan=False)), st.data())
@settings(max_examples=200, deadline=None)
def test_no_nan_in_forward_or_backward(scores, data):
    labels = data.draw(arrays(np.int64, scores.shape[:1], elements=st.integers(0, scores.shape[1] - 1)))
    s = Tensor(scores, True)
    h = nn.sigmoid(nn.relu(nn.linear(s, Tensor(np.eye(scores.shape[1]), True))))
    loss = nn.softmax_cross_entropy(nn.add(h, s), labels)
    loss.backward()
    assert np.isfinite(loss.value) and np.all(np.isfinite(s.grad))


def test_non_finite_raises():
    with pytest.raises(NonFiniteError):
        nn.exp(Tensor(np.array([1000.0])))


def test_adam_first_step_moves_by_lr():
    p = Parameter(Tensor(np.array([1.0, -2.0, 0.5])), "p")
    nn.adam_step([p], [np.array([3.0, -0.1, 0.0])], lr=0.01)
    # bias-corrected first step is lr * sign(g) (zero gradient leaves the entry alone)
    np.testing.assert_allclose(p.value, [0.99, -1.99, 0.5], atol=1e-8)
    assert p.step == 1


def test_adam_matches_hand_computation():
    p = Parameter(Tensor(np.array([0.0])), "p")
    grads = [0.5, -1.0, 2.0]
    m = v = 0.0
    x = 0.0
    for t, g in enumerate(grads, 1):
        nn.adam_step([p], [np.array([g])], lr=0.1)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x -= 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert p.value[0] == pytest.approx(x, abs=1e-12)


def test_adam_zero_lr_is_noop():
    p = Parameter(Tensor(np.array([1.0, 2.0])), "p")
    before = p.value.tobytes()
    nn.adam_step([p], [np.array([1.0, -1.0])], lr=0.0)
    assert p.value.tobytes() == before


def test_rel_error_definition():
    assert rel_error(np.array([1.0, 2.0]), np.array([1.0, 2.2])) == pytest.approx(0.2 / 2.2)
    assert rel_error(np.zeros(3), np.zeros(3)) == 0.0


def test_glorot_bounds():
    w = nn.glorot(np.random.default_rng(0), 10, 20, (10, 20))
    assert np.abs(w).max() <= np.sqrt(6 / 30)
