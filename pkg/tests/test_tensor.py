import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tpdrseg import tensor as T
from tpdrseg.errors import DimensionError, NumericError
from tpdrseg.gradcheck import finite_difference_gradcheck
from tpdrseg.optim import AdamWState, adamw_step
from tpdrseg.tensor import Tensor, no_grad


def leaf(rng, *shape, low=None):
    data = rng.standard_normal(shape)
    if low is not None:
        data = np.abs(data) + low
    return Tensor(data, requires_grad=True, dtype=np.float64)


def test_invariants_of_fresh_tensor():
    t = Tensor(np.arange(6).reshape(2, 3))
    assert t.dtype == np.float32
    assert math.prod(t.shape) == t.size
    assert t.grad is None


def test_non_grad_tensor_never_accumulates():
    rng = np.random.default_rng(0)
    a = leaf(rng, 3)
    b = Tensor(rng.standard_normal(3), dtype=np.float64)
    (a * b).sum().backward()
    assert b.grad is None
    assert a.grad.shape == a.shape


def test_backward_visits_in_reverse_recording_order():
    rng = np.random.default_rng(1)
    a, b = leaf(rng, 3, 3), leaf(rng, 3, 3)
    out = T.softmax(T.matmul(a, b) + a).sum()
    trace = []
    out.backward(trace=trace)
    assert trace == sorted(trace, reverse=True)
    assert len(trace) == 4


def test_matmul_identity_and_hand_case():
    a = np.random.default_rng(2).standard_normal((3, 3))
    assert np.array_equal(T.matmul(Tensor(np.eye(3)), Tensor(a)).data, a)
    out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[0.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[2.0], [4.0]])


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 1\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 1))))


def test_matmul_gradcheck_4x5_5x3():
    rng = np.random.default_rng(3)
    res = finite_difference_gradcheck(T.matmul, [leaf(rng, 4, 5), leaf(rng, 5, 3)])
    assert res.max_rel_error < 1e-5


def test_softmax_examples():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0], dtype=np.float64)).data, [1 / 3] * 3)
    x = 0.7
    out = T.softmax(Tensor([x, x + math.log(3)], dtype=np.float64)).data
    np.testing.assert_allclose(out, [0.25, 0.75], atol=1e-12)


def test_softmax_sum_gradient_vanishes():
    x = leaf(np.random.default_rng(4), 5)
    T.softmax(x).sum().backward()
    np.testing.assert_allclose(x.grad, 0.0, atol=1e-12)


def test_softmax_rejects_nan():
    with pytest.raises(NumericError):
        T.softmax(Tensor([0.0, float("nan")]))


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_softmax_rows_are_distributions(values):
    y = T.softmax(Tensor(np.array(values), dtype=np.float64)).data
    assert (y >= 0).all()
    assert abs(y.sum() - 1) < 1e-9


def test_l2_normalize_examples():
    np.testing.assert_allclose(T.l2_normalize(Tensor([3.0, 4.0], dtype=np.float64)).data, [0.6, 0.8])
    assert np.array_equal(T.l2_normalize(Tensor([0.0, 0.0])).data, [0.0, 0.0])
    v = np.random.default_rng(5).standard_normal(7)
    np.testing.assert_allclose(T.l2_normalize(Tensor(7.3 * v, dtype=np.float64)).data,
                               T.l2_normalize(Tensor(v, dtype=np.float64)).data, atol=1e-15)


def test_conv1x1_shapes_and_identity():
    rng = np.random.default_rng(6)
    x = Tensor(rng.standard_normal((64, 64, 8)))
    assert T.conv1x1(x, Tensor(rng.standard_normal((8, 5)))).shape == (64, 64, 5)
    assert T.conv1x1(x, Tensor(rng.standard_normal((8, 5))), stride=4).shape == (16, 16, 5)
    assert T.conv1x1(Tensor(np.ones((7, 9, 2))), Tensor(np.ones((2, 1))), stride=4).shape == (2, 3, 1)
    same = T.conv1x1(x, Tensor(np.eye(8)), Tensor(np.zeros(8)), stride=1)
    assert np.array_equal(same.data, x.data)
    with pytest.raises(DimensionError):
        T.conv1x1(x, Tensor(np.ones((3, 2))))


def test_conv1x1_gradcheck():
    rng = np.random.default_rng(7)
    for stride in (1, 2, 4):
        res = finite_difference_gradcheck(lambda x, w, b: T.conv1x1(x, w, b, stride),
                                          [leaf(rng, 8, 8, 3), leaf(rng, 3, 4), leaf(rng, 4)], max_entries=200)
        assert res.max_rel_error < 1e-5


def test_upsample_nearest():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])[..., None])
    assert T.upsample_nearest(x, 1) is x
    up = T.upsample_nearest(x, 2).data[..., 0]
    np.testing.assert_array_equal(up, [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])
    rng = np.random.default_rng(8)
    y = rng.standard_normal((3, 5, 2))
    assert np.isclose(T.upsample_nearest(Tensor(y, dtype=np.float64), 3).data.sum(), 9 * y.sum())


def test_upsample_bilinear_preserves_constants():
    out = T.upsample_bilinear(Tensor(np.full((3, 4, 2), 2.5), dtype=np.float64), 4).data
    assert out.shape == (12, 16, 2)
    np.testing.assert_allclose(out, 2.5)


def test_adamw_zero_grad_leaves_params():
    p = np.array([1.0, -2.0])
    adamw_step([p], [np.zeros(2)], AdamWState(), lr=1e-3, weight_decay=0.0)
    np.testing.assert_array_equal(p, [1.0, -2.0])


@pytest.mark.parametrize("g", [0.3, -5.0])
def test_adamw_first_step_is_lr_times_sign(g):
    p = np.array([0.5])
    adamw_step([p], [np.array([g])], AdamWState(), lr=1e-3, eps=1e-12, weight_decay=0.0)
    np.testing.assert_allclose(p, 0.5 - 1e-3 * np.sign(g), atol=1e-12)


def test_adamw_decreases_quadratic():
    x = np.array([1.0])
    state = AdamWState()
    values = [float(x[0] ** 2)]
    for _ in range(5):
        adamw_step([x], [2 * x.copy()], state, lr=0.1)
        values.append(float(x[0] ** 2))
    assert all(b < a for a, b in zip(values, values[1:]))


def test_adamw_is_deterministic():
    out = []
    for _ in range(2):
        p = np.linspace(-1, 1, 5)
        s = AdamWState()
        for k in range(3):
            adamw_step([p], [np.sin(p + k)], s, lr=0.01)
        out.append(p)
    assert np.array_equal(out[0], out[1])


def test_broadcast_mul_ones_and_zeros():
    x = Tensor(np.random.default_rng(9).standard_normal((4, 3, 2)))
    assert np.array_equal((x * Tensor(np.ones((3, 1)))).data, x.data)
    assert not (x * Tensor(np.zeros(2))).data.any()


def test_ops_are_deterministic():
    rng = np.random.default_rng(10)
    a, b = rng.standard_normal((16, 8)), rng.standard_normal((8, 16))
    r1 = T.softmax(T.matmul(Tensor(a), Tensor(b))).data
    r2 = T.softmax(T.matmul(Tensor(a), Tensor(b))).data
    assert r1.tobytes() == r2.tobytes()


def test_no_grad_records_nothing():
    a = leaf(np.random.default_rng(11), 3)
    with no_grad():
        out = a * 2
    assert not out.requires_grad


# every differentiable op, 20 seeds, 64-bit
OP_CASES = {
    "add": (lambda a, b: a + b, [(3, 4), (4,)]),
    "sub": (lambda a, b: a - b, [(3, 4), (3, 1)]),
    "mul": (lambda a, b: a * b, [(2, 3, 4), (3, 1)]),
    "div": (lambda a, b: a / b, [(3, 4), ("pos", 3, 4)]),
    "scalar_mul": (lambda a: 2.5 * a - 1.0, [(5,)]),
    "pow": (lambda a: a ** 3, [(4,)]),
    "exp": (T.exp, [(4, 2)]),
    "log": (T.log, [("pos", 4, 2)]),
    "sqrt": (T.sqrt, [("pos", 5)]),
    "sigmoid": (T.sigmoid, [(3, 3)]),
    "tanh": (T.tanh, [(3, 3)]),
    "gelu": (T.gelu, [(3, 5)]),
    "matmul_batched": (T.matmul, [(2, 3, 4), (4, 5)]),
    "softmax": (T.softmax, [(3, 6)]),
    "l2_normalize": (lambda x: T.l2_normalize(x, axis=-1), [(4, 5)]),
    "reshape": (lambda x: x.reshape(6, 2) * x.reshape(6, 2), [(3, 4)]),
    "permute": (lambda x: x.permute(2, 0, 1) * 1.5, [(2, 3, 4)]),
    "sum": (lambda x: x.sum(axis=1), [(3, 4)]),
    "mean": (lambda x: x.mean(axis=0, keepdims=True), [(3, 4)]),
    "max": (lambda x: x.max(axis=-1), [(3, 5)]),
    "min": (lambda x: x.min(), [(3, 5)]),
    "layer_norm": (lambda x, w, b: T.layer_norm(x, w, b), [(4, 6), (6,), (6,)]),
    "linear": (T.linear, [(5, 3), (3, 4), (4,)]),
    "concat": (lambda a, b: T.concat([a, b], axis=0) ** 2, [(2, 3), (4, 3)]),
    "getitem": (lambda a: a[1:3] * a[0:2], [(4, 3)]),
    "conv1x1": (lambda x, w, b: T.conv1x1(x, w, b, 2), [(6, 6, 3), (3, 2), (2,)]),
    "upsample_nearest": (lambda x: T.upsample_nearest(x, 3) ** 2, [(2, 3, 2)]),
    "upsample_bilinear": (lambda x: T.upsample_bilinear(x, 2) ** 2, [(3, 2, 2)]),
    "clamp": (lambda x: T.clamp(x, -10.0, 10.0), [(5,)]),
}


def _inputs(rng, specs):
    out = []
    for spec in specs:
        if spec and spec[0] == "pos":
            out.append(leaf(rng, *spec[1:], low=0.5))
        else:
            out.append(leaf(rng, *spec))
    return out


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_every_op_passes_gradcheck_over_seeds(name):
    fn, specs = OP_CASES[name]
    for seed in range(20):
        rng = np.random.default_rng(seed)
        res = finite_difference_gradcheck(fn, _inputs(rng, specs), seed=seed + 1000)
        assert res.max_rel_error < 1e-4, (name, seed, res.per_input)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.sampled_from(["exp", "sigmoid", "gelu", "tanh", "softmax", "sq"]),
                                         min_size=3, max_size=3))
def test_random_three_op_chains(seed, chain):
    unary = {"exp": lambda x: T.exp(x * 0.3), "sigmoid": T.sigmoid, "gelu": T.gelu, "tanh": T.tanh,
             "softmax": T.softmax, "sq": lambda x: x * x}

    def fn(x):
        for name in chain:
            x = unary[name](x)
        return x

    res = finite_difference_gradcheck(fn, [leaf(np.random.default_rng(seed), 3, 4)], seed=seed + 1)
    assert res.max_rel_error < 1e-4
