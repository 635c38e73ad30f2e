import numpy as np
import pytest
from hypothesis import given, strategies as st

from sadm import autodiff as ad
from sadm.autodiff import NonFiniteError, ShapeError, Tape, TapeError, Tensor


def _unary(op):
    def f(x):
        y = op(x)
        # fixed non-uniform weights so every output entry matters differently
        return ad.sum(ad.mul(y, np.linspace(0.5, 1.5, y.size).reshape(y.shape)))
    return f


UNARY = {
    "square": ad.square,
    "silu": ad.silu,
    "tanh": ad.tanh,
    "neg": ad.neg,
    "scale": lambda x: ad.scale(x, -1.7),
    "transpose": ad.transpose,
    "reshape": lambda x: ad.reshape(x, (-1,)),
    "sum_axis0": lambda x: ad.sum(x, 0),
    "mean_axis1": lambda x: ad.mean(x, 1),
    "pairwise_diff": ad.pairwise_diff,
    "squared_l2": ad.squared_l2,
}

BINARY = {
    "add": ad.add,
    "sub": ad.sub,
    "mul": ad.mul,
    "matmul": lambda a, b: ad.matmul(a, ad.transpose(b)),
    "row_inner": ad.row_inner,
    "concat": lambda a, b: ad.concat([a, b], axis=0),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients_match_finite_differences(name):
    rng = np.random.default_rng(0)
    f = _unary(UNARY[name])
    for _ in range(100):
        x = Tensor(rng.uniform(-2, 2, (3, 4)), requires_grad=True)
        assert ad.grad_check(f, [x]) < 1e-4


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_gradients_match_finite_differences(name):
    rng = np.random.default_rng(1)
    op = BINARY[name]
    for _ in range(100):
        a = Tensor(rng.uniform(-2, 2, (3, 4)), requires_grad=True)
        b = Tensor(rng.uniform(-2, 2, (3, 4)), requires_grad=True)
        f = lambda a, b: ad.sum(ad.square(op(a, b)))
        assert ad.grad_check(f, [a, b]) < 1e-4


def test_div_sqrt_abs_away_from_kinks():
    rng = np.random.default_rng(2)
    for _ in range(100):
        a = Tensor(rng.uniform(-2, 2, (3, 4)), requires_grad=True)
        b = Tensor(rng.choice([-1, 1], (3, 4)) * rng.uniform(0.5, 2, (3, 4)), requires_grad=True)
        assert ad.grad_check(lambda a, b: ad.sum(ad.div(a, b)), [a, b]) < 1e-4
        assert ad.grad_check(lambda b: ad.sum(ad.sqrt(ad.abs(b))), [b]) < 1e-4


def test_broadcast_bias_gradient_sums_over_batch():
    w = Tensor(np.ones(3), requires_grad=True)
    x = Tensor(np.arange(6.0).reshape(2, 3))
    with Tape() as tape:
        y = ad.sum(ad.add(x, w))
    assert np.array_equal(tape.backward(y)[w], [2.0, 2.0, 2.0])


def test_operator_sugar_matches_functions():
    rng = np.random.default_rng(3)
    a = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
    b = Tensor(rng.normal(size=(2, 2)) + 3, requires_grad=True)
    with Tape() as t1:
        y1 = ((a * b - a) / b + 2.0 * a @ b).sum()
    g1 = t1.backward(y1)
    with Tape() as t2:
        y2 = ad.sum(ad.add(ad.div(ad.sub(ad.mul(a, b), a), b), ad.matmul(ad.scale(a, 2.0), b)))
    g2 = t2.backward(y2)
    assert y1.item() == y2.item()
    assert np.array_equal(g1[a], g2[a]) and np.array_equal(g1[b], g2[b])


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31))
def test_backward_is_linear(ca, cb, seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(-2, 2, (4, 3)), requires_grad=True)
    f = lambda x: ad.sum(ad.tanh(ad.matmul(x, ad.transpose(x))))
    g = lambda x: ad.sum(ad.silu(x))

    def grad(fn):
        with Tape() as tape:
            out = fn(x)
        return tape.backward(out)[x]

    combined = grad(lambda x: ad.add(ad.scale(f(x), ca), ad.scale(g(x), cb)))
    assert np.allclose(combined, ca * grad(f) + cb * grad(g), rtol=0, atol=1e-12)


def test_forward_and_backward_are_bit_deterministic():
    def run():
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(16, 5)), requires_grad=True)
        w = Tensor(rng.normal(size=(5, 5)), requires_grad=True)
        with Tape() as tape:
            y = ad.mean(ad.silu(ad.matmul(x, w)))
        g = tape.backward(y)
        return y.data.tobytes() + g[x].tobytes() + g[w].tobytes()

    assert run() == run()


def test_frozen_tensor_gets_no_gradient_but_passes_one_through():
    w = Tensor(np.ones((2, 2)))
    x = Tensor(np.ones((1, 2)), requires_grad=True)
    with Tape() as tape:
        y = ad.sum(ad.matmul(x, w))
    g = tape.backward(y)
    assert w not in g
    with pytest.raises(KeyError):
        g[w]
    assert np.array_equal(g[x], [[2.0, 2.0]])


def test_unreached_parameter_reads_zero():
    x = Tensor(np.ones(2), requires_grad=True)
    unused = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = ad.sum(x)
    assert np.array_equal(tape.backward(y)[unused], np.zeros(3))


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape, ad.no_grad():
        y = ad.sum(ad.square(x))
    assert not tape.nodes and not y.tracked


def test_tape_errors():
    x = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        v = ad.square(x)
        y = ad.sum(v)
    with pytest.raises(TapeError, match="scalar"):
        tape.backward(v)
    tape.backward(y)
    with pytest.raises(TapeError, match="already"):
        tape.backward(y)


def test_shape_errors_name_the_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError, match="add"):
        ad.add(np.ones((2, 3)), np.ones((3, 2)))
    with pytest.raises(ShapeError):
        ad.concat([np.ones((2, 3)), np.ones((2, 2))], axis=0)
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 2))).item()


def test_non_finite_values_are_rejected():
    with pytest.raises(NonFiniteError):
        Tensor([1.0, np.nan])
    with pytest.raises(NonFiniteError):
        ad.div(np.ones(2), np.zeros(2))
    with pytest.raises(NonFiniteError):
        ad.sqrt(-np.ones(2))


def test_grad_check_flags_a_wrong_gradient():
    x = Tensor(np.array([0.3, -0.7]), requires_grad=True)

    def bad(x):
        # forward is x^3 but the backward reports 2x
        return ad._emit(np.asarray((x.data**3).sum()), (x,), lambda g: (2.0 * g * x.data,), "bad")

    assert ad.grad_check(bad, [x]) > 1e-2
    with pytest.raises(ValueError, match="eps"):
        ad.grad_check(bad, [x], eps=1.0)
