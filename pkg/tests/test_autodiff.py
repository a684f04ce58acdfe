"""Finite-difference checks for every autodiff op."""

import numpy as np
import pytest

import skipformer.autodiff as ad
from skipformer.autodiff import Var
from skipformer.numerics import SeededRng


def numeric_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of a scalar function of one array."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * eps)
    return g


def check_op(build, x0: np.ndarray, tol: float = 1e-7):
    """build(var) -> output Var; loss = weighted sum of the output."""
    rng = SeededRng(1)
    out_shape = np.asarray(ad.data_of(build(x0))).shape
    w = rng.normal(*(out_shape if len(out_shape) == 2 else (1, 1)))
    w = w.reshape(out_shape) if out_shape else w[0, 0]

    def loss_value(x):
        return float(np.sum(np.asarray(ad.data_of(build(x))) * w))

    v = Var(x0.copy())
    out = build(v)
    loss = ad.mul(out, Var(np.asarray(w))) if out_shape else ad.scale(out, float(w))
    total = Var(np.float64(np.sum(ad.data_of(loss))), (loss,),
                lambda g: (np.ones_like(ad.data_of(loss)) * g,))
    ad.backward(total)
    num = numeric_grad(loss_value, x0.copy())
    np.testing.assert_allclose(v.grad, num, atol=tol, rtol=1e-5)


RNG = SeededRng(123)
A = RNG.normal(3, 4)
B = RNG.normal(4, 2)
ROW = RNG.normal(1, 4)


@pytest.mark.parametrize("name,build,x0", [
    ("matmul_left", lambda x: ad.matmul(x, B), A),
    ("matmul_right", lambda x: ad.matmul(A, x), B),
    ("transpose", lambda x: ad.transpose(x), A),
    ("add_broadcast", lambda x: ad.add(A, x), ROW),
    ("mul_broadcast", lambda x: ad.mul(x, ROW), A),
    ("scale", lambda x: ad.scale(x, -2.5), A),
    ("gelu", lambda x: ad.gelu(x), A),
    ("softmax", lambda x: ad.softmax_rows(x), A),
    ("layer_norm_x", lambda x: ad.layer_norm(x, ROW, 0.5 * ROW), A),
    ("layer_norm_gain", lambda g: ad.layer_norm(A, g, 0.5 * ROW), ROW),
    ("layer_norm_bias", lambda b: ad.layer_norm(A, ROW, b), ROW),
    ("gather", lambda x: ad.gather_rows(x, [0, 2, 2, 1]), A),
    ("concat_rows", lambda x: ad.concat_rows([x, A]), A),
    ("slice_cols", lambda x: ad.slice_cols(x, 1, 3), A),
    ("concat_cols", lambda x: ad.concat_cols([x, A]), A),
    ("reshape", lambda x: ad.reshape(x, (4, 3)), A),
])
def test_op_gradients(name, build, x0):
    check_op(build, x0)


def test_cross_entropy_gradient():
    logits = RNG.normal(3, 5)
    targets = [1, 0, 4]

    def loss_value(x):
        from skipformer.numerics import cross_entropy
        return cross_entropy(x, targets)

    v = Var(logits.copy())
    loss = ad.cross_entropy(v, targets)
    ad.backward(loss)
    num = numeric_grad(loss_value, logits.copy())
    np.testing.assert_allclose(v.grad, num, atol=1e-7)


def test_plain_arrays_bypass_tape():
    out = ad.matmul(A, B)
    assert isinstance(out, np.ndarray)
    assert isinstance(ad.gelu(A), np.ndarray)


def test_grad_accumulates_across_reuse():
    v = Var(np.array([[2.0]]))
    out = ad.add(v, v)  # d(2v)/dv = 2
    ad.backward(Var(out.data, (out,), lambda g: (g,)))
    np.testing.assert_array_equal(v.grad, [[2.0]])
