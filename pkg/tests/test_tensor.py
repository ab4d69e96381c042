import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hcfmtts import tensor as T
from hcfmtts.errors import ContractError, NumericError, ShapeError
from hcfmtts.gradcheck import check_gradients
from hcfmtts.tensor import Tensor


def leaf(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


def test_matmul_identity():
    a = Tensor(np.eye(2)) @ Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(a.data, [[1, 2], [3, 4]])


def test_matmul_dot():
    assert (Tensor([[1.0, 2.0]]) @ Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_matmul_gradcheck_5x7x3():
    rng = np.random.default_rng(0)
    w = Tensor(rng.standard_normal((5, 3)))
    rep = check_gradients("matmul", lambda a, b: ((a @ b) * w).sum(),
                          [rng.standard_normal((5, 7)), rng.standard_normal((7, 3))])
    assert rep.max_rel_err < 1e-4
    assert rep.max_rel_err == max(row[-1] for row in rep.table)


def test_matmul_associative_float32():
    rng = np.random.default_rng(1)
    a, b, c = (Tensor(rng.standard_normal(s).astype(np.float32)) for s in [(3, 4), (4, 5), (5, 2)])
    np.testing.assert_allclose(((a @ b) @ c).data, (a @ (b @ c)).data, atol=1e-4)


def test_softmax_examples():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-7)
    np.testing.assert_allclose(T.softmax(Tensor([0.0, math.log(3.0)])).data, [0.25, 0.75], atol=1e-7)
    out = T.softmax(Tensor([1000.0, 1000.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [0.5, 0.5])


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
              elements=st.floats(-1e4, 1e4, allow_nan=False)))
def test_softmax_rows_sum_to_one(x):
    out = T.softmax(Tensor(x), axis=-1).data
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)


def test_softmax_mask_and_fully_masked_row():
    out = T.softmax(Tensor([[1.0, 2.0, 3.0]]), mask=np.array([[True, False, True]])).data
    assert out[0, 1] == 0.0
    np.testing.assert_allclose(out.sum(), 1.0)
    with pytest.raises(ContractError):
        T.softmax(Tensor([[1.0, 2.0]]), mask=np.array([[False, False]]))


def test_layer_norm_examples():
    np.testing.assert_array_equal(T.layer_norm(Tensor([[5.0, 5.0, 5.0]])).data, [[0.0, 0.0, 0.0]])
    np.testing.assert_allclose(T.layer_norm(Tensor([[1.0, 3.0]])).data, [[-1.0, 1.0]], atol=1e-4)


def test_layer_norm_gradcheck_4x8():
    rng = np.random.default_rng(2)
    w = Tensor(rng.standard_normal((4, 8)))
    rep = check_gradients("layer_norm", lambda x, g, b: (T.layer_norm(x, g, b) * w).sum(),
                          [rng.standard_normal((4, 8)), rng.standard_normal(8), rng.standard_normal(8)])
    assert rep.passed


def test_backward_sum_gives_ones():
    x = leaf(np.random.default_rng(3).standard_normal((2, 3, 4)))
    T.backward(x.sum())
    np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))


def test_backward_half_square_gives_x():
    x = leaf([1.5, -2.0, 0.25])
    T.backward((x * x).sum() * 0.5)
    np.testing.assert_allclose(x.grad, x.data)


def test_backward_accumulates_until_reset():
    x = leaf([1.0, 2.0])
    T.backward(x.sum())
    T.backward(x.sum())
    np.testing.assert_array_equal(x.grad, [2.0, 2.0])
    x.zero_grad()
    T.backward((x * 3.0).sum())
    np.testing.assert_array_equal(x.grad, [3.0, 3.0])


def test_backward_rejects_non_scalar():
    x = leaf([1.0, 2.0])
    with pytest.raises(ContractError):
        T.backward(x * 2.0)


def test_shared_subexpression_gradient():
    # y = x*x + x uses x along two paths
    x = leaf([3.0])
    y = x * x + x
    T.backward(y.sum())
    np.testing.assert_allclose(x.grad, [7.0])


def test_broadcast_gradient_reduces_to_operand_shape():
    a = leaf(np.ones((2, 3)))
    b = leaf(np.ones(3))
    T.backward((a * b).sum())
    assert b.grad.shape == (3,)
    np.testing.assert_array_equal(b.grad, [2.0, 2.0, 2.0])


def test_dropout_eval_is_identity_and_train_is_masked():
    x = Tensor(np.arange(12.0).reshape(3, 4))
    assert T.dropout(x, 0.5, np.random.default_rng(0), training=False) is x
    y = T.dropout(x, 0.5, np.random.default_rng(0), training=True).data
    kept = y != 0
    np.testing.assert_allclose(y[kept], 2 * x.data[kept])


def test_conv1d_same_padding_matches_direct_sum():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 7, 3))
    w = rng.standard_normal((4, 3, 5))   # [c_out, c_in, k]
    b = rng.standard_normal(4)
    out = T.conv1d(Tensor(x), Tensor(w), Tensor(b)).data
    pad = np.pad(x, ((0, 0), (2, 2), (0, 0)))
    ref = np.stack([np.einsum("bkc,ock->bo", pad[:, i:i + 5], w) for i in range(7)], axis=1) + b
    np.testing.assert_allclose(out, ref, atol=1e-10)


def test_embedding_and_concat():
    table = Tensor(np.arange(8.0).reshape(4, 2))
    np.testing.assert_array_equal(T.embedding(table, np.array([3, 0])).data, [[6, 7], [0, 1]])
    c = T.concat([Tensor(np.zeros((1, 2))), Tensor(np.ones((2, 2)))], axis=0)
    assert c.shape == (3, 2)


def test_sinusoidal_encoding_forward_only():
    enc = T.sinusoidal_encoding(np.array([0.0, 1.0]), 8)
    np.testing.assert_allclose(enc[0], [0, 0, 0, 0, 1, 1, 1, 1])
    np.testing.assert_allclose(enc[1, 0], math.sin(1.0))


def test_gelu_matches_tanh_form():
    x = np.linspace(-3, 3, 13)
    ref = 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x ** 3)))
    np.testing.assert_allclose(T.gelu(Tensor(x)).data, ref, atol=1e-12)


def test_float32_default_and_float64_mode():
    assert Tensor([1, 2]).dtype == np.float32
    assert Tensor(np.array([1.0])).dtype == np.float64


def test_debug_mode_flags_non_finite(monkeypatch):
    monkeypatch.setattr(T, "DEBUG", True)
    with np.errstate(invalid="ignore"), pytest.raises(NumericError, match="log"):
        T.log(Tensor(np.array([-1.0])))
