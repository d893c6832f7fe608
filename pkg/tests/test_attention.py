import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mgfa.attention import (
    AttentionHead,
    BlendWeights,
    LossWeights,
    blend,
    compute_attention,
    mse_loss,
    total_loss,
    total_loss_tensor,
)
from mgfa.masks import GroundTruthMap
from mgfa.tensor import ShapeError, Tensor, grad_check

finite = st.floats(-50, 50, allow_nan=False)


def test_attention_constant_input_uniform():
    head = AttentionHead.from_values(0.7, -1.3, 0.4)
    out = compute_attention(Tensor(np.full((2, 5, 3, 4), 1.7)), head).data
    np.testing.assert_allclose(out, 1 / 12, rtol=0, atol=1e-15)


def test_attention_zero_head_uniform():
    x = np.random.default_rng(0).normal(size=(1, 3, 4, 4))
    out = compute_attention(Tensor(x), AttentionHead.from_values(0, 0, 0)).data
    np.testing.assert_allclose(out, 1 / 16, rtol=0, atol=1e-15)


def test_attention_closed_form_hot_cell():
    k = math.log(3) / 2
    x = np.array([0.0, 0.0, 0.0, k]).reshape(1, 1, 2, 2)
    out = compute_attention(Tensor(x), AttentionHead.from_values(1, 1, 0)).data.ravel()
    # pre-softmax (0, 0, 0, 2k): e^{2k} = 3
    np.testing.assert_allclose(out, [1 / 6, 1 / 6, 1 / 6, 0.5], rtol=0, atol=1e-15)


def test_attention_uses_max_then_mean_order():
    x = np.zeros((1, 2, 1, 2))
    x[0, :, 0, 1] = [4.0, 0.0]  # max 4, mean 2 at the second cell
    only_max = compute_attention(Tensor(x), AttentionHead.from_values(1, 0)).data.ravel()
    only_mean = compute_attention(Tensor(x), AttentionHead.from_values(0, 1)).data.ravel()
    np.testing.assert_allclose(only_max[1] / only_max[0], math.exp(4), rtol=1e-12)
    np.testing.assert_allclose(only_mean[1] / only_mean[0], math.exp(2), rtol=1e-12)


@settings(max_examples=300)
@given(arrays(np.float64, (2, 3, 3, 3), elements=finite), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_attention_normalized(x, a, b, c):
    out = compute_attention(Tensor(x), AttentionHead.from_values(a, b, c)).data
    assert np.all(out >= 0) and np.all(out <= 1)
    np.testing.assert_allclose(out.reshape(2, -1).sum(axis=1), 1.0, rtol=0, atol=1e-9)


@given(arrays(np.float64, (1, 3, 3, 3), elements=st.floats(-5, 5)), st.floats(-2, 2), st.floats(-2, 2),
       st.integers(-10, 10))
def test_attention_shift_invariant(x, a, b, c):
    head = AttentionHead.from_values(a, b)
    base = compute_attention(Tensor(x), head).data
    shifted = compute_attention(Tensor(x + c), head).data
    np.testing.assert_allclose(shifted, base, rtol=0, atol=1e-9)


# -------------------------------------------------------------------- blend


def test_blend_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        BlendWeights(0.5, 0.5, 0.5)
    with pytest.raises(ValueError):
        BlendWeights(1.2, -0.2, 0.0)
    assert BlendWeights() == BlendWeights(0.3, 0.5, 0.2)


def test_blend_identity_bit_exact():
    rng = np.random.default_rng(1)
    m = rng.normal(size=(2, 4, 3, 3))
    v, c = rng.random((2, 1, 3, 3)), rng.random((2, 1, 3, 3))
    out = blend(Tensor(m), Tensor(v), Tensor(c), BlendWeights(1, 0, 0)).data
    assert np.array_equal(out, m)


def test_blend_uniform_maps_scalar_factor():
    h, w = 3, 4
    m = np.random.default_rng(2).normal(size=(1, 5, h, w))
    u = np.full((1, 1, h, w), 1 / (h * w))
    out = blend(Tensor(m), Tensor(u), Tensor(u), BlendWeights()).data
    np.testing.assert_allclose(out, (0.3 + 0.7 / (h * w)) * m, rtol=1e-14)


def test_blend_rejects_mismatched_maps():
    with pytest.raises(ShapeError):
        blend(Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))),
              BlendWeights())


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_blend_linear_in_features(a, b):
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=(2, 1, 3, 2, 2))
    v, c = rng.random((2, 1, 1, 2, 2))
    f = lambda z: blend(Tensor(z), Tensor(v), Tensor(c), BlendWeights()).data  # noqa: E731
    np.testing.assert_allclose(f(a * x + b * y), a * f(x) + b * f(y), rtol=0, atol=1e-12)


# --------------------------------------------------------------------- loss


def test_mse_identical_is_zero():
    m = np.random.default_rng(4).dirichlet(np.ones(6)).reshape(1, 1, 2, 3)
    assert mse_loss(Tensor(m), Tensor(m)).item() == 0.0


def test_mse_hand_value():
    a = Tensor(np.array([1.0, 0.0]).reshape(1, 1, 1, 2))
    b = Tensor(np.array([0.0, 1.0]).reshape(1, 1, 1, 2))
    assert mse_loss(a, b).item() == 1.0


def test_mse_uniform_vs_ground_truth_map():
    u = np.full((1, 1, 2, 2), 0.25)
    assert mse_loss(Tensor(u), [GroundTruthMap(np.full((2, 2), 0.25))]).item() == 0.0


def test_mse_batch_mean():
    a = np.zeros((2, 1, 1, 2))
    b = np.zeros((2, 1, 1, 2))
    b[0, 0, 0, 0] = 1.0  # sample 0 error 1/2, sample 1 error 0
    assert mse_loss(Tensor(a), Tensor(b)).item() == 0.25


def test_mse_resolution_mismatch():
    with pytest.raises(ShapeError):
        mse_loss(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 4, 4))))


@given(arrays(np.float64, (2, 1, 2, 3), elements=st.floats(0, 1)), arrays(np.float64, (2, 1, 2, 3), elements=st.floats(0, 1)))
def test_mse_nonnegative_and_zero_iff_equal(a, b):
    v = mse_loss(Tensor(a), Tensor(b)).item()
    assert v >= 0
    assert (v == 0) == np.array_equal(a, b)


def test_total_loss_cases():
    assert total_loss(0, 0, 1.7).total == 1.7
    assert abs(total_loss(1, 1, 1).total - 1.2) < 1e-12
    assert total_loss(0, 0, 0).total == 0
    lw = LossWeights()
    assert (lw.delta, lw.lam, lw.mu) == (0.1, 0.1, 1.0)


def test_total_loss_rejects_negative():
    with pytest.raises(ValueError):
        total_loss(-0.1, 0, 0)
    with pytest.raises(ValueError):
        LossWeights(0, 0, 0)


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 10), st.floats(0, 2), st.floats(0, 2), st.floats(0.01, 2))
def test_total_loss_breakdown_invariant(v, c, ce, d, l, m):
    lb = total_loss(v, c, ce, LossWeights(d, l, m))
    assert abs(lb.total - (d * lb.vein + l * lb.con + m * lb.ce)) < 1e-9


def test_attention_blend_loss_chain_grad_check():
    rng = np.random.default_rng(5)
    m_img = rng.uniform(-1, 1, size=(2, 3, 4, 4))
    head_v = AttentionHead.from_values(1.3, -0.8, 0.1)
    head_c = AttentionHead.from_values(-0.6, 1.1, -0.2)
    gt_v = Tensor(rng.dirichlet(np.ones(16), 2).reshape(2, 1, 4, 4))
    gt_c = Tensor(rng.dirichlet(np.ones(16), 2).reshape(2, 1, 4, 4))
    readout = Tensor(rng.uniform(0.5, 1.5, size=(2, 3, 4, 4)))

    def loss(x, hv=head_v, hc=head_c):
        from mgfa.tensor import mul, sum_all

        mv, mc = compute_attention(x, hv), compute_attention(x, hc)
        feat = blend(x, mv, mc, BlendWeights())
        task = sum_all(mul(feat, readout))
        return total_loss_tensor(mse_loss(mv, gt_v), mse_loss(mc, gt_c), task, LossWeights())

    assert grad_check(loss, m_img, 1e-5) < 1e-4
    w0 = head_v.weight.data
    assert grad_check(lambda w: loss(Tensor(m_img), AttentionHead(w, head_v.bias)), w0, 1e-5) < 1e-4
