import math

import numpy as np
import pytest

from hsaw.autodiff import (
    AdamState,
    Parameter,
    Tensor,
    adam_step,
    bce_loss,
    concat_channels,
    conv2d,
    deconv2d,
    l1_loss,
    leaky_relu,
    sigmoid,
    tanh,
)
from hsaw.autodiff.conv import conv_output_size, deconv_output_size
from hsaw.autodiff.gradcheck import TOLERANCE, run_gradcheck
from hsaw.autodiff.tensor import instance_norm, mul, relu, sum_all
from hsaw.errors import DomainError, ShapeError, TrainingError
from hsaw.rng import SplitMix64, derive_seed


def conv_oracle(x, w, b, stride, pad):
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for a in range(n):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = b[o]
                    for c in range(cin):
                        for p in range(k):
                            for q in range(k):
                                acc += xp[a, c, i * stride + p, j * stride + q] * w[o, c, p, q]
                    out[a, o, i, j] = acc
    return out


def rnd(seed, *shape):
    return SplitMix64(seed).normal(int(np.prod(shape))).reshape(shape)


# rng --------------------------------------------------------------------------

def test_splitmix_reference_vector():
    # first outputs of the reference splitmix64 generator seeded with 0
    out = SplitMix64(0).next_u64(2)
    assert int(out[0]) == 0xE220A8397B1DCDAF
    assert int(out[1]) == 0x6E789E6AA1B965F4


def test_rng_stream_is_counter_based():
    a = SplitMix64(5)
    whole = a.next_u64(6)
    b = SplitMix64(5)
    parts = np.concatenate([b.next_u64(2), b.next_u64(4)])
    assert np.array_equal(whole, parts)


def test_derive_seed_separates_tags():
    assert derive_seed(1, "a") != derive_seed(1, "b")
    assert derive_seed(1, "a", 2) == derive_seed(1, "a", 2)


def test_uniform_range_and_normal_moments():
    u = SplitMix64(3).uniform(20000)
    assert u.min() >= 0 and u.max() < 1
    z = SplitMix64(3).normal(20000)
    assert abs(z.mean()) < 0.03 and abs(z.std() - 1) < 0.03


# conv -------------------------------------------------------------------------

def test_conv_scalar_kernel():
    x = Tensor(np.ones((1, 1, 3, 3)))
    y = conv2d(x, Tensor(np.full((1, 1, 1, 1), 2.0)), Tensor(np.zeros(1)))
    assert y.shape == (1, 1, 3, 3)
    assert np.all(y.data == 2.0)


def test_conv_identity_kernel():
    x = rnd(1, 1, 1, 5, 6).astype(np.float32)
    w = np.zeros((1, 1, 3, 3), dtype=np.float32)
    w[0, 0, 1, 1] = 1
    y = conv2d(Tensor(x), Tensor(w), None, 1, 1)
    assert np.array_equal(y.data, x)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
def test_conv_matches_loop_oracle(stride, pad):
    x = rnd(2, 2, 3, 8, 8)
    w = rnd(3, 4, 3, 3, 3)
    b = rnd(4, 4)
    y = conv2d(Tensor(x, dtype=np.float32), Tensor(w, dtype=np.float32), Tensor(b, dtype=np.float32), stride, pad)
    np.testing.assert_allclose(y.data, conv_oracle(x, w, b, stride, pad), atol=1e-5, rtol=0)


def test_conv_shape_errors_name_dims():
    x = Tensor(np.zeros((1, 3, 8, 8)))
    with pytest.raises(ShapeError, match="channel"):
        conv2d(x, Tensor(np.zeros((2, 4, 3, 3))))
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))))


def test_output_size_algebra():
    assert conv_output_size(64, 4, 2, 1) == 32
    assert deconv_output_size(2, 2, 2, 0) == 4
    assert deconv_output_size(8, 4, 2, 1) == 16


def test_deconv_shape_and_bias():
    y = deconv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 2, 2))), None, 2, 0)
    assert y.shape == (1, 1, 4, 4)
    z = deconv2d(Tensor(np.zeros((1, 2, 3, 3))), Tensor(rnd(5, 2, 3, 4, 4)), Tensor(np.array([1.0, -2.0, 0.5])), 2, 1)
    assert z.shape == (1, 3, 6, 6)
    for c, v in enumerate([1.0, -2.0, 0.5]):
        assert np.all(z.data[0, c] == np.float32(v))


@pytest.mark.parametrize("stride,pad,k", [(1, 0, 3), (2, 1, 4), (2, 0, 2)])
def test_deconv_is_conv_input_gradient(stride, pad, k):
    x = Tensor(rnd(6, 2, 3, 8, 8), requires_grad=True, dtype=np.float64)
    w = rnd(7, 5, 3, k, k)
    y = conv2d(x, Tensor(w, dtype=np.float64), None, stride, pad)
    g = rnd(8, *y.shape)
    sum_all(mul(y, Tensor(g, dtype=np.float64))).backward()
    d = deconv2d(Tensor(g, dtype=np.float64), Tensor(w, dtype=np.float64), None, stride, pad)
    np.testing.assert_allclose(d.data[:, :, :8, :8], x.grad, atol=1e-10)


def test_conv_deconv_adjoint_inner_product():
    x = rnd(9, 1, 2, 8, 8)
    w = rnd(10, 3, 2, 4, 4)
    y = rnd(11, 1, 3, 4, 4)
    cx = conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64), None, 2, 1).data
    dy = deconv2d(Tensor(y, dtype=np.float64), Tensor(w, dtype=np.float64), None, 2, 1).data
    assert abs(np.sum(cx * y) - np.sum(x * dy)) < 1e-5


# pointwise and losses ---------------------------------------------------------

def test_pointwise_examples():
    assert leaky_relu(Tensor(np.array([-1.0])), 0.2).item() == pytest.approx(-0.2)
    x = Tensor(rnd(12, 3, 4))
    assert l1_loss(x, x).item() == 0.0
    assert bce_loss(Tensor(np.array([0.5])), 1.0).item() == pytest.approx(math.log(2), abs=1e-6)
    assert sigmoid(Tensor(np.array([0.0]))).item() == 0.5
    assert tanh(Tensor(np.array([0.0]))).item() == 0.0
    assert relu(Tensor(np.array([-3.0, 2.0]))).data.tolist() == [0.0, 2.0]


def test_sigmoid_saturates_without_overflow():
    with np.errstate(over="raise", invalid="raise"):
        s = sigmoid(Tensor(np.array([-1000.0, 1000.0], dtype=np.float32))).data
    assert s[0] == 0.0 and s[1] == 1.0


def test_bce_rejects_out_of_range():
    with pytest.raises(DomainError):
        bce_loss(Tensor(np.array([0.0, 0.5])), 1.0)
    with pytest.raises(DomainError):
        bce_loss(Tensor(np.array([1.2])), 0.0)


def test_concat_and_l1_shape_checks():
    a, b = Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 2, 4, 4)))
    assert concat_channels(a, b).shape == (1, 3, 4, 4)
    with pytest.raises(ShapeError):
        concat_channels(a, Tensor(np.zeros((1, 2, 4, 5))))
    with pytest.raises(ShapeError):
        l1_loss(a, b)


def test_instance_norm_statistics():
    x = Tensor(rnd(13, 2, 3, 5, 5) * 4 + 1)
    y = instance_norm(x).data
    np.testing.assert_allclose(y.mean(axis=(2, 3)), 0, atol=1e-5)
    np.testing.assert_allclose(y.std(axis=(2, 3)), 1, atol=1e-3)


# backward ---------------------------------------------------------------------

def test_linear_gradient():
    x = rnd(14, 6)
    w = Parameter(np.zeros(6), "w")
    sum_all(mul(w, Tensor(x))).backward()
    np.testing.assert_allclose(w.grad, x.astype(np.float32))


def test_backward_needs_scalar():
    w = Parameter(np.ones(3), "w")
    with pytest.raises(ShapeError):
        mul(w, 2.0).backward()


def test_shared_subexpression_accumulates():
    w = Parameter(np.array([3.0]), "w")
    y = mul(w, w) + w  # d/dw = 2w + 1
    y.sum().backward()
    assert w.grad[0] == pytest.approx(7.0)


def test_gradients_are_deterministic():
    def run():
        w = Parameter(rnd(15, 2, 1, 3, 3), "w")
        x = Tensor(rnd(16, 1, 1, 6, 6))
        sum_all(tanh(conv2d(x, w, None, 1, 1))).backward()
        return w.grad

    assert np.array_equal(run(), run())


def test_gradcheck_suite_passes():
    results = run_gradcheck(n_seeds=20)
    assert len({r.op for r in results}) >= 12
    assert len({r.seed for r in results}) >= 20
    worst = max(r.max_rel_error for r in results)
    assert worst < TOLERANCE, worst


def test_random_op_chains_stay_finite():
    ops = [
        lambda t: leaky_relu(t),
        lambda t: sigmoid(t),
        lambda t: tanh(t),
        lambda t: relu(t),
        lambda t: instance_norm(t),
        lambda t: mul(t, 3.0),
        lambda t: t + t,
    ]
    r = SplitMix64(17)
    for i in range(1000):
        x = Tensor(r.normal(16).reshape(1, 1, 4, 4) * 5, requires_grad=True)
        y = x
        for j in r.next_u64(4) % np.uint64(len(ops)):
            y = ops[int(j)](y)
        y.mean().backward()
        assert np.all(np.isfinite(y.data)) and np.all(np.isfinite(x.grad)), i


# adam -------------------------------------------------------------------------

def test_adam_first_step_magnitude_is_lr():
    p = Parameter(np.array([1.0]), "p")
    p.grad = np.array([0.37], dtype=np.float32)
    adam_step([p], AdamState(lr=0.01))
    assert abs(1.0 - p.data[0]) == pytest.approx(0.01, rel=1e-4)
    assert p.grad is None


def test_adam_zero_grad_keeps_param_and_decays_moments():
    p = Parameter(np.array([2.0]), "p")
    st = AdamState(lr=0.1)
    p.grad = np.array([1.0], dtype=np.float32)
    adam_step([p], st)
    m1 = st.m["p"].copy()
    v1 = st.v["p"].copy()
    p.grad = np.zeros(1, dtype=np.float32)
    adam_step([p], st)
    np.testing.assert_allclose(st.m["p"], st.beta1 * m1, rtol=1e-6)
    np.testing.assert_allclose(st.v["p"], st.beta2 * v1, rtol=1e-6)
    assert st.step == 2
    # a parameter that has only ever seen zero gradients does not move
    q = Parameter(np.array([2.0]), "q")
    q.grad = np.zeros(1, dtype=np.float32)
    adam_step([q], AdamState())
    assert q.data[0] == 2.0


def test_adam_converges_on_quadratic():
    w = Parameter(np.array([0.0]), "w")
    st = AdamState(lr=0.1, beta1=0.9)
    for _ in range(100):
        d = w + (-3.0)
        mul(d, d).sum().backward()
        adam_step([w], st)
    assert abs(w.data[0] - 3.0) < 0.05


def test_adam_rejects_missing_grads():
    with pytest.raises(TrainingError, match="w"):
        adam_step([Parameter(np.ones(2), "w")], AdamState())
