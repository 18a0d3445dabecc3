import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.signal import correlate

from gkcmn.exceptions import ShapeError
from oracles import naive_bilinear
from gkcmn.tensor import (
    ConvKernel,
    activation,
    concat_channels,
    conv2d_forward,
    conv3d_forward,
    conv_forward_naive,
    reshape_frames,
    reshape_frames_back,
    upsample_bilinear,
)


def scipy_conv(x, k: ConvKernel):
    # independent oracle: zero-padded 'same' correlation summed over input channels
    x = x.astype(np.float64)
    w = k.weights.astype(np.float64)
    out = np.stack([
        sum(correlate(x[c], w[o, c], mode="same") for c in range(x.shape[0])) + k.bias[o]
        for o in range(w.shape[0])
    ])
    return out


def test_identity_kernel_2d():
    x = np.random.default_rng(0).normal(size=(3, 5, 6)).astype(np.float32)
    assert np.array_equal(conv2d_forward(x, ConvKernel.identity(3, 2)), x)


def test_all_ones_3x3_on_constant():
    k = ConvKernel(np.ones((1, 1, 3, 3), np.float32), np.zeros(1, np.float32))
    out = conv2d_forward(np.ones((1, 4, 4), np.float32), k)[0]
    assert out[0, 0] == 4 and out[0, 3] == 4 and out[3, 0] == 4 and out[3, 3] == 4
    assert out[0, 1] == 6 and out[1, 0] == 6 and out[3, 2] == 6
    assert np.all(out[1:3, 1:3] == 9)


def test_conv3d_identity_and_zero():
    x = np.random.default_rng(1).normal(size=(2, 3, 4, 5)).astype(np.float32)
    assert np.array_equal(conv3d_forward(x, ConvKernel.identity(2, 3)), x)
    assert not conv3d_forward(x, ConvKernel.zeros(2, 2, (3, 3, 3))).any()


def test_impulse_response_naive():
    rng = np.random.default_rng(2)
    k = ConvKernel.random(1, 1, (3, 5), rng)
    x = np.zeros((1, 7, 9))
    x[0, 3, 4] = 1.0
    out = conv_forward_naive(x, k)[0]
    # cross-correlation reflects the kernel around the impulse
    assert np.allclose(out[2:5, 2:7], k.weights[0, 0, ::-1, ::-1])


@pytest.mark.parametrize("dims", [2, 3])
def test_fast_matches_scipy_oracle(dims):
    rng = np.random.default_rng(dims)
    for _ in range(20):
        cin, cout = rng.integers(1, 5, size=2)
        spatial = tuple(int(n) for n in rng.integers(1, 9, size=dims))
        ext = tuple(int(e) for e in rng.choice([1, 3, 5], size=dims))
        k = ConvKernel.random(int(cout), int(cin), ext, rng, bias=True)
        x = rng.normal(size=(int(cin), *spatial)).astype(np.float32)
        fast = conv2d_forward(x, k) if dims == 2 else conv3d_forward(x, k)
        np.testing.assert_allclose(fast, scipy_conv(x, k), rtol=1e-5, atol=1e-5)
        np.testing.assert_allclose(conv_forward_naive(x, k), scipy_conv(x, k), rtol=1e-9, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_conv_linearity(seed, a, b):
    rng = np.random.default_rng(seed)
    k = ConvKernel.random(2, 3, (3, 3), rng)
    x = rng.normal(size=(3, 5, 5))
    y = rng.normal(size=(3, 5, 5))
    lhs = conv2d_forward(a * x + b * y, k)
    rhs = a * conv2d_forward(x, k) + b * conv2d_forward(y, k)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-5, atol=1e-5)


def test_conv_errors():
    k = ConvKernel.identity(2, 2)
    with pytest.raises(ShapeError):
        conv2d_forward(np.ones((3, 4, 4)), k)
    with pytest.raises(ShapeError):
        conv2d_forward(np.ones((2, 0, 4)), k)
    with pytest.raises(ShapeError):
        ConvKernel(np.ones((1, 1, 2, 3)), np.zeros(1))


def test_reshape_frames():
    x = np.arange(2 * 3 * 4 * 4, dtype=np.float32).reshape(2, 3, 4, 4)
    frames = reshape_frames(x)
    assert frames.shape == (3, 2, 4, 4)
    for t in range(3):
        assert np.array_equal(frames[t], x[:, t])
    assert np.array_equal(reshape_frames_back(frames), x)
    assert not reshape_frames(np.zeros((2, 3, 4, 4))).any()
    with pytest.raises(ShapeError):
        reshape_frames(np.ones((2, 3, 4)))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=4, max_size=4), st.integers(0, 1000))
def test_reshape_round_trip_bitwise(shape, seed):
    x = np.random.default_rng(seed).normal(size=shape).astype(np.float32)
    assert np.array_equal(reshape_frames_back(reshape_frames(x)), x)


def test_concat_channels():
    a = np.ones((2, 3, 4, 4))
    b = np.full((3, 3, 4, 4), 7.0)
    c = concat_channels(a, b)
    assert c.shape == (5, 3, 4, 4)
    assert np.array_equal(concat_channels(a, np.zeros_like(b))[:2], a)
    assert np.all(c[2] == b[0])
    with pytest.raises(ShapeError):
        concat_channels(a, np.ones((1, 3, 4, 5)))


def test_activations():
    assert np.array_equal(activation(np.array([-1.0, 0.0, 2.0]), "relu"), [0, 0, 2])
    assert activation(np.array(0.0), "sigmoid") == 0.5
    assert activation(np.array(0.0), "exp") == 1.0
    with pytest.raises(ValueError):
        activation(np.zeros(1), "tanh")


def test_upsample_examples():
    assert np.allclose(upsample_bilinear(np.array([[[1.0, 3.0]]]), 1, 3), [[[1, 2, 3]]])
    out = upsample_bilinear(np.array([[[1.0, 2.0], [3.0, 4.0]]]), 4, 4)[0]
    assert (out[0, 0], out[0, -1], out[-1, 0], out[-1, -1]) == (1, 2, 3, 4)
    assert np.allclose(upsample_bilinear(np.full((2, 3, 5), 2.5), 7, 9), 2.5)
    with pytest.raises(ShapeError):
        upsample_bilinear(np.ones((1, 4, 4)), 3, 4)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 6), st.integers(0, 6), st.integers(0, 10**6))
def test_upsample_matches_loop_and_bounds(h, w, dh, dw, seed):
    x = np.random.default_rng(seed).normal(size=(2, h, w))
    out = upsample_bilinear(x, h + dh, w + dw)
    np.testing.assert_allclose(out, naive_bilinear(x, h + dh, w + dw), atol=1e-12)
    assert out.min() >= x.min() - 1e-12 and out.max() <= x.max() + 1e-12
