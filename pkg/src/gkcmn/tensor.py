"""Dense-array primitives: same-padded convolution, frame reshaping,
channel concatenation, activations and corner-aligned bilinear upsampling.

Arrays are plain ``numpy.ndarray`` objects laid out row-major with axis
order (channels, time, height, width). Forward paths run in float32;
pass float64 arrays to get float64 results.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.special import expit

from ._validation import FLOAT, check_random_state, check_tensor
from .exceptions import ShapeError

__all__ = [
    "ConvKernel",
    "conv2d_forward",
    "conv3d_forward",
    "conv_forward_naive",
    "reshape_frames",
    "reshape_frames_back",
    "concat_channels",
    "activation",
    "upsample_bilinear",
    "ACTIVATIONS",
]


@dataclass(frozen=True)
class ConvKernel:
    """Weights ``(C_out, C_in, [k_t,] k_h, k_w)`` and bias ``(C_out,)``."""

    weights: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        w = check_tensor(self.weights, name="kernel weights")
        if w.ndim not in (4, 5):
            raise ShapeError(f"kernel weights must have rank 4 or 5, got {w.shape}")
        if any(k % 2 == 0 for k in w.shape[2:]):
            raise ShapeError(f"kernel extents must be odd, got {w.shape[2:]}")
        b = np.zeros(w.shape[0], dtype=w.dtype) if self.bias is None else np.asarray(self.bias, dtype=w.dtype)
        if b.shape != (w.shape[0],):
            raise ShapeError(f"bias shape {b.shape} does not match {w.shape[0]} output channels")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def dims(self) -> int:
        return self.weights.ndim - 2

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def extents(self) -> tuple[int, ...]:
        return self.weights.shape[2:]

    @classmethod
    def zeros(cls, out_channels, in_channels, extents, dtype=FLOAT) -> ConvKernel:
        return cls(np.zeros((out_channels, in_channels, *extents), dtype=dtype))

    @classmethod
    def identity(cls, channels, dims=2, extent=1, dtype=FLOAT) -> ConvKernel:
        """Kernel whose centre tap copies channel ``c`` to channel ``c``."""
        w = np.zeros((channels, channels, *([extent] * dims)), dtype=dtype)
        centre = (extent // 2,) * dims
        for c in range(channels):
            w[(c, c, *centre)] = 1.0
        return cls(w)

    @classmethod
    def random(cls, out_channels, in_channels, extents, seed=None, scale=None, bias=False, dtype=FLOAT):
        """He-style normal init, ``std = scale or sqrt(2 / fan_in)``."""
        rng = check_random_state(seed)
        fan_in = in_channels * int(np.prod(extents))
        std = np.sqrt(2.0 / fan_in) if scale is None else scale
        w = (rng.standard_normal((out_channels, in_channels, *extents)) * std).astype(dtype)
        b = (rng.standard_normal(out_channels) * std).astype(dtype) if bias else None
        return cls(w, b)


def _check_conv_operands(x, kernel: ConvKernel, dims: int | None) -> np.ndarray:
    if dims is not None and kernel.dims != dims:
        raise ShapeError(f"expected a {dims}D kernel, got {kernel.dims}D")
    x = check_tensor(x, ndim=kernel.dims + 1, name="conv input")
    if x.shape[0] != kernel.in_channels:
        raise ShapeError(f"channel mismatch: input has {x.shape[0]}, kernel expects {kernel.in_channels}")
    return x


def _conv_same(x: np.ndarray, kernel: ConvKernel) -> np.ndarray:
    # shift-and-accumulate: one channel-mixing tensordot per kernel tap
    w = kernel.weights
    dtype = np.result_type(x.dtype, w.dtype)
    ext = kernel.extents
    pad = [(0, 0)] + [(k // 2, k // 2) for k in ext]
    xp = np.pad(x.astype(dtype, copy=False), pad)
    spatial = x.shape[1:]
    out = np.zeros((kernel.out_channels, *spatial), dtype=dtype)
    for taps in product(*(range(k) for k in ext)):
        window = xp[(slice(None), *(slice(t, t + n) for t, n in zip(taps, spatial)))]
        out += np.tensordot(w[(slice(None), slice(None), *taps)].astype(dtype, copy=False), window, axes=(1, 0))
    out += kernel.bias.astype(dtype).reshape((-1,) + (1,) * len(spatial))
    return out


def conv2d_forward(x, kernel: ConvKernel) -> np.ndarray:
    """Same-padded stride-1 cross-correlation of ``(C_in, H, W)`` input."""
    return _conv_same(_check_conv_operands(x, kernel, 2), kernel)


def conv3d_forward(x, kernel: ConvKernel) -> np.ndarray:
    """Same-padded stride-1 cross-correlation of ``(C_in, T, H, W)`` input."""
    return _conv_same(_check_conv_operands(x, kernel, 3), kernel)


def conv_forward_naive(x, kernel: ConvKernel) -> np.ndarray:
    """Reference convolution written as a direct loop over output cells.

    Slow on purpose; used as a test oracle. Computes in float64.
    """
    x = _check_conv_operands(x, kernel, None).astype(np.float64)
    w = kernel.weights.astype(np.float64)
    b = kernel.bias.astype(np.float64)
    ext = kernel.extents
    half = [k // 2 for k in ext]
    spatial = x.shape[1:]
    out = np.zeros((kernel.out_channels, *spatial))
    for o in range(kernel.out_channels):
        for pos in np.ndindex(*spatial):
            acc = b[o]
            for taps in np.ndindex(*ext):
                src = [p + t - h for p, t, h in zip(pos, taps, half)]
                if all(0 <= s < n for s, n in zip(src, spatial)):
                    acc += np.dot(w[(o, slice(None), *taps)], x[(slice(None), *src)])
            out[(o, *pos)] = acc
    return out


def reshape_frames(x) -> np.ndarray:
    """``(C, T, H, W)`` -> batch of T frames ``(T, C, H, W)``."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"reshape_frames expects rank 4 (C, T, H, W), got {x.shape}")
    return np.ascontiguousarray(x.transpose(1, 0, 2, 3))


def reshape_frames_back(frames) -> np.ndarray:
    """Inverse of :func:`reshape_frames`."""
    frames = np.asarray(frames)
    if frames.ndim != 4:
        raise ShapeError(f"reshape_frames_back expects rank 4 (T, C, H, W), got {frames.shape}")
    return np.ascontiguousarray(frames.transpose(1, 0, 2, 3))


def concat_channels(a, b) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != b.ndim or a.shape[1:] != b.shape[1:]:
        raise ShapeError(f"cannot concatenate {a.shape} and {b.shape} along channels")
    return np.concatenate([a, b], axis=0)


def _relu(x):
    return np.maximum(x, 0).astype(x.dtype, copy=False)


ACTIVATIONS = {
    "relu": _relu,
    "sigmoid": expit,
    "exp": np.exp,
    "identity": lambda x: x,
}


def activation(x, kind: str = "relu") -> np.ndarray:
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; choose from {sorted(ACTIVATIONS)}") from None
    return fn(np.asarray(x))


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row ``i`` holds the weights mapping input samples to output sample ``i``."""
    m = np.zeros((n_out, n_in))
    if n_in == 1 or n_out == 1:
        m[:, 0] = 1.0
        return m
    src = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(np.floor(src).astype(int), n_in - 2)
    frac = src - lo
    m[np.arange(n_out), lo] = 1.0 - frac
    m[np.arange(n_out), lo + 1] = frac
    return m


def upsample_bilinear(x, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear upsampling of ``(C, h, w)`` to ``(C, out_h, out_w)``."""
    x = check_tensor(x, ndim=3, name="upsample input")
    _, h, w = x.shape
    if out_h < h or out_w < w:
        raise ShapeError(f"upsample target ({out_h}, {out_w}) is smaller than input ({h}, {w})")
    rows = _interp_matrix(h, out_h).astype(x.dtype)
    cols = _interp_matrix(w, out_w).astype(x.dtype)
    return np.einsum("ih,chw,jw->cij", rows, x, cols)
