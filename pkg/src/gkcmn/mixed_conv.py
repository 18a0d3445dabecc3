"""Serial, parallel and mixed 2D/3D convolution networks.

    serial   = K3s * back(K2 * frames(F))
    parallel = K3p * F + back(K2 * frames(F))
    mixed    = K3m * F + serial + F
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_random_state, check_tensor
from .exceptions import ShapeError
from .tensor import ConvKernel, conv2d_forward, conv3d_forward, reshape_frames, reshape_frames_back


@dataclass(frozen=True)
class MixedConvWeights:
    k2: ConvKernel
    k3_serial: ConvKernel
    k3_parallel: ConvKernel
    k3_mixed: ConvKernel

    def __post_init__(self):
        if self.k2.dims != 2:
            raise ShapeError("k2 must be a 2D kernel")
        channels = self.k2.in_channels
        for name in ("k2", "k3_serial", "k3_parallel", "k3_mixed"):
            k = getattr(self, name)
            if name != "k2" and k.dims != 3:
                raise ShapeError(f"{name} must be a 3D kernel")
            if k.in_channels != channels or k.out_channels != channels:
                raise ShapeError(f"{name} must map {channels} channels to {channels}")

    @property
    def channels(self) -> int:
        return self.k2.in_channels

    @classmethod
    def zeros(cls, channels, k2=3, k3=3) -> MixedConvWeights:
        return cls(
            ConvKernel.zeros(channels, channels, (k2, k2)),
            *(ConvKernel.zeros(channels, channels, (k3, k3, k3)) for _ in range(3)),
        )

    @classmethod
    def identity(cls, channels) -> MixedConvWeights:
        return cls(ConvKernel.identity(channels, 2), *(ConvKernel.identity(channels, 3) for _ in range(3)))

    @classmethod
    def random(cls, channels, k2=3, k3=3, seed=None, scale=None) -> MixedConvWeights:
        rng = check_random_state(seed)
        return cls(
            ConvKernel.random(channels, channels, (k2, k2), rng, scale),
            *(ConvKernel.random(channels, channels, (k3, k3, k3), rng, scale) for _ in range(3)),
        )


def _fused(f) -> np.ndarray:
    return check_tensor(f, ndim=4, name="fused feature")


def _check_channels(x: np.ndarray, w: MixedConvWeights) -> None:
    if x.shape[0] != w.channels:
        raise ShapeError(f"fused feature has {x.shape[0]} channels, weights expect {w.channels}")


def per_frame_conv2d(x, kernel: ConvKernel) -> np.ndarray:
    """Apply a 2D kernel to every frame of a ``(C, T, H, W)`` tensor."""
    frames = reshape_frames(x)
    return reshape_frames_back(np.stack([conv2d_forward(fr, kernel) for fr in frames]))


def serial_forward(f, w: MixedConvWeights) -> np.ndarray:
    x = _fused(f)
    _check_channels(x, w)
    return conv3d_forward(per_frame_conv2d(x, w.k2), w.k3_serial)


def parallel_forward(f, w: MixedConvWeights) -> np.ndarray:
    x = _fused(f)
    _check_channels(x, w)
    return conv3d_forward(x, w.k3_parallel) + per_frame_conv2d(x, w.k2)


def mixed_forward(f, w: MixedConvWeights) -> np.ndarray:
    x = _fused(f)
    _check_channels(x, w)
    return conv3d_forward(x, w.k3_mixed) + serial_forward(x, w) + x


def mixed_network(f, blocks) -> np.ndarray:
    """Chain :func:`mixed_forward` over a sequence of block weights."""
    if isinstance(blocks, MixedConvWeights):
        blocks = [blocks]
    x = _fused(f)
    for w in blocks:
        x = mixed_forward(x, w)
    return x
