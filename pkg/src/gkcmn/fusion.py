"""Cross-modal interaction of visual feature maps with a sentence feature.

The fused tensor is::

    F1 = g(V Wv1) * g(S_r Ws1)
    F2 = concat(g(F1 Wf2), g(V Wv2))

where every product with a weight matrix is a per-location channel mix and
``S_r`` is the mean-pooled sentence vector repeated over (T, h, w).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import FLOAT, check_random_state, check_tensor
from .exceptions import ShapeError
from .tensor import ACTIVATIONS, activation, concat_channels


@dataclass(frozen=True)
class VisualFeatureMap:
    """Visual features ``(d, T, H / r_h, W / r_w)`` plus source frame size."""

    tensor: np.ndarray
    frame_height: int | None = None
    frame_width: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "tensor", check_tensor(self.tensor, ndim=4, name="visual features"))

    @property
    def feature_dim(self) -> int:
        return self.tensor.shape[0]

    @property
    def frame_count(self) -> int:
        return self.tensor.shape[1]

    @property
    def scale_factors(self) -> tuple[float, float] | None:
        if self.frame_height is None or self.frame_width is None:
            return None
        return self.frame_height / self.tensor.shape[2], self.frame_width / self.tensor.shape[3]


@dataclass(frozen=True)
class SentenceFeature:
    """Word features ``(N, D)``."""

    tensor: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.tensor)
        if arr.ndim == 2 and arr.shape[0] == 0:
            raise ShapeError("sentence has no words")
        object.__setattr__(self, "tensor", check_tensor(arr, ndim=2, name="sentence features"))

    @property
    def word_count(self) -> int:
        return self.tensor.shape[0]

    @property
    def word_dim(self) -> int:
        return self.tensor.shape[1]

    def pooled(self) -> np.ndarray:
        return self.tensor.mean(axis=0)


@dataclass(frozen=True)
class FusionWeights:
    """Projection matrices, each stored as ``(in_dim, out_dim)``."""

    W_v1: np.ndarray
    W_s1: np.ndarray
    W_f2: np.ndarray
    W_v2: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        for name in ("W_v1", "W_s1", "W_f2", "W_v2"):
            object.__setattr__(self, name, check_tensor(getattr(self, name), ndim=2, name=name))
        if self.W_v1.shape[1] != self.W_s1.shape[1]:
            raise ShapeError(
                f"W_v1 projects to {self.W_v1.shape[1]} channels but W_s1 to {self.W_s1.shape[1]}"
            )
        if self.W_f2.shape[0] != self.W_v1.shape[1]:
            raise ShapeError(f"W_f2 expects {self.W_f2.shape[0]} inputs, F_f1 has {self.W_v1.shape[1]}")
        if self.W_v1.shape[0] != self.W_v2.shape[0]:
            raise ShapeError("W_v1 and W_v2 disagree on the visual feature dim")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def visual_dim(self) -> int:
        return self.W_v1.shape[0]

    @property
    def word_dim(self) -> int:
        return self.W_s1.shape[0]

    @property
    def out_channels(self) -> int:
        return self.W_f2.shape[1] + self.W_v2.shape[1]

    @classmethod
    def random(cls, visual_dim=32, word_dim=32, proj_dim=16, c1=16, c2=16, activation="relu", seed=None):
        rng = check_random_state(seed)

        def mat(n_in, n_out):
            return (rng.standard_normal((n_in, n_out)) / np.sqrt(n_in)).astype(FLOAT)

        return cls(mat(visual_dim, proj_dim), mat(word_dim, proj_dim), mat(proj_dim, c1), mat(visual_dim, c2), activation)


@dataclass(frozen=True)
class FusedFeature:
    """Fused tensor ``(c1 + c2, T, h, w)``."""

    tensor: np.ndarray


def repeat_sentence(s, T: int, h: int, w: int) -> np.ndarray:
    """Broadcast a pooled sentence vector ``(D,)`` to ``(D, T, h, w)``."""
    vec = s.pooled() if isinstance(s, SentenceFeature) else np.asarray(s)
    if vec.ndim != 1 or vec.size == 0:
        raise ShapeError(f"expected a pooled (D,) sentence vector, got shape {vec.shape}")
    return np.broadcast_to(vec[:, None, None, None], (vec.size, T, h, w)).copy()


def _project(x: np.ndarray, W: np.ndarray, name: str) -> np.ndarray:
    if x.shape[0] != W.shape[0]:
        raise ShapeError(f"{name} expects {W.shape[0]} input channels, got {x.shape[0]}")
    return np.tensordot(W.T, x, axes=(1, 0))


def cross_modal_fuse(v, s, weights: FusionWeights) -> FusedFeature:
    V = v.tensor if isinstance(v, VisualFeatureMap) else check_tensor(v, ndim=4, name="visual features")
    if not isinstance(s, SentenceFeature):
        s = SentenceFeature(s)
    g = weights.activation
    S_r = repeat_sentence(s, *V.shape[1:]).astype(V.dtype)
    f1 = activation(_project(V, weights.W_v1, "W_v1"), g) * activation(_project(S_r, weights.W_s1, "W_s1"), g)
    f2 = concat_channels(
        activation(_project(f1, weights.W_f2, "W_f2"), g),
        activation(_project(V, weights.W_v2, "W_v2"), g),
    )
    return FusedFeature(f2)
