"""scikit-learn style wrappers.

``GaussianTargetEncoder`` is a stateless transformer from box lists to
``GaussianTargets``. ``GKCMN`` draws seeded weights in ``fit`` from the
input shapes; ``transform`` returns the trunk output M_mix and
``predict`` the decoded tube per video.

A sample is one video: a ``(visual, sentence)`` pair with shapes
``(d, T, h, w)`` and ``(N, D)``. Methods accept one pair or a list.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .exceptions import ShapeError
from .pipeline import GKCMNWeights, ModelConfig, forward, prediction_record
from .spatial import BoundingBox, encode_gaussian_targets
from .tensor import ACTIVATIONS


def _as_samples(X) -> list:
    if isinstance(X, tuple) and len(X) == 2 and np.ndim(X[0]) == 4:
        X = [X]
    samples = []
    for i, item in enumerate(X):
        try:
            visual, sentence = item
        except (TypeError, ValueError) as exc:
            raise ShapeError(f"sample {i} is not a (visual, sentence) pair") from exc
        visual = np.asarray(visual)
        sentence = np.asarray(sentence)
        if visual.ndim != 4:
            raise ShapeError(f"sample {i}: visual features must be (d, T, h, w), got {visual.shape}")
        if sentence.ndim != 2:
            raise ShapeError(f"sample {i}: sentence features must be (N, D), got {sentence.shape}")
        samples.append((visual, sentence))
    if not samples:
        raise ShapeError("no samples given")
    return samples


def _as_boxes(video) -> list:
    out = []
    for t, box in video:
        if not isinstance(box, BoundingBox):
            box = BoundingBox(*map(float, box))
        out.append((int(t), box))
    return out


class GaussianTargetEncoder(TransformerMixin, BaseEstimator):
    """Encode per-video ``[(t, box), ...]`` lists into heatmap/size/mask targets.

    ``sigma=None`` is the adaptive width; a float fixes it.
    """

    def __init__(self, map_size=16, sigma=None, frame_height=224, frame_width=224, num_frames=None):
        self.map_size = map_size
        self.sigma = sigma
        self.frame_height = frame_height
        self.frame_width = frame_width
        self.num_frames = num_frames

    def fit(self, X=None, y=None):
        if int(self.map_size) < 2:
            raise ValueError("map_size must be >= 2")
        if self.sigma is not None and not float(self.sigma) > 0:
            raise ValueError("sigma must be positive")
        self.n_features_in_ = 4
        return self

    def transform(self, X) -> list:
        return [
            encode_gaussian_targets(
                _as_boxes(video), self.frame_height, self.frame_width,
                int(self.map_size), self.sigma, self.num_frames,
            )
            for video in X
        ]


class GKCMN(BaseEstimator):
    """Forward-only grounding model with seeded random (or supplied) weights."""

    def __init__(
        self,
        map_size=16,
        proj_dim=16,
        c1=16,
        c2=16,
        n_blocks=1,
        k2=3,
        k3=3,
        activation="relu",
        frame_height=224,
        frame_width=224,
        scales=None,
        stride_fraction=0.25,
        random_state=0,
        weights=None,
    ):
        self.map_size = map_size
        self.proj_dim = proj_dim
        self.c1 = c1
        self.c2 = c2
        self.n_blocks = n_blocks
        self.k2 = k2
        self.k3 = k3
        self.activation = activation
        self.frame_height = frame_height
        self.frame_width = frame_width
        self.scales = scales
        self.stride_fraction = stride_fraction
        self.random_state = random_state
        self.weights = weights

    def _config(self) -> ModelConfig:
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        return ModelConfig(
            map_size=self.map_size, proj_dim=self.proj_dim, c1=self.c1, c2=self.c2,
            n_blocks=self.n_blocks, k2=self.k2, k3=self.k3, activation=self.activation,
            frame_height=self.frame_height, frame_width=self.frame_width,
            scales=None if self.scales is None else tuple(self.scales),
            stride_fraction=self.stride_fraction,
        )

    def fit(self, X, y=None):
        samples = _as_samples(X)
        d = {v.shape[0] for v, _ in samples}
        D = {s.shape[1] for _, s in samples}
        if len(d) != 1 or len(D) != 1:
            raise ShapeError(f"samples disagree on feature dims: visual {sorted(d)}, word {sorted(D)}")
        self.config_ = self._config()
        if self.weights is not None:
            self.weights_ = self.weights
        else:
            self.weights_ = GKCMNWeights.random(d.pop(), D.pop(), self.config_, seed=self.random_state)
        self.n_features_in_ = self.weights_.fusion.visual_dim
        return self

    def _check_fitted(self):
        if not hasattr(self, "weights_"):
            raise NotFittedError("call fit before transform or predict")

    def forward(self, X) -> list:
        """Full ``ForwardOutput`` per sample."""
        self._check_fitted()
        return [forward(v, s, self.weights_, self.config_) for v, s in _as_samples(X)]

    def transform(self, X) -> list:
        return [out.m_mix for out in self.forward(X)]

    def predict(self, X) -> list:
        """Prediction records (tube interval, confidence, per-frame boxes)."""
        return [prediction_record(f"video{i}", out, self.config_) for i, out in enumerate(self.forward(X))]
