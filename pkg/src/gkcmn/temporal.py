"""Temporal head: sliding-window candidate tubes, IoU-target labelling,
smooth-L1 confidence and boundary losses, tube selection, and a small
convolutional embedding that scores candidates from the trunk output.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from ._validation import FLOAT, check_random_state, check_tensor
from .exceptions import DomainError, ShapeError
from .tensor import ConvKernel, conv3d_forward

CONFIDENCE_THRESHOLD = 0.3


@dataclass(frozen=True)
class TemporalInterval:
    """Half-open ``[start, end)`` in feature steps."""

    start: float
    end: float

    def __post_init__(self):
        if not self.start < self.end:
            raise DomainError(f"empty interval [{self.start}, {self.end})")

    @property
    def length(self) -> float:
        return self.end - self.start

    def check_within(self, T) -> None:
        if self.start < 0 or self.end > T:
            raise DomainError(f"interval [{self.start}, {self.end}) leaves [0, {T}]")


def tiou(a: TemporalInterval, b: TemporalInterval) -> float:
    inter = max(0.0, min(a.end, b.end) - max(a.start, b.start))
    return inter / (a.length + b.length - inter)


@dataclass(frozen=True)
class TubeCandidate:
    interval: TemporalInterval
    target_iou: float = 0.0
    predicted_score: float = 0.0
    offset_target: tuple[float, float] = (0.0, 0.0)
    offset_pred: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class CandidateScheme:
    scales: tuple[int, ...]
    sequence_length: int
    stride_fraction: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(int(s) for s in self.scales))
        if not self.scales:
            raise DomainError("candidate scheme needs at least one scale")
        if self.stride_fraction <= 0:
            raise DomainError("stride_fraction must be positive")
        for s in self.scales:
            if not 1 <= s <= self.sequence_length:
                raise DomainError(f"scale {s} outside [1, {self.sequence_length}]")

    @classmethod
    def default(cls, T: int, stride_fraction=0.25) -> CandidateScheme:
        """Scales ``{T/8, T/4, T/2, T}`` rounded, dropping empties and repeats."""
        scales = sorted({max(1, round(T * f)) for f in (0.125, 0.25, 0.5, 1.0)})
        return cls(tuple(scales), T, stride_fraction)

    def stride(self, scale: int) -> int:
        return max(1, int(scale * self.stride_fraction))


def generate_candidates(scheme: CandidateScheme) -> list[TubeCandidate]:
    seen = set()
    out = []
    for s in scheme.scales:
        step = scheme.stride(s)
        for start in range(0, scheme.sequence_length - s + 1, step):
            if (start, start + s) in seen:
                continue
            seen.add((start, start + s))
            out.append(TubeCandidate(TemporalInterval(start, start + s)))
    return out


def label_candidates(cands, gt: TemporalInterval, c=CONFIDENCE_THRESHOLD) -> list[TubeCandidate]:
    """Attach IoU targets (zeroed below ``c``) and offsets ``gt - candidate``."""
    out = []
    for cand in cands:
        iou = tiou(cand.interval, gt)
        out.append(
            replace(
                cand,
                target_iou=iou if iou >= c else 0.0,
                offset_target=(gt.start - cand.interval.start, gt.end - cand.interval.end),
            )
        )
    return out


def smooth_l1(x):
    """Elementwise smooth-L1 with transition at ``|x| = 1``, and its derivative."""
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    value = np.where(ax < 1, 0.5 * x * x, ax - 0.5)
    slope = np.where(ax < 1, x, np.sign(x))
    return value, slope


def confidence_loss_arrays(targets, scores):
    """Mean smooth-L1 of ``targets - scores`` and its gradient wrt ``scores``."""
    targets = np.asarray(targets, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    if targets.size == 0:
        raise DomainError("confidence loss needs at least one candidate")
    if targets.shape != scores.shape:
        raise ShapeError(f"targets {targets.shape} vs scores {scores.shape}")
    n = targets.size
    value, slope = smooth_l1(targets - scores)
    return float(value.sum() / n), -slope / n


def boundary_loss_arrays(offset_targets, offset_preds, weights=None):
    """Smooth-L1 over ``(n, 2)`` offsets, averaged over all ``n`` candidates.

    ``weights`` (0/1 per candidate) masks which rows are regressed.
    """
    ot = np.asarray(offset_targets, dtype=np.float64).reshape(-1, 2)
    op = np.asarray(offset_preds, dtype=np.float64).reshape(-1, 2)
    if ot.shape[0] == 0:
        raise DomainError("boundary loss needs at least one candidate")
    if ot.shape != op.shape:
        raise ShapeError(f"offset targets {ot.shape} vs predictions {op.shape}")
    w = np.ones(ot.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    n = ot.shape[0]
    value, slope = smooth_l1(ot - op)
    return float((value.sum(axis=1) * w).sum() / n), -slope * w[:, None] / n


def confidence_loss(cands):
    """Returns ``(loss, d loss / d predicted_score per candidate)``."""
    cands = list(cands)
    if not cands:
        raise DomainError("confidence loss needs at least one candidate")
    return confidence_loss_arrays([c.target_iou for c in cands], [c.predicted_score for c in cands])


def boundary_loss(cands, positives_only=True):
    """Returns ``(loss, d loss / d offset_pred, shape (n, 2))``.

    With ``positives_only`` only candidates whose ``target_iou > 0`` are
    regressed; the mean still runs over every candidate.
    """
    cands = list(cands)
    if not cands:
        raise DomainError("boundary loss needs at least one candidate")
    weights = [float(c.target_iou > 0) for c in cands] if positives_only else None
    return boundary_loss_arrays(
        [c.offset_target for c in cands], [c.offset_pred for c in cands], weights
    )


def select_tube(cands, sequence_length) -> TemporalInterval:
    """Best-scoring candidate rectified by its predicted offsets.

    Ties go to the earliest start, then the shortest window. A rectified
    interval that collapses after clamping to ``[0, T]`` falls back to the
    unrectified winner.
    """
    cands = list(cands)
    if not cands:
        raise DomainError("no candidates to select from")
    best = min(cands, key=lambda c: (-c.predicted_score, c.interval.start, c.interval.length))
    ds, de = best.offset_pred
    start = min(max(best.interval.start + ds, 0.0), sequence_length)
    end = min(max(best.interval.end + de, 0.0), sequence_length)
    if start >= end:
        return best.interval
    return TemporalInterval(start, end)


# -- embedding surrogate ------------------------------------------------------


@dataclass(frozen=True)
class TemporalHeadWeights:
    """Three parallel 3D convs (extents 1, 3, 5) and linear score/offset maps."""

    k1: ConvKernel
    k3: ConvKernel
    k5: ConvKernel
    score_w: np.ndarray
    score_b: float
    offset_w: np.ndarray
    offset_b: np.ndarray

    def __post_init__(self):
        c = self.k1.in_channels
        for name, ext in (("k1", 1), ("k3", 3), ("k5", 5)):
            k = getattr(self, name)
            if k.dims != 3 or k.in_channels != c or k.out_channels != c:
                raise ShapeError(f"{name} must be a 3D kernel mapping {c} channels to {c}")
            if k.extents[0] != ext:
                raise ShapeError(f"{name} must have temporal extent {ext}, got {k.extents[0]}")
        object.__setattr__(self, "score_w", np.asarray(self.score_w, dtype=FLOAT).reshape(c))
        object.__setattr__(self, "score_b", float(np.asarray(self.score_b).reshape(())))
        object.__setattr__(self, "offset_w", np.asarray(self.offset_w, dtype=FLOAT).reshape(2, c))
        object.__setattr__(self, "offset_b", np.asarray(self.offset_b, dtype=FLOAT).reshape(2))

    @property
    def channels(self) -> int:
        return self.k1.in_channels

    @classmethod
    def zeros(cls, channels) -> TemporalHeadWeights:
        return cls(
            *(ConvKernel.zeros(channels, channels, (k, k, k)) for k in (1, 3, 5)),
            np.zeros(channels),
            0.0,
            np.zeros((2, channels)),
            np.zeros(2),
        )

    @classmethod
    def random(cls, channels, seed=None, scale=None) -> TemporalHeadWeights:
        rng = check_random_state(seed)
        kernels = [ConvKernel.random(channels, channels, (k, k, k), rng, scale) for k in (1, 3, 5)]
        std = 1.0 / np.sqrt(channels)
        return cls(
            *kernels,
            rng.standard_normal(channels) * std,
            float(rng.standard_normal() * std),
            rng.standard_normal((2, channels)) * std,
            rng.standard_normal(2) * std,
        )


@dataclass(frozen=True)
class TemporalEmbedding:
    features: np.ndarray  # (n_candidates, D')
    scores: np.ndarray  # (n_candidates,)
    offsets: np.ndarray  # (n_candidates, 2)

    def attach(self, cands) -> list[TubeCandidate]:
        return [
            replace(c, predicted_score=float(s), offset_pred=(float(o[0]), float(o[1])))
            for c, s, o in zip(cands, self.scores, self.offsets)
        ]


def temporal_step_features(m_mix, weights: TemporalHeadWeights) -> np.ndarray:
    """Summed multi-extent 3D convs, spatially mean-pooled to ``(D', T)``."""
    x = check_tensor(m_mix, ndim=4, name="M_mix")
    if x.shape[0] != weights.channels:
        raise ShapeError(f"M_mix has {x.shape[0]} channels, temporal head expects {weights.channels}")
    y = conv3d_forward(x, weights.k1) + conv3d_forward(x, weights.k3) + conv3d_forward(x, weights.k5)
    return y.mean(axis=(2, 3))


def temporal_embed_forward(m_mix, weights: TemporalHeadWeights, cands) -> TemporalEmbedding:
    steps = temporal_step_features(m_mix, weights)
    T = steps.shape[1]
    feats = []
    for c in cands:
        lo = int(np.floor(c.interval.start))
        hi = int(np.ceil(c.interval.end))
        if lo < 0 or hi > T:
            raise ShapeError(f"candidate [{c.interval.start}, {c.interval.end}) outside {T} steps")
        feats.append(steps[:, lo:hi].mean(axis=1))
    feats = np.stack(feats) if feats else np.zeros((0, weights.channels), dtype=steps.dtype)
    scores = expit(feats @ weights.score_w + weights.score_b)
    offsets = feats @ weights.offset_w.T + weights.offset_b
    return TemporalEmbedding(feats, scores, offsets)
