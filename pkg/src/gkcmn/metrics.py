"""Grounding metrics: temporal IoU, vIoU, vIoU@R and corpus means.

A frame ``t`` belongs to a (possibly fractional) interval ``[s, e)`` when
``floor(s) <= t < ceil(e)``, i.e. boundaries are rounded out to the frame
that contains them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError
from .spatial import box_iou
from .temporal import TemporalInterval, tiou

DEFAULT_THRESHOLDS = (0.3, 0.5)

__all__ = ["GroundingResult", "MetricsReport", "frames_of", "tiou", "viou", "viou_at_r", "aggregate"]


def frames_of(interval: TemporalInterval) -> range:
    return range(math.floor(interval.start), math.ceil(interval.end))


@dataclass(frozen=True)
class GroundingResult:
    gt_interval: TemporalInterval
    pred_interval: TemporalInterval
    gt_boxes: dict
    pred_boxes: dict

    def __post_init__(self):
        for name, interval, boxes in (
            ("gt", self.gt_interval, self.gt_boxes),
            ("pred", self.pred_interval, self.pred_boxes),
        ):
            expected = set(frames_of(interval))
            if set(boxes) != expected:
                missing = sorted(expected - set(boxes))
                extra = sorted(set(boxes) - expected)
                raise DomainError(f"{name} boxes must cover exactly frames of the interval; missing={missing} extra={extra}")


def exceeds(value: float, r: float) -> bool:
    """Threshold predicate shared by every @R metric."""
    return value > r


def viou(r: GroundingResult) -> float:
    gt = set(frames_of(r.gt_interval))
    pred = set(frames_of(r.pred_interval))
    union = gt | pred
    if not union:
        raise DomainError("vIoU undefined: empty frame union")
    return sum(box_iou(r.pred_boxes[t], r.gt_boxes[t]) for t in sorted(gt & pred)) / len(union)


def viou_at_r(results, R: float) -> float:
    results = list(results)
    if not results:
        raise DomainError("vIoU@R needs at least one result")
    return sum(exceeds(viou(r), R) for r in results) / len(results)


@dataclass(frozen=True)
class MetricsReport:
    m_tiou: float
    m_viou: float
    viou_at: dict
    n_videos: int

    def to_dict(self) -> dict:
        return {
            "m_tiou": self.m_tiou,
            "m_viou": self.m_viou,
            "viou_at": {str(k): v for k, v in self.viou_at.items()},
            "n_videos": self.n_videos,
        }


def aggregate(results, thresholds=DEFAULT_THRESHOLDS) -> MetricsReport:
    results = list(results)
    if not results:
        raise DomainError("cannot aggregate an empty result list")
    t = np.array([tiou(r.pred_interval, r.gt_interval) for r in results])
    v = np.array([viou(r) for r in results])
    return MetricsReport(
        m_tiou=float(t.mean()),
        m_viou=float(v.mean()),
        viou_at={R: float(np.mean([exceeds(x, R) for x in v])) for R in thresholds},
        n_videos=len(results),
    )


def result_from_boxes(gt_interval, gt_boxes, pred_interval, pred_boxes) -> GroundingResult:
    """Build a result, keeping only predicted boxes inside ``pred_interval``.

    Raises if a frame of ``pred_interval`` has no predicted box.
    """
    frames = frames_of(pred_interval)
    missing = [t for t in frames if t not in pred_boxes]
    if missing:
        raise DomainError(f"no predicted box for frames {missing}")
    kept = {t: pred_boxes[t] for t in frames}
    return GroundingResult(gt_interval, pred_interval, dict(gt_boxes), kept)

