"""Synthetic fit demos: free parameters driven by the heatmap, size and
temporal losses alone, standing in for end-to-end training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ._validation import check_random_state
from .optim import LossWeights, OptimizerConfig, gradient_descent
from .spatial import (
    BoundingBox,
    FocalConfig,
    GaussianTargets,
    SpatialPrediction,
    decode_boxes,
    encode_gaussian_targets,
    focal_loss_from_heatmaps,
    giou_loss,
)
from .temporal import (
    CONFIDENCE_THRESHOLD,
    CandidateScheme,
    TemporalInterval,
    boundary_loss_arrays,
    confidence_loss_arrays,
    generate_candidates,
    label_candidates,
    select_tube,
    tiou,
)

# per-demo learning rates; the generic OptimizerConfig default stays at 0.003
DEFAULT_LR = {"heatmap": 0.5, "sizes": 100.0, "temporal": 5.0}
DEFAULT_STEPS = {"heatmap": 2000, "sizes": 2000, "temporal": 2000}
# GIoU is kinked where a predicted edge meets its target; a fixed step keeps
# those cells oscillating, so the sizes demo anneals the step 100x
DEFAULT_LR_FINAL = {"heatmap": None, "sizes": 1.0, "temporal": None}


def demo_config(demo: str, steps=None, lr=None, seed=0, backtracking=False) -> OptimizerConfig:
    """Optimizer settings for ``demo``; an explicit ``lr`` keeps the decay ratio."""
    base = DEFAULT_LR[demo]
    lr = base if lr is None else float(lr)
    final = DEFAULT_LR_FINAL[demo]
    return OptimizerConfig(
        learning_rate=lr,
        steps=DEFAULT_STEPS[demo] if steps is None else int(steps),
        seed=seed,
        backtracking=backtracking,
        lr_final=None if final is None else lr * final / base,
    )
INIT_RANGE = 0.1


@dataclass
class FitResult:
    loss_curve: list
    params: np.ndarray
    converged: bool
    extra: dict = field(default_factory=dict)

    @property
    def initial_loss(self) -> float:
        return self.loss_curve[0]

    @property
    def final_loss(self) -> float:
        return self.loss_curve[-1]

    def summary(self) -> dict:
        return {
            "initial": self.initial_loss,
            "final": self.final_loss,
            "steps": len(self.loss_curve) - 1,
            "converged": bool(self.converged),
            **self.extra,
        }


def _init(shape, seed) -> np.ndarray:
    return check_random_state(seed).uniform(-INIT_RANGE, INIT_RANGE, size=shape)


def random_box(rng, L=16, frame_h=224, frame_w=224, min_cells=4) -> BoundingBox:
    """Pixel box spanning at least ``min_cells`` feature cells per side."""
    sx, sy = frame_w / L, frame_h / L
    w = rng.uniform(min_cells, L - 1)
    h = rng.uniform(min_cells, L - 1)
    x1 = rng.uniform(0, L - w)
    y1 = rng.uniform(0, L - h)
    return BoundingBox(x1 * sx, y1 * sy, (x1 + w) * sx, (y1 + h) * sy)


def synthetic_targets(seed=0, num_frames=1, L=16, frame_h=224, frame_w=224, sigma=1.0) -> GaussianTargets:
    rng = check_random_state(seed)
    boxes = [(t, random_box(rng, L, frame_h, frame_w)) for t in range(num_frames)]
    return encode_gaussian_targets(boxes, frame_h, frame_w, L, sigma=sigma, num_frames=num_frames, dtype=np.float64)


def synthetic_interval(seed=0, T=32, min_length=4) -> TemporalInterval:
    """Integer ground-truth interval of at least ``min_length`` steps inside ``[0, T)``."""
    rng = check_random_state(seed)
    length = int(rng.integers(min_length, T + 1))
    start = int(rng.integers(0, T - length + 1))
    return TemporalInterval(float(start), float(start + length))


def fit_heatmap_demo(targets: GaussianTargets, cfg: OptimizerConfig, focal=FocalConfig(), init=None) -> FitResult:
    """Fit logits ``theta`` with ``sigmoid(theta)`` as the predicted heatmap.

    Converged means the final focal loss is at most 1% of the initial one.
    """
    heat = targets.heatmaps.astype(np.float64)

    def loss_fn(theta):
        p = expit(theta)
        loss, g = focal_loss_from_heatmaps(p, heat, targets.num_boxes, focal)
        return loss, g * p * (1 - p)

    theta0 = _init(heat.shape, cfg.seed) if init is None else np.asarray(init, dtype=np.float64)
    res = gradient_descent(loss_fn, theta0, cfg)
    pred = expit(res.params)
    hits = [
        divmod(int(np.argmax(pred[t])), targets.map_size)[::-1] == (x, y) for t, x, y in targets.centers
    ]
    return FitResult(
        res.loss_curve,
        res.params,
        converged=res.final_loss <= 0.01 * res.initial_loss,
        extra={"heatmaps": pred, "argmax_correct": all(hits)},
    )


def fit_sizes_demo(targets: GaussianTargets, cfg: OptimizerConfig, init=None) -> FitResult:
    """Fit free log-distances under the GIoU loss.

    Converged means mean GIoU over annotated cells reached 0.95.
    """
    shape = targets.size_targets.shape
    raw0 = _init(shape, cfg.seed) if init is None else np.asarray(init, dtype=np.float64)
    res = gradient_descent(lambda r: giou_loss(r, targets), raw0, cfg)
    mean_giou = 1.0 - res.final_loss
    pred = SpatialPrediction(targets.heatmaps.astype(np.float64), res.params)
    L = targets.map_size
    boxes = decode_boxes(pred, L, L)
    return FitResult(
        res.loss_curve,
        res.params,
        converged=mean_giou >= 0.95,
        extra={"mean_giou": mean_giou, "boxes": boxes},
    )


def fit_temporal_demo(
    gt: TemporalInterval,
    scheme: CandidateScheme,
    cfg: OptimizerConfig,
    weights=LossWeights(),
    c=CONFIDENCE_THRESHOLD,
    positives_only=True,
    init=None,
) -> FitResult:
    """Fit a free score and offset pair per candidate, then select a tube.

    Minimises ``a3 * confidence + a4 * boundary``. Converged means the
    selected tube overlaps ``gt`` with tIoU >= 0.9.
    """
    cands = label_candidates(generate_candidates(scheme), gt, c)
    n = len(cands)
    targets = np.array([cd.target_iou for cd in cands])
    offsets = np.array([cd.offset_target for cd in cands])
    mask = (targets > 0).astype(float) if positives_only else None

    def loss_fn(theta):
        scores, off = theta[:n], theta[n:].reshape(n, 2)
        lc, gc = confidence_loss_arrays(targets, scores)
        lb, gb = boundary_loss_arrays(offsets, off, mask)
        return weights.a3 * lc + weights.a4 * lb, np.concatenate([weights.a3 * gc, weights.a4 * gb.ravel()])

    theta0 = _init(3 * n, cfg.seed) if init is None else np.asarray(init, dtype=np.float64)
    res = gradient_descent(loss_fn, theta0, cfg)
    scores, off = res.params[:n], res.params[n:].reshape(n, 2)
    fitted = [
        type(cd)(cd.interval, cd.target_iou, float(s), cd.offset_target, (float(o[0]), float(o[1])))
        for cd, s, o in zip(cands, scores, off)
    ]
    tube = select_tube(fitted, scheme.sequence_length)
    score = tiou(tube, gt)
    return FitResult(
        res.loss_curve,
        res.params,
        converged=score >= 0.9,
        extra={"tube": tube, "tiou": score, "candidates": fitted},
    )
