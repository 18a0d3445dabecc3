"""Random loss instances for finite-difference gradient checks.

Each factory takes a numpy Generator and returns ``(loss_fn, params)``
where ``loss_fn(params) -> (value, grad)`` in float64.
"""

from __future__ import annotations

import numpy as np

from .demos import random_box
from .optim import grad_check
from .spatial import encode_gaussian_targets, focal_loss_from_heatmaps, giou_loss
from .temporal import boundary_loss_arrays, confidence_loss_arrays, smooth_l1


def focal_instance(rng):
    T, L = int(rng.integers(1, 3)), int(rng.integers(4, 9))
    boxes = [(t, random_box(rng, L, 64, 64, min_cells=1)) for t in range(T)]
    tg = encode_gaussian_targets(boxes, 64, 64, L, sigma=float(rng.uniform(0.5, 2.0)), num_frames=T, dtype=np.float64)
    pred = rng.uniform(0.02, 0.98, size=tg.heatmaps.shape)
    return (lambda p: focal_loss_from_heatmaps(p, tg.heatmaps, tg.num_boxes)), pred


def giou_instance(rng):
    T, L = int(rng.integers(1, 3)), int(rng.integers(4, 9))
    boxes = [(t, random_box(rng, L, 64, 64, min_cells=1)) for t in range(T)]
    tg = encode_gaussian_targets(boxes, 64, 64, L, num_frames=T, dtype=np.float64)
    raw = tg.log_size_targets(fill=0.0) + rng.normal(0.0, 0.5, size=tg.size_targets.shape)
    return (lambda r: giou_loss(r, tg)), raw


def smooth_l1_instance(rng):
    target = rng.normal(0.0, 2.0, size=int(rng.integers(1, 33)))

    def loss_fn(x):
        value, slope = smooth_l1(x - target)
        return float(value.sum()), slope

    return loss_fn, rng.normal(0.0, 2.0, size=target.shape)


def confidence_instance(rng):
    n = int(rng.integers(1, 33))
    targets = np.where(rng.random(n) < 0.5, 0.0, rng.uniform(0.3, 1.0, n))
    return (lambda s: confidence_loss_arrays(targets, s)), rng.normal(0.5, 1.5, n)


def boundary_instance(rng):
    n = int(rng.integers(1, 33))
    targets = rng.normal(0.0, 3.0, (n, 2))
    weights = (rng.random(n) < 0.6).astype(float)

    def loss_fn(o):
        value, grad = boundary_loss_arrays(targets, o, weights)
        return value, grad.reshape(o.shape)

    return loss_fn, rng.normal(0.0, 3.0, (n, 2))


INSTANCES = {
    "focal": focal_instance,
    "giou": giou_instance,
    "smooth-l1": smooth_l1_instance,
    "confidence": confidence_instance,
    "boundary": boundary_instance,
}


def run_gradchecks(loss: str, trials=100, tolerance=1e-4, seed=0) -> dict:
    """Grad-check ``trials`` random instances; report the worst one."""
    if loss not in INSTANCES:
        raise KeyError(f"unknown loss {loss!r}; choose from {sorted(INSTANCES)}")
    rng = np.random.default_rng(seed)
    worst, failed = None, 0
    for trial in range(trials):
        fn, params = INSTANCES[loss](rng)
        rep = grad_check(fn, params, tolerance=tolerance, seed=seed + trial)
        failed += not rep.passed
        if worst is None or rep.max_rel_error > worst["max_rel_error"]:
            worst = {"trial": trial, "max_rel_error": rep.max_rel_error, "index": list(rep.worst_index)}
    return {
        "loss": loss,
        "trials": trials,
        "tolerance": tolerance,
        "failed_trials": failed,
        "passed": failed == 0,
        "worst": worst,
    }
