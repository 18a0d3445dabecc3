"""Loss aggregation, plain gradient descent and finite-difference checking."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._validation import check_random_state
from .exceptions import DivergenceError, DomainError

FD_STEP = 1e-6


@dataclass(frozen=True)
class LossWeights:
    """Weights of (point localisation, size regression, confidence, boundary)."""

    a1: float = 1.0
    a2: float = 2.0
    a3: float = 0.2
    a4: float = 0.1

    def __post_init__(self):
        if min(self.a1, self.a2, self.a3, self.a4) < 0:
            raise DomainError("loss weights must be nonnegative")


def total_loss(l_loc, l_reg_s, l_con, l_reg_t, w: LossWeights = LossWeights()) -> float:
    parts = (l_loc, l_reg_s, l_con, l_reg_t)
    if not all(math.isfinite(p) for p in parts):
        raise DomainError(f"non-finite loss component in {parts}")
    return w.a1 * l_loc + w.a2 * l_reg_s + w.a3 * l_con + w.a4 * l_reg_t


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.003
    steps: int = 1000
    seed: int = 0
    backtracking: bool = False
    max_halvings: int = 40
    # a loss above this multiple of the initial loss counts as divergence
    blowup_factor: float = 10.0
    # when set, the step size decays geometrically to this value at the last step
    lr_final: float | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise DomainError("learning rate must be positive")
        if self.steps < 1:
            raise DomainError("steps must be >= 1")
        if self.lr_final is not None and not self.lr_final > 0:
            raise DomainError("lr_final must be positive")

    def scheduled_lr(self, step: int) -> float:
        """Base step size for 1-based ``step``."""
        if self.lr_final is None or self.steps == 1:
            return self.learning_rate
        frac = (step - 1) / (self.steps - 1)
        return self.learning_rate * (self.lr_final / self.learning_rate) ** frac


@dataclass
class DescentResult:
    params: np.ndarray
    loss_curve: list = field(default_factory=list)

    @property
    def initial_loss(self) -> float:
        return self.loss_curve[0]

    @property
    def final_loss(self) -> float:
        return self.loss_curve[-1]


def gradient_descent(loss_fn: Callable, params, cfg: OptimizerConfig) -> DescentResult:
    """Minimise ``loss_fn(params) -> (loss, grad)`` by fixed-step descent.

    With ``cfg.backtracking`` a step that raises the loss is halved (up to
    ``cfg.max_halvings`` times) and the parameters stay put if none helps,
    so the recorded curve never increases. Each step then starts from twice
    the last accepted step size, capped at the scheduled step size
    (``cfg.learning_rate``, or its geometric decay towards ``cfg.lr_final``).
    Entry ``k`` of the curve is the loss after ``k`` steps.
    """
    # overflow on the way to a blow-up is reported as DivergenceError below
    with np.errstate(over="ignore", invalid="ignore"):
        return _descend(loss_fn, params, cfg)


def _descend(loss_fn, params, cfg: OptimizerConfig) -> DescentResult:
    x = np.array(params, dtype=np.float64)
    loss, grad = loss_fn(x)
    if not math.isfinite(loss):
        raise DivergenceError(0, loss)
    curve = [loss]
    limit = cfg.blowup_factor * max(abs(loss), 1e-12)
    lr_next = math.inf
    for step in range(1, cfg.steps + 1):
        base = cfg.scheduled_lr(step)
        lr = min(lr_next, base) if cfg.backtracking else base
        for _ in range(cfg.max_halvings + 1 if cfg.backtracking else 1):
            trial = x - lr * grad
            if not np.all(np.isfinite(trial)):
                raise DivergenceError(step, math.nan, "non-finite parameters")
            new_loss, new_grad = loss_fn(trial)
            if not math.isfinite(new_loss):
                raise DivergenceError(step, new_loss)
            if not cfg.backtracking or new_loss <= loss:
                break
            lr *= 0.5
        else:
            new_loss, new_grad, trial = loss, grad, x
        if cfg.backtracking:
            lr_next = 2.0 * lr
        if new_loss > limit:
            raise DivergenceError(step, new_loss, f"loss exceeded {cfg.blowup_factor}x its initial value")
        x, loss, grad = trial, new_loss, new_grad
        curve.append(loss)
    return DescentResult(x, curve)


@dataclass
class GradCheckReport:
    max_rel_error: float
    failing_indices: list
    checked: int
    tolerance: float
    worst_index: tuple | None = None

    @property
    def passed(self) -> bool:
        return not self.failing_indices


def relative_error(g_analytic, g_numeric):
    g_analytic = np.asarray(g_analytic, dtype=np.float64)
    g_numeric = np.asarray(g_numeric, dtype=np.float64)
    return np.abs(g_analytic - g_numeric) / np.maximum(1e-8, np.abs(g_analytic) + np.abs(g_numeric))


def grad_check(loss_fn, params, tolerance=1e-4, step=FD_STEP, max_coords=256, seed=0) -> GradCheckReport:
    """Compare ``loss_fn``'s analytic gradient with central differences.

    Every coordinate is probed when ``params.size <= max_coords``; larger
    tensors get a seeded sample of ``max(64, max_coords)`` coordinates.
    """
    x = np.array(params, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DomainError("grad_check needs finite parameters")
    _, g = loss_fn(x.copy())
    g = np.asarray(g, dtype=np.float64).reshape(x.shape)
    if x.size <= max_coords:
        coords = list(np.ndindex(*x.shape))
    else:
        rng = check_random_state(seed)
        flat = rng.choice(x.size, size=max(64, max_coords), replace=False)
        coords = [np.unravel_index(i, x.shape) for i in sorted(flat)]
    errors = []
    for idx in coords:
        xp = x.copy()
        xp[idx] += step
        xm = x.copy()
        xm[idx] -= step
        fp, _ = loss_fn(xp)
        fm, _ = loss_fn(xm)
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise DomainError(f"loss is non-finite near coordinate {idx}")
        errors.append(float(relative_error(g[idx], (fp - fm) / (2 * step))))
    errors = np.array(errors)
    failing = [tuple(int(i) for i in coords[k]) for k in np.nonzero(errors > tolerance)[0]]
    worst = int(np.argmax(errors))
    return GradCheckReport(
        max_rel_error=float(errors[worst]),
        failing_indices=failing,
        checked=len(coords),
        tolerance=tolerance,
        worst_index=tuple(int(i) for i in coords[worst]),
    )
