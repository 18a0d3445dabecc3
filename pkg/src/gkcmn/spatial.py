"""Anchor-free spatial head: Gaussian heatmap targets, point-localisation
focal loss, per-cell size regression with a GIoU loss, and box decoding.

Cells are addressed as integer points ``(x, y)`` on an ``L x L`` grid; a
pixel box is mapped onto that grid by scaling x with ``L / frame_w`` and y
with ``L / frame_h``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import FLOAT, check_random_state, check_same_shape, check_tensor
from .exceptions import DomainError, ShapeError
from .tensor import ConvKernel, activation, conv2d_forward, reshape_frames, upsample_bilinear

EPS = 1e-6


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 <= self.x2 and self.y1 <= self.y2):
            raise DomainError(f"invalid box {self.as_tuple()}: need x1 <= x2 and y1 <= y2")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x1 + self.x2) / 2, (self.y1 + self.y2) / 2

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def scale(self, sx: float, sy: float) -> BoundingBox:
        return BoundingBox(self.x1 * sx, self.y1 * sy, self.x2 * sx, self.y2 * sy)

    def clip(self, width: float, height: float) -> BoundingBox:
        def c(v, hi):
            return min(max(v, 0.0), hi)

        return BoundingBox(c(self.x1, width), c(self.y1, height), c(self.x2, width), c(self.y2, height))


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    """Plain IoU; two empty boxes score 0."""
    iw = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    ih = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def giou(a: BoundingBox, b: BoundingBox) -> float:
    """Generalised IoU, in (-1, 1]."""
    inter = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1)) * max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    union = a.area + b.area - inter
    if union <= 0:
        raise DomainError("GIoU is undefined for two zero-area boxes")
    hull = (max(a.x2, b.x2) - min(a.x1, b.x1)) * (max(a.y2, b.y2) - min(a.y1, b.y1))
    return inter / union - (hull - union) / hull


@dataclass(frozen=True)
class FocalConfig:
    alpha: float = 2.0
    beta: float = 4.0
    gamma: float = 0.8

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise DomainError("focal alpha and beta must be positive")
        if not 0 < self.gamma < 1:
            raise DomainError("focal gamma must lie in (0, 1)")


@dataclass
class GaussianTargets:
    """Per-frame heatmaps, size targets (l, t, r, b) and annotation mask.

    ``centers`` holds ``(t, x_t, y_t)`` per annotated frame and ``sigmas``
    the kernel width used for each of those frames.
    """

    heatmaps: np.ndarray
    size_targets: np.ndarray
    annotation_mask: np.ndarray
    centers: list = field(default_factory=list)
    sigmas: list = field(default_factory=list)

    @property
    def num_frames(self) -> int:
        return self.heatmaps.shape[0]

    @property
    def map_size(self) -> int:
        return self.heatmaps.shape[1]

    @property
    def num_boxes(self) -> int:
        return len(self.centers)

    def log_size_targets(self, fill=0.0) -> np.ndarray:
        """``log(size_targets)`` on masked cells, ``fill`` elsewhere."""
        mask = self.annotation_mask[:, None].astype(bool) & (self.size_targets > 0)
        out = np.full(self.size_targets.shape, fill, dtype=np.float64)
        out[mask] = np.log(self.size_targets[mask].astype(np.float64))
        return out.astype(self.size_targets.dtype)

    def sidecar(self) -> dict:
        return {
            "map_size": self.map_size,
            "num_frames": self.num_frames,
            "frames": [
                {"t": int(t), "x": int(x), "y": int(y), "sigma": float(s)}
                for (t, x, y), s in zip(self.centers, self.sigmas)
            ],
        }


@dataclass(frozen=True)
class SpatialPrediction:
    heatmaps: np.ndarray
    size_raw: np.ndarray

    def __post_init__(self):
        h = check_tensor(self.heatmaps, ndim=3, name="predicted heatmaps")
        s = check_tensor(self.size_raw, ndim=4, name="size_raw")
        if s.shape != (h.shape[0], 4, *h.shape[1:]):
            raise ShapeError(f"size_raw shape {s.shape} does not match heatmaps {h.shape}")
        object.__setattr__(self, "heatmaps", h)
        object.__setattr__(self, "size_raw", s)


def round_half_down(v: float) -> int:
    return math.ceil(v - 0.5)


def adaptive_sigma(box_cells: BoundingBox) -> float:
    return max(1.0, min(box_cells.width, box_cells.height) / 6.0)


def gaussian_heatmap(L: int, cx: float, cy: float, sigma: float, dtype=np.float64) -> np.ndarray:
    """``exp(-((x - cx)^2 + (y - cy)^2) / (2 sigma^2))`` on an ``L x L`` grid, indexed [y, x]."""
    grid = np.arange(L, dtype=np.float64)
    d2 = (grid[None, :] - cx) ** 2 + (grid[:, None] - cy) ** 2
    return np.exp(-d2 / (2.0 * sigma**2)).astype(dtype)


def encode_gaussian_targets(boxes, frame_h, frame_w, L=16, sigma=None, num_frames=None, dtype=FLOAT):
    """Build heatmap, size and mask targets from ``[(t, BoundingBox), ...]`` in pixels.

    ``sigma=None`` picks a per-box width ``max(1, min(w', h') / 6)`` in cells;
    a number fixes it. Frames without a box get all-zero maps.
    """
    if L < 2:
        raise DomainError("map size L must be >= 2")
    boxes = sorted(((int(t), b) for t, b in boxes), key=lambda tb: tb[0])
    if num_frames is None:
        num_frames = boxes[-1][0] + 1 if boxes else 1
    seen = set()
    heat = np.zeros((num_frames, L, L), dtype=dtype)
    sizes = np.zeros((num_frames, 4, L, L), dtype=dtype)
    mask = np.zeros((num_frames, L, L), dtype=dtype)
    centers, sigmas = [], []
    sx, sy = L / frame_w, L / frame_h
    grid = np.arange(L, dtype=np.float64)
    for t, box in boxes:
        if not 0 <= t < num_frames:
            raise DomainError(f"box frame {t} outside [0, {num_frames})")
        if t in seen:
            raise DomainError(f"frame {t} has more than one box")
        seen.add(t)
        if box.area <= 0:
            raise DomainError(f"degenerate box {box.as_tuple()} at frame {t}")
        if box.x1 < 0 or box.y1 < 0 or box.x2 > frame_w or box.y2 > frame_h:
            raise DomainError(f"box {box.as_tuple()} at frame {t} leaves the {frame_w}x{frame_h} frame")
        bc = box.scale(sx, sy)
        mx, my = bc.center
        cx = min(max(round_half_down(mx), 0), L - 1)
        cy = min(max(round_half_down(my), 0), L - 1)
        s = adaptive_sigma(bc) if sigma is None else float(sigma)
        if s <= 0:
            raise DomainError("sigma must be positive")
        heat[t] = gaussian_heatmap(L, cx, cy, s)
        # strict interior: every masked distance is positive, so log targets exist
        inside_x = (grid > bc.x1) & (grid < bc.x2)
        inside_y = (grid > bc.y1) & (grid < bc.y2)
        m = inside_y[:, None] & inside_x[None, :]
        mask[t] = m
        dist = np.stack(
            [
                np.broadcast_to(grid[None, :] - bc.x1, (L, L)),
                np.broadcast_to(grid[:, None] - bc.y1, (L, L)),
                np.broadcast_to(bc.x2 - grid[None, :], (L, L)),
                np.broadcast_to(bc.y2 - grid[:, None], (L, L)),
            ]
        )
        sizes[t] = np.where(m[None], dist, 0.0)
        centers.append((t, cx, cy))
        sigmas.append(s)
    return GaussianTargets(heat, sizes, mask, centers, sigmas)


# -- point localisation -------------------------------------------------------


def focal_loss_from_heatmaps(pred, heatmaps, num_boxes, cfg: FocalConfig = FocalConfig()):
    """Penalty-reduced focal loss and its gradient w.r.t. ``pred``.

    Cells with target ``h > gamma`` are positives. Logs see predictions
    clipped to ``[EPS, 1 - EPS]``; the polynomial factors use them raw.
    """
    p = np.asarray(pred)
    h = np.asarray(heatmaps)
    check_same_shape(p, h, ("prediction", "target"))
    if num_boxes <= 0:
        raise DomainError("focal loss needs at least one annotated box")
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise DomainError("predicted heatmap values must lie in [0, 1]")
    a, b = cfg.alpha, cfg.beta
    pc = np.clip(p, EPS, 1 - EPS)
    live = (p == pc).astype(p.dtype)
    log_p, log_q = np.log(pc), np.log1p(-pc)
    pos = h > cfg.gamma
    neg_w = (1 - h) ** b

    q = 1 - p
    pos_term = q**a * log_p
    neg_term = neg_w * p**a * log_q
    terms = np.where(pos, pos_term, neg_term)
    loss = -terms.sum() / num_boxes

    # d/dp of each branch; pow(.., a - 1) guarded so a < 1 stays finite at 0
    with np.errstate(divide="ignore", invalid="ignore"):
        dq_a = np.where(q > 0, a * q ** (a - 1), 0.0 if a > 1 else np.inf)
        dp_a = np.where(p > 0, a * p ** (a - 1), 0.0 if a > 1 else np.inf)
        d_pos = -dq_a * log_p + q**a * live / pc
        d_neg = neg_w * (dp_a * log_q - p**a * live / (1 - pc))
    grad = -np.where(pos, d_pos, d_neg) / num_boxes
    return float(loss), grad.astype(p.dtype, copy=False)


def focal_loss(pred, targets: GaussianTargets, cfg: FocalConfig = FocalConfig()):
    heat = pred.heatmaps if isinstance(pred, SpatialPrediction) else pred
    return focal_loss_from_heatmaps(heat, targets.heatmaps, targets.num_boxes, cfg)


# -- size regression ----------------------------------------------------------


TIE_TOL = 1e-9


def _dmax(p, g, side):
    """One-sided derivative of ``max(p, g)`` wrt ``p``; ``side`` +1 moves p up, -1 down.

    Edges closer than ``TIE_TOL`` (relative) count as tied, since rounding
    in ``exp`` leaves converged edges an ulp or two off their targets.
    """
    tol = TIE_TOL * np.maximum(1.0, np.abs(g))
    return (p >= g - tol if side > 0 else p > g + tol).astype(float)


def giou_and_grad(pred_boxes: np.ndarray, gt_boxes: np.ndarray, side: int = 1):
    """Vectorised GIoU of ``(n, 4)`` box arrays and its slope wrt the predicted corners.

    Away from ties between predicted and target edges this is the ordinary
    gradient. At a tie the derivative is one-sided: ``side=+1`` gives the
    slope for increasing coordinates, ``side=-1`` for decreasing ones.
    """
    value, grads = _giou_sided(pred_boxes, gt_boxes, (side,))
    return value, grads[0]


def _giou_sided(pred_boxes, gt_boxes, sides):
    px1, py1, px2, py2 = pred_boxes.T
    gx1, gy1, gx2, gy2 = gt_boxes.T
    pw, ph = px2 - px1, py2 - py1
    area_p = pw * ph
    area_g = (gx2 - gx1) * (gy2 - gy1)

    ix1, ix2 = np.maximum(px1, gx1), np.minimum(px2, gx2)
    iy1, iy2 = np.maximum(py1, gy1), np.minimum(py2, gy2)
    iw_raw, ih_raw = ix2 - ix1, iy2 - iy1
    iw, ih = np.maximum(iw_raw, 0), np.maximum(ih_raw, 0)
    inter = iw * ih
    union = area_p + area_g - inter
    if np.any(union <= 0):
        raise DomainError("GIoU is undefined for two zero-area boxes")
    cw = np.maximum(px2, gx2) - np.minimum(px1, gx1)
    ch = np.maximum(py2, gy2) - np.minimum(py1, gy1)
    hull = cw * ch
    value = inter / union - 1 + union / hull

    ow, oh = (iw_raw > 0).astype(float), (ih_raw > 0).astype(float)
    d_area = np.stack([-ph, -pw, ph, pw], 1)
    u, c = union[:, None], hull[:, None]
    p = np.stack([px1, py1, px2, py2], 1)
    g = np.stack([gx1, gy1, gx2, gy2], 1)
    grads = []
    for side in sides:
        # column k is d max(p_k, g_k) / d p_k on the requested side
        up = _dmax(p, g, side)
        dn = 1.0 - up
        # partials of the intersection and hull extents wrt (x1, y1, x2, y2)
        d_inter = np.zeros_like(p)
        d_inter[:, 0] = -up[:, 0] * ow * ih
        d_inter[:, 2] = dn[:, 2] * ow * ih
        d_inter[:, 1] = -up[:, 1] * oh * iw
        d_inter[:, 3] = dn[:, 3] * oh * iw
        d_hull = np.empty_like(p)
        d_hull[:, 0] = -dn[:, 0] * ch
        d_hull[:, 2] = up[:, 2] * ch
        d_hull[:, 1] = -dn[:, 1] * cw
        d_hull[:, 3] = up[:, 3] * cw
        d_union = d_area - d_inter
        grads.append((d_inter * u - inter[:, None] * d_union) / u**2 + (d_union * c - u * d_hull) / c**2)
    return value, grads


def descent_slope(up, down):
    """Merge one-sided slopes into a direction that never ascends.

    ``up`` is the slope for increasing a coordinate, ``down`` for decreasing
    it. Where both point uphill the coordinate sits at a kink minimum and
    gets zero.
    """
    return np.where(up < 0, up, np.where(down > 0, down, 0.0))


def giou_loss_from_boxes(pred_boxes, gt_boxes):
    """Mean ``1 - GIoU`` over paired ``(n, 4)`` boxes and its gradient wrt ``pred_boxes``."""
    pred_boxes = np.atleast_2d(np.asarray(pred_boxes, dtype=np.float64))
    gt_boxes = np.atleast_2d(np.asarray(gt_boxes, dtype=np.float64))
    check_same_shape(pred_boxes, gt_boxes, ("pred boxes", "gt boxes"))
    if pred_boxes.shape[0] == 0:
        raise DomainError("no boxes to regress")
    n = pred_boxes.shape[0]
    value, (g_up, g_down) = _giou_sided(pred_boxes, gt_boxes, (1, -1))
    return float(np.sum(1 - value) / n), descent_slope(-g_up / n, -g_down / n)


def _masked_cells(mask: np.ndarray):
    t, y, x = np.nonzero(mask)
    return t, y, x


def giou_loss(pred, targets: GaussianTargets):
    """Mean ``1 - GIoU`` over annotated cells and its gradient wrt ``size_raw``.

    At cell ``(x, y)`` the predicted box is ``(x - l, y - t, x + r, y + b)``
    with ``(l, t, r, b) = exp(size_raw)``; the target box is rebuilt the
    same way from ``size_targets``.
    """
    raw = pred.size_raw if isinstance(pred, SpatialPrediction) else np.asarray(pred)
    check_same_shape(raw, targets.size_targets, ("size_raw", "size_targets"))
    t, y, x = _masked_cells(targets.annotation_mask)
    if t.size == 0:
        raise DomainError("giou loss needs at least one annotated cell")
    r = raw[t, :, y, x].astype(np.float64)
    d = np.exp(r)
    s = targets.size_targets[t, :, y, x].astype(np.float64)
    xf, yf = x.astype(np.float64), y.astype(np.float64)
    pb = np.stack([xf - d[:, 0], yf - d[:, 1], xf + d[:, 2], yf + d[:, 3]], 1)
    gb = np.stack([xf - s[:, 0], yf - s[:, 1], xf + s[:, 2], yf + s[:, 3]], 1)
    n = t.size
    value, (g_up, g_down) = _giou_sided(pb, gb, (1, -1))
    loss = float(np.sum(1 - value) / n)
    # l and t corners move opposite to raw, so their one-sided slopes swap
    flip = np.array([True, True, False, False])
    up = np.where(flip, g_down * d / n, -g_up * d / n)
    down = np.where(flip, g_up * d / n, -g_down * d / n)
    g_raw = descent_slope(up, down)
    grad = np.zeros(raw.shape, dtype=np.float64)
    grad[t, :, y, x] = g_raw
    return loss, grad.astype(raw.dtype, copy=False)


def mean_giou(pred, targets: GaussianTargets) -> float:
    loss, _ = giou_loss(pred, targets)
    return 1.0 - loss


# -- inference ----------------------------------------------------------------


def decode_boxes(pred: SpatialPrediction, frame_h, frame_w):
    """One ``(t, BoundingBox, peak_score)`` per frame, from the heatmap argmax."""
    T, L, _ = pred.heatmaps.shape
    out = []
    for t in range(T):
        idx = int(np.argmax(pred.heatmaps[t]))
        y, x = divmod(idx, L)
        l, tp, r, b = np.exp(pred.size_raw[t, :, y, x].astype(np.float64))
        cells = (x - l, y - tp, x + r, y + b)
        sx, sy = frame_w / L, frame_h / L
        box = BoundingBox(cells[0] * sx, cells[1] * sy, cells[2] * sx, cells[3] * sy).clip(frame_w, frame_h)
        out.append((t, box, float(pred.heatmaps[t, y, x])))
    return out


@dataclass(frozen=True)
class SpatialHeadWeights:
    """1x1 heads on the upsampled trunk: 1 heatmap channel, 4 size channels."""

    heat: ConvKernel
    size: ConvKernel

    def __post_init__(self):
        if self.heat.extents != (1, 1) or self.size.extents != (1, 1):
            raise ShapeError("spatial head kernels must be 1x1")
        if self.heat.out_channels != 1 or self.size.out_channels != 4:
            raise ShapeError("spatial head needs 1 heatmap and 4 size output channels")
        if self.heat.in_channels != self.size.in_channels:
            raise ShapeError("heat and size heads disagree on input channels")

    @property
    def channels(self) -> int:
        return self.heat.in_channels

    @classmethod
    def zeros(cls, channels) -> SpatialHeadWeights:
        return cls(ConvKernel.zeros(1, channels, (1, 1)), ConvKernel.zeros(4, channels, (1, 1)))

    @classmethod
    def random(cls, channels, seed=None, scale=None) -> SpatialHeadWeights:
        rng = check_random_state(seed)
        return cls(
            ConvKernel.random(1, channels, (1, 1), rng, scale, bias=True),
            ConvKernel.random(4, channels, (1, 1), rng, scale, bias=True),
        )


def spatial_head_forward(m_mix, weights: SpatialHeadWeights, L=16) -> SpatialPrediction:
    x = check_tensor(m_mix, ndim=4, name="M_mix")
    if x.shape[0] != weights.channels:
        raise ShapeError(f"M_mix has {x.shape[0]} channels, spatial head expects {weights.channels}")
    frames = reshape_frames(x)
    heat, size = [], []
    for fr in frames:
        up = upsample_bilinear(fr, L, L)
        heat.append(activation(conv2d_forward(up, weights.heat)[0], "sigmoid"))
        size.append(conv2d_forward(up, weights.size))
    return SpatialPrediction(np.stack(heat), np.stack(size))
