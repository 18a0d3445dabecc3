"""Slow, independent reference implementations used as test oracles."""

import math

import numpy as np
from shapely.geometry import box as shp_box


def naive_bilinear(x, H, W):
    C, h, w = x.shape
    out = np.zeros((C, H, W))
    for i in range(H):
        for j in range(W):
            sy = i * (h - 1) / (H - 1) if H > 1 else 0.0
            sx = j * (w - 1) / (W - 1) if W > 1 else 0.0
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = sy - y0, sx - x0
            out[:, i, j] = ((1 - fy) * (1 - fx) * x[:, y0, x0] + (1 - fy) * fx * x[:, y0, x1]
                            + fy * (1 - fx) * x[:, y1, x0] + fy * fx * x[:, y1, x1])
    return out


def shapely_iou(a, b):
    pa, pb = shp_box(*a), shp_box(*b)
    return pa.intersection(pb).area / pa.union(pb).area


def shapely_giou(a, b):
    pa, pb = shp_box(*a), shp_box(*b)
    union = pa.union(pb).area
    hull = shp_box(*pa.union(pb).bounds).area
    return pa.intersection(pb).area / union - (hull - union) / hull


def frame_set(s, e):
    return set(range(math.floor(s), math.ceil(e)))


def plain_iou(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    area = lambda r: (r[2] - r[0]) * (r[3] - r[1])
    return inter / (area(a) + area(b) - inter)


def naive_viou(gt_iv, pred_iv, gt_boxes, pred_boxes):
    """Per-frame loop over the frame union; boxes are dicts of 4-tuples."""
    g, p = frame_set(*gt_iv), frame_set(*pred_iv)
    total = 0.0
    for t in sorted(g | p):
        if t in g and t in p:
            total += plain_iou(gt_boxes[t], pred_boxes[t])
    return total / len(g | p)


def naive_tiou(a, b):
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    return inter / ((a[1] - a[0]) + (b[1] - b[0]) - inter)
