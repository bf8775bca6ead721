"""Anchor grid, IoU matching, and box offset coding for the grid detector.

One square anchor per grid cell at a single scale. Offsets follow the
usual (dx, dy, dw, dh) parameterization relative to anchor center and size.
"""

from __future__ import annotations

import numpy as np

# Log-size offsets are clamped before exp so a wild regression output
# cannot produce overflowing box sizes.
LOG_SIZE_CLAMP = 4.0
MIN_BOX_EXTENT = 1e-3


def anchor_grid(h: int, w: int, size: float) -> np.ndarray:
    """(h*w, 4) anchors, one per cell, centered on cell centers.

    Row-major over (row, col); border anchors may extend outside the image.
    """
    ys, xs = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    cx = xs.reshape(-1)
    cy = ys.reshape(-1)
    half = size / 2.0
    return np.stack([cx - half, cy - half, cx + half, cy + half], axis=1)


def pairwise_iou(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """(N, M) IoU matrix between two box arrays in corner form."""
    a = np.asarray(boxes_a, dtype=float).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=float).reshape(-1, 4)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    x0 = np.maximum(a[:, None, 0], b[None, :, 0])
    y0 = np.maximum(a[:, None, 1], b[None, :, 1])
    x1 = np.minimum(a[:, None, 2], b[None, :, 2])
    y1 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(x1 - x0, 0.0, None) * np.clip(y1 - y0, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(inter > 0.0, inter / union, 0.0)


def match_anchors(
    anchors: np.ndarray,
    gt_boxes: np.ndarray,
    pos_iou: float,
    neg_iou: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Assign anchors to ground-truth boxes.

    Returns (assigned, pos_mask, ignore_mask): `assigned[i]` is the index of
    the best-overlapping gt for anchor i (valid only where pos_mask holds).
    Anchors with max IoU >= pos_iou are positive, < neg_iou negative, and
    in-between ignored.
    """
    n = anchors.shape[0]
    gt = np.asarray(gt_boxes, dtype=float).reshape(-1, 4)
    if gt.shape[0] == 0:
        return np.full(n, -1, dtype=int), np.zeros(n, bool), np.zeros(n, bool)
    overlaps = pairwise_iou(anchors, gt)
    assigned = overlaps.argmax(axis=1)
    best = overlaps[np.arange(n), assigned]
    pos_mask = best >= pos_iou
    ignore_mask = (best >= neg_iou) & ~pos_mask
    return assigned, pos_mask, ignore_mask


def _centers_sizes(boxes: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    b = np.asarray(boxes, dtype=float).reshape(-1, 4)
    w = b[:, 2] - b[:, 0]
    h = b[:, 3] - b[:, 1]
    return b[:, 0] + w / 2.0, b[:, 1] + h / 2.0, w, h


def encode_offsets(anchor_boxes: np.ndarray, gt_boxes: np.ndarray) -> np.ndarray:
    """(N, 4) regression targets (dx, dy, dw, dh) for paired anchor/gt rows."""
    acx, acy, aw, ah = _centers_sizes(anchor_boxes)
    gcx, gcy, gw, gh = _centers_sizes(gt_boxes)
    return np.stack(
        [(gcx - acx) / aw, (gcy - acy) / ah, np.log(gw / aw), np.log(gh / ah)],
        axis=1,
    )


def decode_offsets(
    anchor_boxes: np.ndarray,
    offsets: np.ndarray,
    image_w: float,
    image_h: float,
) -> np.ndarray:
    """Apply predicted offsets to anchors and clamp boxes into the image.

    Clamping preserves the BBox invariant: every output box has strictly
    positive extent inside [0, image_w] x [0, image_h].
    """
    acx, acy, aw, ah = _centers_sizes(anchor_boxes)
    off = np.asarray(offsets, dtype=float).reshape(-1, 4)
    cx = acx + off[:, 0] * aw
    cy = acy + off[:, 1] * ah
    w = aw * np.exp(np.clip(off[:, 2], -LOG_SIZE_CLAMP, LOG_SIZE_CLAMP))
    h = ah * np.exp(np.clip(off[:, 3], -LOG_SIZE_CLAMP, LOG_SIZE_CLAMP))
    half_min = MIN_BOX_EXTENT / 2.0
    cx = np.clip(cx, half_min, image_w - half_min)
    cy = np.clip(cy, half_min, image_h - half_min)
    x0 = np.clip(cx - w / 2.0, 0.0, None)
    x1 = np.clip(cx + w / 2.0, None, image_w)
    y0 = np.clip(cy - h / 2.0, 0.0, None)
    y1 = np.clip(cy + h / 2.0, None, image_h)
    x0 = np.minimum(x0, cx - half_min)
    x1 = np.maximum(x1, cx + half_min)
    y0 = np.minimum(y0, cy - half_min)
    y1 = np.maximum(y1, cy + half_min)
    return np.stack([x0, y0, x1, y1], axis=1)
