"""Trainable predictors for the two roles.

Both reference models are linear so every gradient is hand-derivable:

* vision: per-anchor linear scorer over a 3x3 neighborhood patch of grid
  features, with K sigmoid class outputs and 4 class-agnostic box offsets
  per anchor (one anchor per cell, single scale);
* report: bag-of-words linear multi-label classifier with K sigmoid heads.

Images are (H, W, C) float arrays; reports are length-V token count
vectors. A ModelHandle is an immutable value during inference; training
produces a new handle per step (momentum SGD).
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .anchors import anchor_grid, decode_offsets, encode_offsets, match_anchors
from .geometry import BBox
from .losses import (
    DetectionLossConfig,
    DetectionTarget,
    LossValue,
    _loss_value,
    binary_ce_terms,
    focal_grad_logits,
    focal_terms,
    smooth_l1,
    smooth_l1_grad,
)
from .suppression import Detection, DetectionSet, nms

ROLE_VISION = "vision"
ROLE_REPORT = "report"

CHECKPOINT_MAGIC = b"CODISTIL"


class FrozenModelError(RuntimeError):
    """Raised when a parameter update is attempted on a frozen model."""


@dataclass(frozen=True)
class ModelHandle:
    """A predictor: role, flat parameter vector, optimizer velocity, and
    architecture metadata sufficient to rebuild or reinitialize it."""

    role: str
    params: np.ndarray
    velocity: np.ndarray
    frozen: bool
    rng_seed: int
    arch_meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.role not in (ROLE_VISION, ROLE_REPORT):
            raise ValueError(f"unknown role {self.role!r}")
        if not np.all(np.isfinite(self.params)):
            raise ValueError("model parameters must be finite")
        if self.params.shape != self.velocity.shape:
            raise ValueError("params and velocity must have equal shapes")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -60.0, 60.0)))


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


def param_hash(model: ModelHandle) -> str:
    return hashlib.sha256(np.ascontiguousarray(model.params, dtype="<f8").tobytes()).hexdigest()


def freeze(model: ModelHandle) -> ModelHandle:
    return replace(model, frozen=True, params=_readonly(model.params), velocity=_readonly(model.velocity))


# ----------------------------------------------------------------------
# Construction and reinitialization.
# ----------------------------------------------------------------------


def _vision_feature_count(meta: dict) -> int:
    return 9 * meta["c"]


def _vision_param_count(meta: dict) -> int:
    f, k = _vision_feature_count(meta), meta["k"]
    return f * k + k + f * 4 + 4


def _init_params(role: str, meta: dict, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    scale = meta["init_weight_scale"]
    if role == ROLE_VISION:
        f, k = _vision_feature_count(meta), meta["k"]
        w_cls = rng.uniform(-scale, scale, (f, k))
        w_reg = rng.uniform(-scale, scale, (f, 4))
        prior = meta["init_prior"]
        b_cls = np.full(k, -math.log((1.0 - prior) / prior))
        return np.concatenate([w_cls.ravel(), b_cls, w_reg.ravel(), np.zeros(4)])
    f, k = meta["vocab"], meta["k"]
    w = rng.uniform(-scale, scale, (f, k))
    return np.concatenate([w.ravel(), np.zeros(k)])


def new_vision_model(
    h: int,
    w: int,
    c: int,
    k: int,
    anchor_size: float,
    seed: int,
    init_weight_scale: float = 0.01,
    init_prior: float = 0.01,
) -> ModelHandle:
    meta = {
        "h": h,
        "w": w,
        "c": c,
        "k": k,
        "anchor_size": anchor_size,
        "init_weight_scale": init_weight_scale,
        "init_prior": init_prior,
    }
    params = _init_params(ROLE_VISION, meta, seed)
    return ModelHandle(ROLE_VISION, params, np.zeros_like(params), False, seed, meta)


def new_report_model(vocab: int, k: int, seed: int, init_weight_scale: float = 0.01) -> ModelHandle:
    meta = {"vocab": vocab, "k": k, "init_weight_scale": init_weight_scale}
    params = _init_params(ROLE_REPORT, meta, seed)
    return ModelHandle(ROLE_REPORT, params, np.zeros_like(params), False, seed, meta)


def reinit(model: ModelHandle, seed: int) -> ModelHandle:
    """Fresh parameters from the initialization distribution keyed by seed.

    Same architecture, velocity reset to zero, not frozen.
    """
    params = _init_params(model.role, model.arch_meta, seed)
    return ModelHandle(model.role, params, np.zeros_like(params), False, seed, dict(model.arch_meta))


def train_step(model: ModelHandle, grad: np.ndarray, lr: float, momentum: float) -> ModelHandle:
    """Momentum-SGD update: v <- momentum*v + grad; params <- params - lr*v."""
    if model.frozen:
        raise FrozenModelError(f"cannot update frozen {model.role} model")
    g = np.asarray(grad, dtype=float)
    if g.shape != model.params.shape:
        raise ValueError(f"gradient shape {g.shape} != parameter shape {model.params.shape}")
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient contains non-finite entries")
    velocity = momentum * model.velocity + g
    params = model.params - lr * velocity
    return replace(model, params=params, velocity=velocity)


def random_weight_block(model: ModelHandle) -> np.ndarray:
    """The randomly initialized portion of the parameter vector.

    Excludes bias entries, which are deterministic at init (the vision
    classification bias carries the foreground-prior trick) and would
    dominate any correlation measurement.
    """
    meta = model.arch_meta
    if model.role == ROLE_VISION:
        f, k = _vision_feature_count(meta), meta["k"]
        w_cls = model.params[: f * k]
        w_reg = model.params[f * k + k : f * k + k + f * 4]
        return np.concatenate([w_cls, w_reg])
    f, k = meta["vocab"], meta["k"]
    return model.params[: f * k]


# ----------------------------------------------------------------------
# Vision forward / predict.
# ----------------------------------------------------------------------


def _vision_views(model: ModelHandle) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    meta = model.arch_meta
    f, k = _vision_feature_count(meta), meta["k"]
    p = model.params
    w_cls = p[: f * k].reshape(f, k)
    b_cls = p[f * k : f * k + k]
    w_reg = p[f * k + k : f * k + k + f * 4].reshape(f, 4)
    b_reg = p[f * k + k + f * 4 :]
    return w_cls, b_cls, w_reg, b_reg


def patch_features(image: np.ndarray) -> np.ndarray:
    """(H*W, 9C) feature matrix: the zero-padded 3x3 neighborhood of each cell."""
    g = np.asarray(image, dtype=float)
    if g.ndim != 3:
        raise ValueError(f"image must be (H, W, C), got shape {g.shape}")
    h, w, c = g.shape
    padded = np.pad(g, ((1, 1), (1, 1), (0, 0)))
    views = [
        padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w, :]
        for dy in (-1, 0, 1)
        for dx in (-1, 0, 1)
    ]
    return np.concatenate(views, axis=2).reshape(h * w, 9 * c)


def _check_vision_image(model: ModelHandle, image: np.ndarray) -> None:
    meta = model.arch_meta
    expected = (meta["h"], meta["w"], meta["c"])
    if np.asarray(image).shape != expected:
        raise ValueError(f"image shape {np.asarray(image).shape} does not match model grid {expected}")


def vision_forward(
    model: ModelHandle, image: np.ndarray, features: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """(class probabilities (A, K), box offsets (A, 4)) for every anchor."""
    if model.role != ROLE_VISION:
        raise ValueError(f"expected a vision model, got role {model.role!r}")
    if features is None:
        _check_vision_image(model, image)
        features = patch_features(image)
    w_cls, b_cls, w_reg, b_reg = _vision_views(model)
    probs = _sigmoid(features @ w_cls + b_cls)
    offsets = features @ w_reg + b_reg
    return probs, offsets


def model_anchors(model: ModelHandle) -> np.ndarray:
    meta = model.arch_meta
    return anchor_grid(meta["h"], meta["w"], meta["anchor_size"])


def vision_predict(
    model: ModelHandle,
    image: np.ndarray,
    score_threshold: float,
    apply_nms: bool = True,
    nms_iou: float = 0.5,
    source: str = "student",
    features: np.ndarray | None = None,
) -> DetectionSet:
    """Decode per-anchor outputs into a DetectionSet.

    Emits one detection per (anchor, class) with probability at or above
    the threshold. Boxes are clamped into the image, so every emitted box
    satisfies the BBox invariants.
    """
    probs, offsets = vision_forward(model, image, features=features)
    meta = model.arch_meta
    boxes = decode_offsets(model_anchors(model), offsets, float(meta["w"]), float(meta["h"]))
    anchor_idx, class_idx = np.nonzero(probs >= score_threshold)
    dets = tuple(
        Detection(BBox(*boxes[a]), int(c), float(probs[a, c]))
        for a, c in zip(anchor_idx, class_idx)
    )
    det_set = DetectionSet(dets, source=source)
    if apply_nms and len(det_set) > 1:
        det_set = nms(det_set, nms_iou)
    return det_set


# ----------------------------------------------------------------------
# Report forward / predict.
# ----------------------------------------------------------------------


def _report_views(model: ModelHandle) -> tuple[np.ndarray, np.ndarray]:
    meta = model.arch_meta
    f, k = meta["vocab"], meta["k"]
    return model.params[: f * k].reshape(f, k), model.params[f * k :]


def report_predict(model: ModelHandle, tokens: np.ndarray) -> np.ndarray:
    """Length-K sigmoid class probabilities for one token-count vector."""
    if model.role != ROLE_REPORT:
        raise ValueError(f"expected a report model, got role {model.role!r}")
    t = np.asarray(tokens, dtype=float).reshape(-1)
    if t.shape[0] != model.arch_meta["vocab"]:
        raise ValueError(
            f"token vector length {t.shape[0]} does not match vocabulary {model.arch_meta['vocab']}"
        )
    w, b = _report_views(model)
    return _sigmoid(t @ w + b)


# ----------------------------------------------------------------------
# Batch losses and analytic gradients.
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class ReportLossConfig:
    unsup_weight: float = 1.0


@dataclass
class ReportBatch:
    """Token matrix (B, V), binary targets (B, K), labeled mask (B,)."""

    tokens: np.ndarray
    targets: np.ndarray
    labeled: np.ndarray


@dataclass
class VisionBatch:
    """Per-sample feature matrices (A, F), detection targets, labeled mask."""

    features: list[np.ndarray]
    targets: list[DetectionTarget]
    labeled: np.ndarray


def report_loss_and_grad(
    model: ModelHandle, batch: ReportBatch, cfg: ReportLossConfig = ReportLossConfig()
) -> tuple[LossValue, np.ndarray]:
    tokens = np.asarray(batch.tokens, dtype=float)
    targets = np.asarray(batch.targets, dtype=float)
    lab = np.asarray(batch.labeled, dtype=bool)
    if tokens.shape[0] == 0:
        raise ValueError("batch must contain at least one item")
    w, b = _report_views(model)
    probs = _sigmoid(tokens @ w + b)
    per_item = binary_ce_terms(probs, targets).mean(axis=1)
    n_lab, n_unlab = int(lab.sum()), int((~lab).sum())
    sup = float(per_item[lab].mean()) if n_lab else 0.0
    unsup = cfg.unsup_weight * float(per_item[~lab].mean()) if n_unlab else 0.0

    k = targets.shape[1]
    scale = np.where(lab, 1.0 / max(1, n_lab), cfg.unsup_weight / max(1, n_unlab))
    g_logits = (probs - targets) / k * scale[:, None]
    g_w = tokens.T @ g_logits
    g_b = g_logits.sum(axis=0)
    grad = np.concatenate([g_w.ravel(), g_b])
    loss = _loss_value(sup, unsup, {"labeled": n_lab, "unlabeled": n_unlab})
    return loss, grad


def vision_loss_and_grad(
    model: ModelHandle, batch: VisionBatch, cfg: DetectionLossConfig = DetectionLossConfig()
) -> tuple[LossValue, np.ndarray]:
    lab = np.asarray(batch.labeled, dtype=bool)
    if len(batch.features) == 0:
        raise ValueError("batch must contain at least one item")
    if len(batch.features) != len(batch.targets) or lab.shape != (len(batch.features),):
        raise ValueError("features, targets and labeled mask must align")
    w_cls, b_cls, w_reg, b_reg = _vision_views(model)
    anchor_boxes = model_anchors(model)
    n_lab, n_unlab = int(lab.sum()), int((~lab).sum())
    f, k = w_cls.shape
    g_w_cls = np.zeros_like(w_cls)
    g_b_cls = np.zeros_like(b_cls)
    g_w_reg = np.zeros_like(w_reg)
    g_b_reg = np.zeros_like(b_reg)
    sums = {True: 0.0, False: 0.0}
    for features, target, is_lab in zip(batch.features, batch.targets, lab):
        is_lab = bool(is_lab)
        if not is_lab and len(target) == 0:
            continue
        probs = _sigmoid(features @ w_cls + b_cls)
        reg = features @ w_reg + b_reg
        assigned, pos, ignore = match_anchors(
            anchor_boxes, target.boxes, cfg.match_pos_iou, cfg.match_neg_iou
        )
        valid = ~ignore
        cls_targets = np.zeros_like(probs)
        if pos.any():
            cls_targets[pos, target.categories[assigned[pos]]] = 1.0
        n_pos = int(pos.sum())
        norm = max(1, n_pos)
        scale = (1.0 / max(1, n_lab)) if is_lab else (cfg.unsup_weight / max(1, n_unlab))

        cls_loss = float(
            focal_terms(probs[valid], cls_targets[valid], cfg.focal_alpha, cfg.focal_gamma).sum()
        ) / norm
        g_logits = focal_grad_logits(probs, cls_targets, cfg.focal_alpha, cfg.focal_gamma)
        g_logits[ignore] = 0.0
        g_logits *= scale / norm
        g_w_cls += features.T @ g_logits
        g_b_cls += g_logits.sum(axis=0)

        reg_loss = 0.0
        if n_pos:
            enc = encode_offsets(anchor_boxes[pos], target.boxes[assigned[pos]])
            diff = reg[pos] - enc
            reg_loss = smooth_l1(reg[pos], enc, cfg.smooth_l1_beta) / norm
            g_reg_rows = smooth_l1_grad(diff, cfg.smooth_l1_beta) * (scale / norm)
            g_w_reg += features[pos].T @ g_reg_rows
            g_b_reg += g_reg_rows.sum(axis=0)
        sums[is_lab] += cls_loss + reg_loss
    sup = sums[True] / max(1, n_lab) if n_lab else 0.0
    unsup = cfg.unsup_weight * sums[False] / max(1, n_unlab) if n_unlab else 0.0
    grad = np.concatenate([g_w_cls.ravel(), g_b_cls, g_w_reg.ravel(), g_b_reg])
    loss = _loss_value(sup, unsup, {"labeled": n_lab, "unlabeled": n_unlab})
    return loss, grad


def batch_loss_and_grad(model: ModelHandle, batch, loss_spec) -> tuple[LossValue, np.ndarray]:
    if model.role == ROLE_REPORT:
        return report_loss_and_grad(model, batch, loss_spec)
    return vision_loss_and_grad(model, batch, loss_spec)


def analytic_gradient(model: ModelHandle, batch, loss_spec) -> np.ndarray:
    """Exact gradient of the batch loss w.r.t. the flat parameter vector.

    Works on frozen models too: freezing gates updates, not differentiation.
    """
    _, grad = batch_loss_and_grad(model, batch, loss_spec)
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient")
    return grad


# ----------------------------------------------------------------------
# Checkpoint I/O. Layout (little-endian throughout):
#   8-byte magic "CODISTIL"
#   uint32 header length
#   UTF-8 JSON header: schema_version, role, arch_meta, rng_seed,
#                      generation, frozen, param_count
#   param_count float64 parameters
#   param_count float64 optimizer velocities
# ----------------------------------------------------------------------


def save_checkpoint(model: ModelHandle, path, generation: int | None = None) -> None:
    header = {
        "schema_version": 1,
        "role": model.role,
        "arch_meta": model.arch_meta,
        "rng_seed": model.rng_seed,
        "generation": generation,
        "frozen": model.frozen,
        "param_count": int(model.params.size),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(np.ascontiguousarray(model.params, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(model.velocity, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ModelHandle, dict]:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a codistill checkpoint (bad magic {magic!r})")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        if header.get("schema_version") != 1:
            raise ValueError(f"{path}: unsupported checkpoint schema {header.get('schema_version')}")
        n = header["param_count"]
        params = np.frombuffer(f.read(8 * n), dtype="<f8").astype(float)
        velocity = np.frombuffer(f.read(8 * n), dtype="<f8").astype(float)
    model = ModelHandle(
        role=header["role"],
        params=params,
        velocity=velocity,
        frozen=bool(header["frozen"]),
        rng_seed=int(header["rng_seed"]),
        arch_meta=dict(header["arch_meta"]),
    )
    if model.frozen:
        model = freeze(model)
    return model, header
