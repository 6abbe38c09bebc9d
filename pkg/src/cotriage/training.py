"""Training loop for the decision model.

Binary cross-entropy on the trajectory score (optionally plus an auxiliary
per-sentence term), Adam updates, early stopping on validation ROC-AUC.
Minibatches are padded to the longest trajectory in the batch; the model's
masking makes padding inert, so batch composition cannot change any
trajectory's forward value.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyDataset
from .features import FeatureSequence
from .model import ModelConfig, backward, forward, init_params

_CLIP_LO = 1e-7
_CLIP_HI = 1.0 - 1e-7

LOSS_VARIANTS = ("final", "final_aux")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    loss_variant: str = "final"
    aux_weight: float = 0.5
    class_weights: bool = True

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("lr, batch_size, max_epochs and patience must be positive")
        if self.loss_variant not in LOSS_VARIANTS:
            raise ValueError(f"loss_variant must be one of {LOSS_VARIANTS}")
        if self.aux_weight < 0:
            raise ValueError("aux_weight must be non-negative")


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    log: list[dict]
    best_epoch: int
    best_val_auc: float


def bce(q: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Elementwise BCE with probabilities clipped to [1e-7, 1 - 1e-7]."""
    qc = np.clip(q, _CLIP_LO, _CLIP_HI)
    return -(y * np.log(qc) + (1.0 - y) * np.log(1.0 - qc))


def _bce_dq(q: np.ndarray, y: np.ndarray) -> np.ndarray:
    """d BCE(clip(q), y) / dq: zero where the clip is active."""
    qc = np.clip(q, _CLIP_LO, _CLIP_HI)
    inside = (q > _CLIP_LO) & (q < _CLIP_HI)
    return np.where(inside, -y / qc + (1.0 - y) / (1.0 - qc), 0.0)


def pad_batch(seqs: Sequence[FeatureSequence]) -> tuple[np.ndarray, np.ndarray]:
    """Stack sequences into (B, Tmax, D) features and a (B, Tmax) mask."""
    if not seqs:
        raise EmptyDataset("cannot pad an empty batch")
    t_max = max(s.x.shape[0] for s in seqs)
    d = seqs[0].x.shape[1]
    x = np.zeros((len(seqs), t_max, d))
    mask = np.zeros((len(seqs), t_max))
    for i, s in enumerate(seqs):
        t = s.x.shape[0]
        x[i, :t] = s.x
        mask[i, :t] = s.mask
    return x, mask


def batch_loss(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    x: np.ndarray,
    mask: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray | None = None,
    variant: str = "final",
    aux_weight: float = 0.5,
    with_grads: bool = True,
):
    """Scalar training loss over a padded batch, optionally with gradients.

    The final-score BCE is a weighted mean over examples; the auxiliary
    variant adds aux_weight times the weighted mean of each example's mean
    per-sentence BCE over its valid positions.
    """
    if variant not in LOSS_VARIANTS:
        raise ValueError(f"unknown loss variant {variant!r}")
    y = np.asarray(y, dtype=np.float64)
    b = len(y)
    if weights is None:
        weights = np.ones(b)
    q, scores, cache = forward(params, cfg, x, mask, want_cache=with_grads)
    loss = float(np.mean(weights * bce(scores, y)))
    if variant == "final_aux":
        lengths = np.asarray(mask, dtype=np.float64).sum(axis=1)
        per_pos = bce(q, y[:, None]) * mask
        aux = per_pos.sum(axis=1) / lengths
        loss += aux_weight * float(np.mean(weights * aux))
    if not with_grads:
        return loss, None

    lengths_i = cache["lengths"]
    dq = np.zeros_like(q)
    dq[np.arange(b), lengths_i - 1] = weights * _bce_dq(scores, y) / b
    if variant == "final_aux":
        lengths = mask.sum(axis=1)
        dq += (
            aux_weight
            * (weights / (b * lengths))[:, None]
            * _bce_dq(q, y[:, None])
            * mask
        )
    return loss, backward(params, cfg, cache, dq)


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    if not state.m:
        for name, p in params.items():
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for name in sorted(params):
        g = grads[name]
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        params[name] -= lr * (state.m[name] / bc1) / (np.sqrt(state.v[name] / bc2) + eps)


def roc_auc(labels: np.ndarray, scores: np.ndarray) -> float:
    """Rank-based AUC with average ranks for ties; 0.5 if a class is absent."""
    labels = np.asarray(labels, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return 0.5
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j < len(scores) and sorted_scores[j] == sorted_scores[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + 1 + j)
        i = j
    pos_rank_sum = ranks[labels].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def class_weight_vector(labels: np.ndarray) -> np.ndarray:
    """Inverse-frequency weights normalized to mean 1; uniform if one class."""
    labels = np.asarray(labels, dtype=bool)
    n = len(labels)
    n_pos = int(labels.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        return np.ones(n)
    w = np.where(labels, n / (2.0 * n_pos), n / (2.0 * n_neg))
    return w


def score_features(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    seqs: Sequence[FeatureSequence],
    batch_size: int = 256,
) -> np.ndarray:
    """Trajectory scores for many sequences, batched for speed."""
    out = np.empty(len(seqs))
    for lo in range(0, len(seqs), batch_size):
        chunk = seqs[lo : lo + batch_size]
        x, mask = pad_batch(chunk)
        _, scores, _ = forward(params, cfg, x, mask)
        out[lo : lo + len(chunk)] = scores
    return out


def train(
    train_seqs: Sequence[FeatureSequence],
    train_labels: Sequence[bool],
    val_seqs: Sequence[FeatureSequence],
    val_labels: Sequence[bool],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
) -> TrainResult:
    if not train_seqs or not val_seqs:
        raise EmptyDataset("training and validation sets must be non-empty")
    if len(train_seqs) != len(train_labels) or len(val_seqs) != len(val_labels):
        raise ValueError("labels must align with sequences")

    y_train = np.asarray(train_labels, dtype=np.float64)
    y_val = np.asarray(val_labels, dtype=bool)
    weights = (
        class_weight_vector(y_train.astype(bool))
        if train_cfg.class_weights
        else np.ones(len(y_train))
    )

    rng = np.random.default_rng(train_cfg.seed)
    params = init_params(model_cfg, train_cfg.seed)
    state = AdamState()
    n = len(train_seqs)

    best_auc = -np.inf
    best_epoch = -1
    best_params = {k: v.copy() for k, v in params.items()}
    log: list[dict] = []
    stale = 0

    for epoch in range(1, train_cfg.max_epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, train_cfg.batch_size):
            idx = perm[lo : lo + train_cfg.batch_size]
            x, mask = pad_batch([train_seqs[i] for i in idx])
            loss, grads = batch_loss(
                params,
                model_cfg,
                x,
                mask,
                y_train[idx],
                weights=weights[idx],
                variant=train_cfg.loss_variant,
                aux_weight=train_cfg.aux_weight,
            )
            adam_step(params, grads, state, train_cfg.lr)
            total += loss * len(idx)

        val_scores = score_features(params, model_cfg, val_seqs)
        auc = roc_auc(y_val, val_scores)
        acc = float(np.mean((val_scores >= 0.5) == y_val))
        log.append(
            {
                "epoch": epoch,
                "train_loss": total / n,
                "val_auc": auc,
                "val_acc_at_0.5": acc,
            }
        )
        if auc > best_auc:
            best_auc = auc
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= train_cfg.patience:
                break

    return TrainResult(params=best_params, log=log, best_epoch=best_epoch, best_val_auc=best_auc)


def write_training_log(path: str | Path, result: TrainResult) -> None:
    """CSV of per-epoch metrics plus a JSON pointer to the selected epoch."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_auc", "val_acc_at_0.5"])
        writer.writeheader()
        writer.writerows(result.log)
    best = {"best_epoch": result.best_epoch, "best_val_auc": result.best_val_auc}
    with open(path.with_suffix(".best.json"), "w", encoding="utf-8") as fh:
        json.dump(best, fh, sort_keys=True, indent=1)
        fh.write("\n")
