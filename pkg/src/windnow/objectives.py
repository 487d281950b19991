"""Training objectives: InfoNCE over a momentum queue, supervised MSE,
and the dynamic weight blending them.

Both contrastive strategies share one softmax shape: a positive
similarity per anchor against a negative set (the MoCo queue, or the
other key embeddings in the window when the queue is disabled). By
default the positive term joins the denominator, which keeps the loss
non-negative and defined for an empty queue; the literal
queue-only denominator is available behind a config flag.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DomainError, ShapeError

STRATEGIES = ("augmented", "multistep", "none")


@dataclass
class ContrastiveConfig:
    strategy: str = "augmented"
    tau: float = 0.07
    mask_ratio: float = 0.3
    offset: int = 3
    use_moco: bool = True
    queue_capacity: int = 512
    momentum: float = 0.999
    include_positive: bool = True  # positive term inside the denominator

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if not (0.0 < self.mask_ratio < 1.0) and self.strategy == "augmented":
            raise ConfigError("mask_ratio must be in (0, 1)")
        if not (1 <= self.offset <= 6):
            raise ConfigError("offset must be in 1..6")
        if self.queue_capacity < 1:
            raise ConfigError("queue_capacity must be at least 1")
        if not (0.0 <= self.momentum <= 1.0):
            raise ConfigError("momentum must be in [0, 1]")


@dataclass
class LambdaSchedule:
    e_warmup: int = 20
    kappa: float = 10.0
    theta: float = 2.0


def lambda_value(epoch, previous_mae, schedule=None):
    """Contrastive weight: linear warm-up times a sigmoid gate on the
    previous epoch's MAE. Zero at epoch 0."""
    s = schedule or LambdaSchedule()
    if epoch < 0:
        raise ConfigError("epoch must be non-negative")
    if epoch == 0:
        return 0.0
    warmup = min(1.0, epoch / s.e_warmup)
    gate = 1.0 / (1.0 + math.exp(-s.kappa * (previous_mae - s.theta)))
    return warmup * gate


def cosine_sim(a, b):
    """Cosine similarity of two vectors; rejects zero vectors."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DomainError("cosine similarity undefined for zero vectors")
    return float(a @ b / (na * nb))


def l2_normalize_rows(x, eps=1e-12):
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(norms, eps)


class MoCoQueue:
    """FIFO of L2-normalized key embeddings used as negatives."""

    def __init__(self, capacity=512, dim=None):
        if capacity < 1:
            raise ConfigError("queue capacity must be at least 1")
        self.capacity = capacity
        self.dim = dim
        self._entries = None  # [q, d], oldest first

    def __len__(self):
        return 0 if self._entries is None else self._entries.shape[0]

    def push(self, keys):
        keys = np.atleast_2d(np.asarray(keys, dtype=np.float64))
        if self.dim is None:
            self.dim = keys.shape[1]
        elif keys.shape[1] != self.dim:
            raise ShapeError("key dimension does not match queue")
        keys = l2_normalize_rows(keys)
        if self._entries is None:
            self._entries = keys[-self.capacity:].copy()
        else:
            merged = np.concatenate([self._entries, keys], axis=0)
            self._entries = merged[-self.capacity:]

    def matrix(self):
        return None if self._entries is None else self._entries


def _normalized_rows_tensor(h):
    """Row-normalize a tracked tensor: h / max(||h||, eps)."""
    norms = ad.clip_min(ad.sqrt(ad.rowsum(ad.mul(h, h))), 1e-12)
    return ad.div(h, norms)


def _info_nce(h_anchor, positives, negatives, tau, include_positive,
              negative_mask=None):
    """Mean InfoNCE loss over anchors.

    h_anchor: tracked [m x d]; positives: constant [m x d] unit rows;
    negatives: constant [q x d] unit rows (or None); negative_mask:
    optional constant [m x q] zeroing invalid pairs.
    Returns (loss tensor, positive sims, negative sims) with the sims as
    plain arrays for diagnostics.
    """
    hn = _normalized_rows_tensor(h_anchor)
    pos = ad.rowsum(ad.mul(hn, Tensor(positives)))          # [m, 1]
    pos_scaled = ad.scale(pos, 1.0 / tau)
    terms = []
    neg_sims = None
    if negatives is not None and negatives.shape[0] > 0:
        sims = ad.matmul(hn, Tensor(negatives.T))           # [m, q]
        expd = ad.exp(ad.scale(sims, 1.0 / tau))
        if negative_mask is not None:
            expd = ad.mul(expd, Tensor(negative_mask))
            neg_sims = sims.data[negative_mask > 0]
        else:
            neg_sims = sims.data.ravel()
        terms.append(ad.rowsum(expd))
    if include_positive:
        terms.append(ad.exp(pos_scaled))
    if not terms:
        raise ConfigError("empty negative set with the positive excluded "
                          "from the denominator")
    denom = terms[0]
    for t in terms[1:]:
        denom = ad.add(denom, t)
    losses = ad.sub(ad.log(denom), pos_scaled)              # [m, 1]
    return ad.mean_all(losses), pos.data.ravel(), neg_sims


def augmented_loss(h, keys, queue, cfg):
    """Anchor = each node's embedding; positive = the key-encoder
    embedding of its feature-masked view.

    h: EmbeddingBatch from the query encoder; keys: constant array
    [(B*N) x d] from the key encoder. Without MoCo the negatives are the
    other nodes' keys within the same window.
    """
    keys_n = l2_normalize_rows(keys)
    if cfg.use_moco:
        negatives = queue.matrix() if queue is not None else None
        if negatives is None and not cfg.include_positive:
            raise ConfigError("empty queue requires the positive in the denominator")
        return _info_nce(h.h, keys_n, negatives, cfg.tau, cfg.include_positive)
    mask = _within_window_mask(h.n_windows, h.n_nodes, exclude_diagonal=True)
    return _info_nce(h.h, keys_n, keys_n, cfg.tau, cfg.include_positive,
                     negative_mask=mask)


def multistep_loss(h, future_keys, valid_window_mask, virtual_indices,
                   nearest_real, queue, cfg):
    """Anchor = virtual-node embedding at t; positive = key embedding of
    its nearest real node at t + offset.

    future_keys: constant [(B*N) x d] from the key encoder on the
    offset-shifted windows (rows of windows without a future are
    ignored). Returns (loss, pos sims, neg sims, n_valid).
    """
    n_windows, n_nodes = h.n_windows, h.n_nodes
    anchor_rows = []
    pos_rows = []
    for b in range(n_windows):
        if not valid_window_mask[b]:
            continue
        base = b * n_nodes
        anchor_rows.extend(base + virtual_indices)
        pos_rows.extend(base + nearest_real)
    n_valid = len(anchor_rows)
    if n_valid == 0:
        return None, np.array([]), np.array([]), 0
    anchor_rows = np.asarray(anchor_rows, dtype=np.int64)
    pos_rows = np.asarray(pos_rows, dtype=np.int64)

    h_virtual = ad.gather_rows(h.h, anchor_rows)
    keys_n = l2_normalize_rows(future_keys)
    positives = keys_n[pos_rows]
    if cfg.use_moco:
        negatives = queue.matrix() if queue is not None else None
        if negatives is None and not cfg.include_positive:
            raise ConfigError("empty queue requires the positive in the denominator")
        loss, pos, neg = _info_nce(h_virtual, positives, negatives, cfg.tau,
                                   cfg.include_positive)
    else:
        # negatives: every other key in the anchor's own window
        mask = np.zeros((n_valid, n_windows * n_nodes))
        for r, (a, p) in enumerate(zip(anchor_rows, pos_rows)):
            base = (a // n_nodes) * n_nodes
            mask[r, base: base + n_nodes] = 1.0
            mask[r, p] = 0.0
        loss, pos, neg = _info_nce(h_virtual, positives, keys_n, cfg.tau,
                                   cfg.include_positive, negative_mask=mask)
    return loss, pos, neg, n_valid


def _within_window_mask(n_windows, n_nodes, exclude_diagonal):
    r = n_windows * n_nodes
    mask = np.zeros((r, r))
    for b in range(n_windows):
        lo = b * n_nodes
        mask[lo: lo + n_nodes, lo: lo + n_nodes] = 1.0
    if exclude_diagonal:
        np.fill_diagonal(mask, 0.0)
    return mask


def supervised_mse(y_hat, y_true):
    """Mean over real-node rows of the squared L2 norm across leads and
    encoded targets."""
    if y_hat.data.shape != np.asarray(y_true).shape:
        raise ShapeError(f"prediction/target mismatch: {y_hat.data.shape} "
                         f"vs {np.asarray(y_true).shape}")
    if not np.all(np.isfinite(y_true)):
        raise ShapeError("targets contain non-finite values")
    diff = ad.sub(y_hat, Tensor(y_true))
    per_node = ad.rowsum(ad.mul(diff, diff))
    return ad.mean_all(per_node)


def total_loss(sup, contrast, lam):
    """L_sup + lambda * L_contrast."""
    if not (0.0 <= lam <= 1.0):
        raise ConfigError("lambda must lie in [0, 1]")
    if contrast is None or lam == 0.0:
        return sup
    return ad.add(sup, ad.scale(contrast, lam))
