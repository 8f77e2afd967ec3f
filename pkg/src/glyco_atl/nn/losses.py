"""Training losses with analytic gradients."""

from __future__ import annotations

import numpy as np


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient 2*(pred - target)/n."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / diff.size


def weighted_cross_entropy(logits: np.ndarray, labels, weights=None) -> tuple[float, np.ndarray]:
    """Per-sample-weighted multi-class cross-entropy over softmax scores.

    Accepts a single sample (logits shape (D,), integer label, scalar weight)
    or a batch (logits (B, D), labels (B,), weights (B,)); the batch loss is
    the mean of the weighted per-sample losses. Stabilized by max-subtraction.
    Returns (loss, gradient w.r.t. logits).
    """
    logits = np.asarray(logits, dtype=float)
    single = logits.ndim == 1
    if single:
        logits = logits[None, :]
    batch, n_classes = logits.shape
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    if labels.shape != (batch,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {batch}")
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise ValueError("label out of range")
    if weights is None:
        weights = np.ones(batch)
    else:
        weights = np.atleast_1d(np.asarray(weights, dtype=float))
        if np.any(weights <= 0):
            raise ValueError("weights must be > 0")

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    rows = np.arange(batch)
    loss = float(np.mean(-weights * log_probs[rows, labels]))

    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    grad *= weights[:, None] / batch
    if single:
        return loss, grad[0]
    return loss, grad


def domain_accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of samples whose argmax score matches the domain label."""
    return float(np.mean(np.argmax(logits, axis=1) == labels))
