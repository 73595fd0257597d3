"""Contrastive objectives and their cross-entropy reformulation.

All losses are pure functions of unit-norm embedding rows, built from the
autodiff primitives, averaged over the batch, and stabilized through
log-sum-exp.  `ce_reformulation` is the instance-classification view: with
weight rows w_k = z_k^p / tau it reproduces the plain contrastive loss
exactly, which is what turns adversarial crafting into a perturbation of
classifier weights coupling the whole batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError


@dataclass(frozen=True)
class LossConfig:
    variant: str = "plain"  # plain | simclr
    tau: float = 0.1

    def validate(self) -> None:
        if self.variant not in ("plain", "simclr"):
            raise ContractError(f"unknown loss variant {self.variant!r}")
        if not self.tau > 0:
            raise ContractError("tau must be > 0")


@dataclass
class ReformulatedWeights:
    """Classifier weights w_k for the instance-classification view."""

    W: Tensor  # (B, d), rows already divided by tau
    source: str = "augmentation"  # augmentation | adversarial


def _mean_ce_diag_labels(logits: Tensor) -> Tensor:
    """Mean cross entropy with label(i) = i over (B, B) logits."""
    b = logits.shape[0]
    eye = np.eye(b)
    picked = ad.tsum(ad.mul(logits, eye), axis=1)
    lse = ad.logsumexp(logits, axis=1)
    return ad.tmean(ad.sub(lse, picked))


def contrastive_loss(zp, zq, tau: float) -> Tensor:
    """Plain batch contrastive loss, anchors z_i^q against keys z_k^p.

    (1/B) sum_i -log[ exp(z_i^p . z_i^q / tau) / sum_k exp(z_k^p . z_i^q / tau) ];
    the denominator includes the k=i positive term.
    """
    zp, zq = ad.as_tensor(zp), ad.as_tensor(zq)
    if zp.shape != zq.shape or zp.data.ndim != 2:
        raise ContractError(f"contrastive_loss: shape mismatch {zp.shape} vs {zq.shape}")
    if zp.shape[0] == 0:
        raise ContractError("contrastive_loss: empty batch")
    logits = ad.mul(ad.matmul(zq, zp.T), 1.0 / float(tau))
    return _mean_ce_diag_labels(logits)


def ce_reformulation(zq, weights: Union[Tensor, ReformulatedWeights, np.ndarray]) -> Tensor:
    """Mean cross entropy of anchors z_i^q classified by weight rows w_k.

    Equals contrastive_loss(zp, zq, tau) exactly when W = zp / tau.
    """
    zq = ad.as_tensor(zq)
    w = weights.W if isinstance(weights, ReformulatedWeights) else ad.as_tensor(weights)
    if w.shape[0] != zq.shape[0]:
        raise ContractError(
            f"ce_reformulation: weight rows {w.shape[0]} != batch size {zq.shape[0]}")
    logits = ad.matmul(zq, w.T)
    return _mean_ce_diag_labels(logits)


def simclr_loss(z1, z2, tau: float) -> Tensor:
    """Symmetric normalized-temperature cross entropy over 2B views.

    Each view's positive is its counterpart in the other view set; the
    denominator runs over all other 2B-1 views (self-similarity excluded),
    averaged over all 2B anchors.
    """
    z1, z2 = ad.as_tensor(z1), ad.as_tensor(z2)
    if z1.shape != z2.shape or z1.data.ndim != 2:
        raise ContractError(f"simclr_loss: shape mismatch {z1.shape} vs {z2.shape}")
    b = z1.shape[0]
    if b < 2:
        raise ContractError("simclr_loss: needs batch size >= 2 (no negatives otherwise)")
    z = ad.concat_rows(z1, z2)
    sim = ad.mul(ad.matmul(z, z.T), 1.0 / float(tau))
    n = 2 * b
    # Finite large negative keeps exp() at exactly 0 without NaN risk.
    self_mask = np.where(np.eye(n) > 0, -1e30, 0.0)
    masked = ad.add(sim, self_mask)
    pos = np.zeros((n, n))
    idx = np.arange(n)
    pos[idx, (idx + b) % n] = 1.0
    positives = ad.tsum(ad.mul(sim, pos), axis=1)
    return ad.tmean(ad.sub(ad.logsumexp(masked, axis=1), positives))


def softmax_ce(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross entropy for integer labels (supervised path)."""
    logits = ad.as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    b, c = logits.shape
    if labels.shape != (b,):
        raise ContractError(f"softmax_ce: expected {b} labels, got {labels.shape}")
    onehot = np.zeros((b, c))
    onehot[np.arange(b), labels] = 1.0
    picked = ad.tsum(ad.mul(logits, onehot), axis=1)
    return ad.tmean(ad.sub(ad.logsumexp(logits, axis=1), picked))


def loss_for_variant(cfg: LossConfig, zp, zq) -> Tensor:
    cfg.validate()
    if cfg.variant == "plain":
        return contrastive_loss(zp, zq, cfg.tau)
    return simclr_loss(zp, zq, cfg.tau)
