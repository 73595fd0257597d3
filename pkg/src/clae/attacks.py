"""Adversarial augmentation crafting.

The unsupervised attack maximizes the batch contrastive loss with the
batch serving as both anchors and classifier weights: perturbing one image
moves a weight row that appears in every anchor's denominator, so each
pixel's gradient couples all images in the batch.  All sign-based methods
enforce an elementwise L-infinity budget |delta| <= epsilon and clip the
result to the valid pixel range.  Crafting always runs against eval-mode
clean-branch BN statistics and therefore never mutates encoder state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import EncoderState, encode
from .errors import ContractError
from .losses import LossConfig, contrastive_loss, softmax_ce

METHODS = ("fgsm", "r_fgsm", "f_fgsm", "pgd", "random")


@dataclass(frozen=True)
class AttackConfig:
    method: str = "fgsm"
    epsilon: float = 0.03
    steps: int = 1
    step_size: float = 0.0075
    random_init: bool = False
    clip_min: float = 0.0
    clip_max: float = 1.0

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ContractError(f"unknown attack method {self.method!r}")
        if self.epsilon < 0:
            raise ContractError("epsilon must be >= 0")
        if self.steps < 1:
            raise ContractError("steps must be >= 1")
        if self.steps > 1 and not self.step_size > 0:
            raise ContractError("step_size must be > 0 for multi-step attacks")
        if not self.clip_min < self.clip_max:
            raise ContractError("clip_min must be < clip_max")


@dataclass
class AdversarialBatch:
    images_r: np.ndarray     # perturbed views, clipped to the valid range
    delta: np.ndarray        # images_r - originals, |delta| <= epsilon
    loss_before: float
    loss_after: float


def _batch_self_loss(images: np.ndarray, encoder: EncoderState, tau: float,
                     with_grad: bool) -> tuple[float, Optional[np.ndarray]]:
    """Contrastive loss of a batch against itself; optionally its image grad."""
    x = Tensor(images, requires_grad=with_grad)
    z = encode(x, encoder, branch="clean", mode="eval")
    loss = contrastive_loss(z, z, tau)
    if not with_grad:
        return loss.item(), None
    ad.backward(loss)
    return loss.item(), x.grad


def craft_adversarial(batch_q: np.ndarray, encoder: EncoderState,
                      loss_cfg: LossConfig, cfg: AttackConfig,
                      rng: Optional[np.random.Generator] = None) -> AdversarialBatch:
    """Perturb a batch of q-views to maximize the batch contrastive loss.

    Sign methods share one loop parameterized by (random start, steps,
    step size); `random` is the matched-magnitude control that draws a
    uniformly random sign per pixel.
    """
    cfg.validate()
    x0 = np.asarray(batch_q, dtype=np.float64)
    if x0.ndim != 2 or x0.shape[0] < 2:
        raise ContractError("craft_adversarial: needs a flattened batch of >= 2 images")
    eps = float(cfg.epsilon)
    tau = loss_cfg.tau
    loss_before, _ = _batch_self_loss(x0, encoder, tau, with_grad=False)

    if eps == 0.0 and cfg.method != "random":
        return AdversarialBatch(x0.copy(), np.zeros_like(x0), loss_before, loss_before)

    if cfg.method == "random":
        if rng is None:
            raise ContractError("random method needs an rng")
        delta = eps * np.sign(rng.uniform(-1.0, 1.0, size=x0.shape))
    else:
        if cfg.method == "fgsm":
            init_scale, steps, step_size = 0.0, 1, eps
        elif cfg.method == "r_fgsm":
            init_scale, steps, step_size = eps / 2.0, 1, eps / 2.0
        elif cfg.method == "f_fgsm":
            init_scale, steps, step_size = eps, 1, cfg.step_size
        else:  # pgd
            init_scale = eps if cfg.random_init else 0.0
            steps, step_size = cfg.steps, cfg.step_size
        if init_scale > 0:
            if rng is None:
                raise ContractError(f"{cfg.method} needs an rng for its random start")
            delta = rng.uniform(-init_scale, init_scale, size=x0.shape)
        else:
            delta = np.zeros_like(x0)
        for _ in range(steps):
            x = np.clip(x0 + delta, cfg.clip_min, cfg.clip_max)
            _, grad = _batch_self_loss(x, encoder, tau, with_grad=True)
            delta = np.clip(delta + step_size * np.sign(grad), -eps, eps)

    raw = x0 + delta
    images_r = np.clip(raw, cfg.clip_min, cfg.clip_max)
    # keep the crafted delta bit-exact where clipping did not fire, so
    # unclipped fgsm coordinates carry |delta| == epsilon exactly
    delta = np.where(raw == images_r, delta, images_r - x0)
    loss_after, _ = _batch_self_loss(images_r, encoder, tau, with_grad=False)
    return AdversarialBatch(images_r, delta, loss_before, loss_after)


def fgsm_supervised(x: np.ndarray, y: np.ndarray, encoder: EncoderState,
                    class_weights: np.ndarray, cfg: AttackConfig) -> AdversarialBatch:
    """Untargeted supervised FGSM on an encoder + linear classifier.

    x_adv = clip(x + epsilon * sign(grad_x CE(x, y))); the gradient pass
    uses eval-mode clean-branch BN.
    """
    cfg.validate()
    if cfg.method != "fgsm":
        raise ContractError("fgsm_supervised requires cfg.method == 'fgsm'")
    x0 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(y, dtype=np.int64))

    def ce_of(images: np.ndarray, with_grad: bool):
        t = Tensor(images, requires_grad=with_grad)
        logits = ad.matmul(encode(t, encoder, branch="clean", mode="eval"),
                           ad.as_tensor(np.asarray(class_weights, dtype=np.float64)).T)
        loss = softmax_ce(logits, labels)
        if not with_grad:
            return loss.item(), None
        ad.backward(loss)
        return loss.item(), t.grad

    loss_before, _ = ce_of(x0, False)
    if cfg.epsilon == 0.0:
        return AdversarialBatch(x0.copy(), np.zeros_like(x0), loss_before, loss_before)
    _, grad = ce_of(x0, True)
    x_adv = np.clip(x0 + cfg.epsilon * np.sign(grad), cfg.clip_min, cfg.clip_max)
    loss_after, _ = ce_of(x_adv, False)
    return AdversarialBatch(x_adv, x_adv - x0, loss_before, loss_after)


def perturbation_report(adv: AdversarialBatch) -> dict[str, float]:
    """Diagnostics: max |delta|, mean per-image L2 norm, loss movement."""
    linf = float(np.abs(adv.delta).max()) if adv.delta.size else 0.0
    l2 = float(np.mean(np.linalg.norm(adv.delta, axis=1))) if adv.delta.size else 0.0
    return {
        "linf_norm": linf,
        "l2_norm": l2,
        "loss_delta": adv.loss_after - adv.loss_before,
    }
