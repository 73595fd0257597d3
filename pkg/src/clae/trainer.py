"""Adversarial contrastive pretraining loop.

Per batch: draw two stochastic views per image, craft adversarial copies
of the q-views against eval-mode statistics, embed p/q through the clean
BN branch and adversarial copies through the adversarial branch, and take
one optimizer step on L_aug + alpha * L_adv.  With alpha == 0 or no attack
configured, the step degenerates bit-exactly to plain contrastive
pretraining (per-stream rng keeps the draws aligned).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .attacks import AttackConfig, craft_adversarial
from .autodiff import Tensor
from .data import AugmentPolicy, Dataset, augment_batch
from .encoder import EncoderConfig, EncoderState, encode, init_encoder, project
from .errors import ContractError, NumericError
from .losses import LossConfig, ce_reformulation, simclr_loss
from .rng import stream

MetricsSink = Callable[[dict], None]


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1.0
    attack: Optional[AttackConfig] = AttackConfig()
    loss: LossConfig = LossConfig()
    augment: AugmentPolicy = AugmentPolicy()
    batch_size: int = 128
    epochs: int = 10
    optimizer: str = "sgd_momentum"  # sgd | sgd_momentum
    learning_rate: float = 0.015
    momentum_coef: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    bn_momentum_clean: float = 0.1
    bn_momentum_adv: float = 0.01
    # Which BN branch embeds the adversarial images for L_adv.
    adv_branch: str = "adversarial"
    # Ablation: adversarial pass still normalizes by batch stats but
    # leaves the running estimates untouched.
    freeze_adv_stats: bool = False

    def validate(self) -> None:
        if self.alpha < 0:
            raise ContractError("alpha must be >= 0")
        if self.batch_size < 2:
            raise ContractError("batch_size must be >= 2")
        if not self.learning_rate > 0:
            raise ContractError("learning_rate must be > 0")
        if self.optimizer not in ("sgd", "sgd_momentum"):
            raise ContractError(f"unknown optimizer {self.optimizer!r}")
        if self.adv_branch not in ("clean", "adversarial"):
            raise ContractError(f"unknown adv_branch {self.adv_branch!r}")
        self.loss.validate()
        self.augment.validate()
        if self.attack is not None:
            self.attack.validate()


@dataclass
class TrainState:
    encoder: EncoderState
    velocity: list[np.ndarray] = field(default_factory=list)
    step: int = 0
    epoch: int = 0
    history: list[dict] = field(default_factory=list)


def init_train_state(cfg: TrainConfig, encoder_cfg: EncoderConfig) -> TrainState:
    cfg.validate()
    enc = init_encoder(encoder_cfg, cfg.seed,
                       bn_momentum_clean=cfg.bn_momentum_clean,
                       bn_momentum_adv=cfg.bn_momentum_adv)
    return TrainState(encoder=enc,
                      velocity=[np.zeros_like(p.data) for p in enc.parameters()])


def optimizer_step(params: list[Tensor], velocity: list[np.ndarray],
                   cfg: TrainConfig) -> None:
    """sgd: p -= lr (g + wd p); sgd_momentum: v = m v + g + wd p, p -= lr v."""
    lr, wd, m = cfg.learning_rate, cfg.weight_decay, cfg.momentum_coef
    for p, v in zip(params, velocity):
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if cfg.optimizer == "sgd":
            p.data -= lr * (g + wd * p.data)
        else:
            v *= m
            v += g + wd * p.data
            p.data -= lr * v


def _loss_pair(cfg: TrainConfig, zq: Tensor, zother: Tensor) -> Tensor:
    """L(anchors, keys) under the configured loss variant."""
    if cfg.loss.variant == "simclr":
        return simclr_loss(zother, zq, cfg.loss.tau)
    w = ad.mul(zother, 1.0 / cfg.loss.tau)
    return ce_reformulation(zq, w)


def _embed(images: np.ndarray, state: TrainState, cfg: TrainConfig,
           branch: str, update_stats: bool = True) -> Tensor:
    z = encode(images, state.encoder, branch=branch, mode="train",
               update_stats=update_stats)
    if state.encoder.config.use_projection_head:
        z = project(z, state.encoder)
    return z


def train_step(batch: np.ndarray, state: TrainState, cfg: TrainConfig) -> dict:
    """One update on a (B, C, H, W) batch of raw images."""
    cfg.validate()
    if len(batch) < 2:
        raise ContractError("train_step: batch size must be >= 2")
    rng_aug = stream(cfg.seed, "augment", state.step)
    views_p = augment_batch(batch, cfg.augment, rng_aug).reshape(len(batch), -1)
    views_q = augment_batch(batch, cfg.augment, rng_aug).reshape(len(batch), -1)

    use_adv = cfg.attack is not None and cfg.alpha > 0
    adv = None
    if use_adv:
        rng_attack = stream(cfg.seed, "attack", state.step)
        adv = craft_adversarial(views_q, state.encoder, cfg.loss, cfg.attack,
                                rng=rng_attack)

    zp = _embed(views_p, state, cfg, "clean")
    zq = _embed(views_q, state, cfg, "clean")
    loss_aug = _loss_pair(cfg, zq, zp)

    if use_adv:
        zr = _embed(adv.images_r, state, cfg, cfg.adv_branch,
                    update_stats=not cfg.freeze_adv_stats)
        loss_adv = _loss_pair(cfg, zq, zr)
        total = ad.add(loss_aug, ad.mul(loss_adv, cfg.alpha))
        l_adv = loss_adv.item()
    else:
        total = loss_aug
        l_adv = 0.0

    record = {
        "step": state.step,
        "epoch": state.epoch,
        "L_aug": loss_aug.item(),
        "L_adv": l_adv,
        "L_total": loss_aug.item() + cfg.alpha * l_adv,
        "linf_delta": float(np.abs(adv.delta).max()) if adv is not None else 0.0,
    }
    if not np.isfinite(record["L_total"]):
        raise NumericError("non-finite training loss", snapshot=record)

    params = state.encoder.parameters()
    ad.zero_grad(params)
    ad.backward(total)
    optimizer_step(params, state.velocity, cfg)
    ad.zero_grad(params)

    state.step += 1
    state.history.append(record)
    return record


def pretrain(dataset: Dataset, cfg: TrainConfig, encoder_cfg: EncoderConfig,
             sink: Optional[MetricsSink] = None,
             state: Optional[TrainState] = None) -> TrainState:
    """Run `epochs` passes over the dataset with per-epoch reshuffling."""
    if len(dataset) == 0:
        raise ContractError("pretrain: dataset is empty")
    if state is None:
        state = init_train_state(cfg, encoder_cfg)
    images = dataset.images
    n = len(dataset)
    for epoch in range(cfg.epochs):
        state.epoch = epoch
        perm = stream(cfg.seed, "shuffle", epoch).permutation(n)
        epoch_records = []
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            if len(idx) < 2:
                continue  # a trailing singleton has no negatives
            record = train_step(images[idx], state, cfg)
            epoch_records.append(record)
            if sink is not None:
                sink(record)
        if sink is not None and epoch_records:
            sink({
                "step": state.step,
                "epoch": epoch,
                "epoch_mean_L_aug": float(np.mean([r["L_aug"] for r in epoch_records])),
                "epoch_mean_L_adv": float(np.mean([r["L_adv"] for r in epoch_records])),
            })
    return state
