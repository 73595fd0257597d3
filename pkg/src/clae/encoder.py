"""MLP embedding network with dual batch-normalization branches.

The encoder keeps two independent sets of running BN statistics per layer:
one fed by clean views, one fed by adversarial views (AdvProp-style
multi-domain normalization).  The affine BN parameters (gamma/beta) are
shared between branches so the eval-time encoder stays single-valued; only
the statistics split.  Embeddings are L2-normalized to unit rows before
any similarity is taken.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError
from .rng import stream

BRANCHES = ("clean", "adversarial")


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int = 768
    hidden_dims: tuple[int, ...] = (512, 256)
    embed_dim: int = 64
    use_projection_head: bool = False
    projection_dim: int = 64

    def validate(self) -> None:
        dims = (self.input_dim, *self.hidden_dims, self.embed_dim, self.projection_dim)
        if any(int(d) < 1 for d in dims):
            raise ContractError("all encoder dimensions must be >= 1")
        if self.embed_dim < 2:
            raise ContractError("embed_dim must be >= 2")


@dataclass
class BatchNormState:
    """Per-layer, per-branch normalization state.

    gamma/beta are Tensor objects shared with the sibling branch; the
    running statistics are branch-private.
    """

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5


@dataclass
class EncoderState:
    config: EncoderConfig
    seed: int
    weights: list[Tensor] = field(default_factory=list)
    biases: list[Tensor] = field(default_factory=list)
    bn: list[dict[str, BatchNormState]] = field(default_factory=list)
    proj_weight: Optional[Tensor] = None
    proj_bias: Optional[Tensor] = None

    def parameters(self) -> list[Tensor]:
        params = list(self.weights) + list(self.biases)
        for layer in self.bn:
            params.append(layer["clean"].gamma)
            params.append(layer["clean"].beta)
        if self.proj_weight is not None:
            params += [self.proj_weight, self.proj_bias]
        return params

    @property
    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grads(self) -> None:
        ad.zero_grad(self.parameters())


def init_encoder(config: EncoderConfig, seed: int,
                 bn_momentum_clean: float = 0.1,
                 bn_momentum_adv: float = 0.01) -> EncoderState:
    """Deterministically initialize an encoder from (config, seed).

    Both BN branches start with identical statistics (mean 0, var 1).
    Biases get a small nonzero init so that degenerate constant batches
    still map to nonzero pre-normalization embeddings.
    """
    config.validate()
    rng = stream(seed, "init")
    state = EncoderState(config=config, seed=int(seed))
    dims = [config.input_dim, *config.hidden_dims, config.embed_dim]
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        b = rng.uniform(-0.05, 0.05, size=(fan_out,))
        state.weights.append(Tensor(w, requires_grad=True))
        state.biases.append(Tensor(b, requires_grad=True))
    for width in config.hidden_dims:
        gamma = Tensor(np.ones(width), requires_grad=True)
        beta = Tensor(np.zeros(width), requires_grad=True)
        state.bn.append({
            "clean": BatchNormState(gamma, beta, np.zeros(width), np.ones(width),
                                    momentum=bn_momentum_clean),
            "adversarial": BatchNormState(gamma, beta, np.zeros(width), np.ones(width),
                                          momentum=bn_momentum_adv),
        })
    if config.use_projection_head:
        w = rng.normal(0.0, np.sqrt(2.0 / config.embed_dim),
                       size=(config.embed_dim, config.projection_dim))
        state.proj_weight = Tensor(w, requires_grad=True)
        state.proj_bias = Tensor(np.zeros(config.projection_dim), requires_grad=True)
    return state


def bn_forward(x: Tensor, state: BatchNormState, mode: str,
               update_stats: bool = True) -> Tensor:
    """Batch-normalize a (batch, features) tensor.

    train: normalize by batch statistics (population variance) and fold
    them into the running estimates with weight `momentum` on the new
    batch.  eval: normalize by the running statistics; never mutates them.
    """
    if mode not in ("train", "eval"):
        raise ContractError(f"bn_forward: unknown mode {mode!r}")
    x = ad.as_tensor(x)
    if x.data.ndim != 2 or x.shape[1] != state.gamma.size:
        raise ContractError(f"bn_forward: expected (batch, {state.gamma.size}) input, got {x.shape}")
    if mode == "train":
        if x.shape[0] < 2:
            raise ContractError("bn_forward: train mode needs batch size >= 2")
        mu = ad.tmean(x, axis=0, keepdims=True)
        centered = ad.sub(x, mu)
        var = ad.tmean(ad.mul(centered, centered), axis=0, keepdims=True)
        xn = ad.mul(centered, ad.power(ad.add(var, state.eps), -0.5))
        if update_stats:
            m = state.momentum
            state.running_mean = (1.0 - m) * state.running_mean + m * mu.data.reshape(-1)
            state.running_var = (1.0 - m) * state.running_var + m * var.data.reshape(-1)
    else:
        xn = ad.mul(ad.sub(x, state.running_mean),
                    (state.running_var + state.eps) ** -0.5)
    return ad.add(ad.mul(xn, state.gamma), state.beta)


def encode(images, state: EncoderState, branch: str = "clean",
           mode: str = "eval", update_stats: bool = True) -> Tensor:
    """Embed a flattened (batch, input_dim) batch into unit-norm rows.

    `branch` selects which BN statistics are read (eval) or updated
    (train); gradients flow to the input and every parameter either way.
    """
    if branch not in BRANCHES:
        raise ContractError(f"encode: unknown branch {branch!r}")
    x = ad.as_tensor(images)
    if x.data.ndim != 2 or x.shape[1] != state.config.input_dim:
        raise ContractError(
            f"encode: expected (batch, {state.config.input_dim}) input, got {x.shape}")
    h = x
    n_hidden = len(state.config.hidden_dims)
    for i in range(n_hidden):
        h = ad.add(ad.matmul(h, state.weights[i]), state.biases[i])
        h = bn_forward(h, state.bn[i][branch], mode, update_stats=update_stats)
        h = ad.relu(h)
    h = ad.add(ad.matmul(h, state.weights[n_hidden]), state.biases[n_hidden])
    return ad.l2_normalize(h)


def project(embeddings, state: EncoderState) -> Tensor:
    """Apply the projection head (loss-side only) and renormalize rows."""
    if not state.config.use_projection_head:
        raise ContractError("project: projection head is disabled in this config")
    z = ad.as_tensor(embeddings)
    return ad.l2_normalize(ad.add(ad.matmul(z, state.proj_weight), state.proj_bias))


def bn_statistics(state: EncoderState, branch: str) -> dict[str, np.ndarray]:
    """Copies of every running statistic of one branch (for purity checks)."""
    out = {}
    for i, layer in enumerate(state.bn):
        out[f"bn.{i}.{branch}.running_mean"] = layer[branch].running_mean.copy()
        out[f"bn.{i}.{branch}.running_var"] = layer[branch].running_var.copy()
    return out
