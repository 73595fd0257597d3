"""Desk-scale contrastive learning with adversarial augmentations.

Crafts adversarial views that maximize the batch contrastive loss, trains
an encoder with dual batch-normalization branches, and evaluates the
frozen representation with kNN and a linear probe.
"""

from .attacks import (AdversarialBatch, AttackConfig, craft_adversarial,
                      fgsm_supervised, perturbation_report)
from .autodiff import Tensor, backward, finite_diff_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, dump_config, load_config, run_id
from .data import (AugmentPolicy, Dataset, augment, load_cifar10,
                   load_cifar10_split, make_synthetic, save_cifar10)
from .encoder import (BatchNormState, EncoderConfig, EncoderState, bn_forward,
                      encode, init_encoder, project)
from .errors import (ClaeError, ConfigError, ContractError, DataFormatError,
                     NumericError)
from .evaluate import (EvalReport, FeatureBank, extract_features, knn_eval,
                       linear_probe)
from .losses import (LossConfig, ReformulatedWeights, ce_reformulation,
                     contrastive_loss, simclr_loss, softmax_ce)
from .trainer import (TrainConfig, TrainState, init_train_state, optimizer_step,
                      pretrain, train_step)

__version__ = "0.1.0"
