"""Downstream evaluation of frozen embeddings: weighted kNN and linear probe."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .encoder import EncoderState, encode
from .errors import ContractError
from .rng import stream


@dataclass
class FeatureBank:
    features: np.ndarray  # (N, d), unit-norm rows
    labels: np.ndarray    # (N,)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.features) != len(self.labels):
            raise ContractError("FeatureBank: feature/label count mismatch")
        if len(self.features):
            norms = np.linalg.norm(self.features, axis=1)
            if np.abs(norms - 1.0).max() > 1e-6:
                raise ContractError("FeatureBank: rows must be unit-norm")

    def __len__(self):
        return len(self.features)


@dataclass
class EvalReport:
    method: str
    accuracy: float
    config: dict = field(default_factory=dict)
    per_class_accuracy: dict[int, float] = field(default_factory=dict)


def extract_features(dataset: Dataset, encoder: EncoderState,
                     batch_size: int = 512) -> FeatureBank:
    """Eval-mode, clean-branch, pre-projection embeddings; deterministic."""
    flat = dataset.flattened()
    chunks = []
    for start in range(0, len(flat), batch_size):
        z = encode(flat[start:start + batch_size], encoder,
                   branch="clean", mode="eval")
        chunks.append(z.data)
    features = np.concatenate(chunks) if chunks else np.zeros((0, encoder.config.embed_dim))
    return FeatureBank(features, dataset.labels)


def _report(method: str, predictions: np.ndarray, labels: np.ndarray,
            config: dict) -> EvalReport:
    correct = predictions == labels
    per_class = {int(c): float(correct[labels == c].mean())
                 for c in np.unique(labels)}
    return EvalReport(method=method, accuracy=float(correct.mean()),
                      config=config, per_class_accuracy=per_class)


def knn_eval(train: FeatureBank, test: FeatureBank, k: int = 200,
             temperature: float = 0.1, weighted: bool = True) -> EvalReport:
    """Soft kNN: top-k cosine neighbors vote with weight exp(sim / T).

    Ties in the class scores go to the smallest class index.
    """
    if len(train) == 0 or len(test) == 0:
        raise ContractError("knn_eval: empty feature bank")
    if not 1 <= k <= len(train):
        raise ContractError(f"knn_eval: k={k} out of range for {len(train)} train rows")
    classes = int(train.labels.max()) + 1
    sims = test.features @ train.features.T
    if k < len(train):
        top = np.argpartition(-sims, k - 1, axis=1)[:, :k]
    else:
        top = np.broadcast_to(np.arange(len(train)), (len(test), len(train)))
    rows = np.arange(len(test))[:, None]
    top_sims = sims[rows, top]
    weights = np.exp(top_sims / temperature) if weighted else np.ones_like(top_sims)
    scores = np.zeros((len(test), classes))
    np.add.at(scores, (rows, train.labels[top]), weights)
    predictions = scores.argmax(axis=1)  # argmax takes the first (smallest) index on ties
    return _report("knn", predictions, test.labels,
                   {"k": k, "temperature": temperature, "weighted": weighted})


def default_k(n_train: int) -> int:
    """Desk-scale kNN default: min(200, n_train / 10), at least 1."""
    return max(1, min(200, n_train // 10))


def linear_probe(train: FeatureBank, test: FeatureBank, epochs: int = 100,
                 lr: float = 0.1, momentum: float = 0.9,
                 weight_decay: float = 0.0, batch_size: int = 256,
                 seed: int = 0) -> EvalReport:
    """Softmax regression on frozen features, trained with SGD+momentum."""
    classes = int(train.labels.max()) + 1
    if classes < 2:
        raise ContractError("linear_probe: needs >= 2 classes in the train labels")
    n, d = train.features.shape
    rng = stream(seed, "probe")
    w = rng.normal(0.0, 0.01, size=(d, classes))
    b = np.zeros(classes)
    vw, vb = np.zeros_like(w), np.zeros_like(b)
    onehot = np.eye(classes)[train.labels]
    for epoch in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            x, y = train.features[idx], onehot[idx]
            logits = x @ w + b
            logits -= logits.max(axis=1, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
            gl = (p - y) / len(idx)
            gw = x.T @ gl + weight_decay * w
            gb = gl.sum(axis=0)
            vw = momentum * vw + gw
            vb = momentum * vb + gb
            w -= lr * vw
            b -= lr * vb
    predictions = (test.features @ w + b).argmax(axis=1)
    return _report("linear_probe", predictions, test.labels,
                   {"epochs": epochs, "lr": lr, "momentum": momentum,
                    "weight_decay": weight_decay, "seed": seed})
