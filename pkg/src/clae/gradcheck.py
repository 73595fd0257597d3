"""Finite-difference verification suites for every differentiable path.

Each suite compares the analytic gradient of one operation against the
central-difference oracle on seeded random instances.  Pass criterion per
coordinate: |g - fd| <= REL_TOL * |fd| + ABS_FLOOR.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward, finite_diff_grad
from .encoder import EncoderConfig, bn_forward, encode, init_encoder, project
from .losses import ce_reformulation, contrastive_loss, simclr_loss, softmax_ce

REL_TOL = 1e-4
ABS_FLOOR = 1e-7
FD_STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    instances: int
    worst_error: float
    worst_tolerance: float
    passed: bool


def _unit_rows(rng, b, d):
    z = rng.normal(size=(b, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _compare(name: str, analytic: np.ndarray, fd: np.ndarray,
             corrupt: bool) -> tuple[float, float]:
    if corrupt:
        analytic = analytic + 1e-2
    err = np.abs(analytic - fd)
    tol = REL_TOL * np.abs(fd) + ABS_FLOOR
    i = int(np.argmax(err - tol))
    return float(err.flat[i]), float(tol.flat[i])


def _run_instances(name: str, instances: int, one_instance, corrupt_op=None) -> CheckResult:
    worst_err, worst_tol = 0.0, ABS_FLOOR
    worst_margin = -np.inf
    corrupt = corrupt_op == name
    for seed in range(instances):
        analytic, fd = one_instance(np.random.default_rng(seed))
        err, tol = _compare(name, analytic, fd, corrupt)
        if err - tol > worst_margin:
            worst_err, worst_tol, worst_margin = err, tol, err - tol
    return CheckResult(name, instances, worst_err, worst_tol,
                       passed=worst_err <= worst_tol)


def _grad_of(build_loss, x0: np.ndarray):
    t = Tensor(x0, requires_grad=True)
    backward(build_loss(t))
    fd = finite_diff_grad(lambda a: build_loss(Tensor(a)).item(), x0.copy(), h=FD_STEP)
    return t.grad, fd


def check_plain_loss(instances: int, corrupt_op=None) -> CheckResult:
    def one(rng):
        zq = _unit_rows(rng, 3, 4)
        x0 = rng.normal(size=(3, 4))
        return _grad_of(lambda t: contrastive_loss(t, zq, 0.2), x0)

    return _run_instances("plain_loss", instances, one, corrupt_op)


def check_reformulated_loss(instances: int, corrupt_op=None) -> CheckResult:
    def one(rng):
        w = rng.normal(size=(3, 4))
        x0 = rng.normal(size=(3, 4))
        return _grad_of(lambda t: ce_reformulation(t, Tensor(w)), x0)

    return _run_instances("reformulated_loss", instances, one, corrupt_op)


def check_simclr_loss(instances: int, corrupt_op=None) -> CheckResult:
    def one(rng):
        z2 = _unit_rows(rng, 3, 4)
        x0 = rng.normal(size=(3, 4))
        return _grad_of(lambda t: simclr_loss(t, z2, 0.5), x0)

    return _run_instances("simclr_loss", instances, one, corrupt_op)


def check_softmax_ce(instances: int, corrupt_op=None) -> CheckResult:
    def one(rng):
        labels = rng.integers(0, 4, size=3)
        x0 = rng.normal(size=(3, 4))
        return _grad_of(lambda t: softmax_ce(t, labels), x0)

    return _run_instances("softmax_ce", instances, one, corrupt_op)


def _bn_state(rng, width):
    from .encoder import BatchNormState

    gamma = Tensor(rng.normal(1.0, 0.1, size=width), requires_grad=True)
    beta = Tensor(rng.normal(0.0, 0.1, size=width), requires_grad=True)
    return BatchNormState(gamma, beta,
                          rng.normal(size=width), rng.uniform(0.5, 1.5, size=width))


def check_bn_train(instances: int, corrupt_op=None) -> CheckResult:
    def one(rng):
        st = _bn_state(rng, 3)
        x0 = rng.normal(size=(5, 3))
        return _grad_of(
            lambda t: ad.tsum(ad.mul(bn_forward(t, st, "train", update_stats=False),
                                     rng_weights)), x0)

    # fixed combining weights make the scalar objective generic
    rng_weights = np.random.default_rng(12345).normal(size=(5, 3))
    return _run_instances("bn_train", instances, one, corrupt_op)


def check_bn_eval(instances: int, corrupt_op=None) -> CheckResult:
    rng_weights = np.random.default_rng(23456).normal(size=(5, 3))

    def one(rng):
        st = _bn_state(rng, 3)
        x0 = rng.normal(size=(5, 3))
        return _grad_of(
            lambda t: ad.tsum(ad.mul(bn_forward(t, st, "eval"), rng_weights)), x0)

    return _run_instances("bn_eval", instances, one, corrupt_op)


_SMALL_ENCODER = EncoderConfig(input_dim=6, hidden_dims=(5,), embed_dim=4,
                               use_projection_head=True, projection_dim=3)


def check_encode(instances: int, corrupt_op=None) -> CheckResult:
    rng_weights = np.random.default_rng(34567).normal(size=(4, 4))

    def one(rng):
        enc = init_encoder(_SMALL_ENCODER, seed=int(rng.integers(1 << 30)))
        x0 = rng.normal(size=(4, 6))
        return _grad_of(
            lambda t: ad.tsum(ad.mul(encode(t, enc, mode="train", update_stats=False),
                                     rng_weights)), x0)

    return _run_instances("encode", instances, one, corrupt_op)


def check_project(instances: int, corrupt_op=None) -> CheckResult:
    rng_weights = np.random.default_rng(45678).normal(size=(4, 3))

    def one(rng):
        enc = init_encoder(_SMALL_ENCODER, seed=int(rng.integers(1 << 30)))
        x0 = _unit_rows(rng, 4, 4) * rng.uniform(0.5, 1.5)
        return _grad_of(lambda t: ad.tsum(ad.mul(project(t, enc), rng_weights)), x0)

    return _run_instances("project", instances, one, corrupt_op)


def check_attack_objective(instances: int, corrupt_op=None) -> CheckResult:
    def one(rng):
        enc = init_encoder(_SMALL_ENCODER, seed=int(rng.integers(1 << 30)))
        x0 = rng.uniform(0.2, 0.8, size=(4, 6))

        def objective(t):
            z = encode(t, enc, branch="clean", mode="eval")
            return contrastive_loss(z, z, 0.2)

        return _grad_of(objective, x0)

    return _run_instances("attack_objective", instances, one, corrupt_op)


SCOPES = {
    "losses": [check_plain_loss, check_reformulated_loss, check_simclr_loss,
               check_softmax_ce],
    "encoder": [check_bn_train, check_bn_eval, check_encode, check_project],
    "attack": [check_attack_objective],
}


def run_gradcheck(scope: str = "all", instances: int = 100,
                  corrupt_op=None) -> list[CheckResult]:
    scopes = list(SCOPES) if scope == "all" else [scope]
    results = []
    for s in scopes:
        if s not in SCOPES:
            raise KeyError(f"unknown gradcheck scope {s!r}")
        for check in SCOPES[s]:
            results.append(check(instances, corrupt_op=corrupt_op))
    return results
