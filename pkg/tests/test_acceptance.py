"""End-to-end acceptance gate.

Each test covers one numbered criterion, asserts with the stated tolerance,
and prints a single ``ACCEPTANCE n ...: PASS|FAIL`` line (run with ``-s``
to see them live).  The trend check (criterion 7) is the long pole; the
whole module is meant to run in well under 30 minutes on a laptop-class
machine.
"""

import contextlib
import time

import numpy as np
import pytest

from clae.attacks import AttackConfig, craft_adversarial, perturbation_report
from clae.autodiff import Tensor
from clae.checkpoint import state_arrays
from clae.cli import main
from clae.config import RunConfig, apply_overrides, dump_config
from clae.data import AugmentPolicy, CIFAR_RECORD_BYTES, load_cifar10, make_synthetic
from clae.encoder import EncoderConfig, bn_statistics, init_encoder
from clae.evaluate import FeatureBank, extract_features, knn_eval, linear_probe
from clae.gradcheck import run_gradcheck
from clae.losses import LossConfig, ce_reformulation, contrastive_loss
from clae.metrics import read_metrics
from clae.rng import stream
from clae.trainer import TrainConfig, init_train_state, pretrain, train_step
from conftest import unit_rows


@contextlib.contextmanager
def criterion(n, label):
    try:
        yield
    except BaseException:
        print(f"\nACCEPTANCE {n} ({label}): FAIL")
        raise
    print(f"\nACCEPTANCE {n} ({label}): PASS")


def test_criterion_1_reformulation_identity():
    with criterion(1, "loss reformulation identity"):
        start = time.monotonic()
        cases = 0
        rng = np.random.default_rng(0)
        while cases < 500:
            for b in (1, 2, 4, 16, 32):
                for d in (4, 64):
                    for tau in (0.1, 0.5, 1.0):
                        zp, zq = unit_rows(rng, b, d), unit_rows(rng, b, d)
                        lhs = contrastive_loss(zp, zq, tau).item()
                        rhs = ce_reformulation(zq, Tensor(zp / tau)).item()
                        assert abs(lhs - rhs) < 1e-10, (b, d, tau)
                        cases += 1
        assert time.monotonic() - start < 10.0


def test_criterion_2_gradient_oracle():
    with criterion(2, "finite-difference gradient oracle"):
        start = time.monotonic()
        results = run_gradcheck(scope="all", instances=100)
        names = {r.name for r in results}
        assert {"plain_loss", "reformulated_loss", "simclr_loss", "bn_train",
                "bn_eval", "encode", "attack_objective"} <= names
        for r in results:
            assert r.passed, (r.name, r.worst_error, r.worst_tolerance)
            assert r.instances == 100
        assert time.monotonic() - start < 120.0


def test_criterion_3_perturbation_contract():
    with criterion(3, "perturbation contract"):
        enc = init_encoder(EncoderConfig(input_dim=12, hidden_dims=(8,),
                                         embed_dim=4), seed=0)
        loss = LossConfig(tau=0.2)
        batch = np.random.default_rng(1).uniform(0.2, 0.8, size=(8, 12))
        for method in ("fgsm", "r_fgsm", "f_fgsm", "pgd", "random"):
            for eps in (0.0, 0.03, 0.07):
                cfg = AttackConfig(method=method, epsilon=eps, steps=3,
                                   step_size=max(eps / 2, 0.01), random_init=True)
                adv = craft_adversarial(batch, enc, loss, cfg,
                                        rng=stream(2, "attack"))
                assert np.all(np.abs(adv.delta) <= eps + 1e-15), (method, eps)
                assert adv.images_r.min() >= 0.0 and adv.images_r.max() <= 1.0
                if method == "fgsm":
                    unclipped = (adv.images_r > 0.0) & (adv.images_r < 1.0)
                    mags = np.abs(adv.delta[unclipped])
                    assert np.all(np.isin(mags, [0.0, eps])), eps
        fgsm = craft_adversarial(batch, enc, loss,
                                 AttackConfig(method="fgsm", epsilon=0.03))
        pgd = craft_adversarial(batch, enc, loss,
                                AttackConfig(method="pgd", epsilon=0.03, steps=1,
                                             step_size=0.03, random_init=False))
        assert np.array_equal(fgsm.images_r, pgd.images_r)
        assert np.array_equal(fgsm.delta, pgd.delta)


def test_criterion_4_gradient_attack_beats_random():
    with criterion(4, "fgsm beats matched random noise"):
        start = time.monotonic()
        data = make_synthetic(10, 60, image_size=8, noise=0.05, seed=0)
        enc_cfg = EncoderConfig(input_dim=192, hidden_dims=(64,), embed_dim=16)
        cfg = TrainConfig(epochs=30, batch_size=64, seed=0,
                          attack=AttackConfig(method="fgsm", epsilon=0.03),
                          loss=LossConfig(tau=0.5))
        state = pretrain(data, cfg, enc_cfg)
        loss = LossConfig(tau=0.5)
        rng = stream(0, "attack")
        wins, gaps = 0, []
        for i in range(100):
            idx = rng.choice(len(data), size=32, replace=False)
            batch = data.images[idx].reshape(32, -1)
            f = craft_adversarial(batch, state.encoder, loss,
                                  AttackConfig(method="fgsm", epsilon=0.03))
            r = craft_adversarial(batch, state.encoder, loss,
                                  AttackConfig(method="random", epsilon=0.03),
                                  rng=stream(0, "attack", i))
            wins += f.loss_after > r.loss_after
            gaps.append(f.loss_after - r.loss_after)
        assert wins >= 95, wins
        assert np.mean(gaps) > 0.0
        assert time.monotonic() - start < 300.0


def _arrays_equal(a, b):
    xa, xb = state_arrays(a.encoder), state_arrays(b.encoder)
    return set(xa) == set(xb) and all(np.array_equal(xa[k], xb[k]) for k in xa)


def test_criterion_5_baseline_reduction():
    with criterion(5, "alpha=0 reduces to the attack-free baseline"):
        enc_cfg = EncoderConfig(input_dim=48, hidden_dims=(16,), embed_dim=8)
        batch_source = make_synthetic(5, 24, image_size=4, noise=0.05, seed=2)
        base = dict(batch_size=8, epochs=1, seed=3, loss=LossConfig(tau=0.5))
        cfg_a = TrainConfig(alpha=0.0,
                            attack=AttackConfig(method="fgsm", epsilon=0.03),
                            **base)
        cfg_b = TrainConfig(attack=None, **base)
        sa = init_train_state(cfg_a, enc_cfg)
        sb = init_train_state(cfg_b, enc_cfg)
        rng = np.random.default_rng(0)
        for _ in range(50):
            idx = rng.choice(len(batch_source), size=8, replace=False)
            ra = train_step(batch_source.images[idx], sa, cfg_a)
            rb = train_step(batch_source.images[idx], sb, cfg_b)
            assert ra["L_aug"] == rb["L_aug"]
            assert ra["L_total"] == rb["L_total"]
        assert _arrays_equal(sa, sb)


def test_criterion_6_dual_bn_isolation():
    with criterion(6, "dual batch-norm isolation"):
        enc_cfg = EncoderConfig(input_dim=48, hidden_dims=(16,), embed_dim=8)
        data = make_synthetic(5, 8, image_size=4, noise=0.05, seed=4)
        base = dict(batch_size=8, epochs=20, seed=5,
                    attack=AttackConfig(method="fgsm", epsilon=0.03),
                    loss=LossConfig(tau=0.5))
        full = pretrain(data, TrainConfig(**base), enc_cfg)
        ablated = pretrain(data, TrainConfig(freeze_adv_stats=True, **base), enc_cfg)
        assert full.step == 100  # 20 epochs x 5 batches
        clean_full = bn_statistics(full.encoder, "clean")
        clean_ablated = bn_statistics(ablated.encoder, "clean")
        assert all(np.array_equal(clean_full[k], clean_ablated[k])
                   for k in clean_full)
        adv = bn_statistics(full.encoder, "adversarial")
        diff = sum(np.linalg.norm(adv[k] - clean_full[k.replace(".adversarial.", ".clean.")])
                   for k in adv)
        assert diff > 0.0


def test_criterion_7_trend_check():
    with criterion(7, "CLAE vs baseline linear-probe trend"):
        start = time.monotonic()
        enc_cfg = EncoderConfig()  # default MLP, 768 -> (512, 256) -> 64
        train_set = make_synthetic(10, 500, image_size=16, noise=0.05, seed=100)
        test_set = make_synthetic(10, 100, image_size=16, noise=0.05, seed=101)

        def probe_accuracy(alpha, attack, seed):
            cfg = TrainConfig(alpha=alpha, attack=attack, epochs=50,
                              batch_size=128, seed=seed, loss=LossConfig(tau=0.5))
            state = pretrain(train_set, cfg, enc_cfg)
            rep = linear_probe(extract_features(train_set, state.encoder),
                               extract_features(test_set, state.encoder),
                               epochs=60, lr=0.5, seed=seed)
            return rep.accuracy

        clae_acc, base_acc = [], []
        for seed in (0, 1, 2):
            clae_acc.append(probe_accuracy(
                1.0, AttackConfig(method="fgsm", epsilon=0.03), seed))
            base_acc.append(probe_accuracy(0.0, None, seed))
        gap = np.mean(clae_acc) - np.mean(base_acc)
        print(f"\n  clae={np.mean(clae_acc):.4f} baseline={np.mean(base_acc):.4f} "
              f"gap={gap:+.4f}")
        assert gap >= -0.005, (clae_acc, base_acc)
        assert time.monotonic() - start < 900.0


SMALL_ARGS = [
    "--dataset", "synthetic",
    "--set", "data.classes=3", "--set", "data.per_class=8",
    "--set", "data.test_per_class=3", "--set", "data.image_size=4",
    "--set", "encoder.input_dim=48", "--set", "encoder.hidden_dims=[8]",
    "--set", "encoder.embed_dim=4", "--set", "train.batch_size=8",
]


def test_criterion_8_cli_determinism(tmp_path):
    with criterion(8, "byte-identical reruns from the config echo"):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["pretrain", "--out", str(out1), "--epochs", "2",
                     "--seed", "0", *SMALL_ARGS]) == 0
        assert main(["pretrain", "--config", str(out1 / "config.echo"),
                     "--out", str(out2)]) == 0
        assert (out1 / "encoder.ckpt").read_bytes() == (out2 / "encoder.ckpt").read_bytes()

        def stripped(path):
            return [{k: v for k, v in r.items() if k != "ts"}
                    for r in read_metrics(path)]

        assert stripped(out1 / "metrics.jsonl") == stripped(out2 / "metrics.jsonl")


def test_criterion_9_data_format_fixture(tmp_path, capsys):
    with criterion(9, "data-format fixture and rejection"):
        f = tmp_path / "one.bin"
        rec = np.empty(CIFAR_RECORD_BYTES, dtype=np.uint8)
        rec[0] = 7
        rec[1:] = np.arange(3072) % 256
        f.write_bytes(rec.tobytes())
        ds = load_cifar10(f)
        assert ds.labels[0] == 7
        channels = (np.arange(3072).reshape(3, 32, 32) % 256) / 255.0
        np.testing.assert_array_equal(ds.images[0], channels)

        root = tmp_path / "cifar"
        root.mkdir()
        for i in range(1, 6):
            (root / f"data_batch_{i}.bin").write_bytes(bytes(CIFAR_RECORD_BYTES - 1))
        assert main(["pretrain", "--dataset", "cifar10",
                     "--data-dir", str(root), "--out", str(tmp_path / "o"),
                     "--set", "encoder.input_dim=3072"]) == 2
        capsys.readouterr()


def test_criterion_10_eval_oracles():
    with criterion(10, "evaluation oracles"):
        # 6-point, 2-class hand fixture at k=3 against a brute-force vote table
        rng = np.random.default_rng(3)
        train_f = unit_rows(rng, 6, 4)
        train_y = np.array([0, 0, 0, 1, 1, 1])
        test_f = unit_rows(rng, 5, 4)
        expected = []
        for q in test_f:
            sims = train_f @ q
            top = np.argsort(-sims)[:3]
            votes = np.zeros(2)
            for j in top:
                votes[train_y[j]] += np.exp(sims[j] / 0.1)
            expected.append(int(votes.argmax()))
        report = knn_eval(FeatureBank(train_f, train_y),
                          FeatureBank(test_f, np.array(expected)), k=3)
        assert report.accuracy == 1.0

        # rotation invariance: orthogonal maps preserve every prediction
        q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        rotated = knn_eval(FeatureBank(train_f @ q, train_y),
                           FeatureBank(test_f @ q, np.array(expected)), k=3)
        assert rotated.accuracy == 1.0

        # linear probe saturates on a separable fixture
        centers = np.eye(3)
        feats, labels = [], []
        for c in range(3):
            pts = centers[c] + 0.05 * rng.normal(size=(30, 3))
            feats.append(pts / np.linalg.norm(pts, axis=1, keepdims=True))
            labels += [c] * 30
        bank = FeatureBank(np.vstack(feats), np.array(labels))
        assert linear_probe(bank, bank, epochs=50, lr=0.5).accuracy == 1.0
