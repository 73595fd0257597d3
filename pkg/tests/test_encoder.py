import numpy as np
import pytest

import clae.autodiff as ad
from clae.autodiff import Tensor, backward, finite_diff_grad
from clae.encoder import (BatchNormState, EncoderConfig, bn_forward, bn_statistics,
                          encode, init_encoder, project)
from clae.errors import ContractError

SMALL = EncoderConfig(input_dim=6, hidden_dims=(5, 4), embed_dim=3)


def states_equal(a, b):
    from clae.checkpoint import state_arrays

    xa, xb = state_arrays(a), state_arrays(b)
    return set(xa) == set(xb) and all(np.array_equal(xa[k], xb[k]) for k in xa)


def test_init_is_deterministic():
    assert states_equal(init_encoder(SMALL, seed=7), init_encoder(SMALL, seed=7))


def test_init_differs_across_seeds():
    assert not states_equal(init_encoder(SMALL, seed=7), init_encoder(SMALL, seed=8))


def test_empty_hidden_dims_gives_linear_encoder():
    enc = init_encoder(EncoderConfig(input_dim=4, hidden_dims=(), embed_dim=3), seed=0)
    assert len(enc.weights) == 1 and not enc.bn
    z = encode(np.random.default_rng(0).normal(size=(2, 4)), enc)
    np.testing.assert_allclose(np.linalg.norm(z.data, axis=1), 1.0, atol=1e-9)


def test_zero_batch_encodes_to_finite_unit_rows():
    enc = init_encoder(SMALL, seed=3)
    for mode in ("eval", "train"):
        z = encode(np.zeros((4, 6)), enc, mode=mode, update_stats=False)
        assert np.all(np.isfinite(z.data))
        np.testing.assert_allclose(np.linalg.norm(z.data, axis=1), 1.0, atol=1e-9)


def test_config_validation():
    with pytest.raises(ContractError):
        init_encoder(EncoderConfig(input_dim=0), seed=0)
    with pytest.raises(ContractError):
        init_encoder(EncoderConfig(embed_dim=1), seed=0)


# -- batch norm -------------------------------------------------------------


def _plain_bn(width=2):
    return BatchNormState(Tensor(np.ones(width), requires_grad=True),
                          Tensor(np.zeros(width), requires_grad=True),
                          np.zeros(width), np.ones(width))


def test_bn_eval_identity():
    x = np.random.default_rng(0).normal(size=(4, 2))
    out = bn_forward(Tensor(x), _plain_bn(), "eval")
    np.testing.assert_allclose(out.data, x, atol=1e-5)


def test_bn_momentum_one_replaces_running_stats():
    st = _plain_bn()
    st.momentum = 1.0
    x = np.array([[1.0, 10.0], [3.0, 20.0], [5.0, 60.0], [7.0, 30.0]])
    bn_forward(Tensor(x), st, "train")
    np.testing.assert_allclose(st.running_mean, x.mean(axis=0), rtol=1e-14)
    np.testing.assert_allclose(st.running_var, x.var(axis=0), rtol=1e-14)


def test_bn_train_normalizes_fixture_batch():
    # hand oracle: column mean 0, population variance 1 after normalization
    st = _plain_bn()
    x = np.array([[1.0, -4.0], [2.0, 0.5], [3.0, 2.0], [10.0, 1.5]])
    out = bn_forward(Tensor(x), st, "train").data
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-6)
    np.testing.assert_allclose(out.var(axis=0), 1.0, atol=1e-4)
    expected = (x - x.mean(axis=0)) / np.sqrt(x.var(axis=0) + st.eps)
    np.testing.assert_allclose(out, expected, rtol=1e-12)


def test_bn_running_update_convention():
    st = _plain_bn()
    st.momentum = 0.25
    x = np.array([[0.0, 0.0], [4.0, 8.0]])
    bn_forward(Tensor(x), st, "train")
    np.testing.assert_allclose(st.running_mean, 0.75 * 0.0 + 0.25 * x.mean(axis=0))
    np.testing.assert_allclose(st.running_var, 0.75 * 1.0 + 0.25 * x.var(axis=0))


def test_bn_train_rejects_batch_of_one():
    with pytest.raises(ContractError):
        bn_forward(Tensor(np.ones((1, 2))), _plain_bn(), "train")


def test_bn_eval_never_mutates():
    st = _plain_bn()
    before = (st.running_mean.copy(), st.running_var.copy())
    bn_forward(Tensor(np.random.default_rng(1).normal(size=(5, 2))), st, "eval")
    np.testing.assert_array_equal(st.running_mean, before[0])
    np.testing.assert_array_equal(st.running_var, before[1])


def test_bn_gradcheck_train_and_eval():
    rng = np.random.default_rng(4)
    st = _plain_bn()
    st.gamma.data[:] = rng.normal(1.0, 0.2, size=2)
    st.beta.data[:] = rng.normal(size=2)
    combine = rng.normal(size=(5, 2))
    for mode in ("train", "eval"):
        def f(t):
            return ad.tsum(ad.mul(bn_forward(t, st, mode, update_stats=False), combine))

        x0 = rng.normal(size=(5, 2))
        t = Tensor(x0, requires_grad=True)
        backward(f(t))
        fd = finite_diff_grad(lambda a: f(Tensor(a)).item(), x0.copy())
        assert np.all(np.abs(t.grad - fd) <= 1e-4 * np.abs(fd) + 1e-7), mode


# -- dual-branch behaviour ---------------------------------------------------


def test_branches_identical_at_init():
    enc = init_encoder(SMALL, seed=5)
    x = np.random.default_rng(2).normal(size=(4, 6))
    zc = encode(x, enc, branch="clean", mode="eval")
    za = encode(x, enc, branch="adversarial", mode="eval")
    np.testing.assert_array_equal(zc.data, za.data)


def test_branch_isolation_under_training_pass():
    enc = init_encoder(SMALL, seed=5)
    adv_before = bn_statistics(enc, "adversarial")
    clean_before = bn_statistics(enc, "clean")
    x = np.random.default_rng(3).normal(size=(8, 6))
    encode(x, enc, branch="clean", mode="train")
    adv_after = bn_statistics(enc, "adversarial")
    assert all(np.array_equal(adv_before[k], adv_after[k]) for k in adv_before)
    assert any(not np.array_equal(clean_before[k], bn_statistics(enc, "clean")[k])
               for k in clean_before)

    clean_now = bn_statistics(enc, "clean")
    encode(x, enc, branch="adversarial", mode="train")
    assert all(np.array_equal(clean_now[k], bn_statistics(enc, "clean")[k])
               for k in clean_now)


def test_branches_diverge_after_different_updates():
    enc = init_encoder(SMALL, seed=5)
    rng = np.random.default_rng(4)
    encode(rng.normal(size=(8, 6)), enc, branch="clean", mode="train")
    encode(rng.normal(loc=2.0, size=(8, 6)), enc, branch="adversarial", mode="train")
    x = rng.normal(size=(4, 6))
    zc = encode(x, enc, branch="clean", mode="eval")
    za = encode(x, enc, branch="adversarial", mode="eval")
    assert not np.array_equal(zc.data, za.data)


def test_gamma_beta_shared_between_branches():
    enc = init_encoder(SMALL, seed=5)
    for layer in enc.bn:
        assert layer["clean"].gamma is layer["adversarial"].gamma
        assert layer["clean"].beta is layer["adversarial"].beta
    layer = enc.bn[0]
    layer["clean"].gamma.data += 0.5
    np.testing.assert_array_equal(layer["adversarial"].gamma.data,
                                  layer["clean"].gamma.data)


def test_eval_mode_purity_whole_encoder():
    enc = init_encoder(SMALL, seed=6)
    before = {**bn_statistics(enc, "clean"), **bn_statistics(enc, "adversarial")}
    encode(np.random.default_rng(5).normal(size=(8, 6)), enc, mode="eval")
    after = {**bn_statistics(enc, "clean"), **bn_statistics(enc, "adversarial")}
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_encode_determinism_bitwise():
    enc = init_encoder(SMALL, seed=9)
    x = np.random.default_rng(7).normal(size=(4, 6))
    a = encode(x, enc, mode="eval").data
    b = encode(x, enc, mode="eval").data
    np.testing.assert_array_equal(a, b)


def test_encode_rejects_bad_width_and_branch():
    enc = init_encoder(SMALL, seed=0)
    with pytest.raises(ContractError):
        encode(np.ones((2, 5)), enc)
    with pytest.raises(ContractError):
        encode(np.ones((2, 6)), enc, branch="dirty")


def test_unit_norm_rows_always():
    enc = init_encoder(SMALL, seed=1)
    z = encode(np.random.default_rng(8).normal(size=(16, 6)), enc, mode="eval")
    np.testing.assert_allclose(np.linalg.norm(z.data, axis=1), 1.0, atol=1e-9)


# -- projection head ----------------------------------------------------------


PROJ = EncoderConfig(input_dim=6, hidden_dims=(5,), embed_dim=4,
                     use_projection_head=True, projection_dim=4)


def test_project_identity_head():
    enc = init_encoder(PROJ, seed=2)
    enc.proj_weight.data[:] = np.eye(4)
    enc.proj_bias.data[:] = 0.0
    z = encode(np.random.default_rng(9).normal(size=(3, 6)), enc, mode="eval")
    p = project(z, enc)
    np.testing.assert_allclose(p.data, z.data, rtol=1e-10)


def test_project_unit_rows_and_disabled_error():
    enc = init_encoder(PROJ, seed=2)
    z = encode(np.random.default_rng(10).normal(size=(3, 6)), enc, mode="eval")
    p = project(z, enc)
    np.testing.assert_allclose(np.linalg.norm(p.data, axis=1), 1.0, atol=1e-9)
    plain = init_encoder(SMALL, seed=0)
    with pytest.raises(ContractError):
        project(Tensor(np.ones((2, 3))), plain)


def test_project_gradcheck():
    enc = init_encoder(PROJ, seed=4)
    combine = np.random.default_rng(11).normal(size=(3, 4))

    def f(t):
        return ad.tsum(ad.mul(project(t, enc), combine))

    x0 = np.random.default_rng(12).normal(size=(3, 4))
    t = Tensor(x0, requires_grad=True)
    backward(f(t))
    fd = finite_diff_grad(lambda a: f(Tensor(a)).item(), x0.copy())
    assert np.all(np.abs(t.grad - fd) <= 1e-4 * np.abs(fd) + 1e-7)
