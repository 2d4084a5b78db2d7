import struct
import zlib
from dataclasses import replace

import numpy as np
import pytest
from sklearn.base import clone

from capsgan.autodiff import Tensor, ops
from capsgan.capsnet import CapsuleLayerParams, MarginLossConfig, primary_capsules, routed_capsule_layer
from capsgan.datasets import make_synthetic, to_signed11
from capsgan.gan import (GAN, CapsuleGAN, CheckpointChecksumError, CheckpointFormatError,
                         CheckpointTruncatedError, CheckpointVersionError, ConvolutionalGAN,
                         ParameterBudgetError, TrainingConfig,
                         TrainingDivergenceError, VariantMismatchError, build_model,
                         count_parameters, discriminate, generate, load_checkpoint, mnist_configs,
                         parameter_digest, save_checkpoint, synthetic_configs, train,
                         train_discriminator_step, train_generator_step)
from capsgan.gan import model as model_mod
from capsgan.gan.checkpoint import HEADER_SIZE, checkpoint_bytes, parse_checkpoint

from helpers import scalar_margin_loss


@pytest.fixture
def synthetic():
    return make_synthetic(seed=0)


def small(variant="capsule", seed=0, **training):
    g, d = synthetic_configs(variant)
    return build_model(g, d, TrainingConfig(seed=seed, batch_size=16, **training))


# -- generate / discriminate ---------------------------------------------------

def test_generate_deterministic():
    m = small()
    a, b = generate(m, 8, seed=3), generate(m, 8, seed=3)
    assert a.tobytes() == b.tobytes()
    assert generate(m, 8, seed=4).tobytes() != a.tobytes()


def test_mnist_generator_shape_and_variation():
    g, d = mnist_configs()
    m = build_model(g, d)
    x = generate(m, 256, seed=0)
    assert x.shape == (256, 1, 28, 28)
    assert np.all(np.abs(x) < 1)
    assert x.std() > 0


def test_default_capsule_discriminator_within_budget():
    g, d = mnist_configs("capsule")
    m = build_model(g, d)
    assert count_parameters(m.d_params) <= d.param_budget


def test_parameter_budget_enforced():
    g, d = synthetic_configs("capsule")
    with pytest.raises(ParameterBudgetError, match="budget"):
        build_model(g, replace(d, param_budget=100))


def test_mismatched_generator_and_discriminator_shapes():
    g, _ = synthetic_configs()
    _, d = mnist_configs()
    with pytest.raises(ValueError, match="does not match"):
        build_model(g, d)


@pytest.mark.parametrize("variant", ["capsule", "convolutional"])
def test_scores_in_unit_interval_and_batch_order_free(variant, synthetic):
    m = small(variant)
    x = to_signed11(synthetic.images[:12])
    s = discriminate(m, x)
    assert s.shape == (12,)
    assert np.all(s >= 0) and np.all(s <= 1)
    if variant == "capsule":
        assert np.all(s < 1)
    perm = np.random.RandomState(0).permutation(12)
    np.testing.assert_allclose(discriminate(m, x[perm]), s[perm], rtol=0, atol=1e-14)


def test_discriminate_rejects_wrong_shape():
    m = small()
    with pytest.raises(ValueError):
        discriminate(m, np.zeros((2, 1, 28, 28)))


def test_capsule_score_is_norm_of_routed_output(synthetic):
    m = small()
    cfg, p = m.discriminator, m.d_params
    x = to_signed11(synthetic.images[:5])
    # compose the capsule stack directly from the layer primitives
    conv = ops.conv2d(Tensor(x), Tensor(p["conv.k"].data), stride=cfg.conv_stride)
    conv = ops.leaky_relu(ops.bias_add(conv, Tensor(p["conv.b"].data)), cfg.slope)
    u = primary_capsules(conv, Tensor(p["primary.k"].data), Tensor(p["primary.b"].data),
                         capsule_dim=cfg.primary_dim, stride=cfg.primary_stride)
    v = routed_capsule_layer(u, CapsuleLayerParams(Tensor(p["caps.W"].data), cfg.routing_iters))
    expected = np.linalg.norm(v.data[:, 0, :], axis=-1)
    np.testing.assert_allclose(discriminate(m, x), expected, rtol=1e-14, atol=0)


# -- objectives ----------------------------------------------------------------

def _score_stub(real_value, fake_value, n):
    """A discriminator whose scores are trainable constants."""
    real_p = Tensor(np.full(n, real_value), requires_grad=True)
    fake_p = Tensor(np.full(n, fake_value), requires_grad=True)
    calls = []

    def forward(cfg, params, x):
        calls.append(x)
        return (real_p if len(calls) % 2 == 1 else fake_p), None

    return forward, real_p, fake_p


def test_capsule_discriminator_loss_zero_when_margins_met(monkeypatch):
    from capsgan.autodiff import backward
    m = small()
    forward, real_p, fake_p = _score_stub(0.9, 0.1, 4)
    monkeypatch.setattr(model_mod, "discriminator_forward", forward)
    loss = model_mod.discriminator_loss(m, Tensor(np.zeros((4, 1, 8, 8))),
                                        Tensor(np.zeros((4, 1, 8, 8))), m.d_params)
    assert loss.item() == 0.0
    grads = backward(loss, [real_p, fake_p])
    assert not np.any(grads[real_p]) and not np.any(grads[fake_p])


def test_capsule_generator_loss_zero_when_margin_met(monkeypatch):
    m = small()
    monkeypatch.setattr(model_mod, "discriminator_forward",
                        lambda cfg, p, x: (Tensor(np.full(x.shape[0], 0.9)), None))
    loss = model_mod.generator_loss(m, Tensor(np.zeros((6, 1, 8, 8))), m.d_params)
    assert loss.item() == 0.0


def test_discriminator_step_loss_matches_margin_oracle(synthetic):
    m = small()
    real = to_signed11(synthetic.images[:16])
    seed = 11
    fake = generate(m, 16, seed)
    real_scores = discriminate(m, real)
    fake_scores = discriminate(m, fake)
    expected = (np.mean([scalar_margin_loss(s, 1) for s in real_scores])
                + np.mean([scalar_margin_loss(s, 0) for s in fake_scores]))
    loss = train_discriminator_step(m, real, seed)
    assert abs(loss - expected) <= 1e-12


def test_generator_step_loss_matches_margin_oracle():
    m = small()
    seed = 12
    scores = discriminate(m, generate(m, 16, seed))
    expected = np.mean([max(0.0, 0.9 - s) ** 2 for s in scores])
    assert abs(train_generator_step(m, seed) - expected) <= 1e-12


def test_convolutional_losses_are_cross_entropy(synthetic):
    m = small("convolutional")
    real = to_signed11(synthetic.images[:16])
    fake = generate(m, 16, 5)
    r, f = discriminate(m, real), discriminate(m, fake)
    expected_d = -np.mean(np.log(r)) - np.mean(np.log(1 - f))
    assert abs(train_discriminator_step(m, real, 5) - expected_d) <= 1e-10
    g_scores = discriminate(m, generate(m, 16, 6))
    assert abs(train_generator_step(m, 6) - (-np.mean(np.log(g_scores)))) <= 1e-10


@pytest.mark.parametrize("variant", ["capsule", "convolutional"])
def test_steps_touch_only_their_own_player(variant, synthetic):
    m = small(variant)
    g0, d0 = parameter_digest(m.g_params), parameter_digest(m.d_params)
    train_discriminator_step(m, to_signed11(synthetic.images[:16]), 1)
    assert parameter_digest(m.g_params) == g0
    assert parameter_digest(m.d_params) != d0
    d1 = parameter_digest(m.d_params)
    train_generator_step(m, 2)
    assert parameter_digest(m.d_params) == d1
    assert parameter_digest(m.g_params) != g0


def test_generator_objective_independent_of_down_weight():
    results = []
    for lam in (0.1, 0.5, 1.0):
        m = small(margin=MarginLossConfig(lam=lam))
        loss, grads = train_generator_step(m, seed=9, return_grads=True)
        results.append((loss, {k: g.tobytes() for k, g in grads.items()}))
    assert results[0] == results[1] == results[2]


# -- training loop -------------------------------------------------------------

def test_train_rejects_zero_steps(synthetic):
    with pytest.raises(ValueError):
        train(small(), synthetic, 0)


def test_single_step_is_one_update_each(synthetic):
    m = small()
    h = train(m, synthetic, 1)
    assert m.d_opt.step_count == 1 and m.g_opt.step_count == 1
    assert len(h.d_loss) == len(h.g_loss) == 1
    assert m.step == 1


def test_training_is_deterministic(synthetic):
    h1 = train(small(), synthetic, 15)
    h2 = train(small(), synthetic, 15)
    assert h1.d_loss == h2.d_loss and h1.g_loss == h2.g_loss
    assert len(h1) == 15
    h3 = train(small(seed=1), synthetic, 15)
    assert h3.d_loss != h1.d_loss


def test_divergence_names_step(synthetic):
    m = small()
    train(m, synthetic, 3)
    m.d_params["caps.W"].data[...] = np.nan
    with pytest.raises(TrainingDivergenceError) as info:
        train(m, synthetic, 2)
    assert info.value.step == 3


def test_resume_matches_uninterrupted_run(synthetic, tmp_path):
    straight = small()
    h_full = train(straight, synthetic, 12)
    m = small()
    h_a = train(m, synthetic, 5)
    save_checkpoint(m, tmp_path / "mid.ckpt")
    resumed = load_checkpoint(tmp_path / "mid.ckpt")
    h_b = train(resumed, synthetic, 7)
    assert h_a.d_loss + h_b.d_loss == h_full.d_loss
    assert h_a.g_loss + h_b.g_loss == h_full.g_loss
    assert parameter_digest(resumed.g_params) == parameter_digest(straight.g_params)


# -- checkpoints ---------------------------------------------------------------

@pytest.mark.parametrize("variant", ["capsule", "convolutional"])
def test_checkpoint_round_trip_bit_exact(variant, synthetic, tmp_path):
    m = small(variant)
    train(m, synthetic, 3)
    path = tmp_path / "m.ckpt"
    save_checkpoint(m, path)
    back = load_checkpoint(path)
    assert back.config_dict() == m.config_dict()
    assert back.step == m.step == 3
    assert back.g_opt.step_count == 3 and back.d_opt.step_count == 3
    for a, b in ((m.g_params, back.g_params), (m.d_params, back.d_params)):
        assert a.keys() == b.keys()
        for k in a:
            assert a[k].data.tobytes() == b[k].data.tobytes()
    for a, b in ((m.g_opt, back.g_opt), (m.d_opt, back.d_opt)):
        for k in a.m:
            assert a.m[k].tobytes() == b.m[k].tobytes() and a.v[k].tobytes() == b.v[k].tobytes()
    assert generate(back, 10, 7).tobytes() == generate(m, 10, 7).tobytes()
    assert checkpoint_bytes(back) == path.read_bytes()


def test_corrupted_byte_is_checksum_error(tmp_path):
    blob = bytearray(checkpoint_bytes(small()))
    for pos in (HEADER_SIZE + 3, len(blob) // 2, len(blob) - 5, 10):
        bad = bytearray(blob)
        bad[pos] ^= 0x40
        with pytest.raises(CheckpointChecksumError):
            parse_checkpoint(bytes(bad))


def test_truncated_checkpoint(tmp_path):
    blob = checkpoint_bytes(small())
    for cut in (len(blob) - 1, len(blob) // 3, HEADER_SIZE, 5):
        with pytest.raises(CheckpointTruncatedError):
            parse_checkpoint(blob[:cut])


def test_version_mismatch():
    blob = bytearray(checkpoint_bytes(small()))
    blob[8:12] = struct.pack("<I", 99)
    blob[20:24] = struct.pack("<I", zlib.crc32(bytes(blob[:20])))
    with pytest.raises(CheckpointVersionError, match="99"):
        parse_checkpoint(bytes(blob))


def test_not_a_checkpoint(tmp_path):
    with pytest.raises(CheckpointFormatError):
        parse_checkpoint(b"PNG\x00" * 20)


def test_variant_guard(tmp_path):
    path = tmp_path / "caps.ckpt"
    save_checkpoint(small("capsule"), path)
    with pytest.raises(VariantMismatchError, match="capsule"):
        load_checkpoint(path, expected_variant="convolutional")
    assert load_checkpoint(path, expected_variant="capsule").variant == "capsule"


# -- estimator -----------------------------------------------------------------

def _estimator(**kw):
    g, d = synthetic_configs()
    return GAN(n_steps=5, batch_size=16, generator_config=g, discriminator_config=d, **kw)


def test_estimator_params_round_trip():
    est = _estimator(random_state=3)
    params = est.get_params()
    assert params["random_state"] == 3 and params["discriminator"] == "capsule"
    twin = clone(est)
    assert twin.get_params()["n_steps"] == 5
    est.set_params(discriminator="convolutional")
    assert est.discriminator == "convolutional"
    assert CapsuleGAN().discriminator == "capsule"
    assert ConvolutionalGAN().discriminator == "convolutional"


@pytest.mark.parametrize("variant", ["capsule", "convolutional"])
def test_estimator_fit_sample_score(variant, synthetic):
    est = _estimator(discriminator=variant).fit(synthetic.images[:200])
    assert len(est.history_) == 5
    x = est.sample(6, random_state=1)
    assert x.shape == (6, 1, 8, 8)
    assert x.min() >= 0 and x.max() <= 1
    s = est.decision_function(synthetic.images[:4])
    assert s.shape == (4,) and np.all((s >= 0) & (s <= 1))
    assert set(est.predict(synthetic.images[:4]).tolist()) <= {0, 1}
    est.partial_fit(synthetic.images[:200], n_steps=2)
    assert est.model_.step == 7


def test_estimator_validates_inputs(synthetic):
    with pytest.raises(ValueError, match="range"):
        _estimator().fit(2.0 * synthetic.images[:50])
    with pytest.raises(ValueError):
        _estimator().fit(synthetic.images[:50, 0])
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        _estimator().sample(2)
