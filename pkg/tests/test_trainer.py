import dataclasses

import numpy as np
import pytest
import torch

from scgan.core_types import LabeledBatch, LossWeights, UnlabeledBatch
from scgan.data_synth import make_two_moons_pair
from scgan.networks import (
    group_to_flat,
    init_parameters,
    parameters_equal,
    with_group_flat,
)
from scgan.optim import NonFiniteGradientError, apply_group_update, momentum_sgd_update
from scgan.trainer import (
    CheckpointCorruptError,
    CheckpointDigestError,
    CheckpointVersionError,
    Cycler,
    NonFiniteLossError,
    TrainState,
    config_digest,
    fit,
    load_checkpoint,
    save_checkpoint,
    train_step,
    write_manifest,
)

from conftest import random_batches, tiny_config


def two_moons_config(**overrides):
    base = dict(
        n_classes=2, latent_dim=8, hidden_dim=16, image_shape=(1, 1, 2),
        loss_weights=LossWeights(10.0, 1.0, 1.0), learning_rate=0.01,
        pseudo_threshold=0.95, pretrain_steps=40, train_steps=30,
        batch_size=16, seed=5,
    )
    base.update(overrides)
    return tiny_config(**base)


@pytest.fixture(scope="module")
def moons_pair():
    return make_two_moons_pair(120, 35.0, 0.08, seed=21)


def test_momentum_sgd_first_step_is_plain_sgd():
    param, buf = momentum_sgd_update(np.array([1.0, 2.0]), np.array([0.5, -0.5]),
                                     np.zeros(2), lr=0.1, momentum=0.9)
    np.testing.assert_allclose(param, [0.95, 2.05])
    np.testing.assert_allclose(buf, [0.5, -0.5])


def test_momentum_buffer_decays_geometrically_with_zero_grad():
    buf = np.array([1.0])
    param = np.array([0.0])
    for i in range(3):
        param, buf = momentum_sgd_update(param, np.zeros(1), buf, lr=0.1, momentum=0.9)
        np.testing.assert_allclose(buf, [0.9 ** (i + 1)])


def test_momentum_sgd_hand_example():
    param, buf = momentum_sgd_update(1.0, 0.2, 0.5, lr=0.1, momentum=0.9)
    assert buf == pytest.approx(0.65)
    assert param == pytest.approx(0.935)


def test_momentum_sgd_rejects_nonfinite_grad_and_bad_lr():
    with pytest.raises(ValueError, match="non-finite"):
        momentum_sgd_update(np.zeros(2), np.array([1.0, np.nan]), np.zeros(2), 0.1, 0.9)
    with pytest.raises(ValueError, match="learning rate"):
        momentum_sgd_update(np.zeros(2), np.zeros(2), np.zeros(2), 0.0, 0.9)


def test_apply_group_update_names_group_on_nonfinite(params):
    grads = {name: torch.full_like(t, float("nan"))
             for name, t in params.weights["encoder"].items()}
    with pytest.raises(NonFiniteGradientError, match="encoder"):
        apply_group_update(params, "encoder", grads, 0.1, 0.9)


def test_apply_group_update_shares_untouched_groups(params):
    grads = {name: torch.ones_like(t) for name, t in params.weights["encoder"].items()}
    updated = apply_group_update(params, "encoder", grads, 0.1, 0.9)
    assert not parameters_equal(params, updated, "encoder")
    for group in ("generator", "classifier", "disc_source", "disc_target"):
        for name in params.weights[group]:
            assert updated.weights[group][name] is params.weights[group][name]


def _fresh_state(config, seed=0):
    params = init_parameters(config, config.seed)
    return TrainState(params=params, step=0, rng=np.random.default_rng(seed))


def test_train_step_increments_and_reports(config):
    batch_s, batch_t = random_batches(config)
    state = _fresh_state(config)
    new_state, report = train_step(state, batch_s, batch_t, config)
    assert new_state.step == state.step + 1
    assert report.is_finite()
    assert new_state.history[-1] is report


def test_train_step_deterministic(config):
    batch_s, batch_t = random_batches(config)
    reports = []
    for _ in range(2):
        state = _fresh_state(config)
        state, report = train_step(state, batch_s, batch_t, config)
        reports.append(report)
    assert reports[0] == reports[1]


def test_train_step_rolls_back_on_nonfinite_loss(config):
    batch_s, batch_t = random_batches(config)
    state = _fresh_state(config)
    flat = group_to_flat(state.params, "generator")
    flat[0] = np.nan
    state = dataclasses.replace(state, params=with_group_flat(state.params, "generator", flat))
    before = state.params
    with pytest.raises(NonFiniteLossError) as excinfo:
        train_step(state, batch_s, batch_t, config)
    assert excinfo.value.terms  # the offending terms are named
    assert state.params is before  # functional updates: nothing was replaced
    assert state.step == 0
    # the finite groups are bitwise untouched
    for group in ("encoder", "classifier", "disc_source", "disc_target"):
        assert parameters_equal(state.params, before, group)


def test_train_step_aborts_cleanly_when_encoder_is_nonfinite(config):
    batch_s, batch_t = random_batches(config)
    state = _fresh_state(config)
    flat = group_to_flat(state.params, "encoder")
    flat[:] = np.nan
    state = dataclasses.replace(state, params=with_group_flat(state.params, "encoder", flat))
    with pytest.raises(NonFiniteLossError, match="pseudo_label_assignment"):
        train_step(state, batch_s, batch_t, config)


def test_train_step_update_partition(config):
    """The discriminator sub-update must not touch encoder/generator/
    classifier weights."""
    batch_s, batch_t = random_batches(config)
    state = _fresh_state(config)

    from scgan.losses import discriminator_objective, generate_styled
    from scgan.optim import group_gradients
    from scgan.pseudo_labeler import assign_pseudo_labels

    styled = generate_styled(state.params, batch_s.pixels, batch_t.pixels, detach=True)
    pseudo = assign_pseudo_labels(state.params, batch_t, config.pseudo_threshold)
    d_loss, _ = discriminator_objective(state.params, batch_s, batch_t, pseudo,
                                        styled, config.adv_weight)
    params = state.params
    for group in ("disc_source", "disc_target"):
        grads = group_gradients(d_loss, params, group)
        params = apply_group_update(params, group, grads,
                                    config.learning_rate, config.momentum)
    for group in ("encoder", "generator", "classifier"):
        for name in state.params.weights[group]:
            assert params.weights[group][name] is state.params.weights[group][name]
    assert not parameters_equal(state.params, params, "disc_source")
    assert not parameters_equal(state.params, params, "disc_target")


def test_fit_zero_steps_returns_pretrained_model(moons_pair):
    config = two_moons_config(train_steps=0)
    result = fit(config, moons_pair.source, moons_pair.target)
    from scgan.pseudo_labeler import pretrain_source
    from scgan.networks import zeroed_momentum

    params = init_parameters(config, config.seed)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    params, curve = pretrain_source(params, moons_pair.source, config, rng=rng)
    assert parameters_equal(result.state.params, zeroed_momentum(params))
    assert result.pretrain_curve == curve
    assert result.reports == []


def test_fit_rejects_invalid_config(moons_pair):
    config = two_moons_config(momentum=1.5)
    with pytest.raises(ValueError, match="momentum"):
        fit(config, moons_pair.source, moons_pair.target)


def test_fit_rejects_oversized_batch(moons_pair):
    config = two_moons_config(batch_size=1000)
    with pytest.raises(ValueError, match="batch_size exceeds"):
        fit(config, moons_pair.source, moons_pair.target)


def test_fit_is_deterministic(moons_pair):
    config = two_moons_config()
    a = fit(config, moons_pair.source, moons_pair.target)
    b = fit(config, moons_pair.source, moons_pair.target)
    assert a.reports == b.reports
    assert parameters_equal(a.state.params, b.state.params)


def test_fit_writes_manifest_metrics_and_checkpoint(tmp_path, moons_pair):
    config = two_moons_config(train_steps=4)
    result = fit(config, moons_pair.source, moons_pair.target,
                 eval_labels=moons_pair.target_eval_labels,
                 out_dir=tmp_path / "run", checkpoint_interval=2)
    out = tmp_path / "run"
    manifest = (out / "manifest.txt").read_text()
    assert "learning_rate=0.01" in manifest
    assert "alpha=10.0" in manifest
    assert f"code_version=" in manifest
    lines = (out / "metrics.jsonl").read_text().strip().splitlines()
    assert len(lines) == 4 + 1  # one per step plus the final eval record
    assert (out / "checkpoint_000002.scgan").exists()
    assert (out / "checkpoint_final.scgan").exists()
    assert result.final_accuracy is not None


def test_config_digest_distinguishes_configs():
    assert config_digest(two_moons_config()) != config_digest(
        two_moons_config(latent_dim=16))


def test_checkpoint_roundtrip_bitwise(tmp_path, moons_pair):
    config = two_moons_config(train_steps=3)
    result = fit(config, moons_pair.source, moons_pair.target)
    path = tmp_path / "ck.scgan"
    save_checkpoint(result.state, path, config)
    restored, stored_config = load_checkpoint(path, config)
    assert stored_config == config
    assert restored.step == result.state.step
    assert parameters_equal(restored.params, result.state.params)
    for group in restored.params.momentum:
        for name, buf in restored.params.momentum[group].items():
            assert torch.equal(buf, result.state.params.momentum[group][name])


def test_checkpoint_detects_corruption(tmp_path, moons_pair):
    config = two_moons_config(train_steps=1)
    result = fit(config, moons_pair.source, moons_pair.target)
    path = tmp_path / "ck.scgan"
    save_checkpoint(result.state, path, config)
    raw = path.read_bytes()

    truncated = tmp_path / "trunc.scgan"
    truncated.write_bytes(raw[:-16])
    with pytest.raises(CheckpointCorruptError, match="truncated"):
        load_checkpoint(truncated)

    bad_magic = tmp_path / "magic.scgan"
    bad_magic.write_bytes(b"NOPE!" + raw[5:])
    with pytest.raises(CheckpointCorruptError, match="magic"):
        load_checkpoint(bad_magic)

    bad_version = tmp_path / "ver.scgan"
    bad_version.write_bytes(raw[:5] + (99).to_bytes(4, "little") + raw[9:])
    with pytest.raises(CheckpointVersionError, match="99"):
        load_checkpoint(bad_version)


def test_checkpoint_rejects_config_digest_mismatch(tmp_path, moons_pair):
    config = two_moons_config(train_steps=1)
    result = fit(config, moons_pair.source, moons_pair.target)
    path = tmp_path / "ck.scgan"
    save_checkpoint(result.state, path, config)
    other = two_moons_config(latent_dim=16)
    with pytest.raises(CheckpointDigestError):
        load_checkpoint(path, other)


def test_resume_reproduces_uninterrupted_run(tmp_path, moons_pair):
    config = two_moons_config(train_steps=10)
    straight = fit(config, moons_pair.source, moons_pair.target)

    half = dataclasses.replace(config, train_steps=5)
    first = fit(half, moons_pair.source, moons_pair.target)
    path = tmp_path / "mid.scgan"
    save_checkpoint(first.state, path, config)
    state, _ = load_checkpoint(path, config)
    resumed = fit(config, moons_pair.source, moons_pair.target, resume_state=state)

    assert parameters_equal(resumed.state.params, straight.state.params)
    assert resumed.state.step == straight.state.step
    assert [r.total for r in resumed.reports] == [r.total for r in straight.reports[5:]]


def test_cycler_emits_full_batches_and_reshuffles():
    rng = np.random.default_rng(0)
    cyc = Cycler.fresh(10, rng)
    seen = []
    for _ in range(4):
        idx = cyc.next_batch(4, rng)
        assert len(idx) == 4
        seen.extend(idx.tolist())
    assert set(seen) <= set(range(10))


def test_write_manifest_is_flat_key_value(tmp_path):
    config = two_moons_config()
    write_manifest(tmp_path / "m.txt", config, {"source_digest": "abc"})
    lines = (tmp_path / "m.txt").read_text().strip().splitlines()
    assert all("=" in line for line in lines)
    keys = [line.split("=", 1)[0] for line in lines]
    assert "seed" in keys and "source_digest" in keys and "code_version" in keys
