import numpy as np
import pytest
import torch

from scgan.core_types import SOURCE_KEY, TARGET_KEY
from scgan.networks import (
    GROUPS,
    ShapeMismatchError,
    classify,
    count_parameters,
    discriminate,
    encode,
    generate,
    group_to_flat,
    init_parameters,
    parameters_equal,
    with_group_flat,
    zeroed_momentum,
)
from scgan.numeric_oracle import compare_grads, finite_diff_grad

from conftest import tiny_config


def test_init_is_deterministic_per_seed(config):
    a = init_parameters(config, 7)
    b = init_parameters(config, 7)
    assert parameters_equal(a, b)


def test_init_differs_across_seeds(config):
    a = init_parameters(config, 7)
    b = init_parameters(config, 8)
    assert not parameters_equal(a, b)


def test_momentum_buffers_start_at_zero(params):
    for group in GROUPS:
        for buf in params.momentum[group].values():
            assert torch.count_nonzero(buf) == 0


def test_tiny_network_is_under_500_parameters(params):
    assert count_parameters(params) <= 500


def test_encode_shape_contract(params, config):
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (5, config.pixel_dim))
    z = encode(params, x)
    assert z.shape == (5, config.latent_dim)


def test_encode_is_deterministic(params, config):
    x = np.full((2, config.pixel_dim), 0.3)
    z = encode(params, x)
    assert torch.equal(z[0], z[1])


def test_encode_rejects_wrong_width(params):
    with pytest.raises(ShapeMismatchError, match="encoder"):
        encode(params, np.zeros((2, 5)))


def test_generate_output_in_unit_interval(params, config):
    rng = np.random.default_rng(1)
    z = rng.normal(0, 2, (16, config.latent_dim))
    out = generate(params, z, SOURCE_KEY).detach()
    assert out.shape == (16, config.pixel_dim)
    assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0


def test_generate_key_enters_computation(params, config):
    z = np.random.default_rng(2).normal(0, 1, (3, config.latent_dim))
    a = generate(params, z, SOURCE_KEY)
    b = generate(params, z, TARGET_KEY)
    assert not torch.equal(a, b)


def test_generate_rejects_invalid_key(params, config):
    z = np.zeros((1, config.latent_dim))
    with pytest.raises(ValueError, match="one-hot"):
        generate(params, z, np.array([0.5, 0.5]))


def test_encode_generate_encode_closure(params, config):
    x = np.random.default_rng(3).uniform(0, 1, (4, config.pixel_dim))
    z = encode(params, generate(params, encode(params, x), TARGET_KEY))
    assert z.shape == (4, config.latent_dim)


def test_classify_rows_on_simplex(params, config):
    z = np.random.default_rng(4).normal(0, 1, (8, config.latent_dim))
    probs = classify(params, z).detach().numpy()
    assert probs.min() >= 0.0
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)


def test_discriminate_output_invariants(params, config):
    x = np.random.default_rng(5).uniform(0, 1, (6, config.pixel_dim))
    for which in ("disc_source", "disc_target"):
        out = discriminate(params, which, x)
        rp = out.real_prob.detach().numpy()
        cp = out.class_probs.detach().numpy()
        assert rp.shape == (6,) and rp.min() >= 0.0 and rp.max() <= 1.0
        assert cp.shape == (6, config.n_classes)
        np.testing.assert_allclose(cp.sum(axis=1), 1.0, atol=1e-6)


def test_discriminators_have_disjoint_parameters(params, config):
    x = np.random.default_rng(6).uniform(0, 1, (4, config.pixel_dim))
    a = discriminate(params, "disc_source", x)
    b = discriminate(params, "disc_target", x)
    assert not torch.equal(a.class_probs, b.class_probs)
    for name in params.weights["disc_source"]:
        assert params.weights["disc_source"][name] is not params.weights["disc_target"][name]


def test_discriminate_rejects_unknown_head(params):
    with pytest.raises(ValueError, match="unknown discriminator"):
        discriminate(params, "disc_other", np.zeros((1, 2)))


def test_group_flat_roundtrip(params):
    flat = group_to_flat(params, "encoder")
    restored = with_group_flat(params, "encoder", flat)
    assert parameters_equal(params, restored, "encoder")
    assert restored.weights["generator"] is params.weights["generator"]
    with pytest.raises(ValueError, match="does not fit"):
        with_group_flat(params, "encoder", flat[:-1])


def test_zeroed_momentum_keeps_weights(params):
    fresh = zeroed_momentum(params)
    assert parameters_equal(params, fresh)
    for group in GROUPS:
        for buf in fresh.momentum[group].values():
            assert torch.count_nonzero(buf) == 0


def _probe_gradcheck(params, group, build_scalar, rel_tol=1e-4):
    """FD-vs-autograd agreement for a scalar built from one forward map."""
    value = build_scalar(params)
    tensors = list(params.weights[group].values())
    grads = torch.autograd.grad(value, tensors, allow_unused=True)
    analytic = np.concatenate([
        (torch.zeros_like(t) if g is None else g).numpy().ravel()
        for t, g in zip(tensors, grads)])

    def fn(flat):
        with torch.no_grad():
            return float(build_scalar(with_group_flat(params, group, flat)))

    numeric = finite_diff_grad(fn, group_to_flat(params, group))
    report = compare_grads(analytic, numeric, rel_tol=rel_tol, abs_floor=1e-8)
    assert report.passed, report.describe()


def test_encode_gradient_matches_finite_differences(params, config):
    rng = np.random.default_rng(11)
    x = rng.uniform(0, 1, (3, config.pixel_dim))
    u = torch.tensor(rng.normal(0, 1, (3, config.latent_dim)))
    _probe_gradcheck(params, "encoder", lambda p: (encode(p, x) * u).sum())


def test_generate_jacobian_wrt_codes_matches_finite_differences(params, config):
    rng = np.random.default_rng(12)
    z0 = rng.normal(0, 1, config.latent_dim)
    u = torch.tensor(rng.normal(0, 1, (1, config.pixel_dim)))

    z_leaf = torch.tensor(z0.reshape(1, -1), requires_grad=True)
    value = (generate(params, z_leaf, TARGET_KEY) * u).sum()
    (analytic,) = torch.autograd.grad(value, z_leaf)

    def fn(flat):
        with torch.no_grad():
            return float((generate(params, flat.reshape(1, -1), TARGET_KEY) * u).sum())

    numeric = finite_diff_grad(fn, z0)
    report = compare_grads(analytic.numpy().ravel(), numeric, rel_tol=1e-4, abs_floor=1e-8)
    assert report.passed, report.describe()


def test_generate_gradient_wrt_weights_matches_finite_differences(params, config):
    rng = np.random.default_rng(13)
    z = rng.normal(0, 1, (3, config.latent_dim))
    u = torch.tensor(rng.normal(0, 1, (3, config.pixel_dim)))
    _probe_gradcheck(params, "generator", lambda p: (generate(p, z, SOURCE_KEY) * u).sum())


def test_classify_gradient_matches_finite_differences(params, config):
    rng = np.random.default_rng(14)
    z = rng.normal(0, 1, (3, config.latent_dim))
    u = torch.tensor(rng.normal(0, 1, (3, config.n_classes)))
    _probe_gradcheck(params, "classifier", lambda p: (classify(p, z) * u).sum())


def test_discriminate_gradients_match_finite_differences(params, config):
    rng = np.random.default_rng(15)
    x = rng.uniform(0, 1, (3, config.pixel_dim))
    u = torch.tensor(rng.normal(0, 1, (3, config.n_classes)))

    def both_heads(p):
        out = discriminate(p, "disc_source", x)
        return out.real_prob.sum() + (out.class_probs * u).sum()

    _probe_gradcheck(params, "disc_source", both_heads)
