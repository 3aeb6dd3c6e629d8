import numpy as np
import pytest

from scgan.core_types import LossWeights
from scgan.losses import (
    classifier_objective,
    discriminator_objective,
    generate_styled,
    generator_objective,
)
from scgan.networks import init_parameters, params_to_numpy
from scgan.numeric_oracle import (
    compare_grads,
    finite_diff_grad,
    gradcheck_suite,
    reference_classifier_objective,
    reference_discriminator_objective,
    reference_generator_objective,
)
from scgan.pseudo_labeler import assign_pseudo_labels

from conftest import random_batches, tiny_config


def test_finite_diff_quadratic():
    grad = finite_diff_grad(lambda p: float(np.sum(p * p)), np.array([1.0, -2.0]))
    np.testing.assert_allclose(grad, [2.0, -4.0], atol=1e-7)


def test_finite_diff_constant_function():
    grad = finite_diff_grad(lambda p: 3.5, np.array([0.3, -0.7, 2.0]))
    np.testing.assert_array_equal(grad, np.zeros(3))


def test_finite_diff_product_rule():
    grad = finite_diff_grad(lambda p: float(p[0] * p[1]), np.array([3.0, 5.0]))
    np.testing.assert_allclose(grad, [5.0, 3.0], atol=1e-8)


def test_finite_diff_rejects_nonpositive_eps():
    with pytest.raises(ValueError, match="eps"):
        finite_diff_grad(lambda p: 0.0, np.zeros(2), eps=0.0)


def test_finite_diff_reports_nonfinite_probe_coordinate():
    def fn(p):
        return float("nan") if p[1] > 0.5 else 0.0

    with pytest.raises(ValueError, match="coordinate 1"):
        finite_diff_grad(fn, np.array([0.0, 0.5]))


def test_compare_grads_identical_pass():
    report = compare_grads(np.array([1.0, -2.0]), np.array([1.0, -2.0]))
    assert report.passed


def test_compare_grads_within_relative_tolerance():
    report = compare_grads(np.array([1.0]), np.array([1.00005]),
                           rel_tol=1e-4, abs_floor=1e-8)
    assert report.passed


def test_compare_grads_gross_mismatch_fails_at_worst_coordinate():
    report = compare_grads(np.array([1.0]), np.array([1.1]), rel_tol=1e-4)
    assert not report.passed
    assert report.worst_index == 0


def test_compare_grads_rejects_length_mismatch():
    with pytest.raises(ValueError, match="length"):
        compare_grads(np.zeros(2), np.zeros(3))


def _fixed_setup(seed):
    config = tiny_config(seed=seed)
    params = init_parameters(config, seed)
    batch_s, batch_t = random_batches(config, seed=seed + 1)
    pseudo = assign_pseudo_labels(params, batch_t, config.pseudo_threshold)
    ids = np.array([p.class_id for p in pseudo])
    accepted = np.array([p.accepted for p in pseudo])
    return config, params, batch_s, batch_t, pseudo, ids, accepted


@pytest.mark.parametrize("seed", range(10))
def test_objectives_match_straight_line_reference(seed):
    config, params, batch_s, batch_t, pseudo, ids, accepted = _fixed_setup(seed)
    weights = config.loss_weights
    nets = params_to_numpy(params)

    g_val, _ = generator_objective(params, batch_s, batch_t, pseudo, weights, 1.0)
    g_ref = reference_generator_objective(
        nets, batch_s.pixels, batch_s.labels, batch_t.pixels, ids, accepted,
        weights.alpha, weights.beta, 1.0)
    assert float(g_val.detach()) == pytest.approx(g_ref, abs=1e-8)

    styled = generate_styled(params, batch_s.pixels, batch_t.pixels, detach=True)
    d_val, _ = discriminator_objective(params, batch_s, batch_t, pseudo, styled, 1.0)
    d_ref = reference_discriminator_objective(
        nets, batch_s.pixels, batch_s.labels, batch_t.pixels, ids, accepted, 1.0)
    assert float(d_val.detach()) == pytest.approx(d_ref, abs=1e-8)

    c_val, _ = classifier_objective(params, batch_s, batch_t, pseudo)
    c_ref = reference_classifier_objective(
        nets, batch_s.pixels, batch_s.labels, batch_t.pixels, ids, accepted)
    assert float(c_val.detach()) == pytest.approx(c_ref, abs=1e-8)


def test_reference_tracks_disabled_adversarial_term():
    config, params, batch_s, batch_t, pseudo, ids, accepted = _fixed_setup(3)
    weights = config.loss_weights
    nets = params_to_numpy(params)
    g_val, _ = generator_objective(params, batch_s, batch_t, pseudo, weights, 0.0)
    g_ref = reference_generator_objective(
        nets, batch_s.pixels, batch_s.labels, batch_t.pixels, ids, accepted,
        weights.alpha, weights.beta, 0.0)
    assert float(g_val.detach()) == pytest.approx(g_ref, abs=1e-8)


def test_gradcheck_suite_passes_on_tiny_networks():
    config, params, batch_s, batch_t, pseudo, _, _ = _fixed_setup(7)
    rows = gradcheck_suite(params, batch_s, batch_t, pseudo, config.loss_weights,
                           adv_weight=1.0, rel_tol=1e-4, abs_floor=1e-8)
    assert len(rows) == 8
    for row in rows:
        assert row.report.passed, f"{row.loss_name}/{row.group}: {row.report.describe()}"
