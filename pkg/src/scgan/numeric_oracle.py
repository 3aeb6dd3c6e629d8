"""Independent verification machinery.

Two oracles live here, deliberately sharing nothing with the differentiable
implementation beyond primitive arithmetic:

* central finite-difference gradients, compared coordinate-wise against
  autograd gradients;
* straight-line numpy re-implementations of the three objectives, used as
  value-equality oracles on fixed batches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from .core_types import LabeledBatch, LossWeights, PseudoLabel, UnlabeledBatch
from .losses import (
    classifier_objective,
    discriminator_objective,
    generate_styled,
    generator_objective,
)
from .networks import ParameterSet, group_to_flat, iter_group_params, with_group_flat
from .optim import group_gradients

DEFAULT_EPS = 1e-4


def finite_diff_grad(scalar_fn: Callable[[np.ndarray], float],
                     params_flat: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Central differences: g_i = (f(p + eps*e_i) - f(p - eps*e_i)) / (2 eps)."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    base = np.asarray(params_flat, dtype=np.float64).copy()
    grad = np.empty_like(base)
    for i in range(base.size):
        saved = base[i]
        base[i] = saved + eps
        up = scalar_fn(base)
        base[i] = saved - eps
        down = scalar_fn(base)
        base[i] = saved
        if not (math.isfinite(up) and math.isfinite(down)):
            raise ValueError(f"non-finite probe evaluation at coordinate {i}")
        grad[i] = (up - down) / (2.0 * eps)
    return grad


@dataclass(frozen=True)
class GradCompareReport:
    passed: bool
    size: int
    worst_index: int
    worst_abs_err: float
    worst_allowed: float

    def describe(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (f"{status}: worst coordinate {self.worst_index} "
                f"|err|={self.worst_abs_err:.3e} allowed={self.worst_allowed:.3e}")


def compare_grads(analytic, numeric, rel_tol: float = 1e-4,
                  abs_floor: float = 1e-8) -> GradCompareReport:
    """Pass iff |a_i - n_i| <= abs_floor + rel_tol*max(|a_i|, |n_i|) for all i."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.shape != n.shape:
        raise ValueError(f"gradient length mismatch: {a.size} vs {n.size}")
    err = np.abs(a - n)
    allowed = abs_floor + rel_tol * np.maximum(np.abs(a), np.abs(n))
    excess = err - allowed
    worst = int(np.argmax(excess)) if a.size else 0
    return GradCompareReport(
        passed=bool(np.all(excess <= 0)),
        size=a.size,
        worst_index=worst,
        worst_abs_err=float(err[worst]) if a.size else 0.0,
        worst_allowed=float(allowed[worst]) if a.size else 0.0,
    )


# ---------------------------------------------------------------------------
# Straight-line reference objectives. These operate on plain numpy weight
# dictionaries (see networks.params_to_numpy) and recompute every forward
# pass inline, per sample.
# ---------------------------------------------------------------------------

_FLOOR = 1e-12


def ref_encode(nets, x):
    net = nets["encoder"]
    x = 2.0 * x - 1.0
    h = np.tanh(x @ net["w0"] + net["b0"])
    h = np.tanh(h @ net["w1"] + net["b1"])
    return h @ net["w2"] + net["b2"]


def ref_generate(nets, z, key_onehot):
    net = nets["generator"]
    h = np.concatenate([z, np.asarray(key_onehot, dtype=np.float64)])
    h = np.tanh(h @ net["w0"] + net["b0"])
    h = np.tanh(h @ net["w1"] + net["b1"])
    out = h @ net["w2"] + net["b2"]
    return 1.0 / (1.0 + np.exp(-out))


def _ref_softmax(logits):
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def ref_classify(nets, z):
    net = nets["classifier"]
    h = np.tanh(z @ net["w0"] + net["b0"])
    return _ref_softmax(h @ net["w1"] + net["b1"])


def ref_discriminate(nets, which, x):
    net = nets[which]
    x = 2.0 * x - 1.0
    h = np.tanh(x @ net["w0"] + net["b0"])
    h = np.tanh(h @ net["w1"] + net["b1"])
    real = 1.0 / (1.0 + np.exp(-(h @ net["w_real"] + net["b_real"])))
    return float(real[0]), _ref_softmax(h @ net["w_class"] + net["b_class"])


def _nll(p: float) -> float:
    return -math.log(max(p, _FLOOR))


SOURCE_ONEHOT = np.array([1.0, 0.0])
TARGET_ONEHOT = np.array([0.0, 1.0])


def reference_generator_objective(
    nets, src_pixels, src_labels, tgt_pixels, pseudo_ids, pseudo_accepted,
    alpha: float, beta: float, adv_weight: float,
) -> float:
    n_s = src_pixels.shape[0]
    n_t = tgt_pixels.shape[0]
    n_acc = int(np.sum(pseudo_accepted))

    ce_tgt_style = 0.0
    recon_src = 0.0
    semcon_src = 0.0
    adv_src_side = 0.0
    for i in range(n_s):
        x = src_pixels[i]
        z = ref_encode(nets, x)
        to_src = ref_generate(nets, z, SOURCE_ONEHOT)
        to_tgt = ref_generate(nets, z, TARGET_ONEHOT)
        real_p, class_p = ref_discriminate(nets, "disc_target", to_tgt)
        ce_tgt_style += _nll(class_p[src_labels[i]])
        recon_src += np.sum(np.abs(to_src - x))
        semcon_src += np.sum(np.abs(ref_encode(nets, to_src) - ref_encode(nets, to_tgt)))
        adv_src_side += _nll(real_p)

    ce_src_style = 0.0
    recon_tgt = 0.0
    semcon_tgt = 0.0
    adv_tgt_side = 0.0
    for i in range(n_t):
        x = tgt_pixels[i]
        z = ref_encode(nets, x)
        to_src = ref_generate(nets, z, SOURCE_ONEHOT)
        to_tgt = ref_generate(nets, z, TARGET_ONEHOT)
        real_p, class_p = ref_discriminate(nets, "disc_source", to_src)
        if pseudo_accepted[i]:
            ce_src_style += _nll(class_p[pseudo_ids[i]])
        recon_tgt += np.sum(np.abs(to_tgt - x))
        semcon_tgt += np.sum(np.abs(ref_encode(nets, to_tgt) - ref_encode(nets, to_src)))
        adv_tgt_side += _nll(real_p)

    total = ce_tgt_style / n_s
    if n_acc:
        total += ce_src_style / n_acc
    total += alpha * (recon_src / n_s + recon_tgt / n_t)
    total += beta * (semcon_src / n_s + semcon_tgt / n_t)
    if adv_weight != 0.0:
        total += adv_weight * (adv_tgt_side / n_t + adv_src_side / n_s)
    return float(total)


def reference_discriminator_objective(
    nets, src_pixels, src_labels, tgt_pixels, pseudo_ids, pseudo_accepted,
    adv_weight: float,
) -> float:
    n_s = src_pixels.shape[0]
    n_t = tgt_pixels.shape[0]
    n_acc = int(np.sum(pseudo_accepted))

    ce_real_src = 0.0
    ce_gen_tgt_style = 0.0
    adv_terms_src = 0.0
    adv_fake_tgt = 0.0
    for i in range(n_s):
        x = src_pixels[i]
        real_p, class_p = ref_discriminate(nets, "disc_source", x)
        ce_real_src += _nll(class_p[src_labels[i]])
        adv_terms_src += _nll(real_p)
        to_tgt = ref_generate(nets, ref_encode(nets, x), TARGET_ONEHOT)
        fake_p, fake_class = ref_discriminate(nets, "disc_target", to_tgt)
        ce_gen_tgt_style += _nll(fake_class[src_labels[i]])
        adv_fake_tgt += _nll(1.0 - fake_p)

    ce_real_tgt = 0.0
    ce_gen_src_style = 0.0
    adv_terms_tgt = 0.0
    adv_fake_src = 0.0
    for i in range(n_t):
        x = tgt_pixels[i]
        real_p, class_p = ref_discriminate(nets, "disc_target", x)
        adv_terms_tgt += _nll(real_p)
        to_src = ref_generate(nets, ref_encode(nets, x), SOURCE_ONEHOT)
        fake_p, fake_class = ref_discriminate(nets, "disc_source", to_src)
        adv_fake_src += _nll(1.0 - fake_p)
        if pseudo_accepted[i]:
            ce_real_tgt += _nll(class_p[pseudo_ids[i]])
            ce_gen_src_style += _nll(fake_class[pseudo_ids[i]])

    total = ce_real_src / n_s + ce_gen_tgt_style / n_s
    if n_acc:
        total += ce_real_tgt / n_acc + ce_gen_src_style / n_acc
    if adv_weight != 0.0:
        total += adv_weight * (adv_terms_src / n_s + adv_fake_src / n_t
                               + adv_terms_tgt / n_t + adv_fake_tgt / n_s)
    return float(total)


def reference_classifier_objective(
    nets, src_pixels, src_labels, tgt_pixels, pseudo_ids, pseudo_accepted,
) -> float:
    n_s = src_pixels.shape[0]
    n_acc = int(np.sum(pseudo_accepted))
    ce_src = 0.0
    for i in range(n_s):
        probs = ref_classify(nets, ref_encode(nets, src_pixels[i]))
        ce_src += _nll(probs[src_labels[i]])
    total = ce_src / n_s
    if n_acc:
        ce_tgt = 0.0
        for i in range(tgt_pixels.shape[0]):
            if pseudo_accepted[i]:
                probs = ref_classify(nets, ref_encode(nets, tgt_pixels[i]))
                ce_tgt += _nll(probs[pseudo_ids[i]])
        total += ce_tgt / n_acc
    return float(total)


# ---------------------------------------------------------------------------
# Gradient-check suite: finite differences of the implemented objectives vs
# their autograd gradients, per (objective, parameter group).
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GradCheckRow:
    loss_name: str
    group: str
    report: GradCompareReport


def _objective_builders(batch_s: LabeledBatch, batch_t: UnlabeledBatch,
                        pseudo: list[PseudoLabel], weights: LossWeights,
                        adv_weight: float):
    def build_g(p: ParameterSet):
        value, _ = generator_objective(p, batch_s, batch_t, pseudo, weights, adv_weight)
        return value

    def build_d(p: ParameterSet):
        styled = generate_styled(p, batch_s.pixels, batch_t.pixels, detach=True)
        value, _ = discriminator_objective(p, batch_s, batch_t, pseudo, styled, adv_weight)
        return value

    def build_c(p: ParameterSet):
        value, _ = classifier_objective(p, batch_s, batch_t, pseudo)
        return value

    return {"generator_objective": (build_g, ("encoder", "generator",
                                              "disc_source", "disc_target")),
            "discriminator_objective": (build_d, ("disc_source", "disc_target")),
            "classifier_objective": (build_c, ("encoder", "classifier"))}


def gradcheck_suite(
    params: ParameterSet,
    batch_s: LabeledBatch,
    batch_t: UnlabeledBatch,
    pseudo: list[PseudoLabel],
    weights: LossWeights,
    adv_weight: float = 1.0,
    rel_tol: float = 1e-4,
    abs_floor: float = 1e-8,
    eps: float = DEFAULT_EPS,
) -> list[GradCheckRow]:
    """Check every (objective, parameter-group) pair; the FD probe and the
    autograd gradient both evaluate the implemented objectives."""
    rows: list[GradCheckRow] = []
    for loss_name, (builder, groups) in _objective_builders(
            batch_s, batch_t, pseudo, weights, adv_weight).items():
        for group in groups:
            loss = builder(params)
            grads = group_gradients(loss, params, group)
            analytic = np.concatenate([
                grads[name].numpy().ravel() for name, _ in iter_group_params(params, group)])

            def scalar_fn(flat: np.ndarray) -> float:
                probed = with_group_flat(params, group, flat)
                with torch.no_grad():
                    return float(builder(probed))

            numeric = finite_diff_grad(scalar_fn, group_to_flat(params, group), eps)
            rows.append(GradCheckRow(loss_name, group,
                                     compare_grads(analytic, numeric, rel_tol, abs_floor)))
    return rows


__all__ = [
    "DEFAULT_EPS",
    "finite_diff_grad",
    "GradCompareReport",
    "compare_grads",
    "ref_encode",
    "ref_generate",
    "ref_classify",
    "ref_discriminate",
    "reference_generator_objective",
    "reference_discriminator_objective",
    "reference_classifier_objective",
    "GradCheckRow",
    "gradcheck_suite",
]
