"""Composite objective: class-aware adversarial terms, pixel reconstruction,
latent semantic consistency, and the classifier loss, with a per-term report.

Conventions
-----------
* Every term is averaged per batch so the alpha/beta/gamma weights are
  batch-size independent.
* Report fields store the weighted contribution of each term, so each
  ``total_*`` equals the sum of its fragment fields exactly and a disabled
  term reads as 0.
* Class terms that need target pseudo labels are averaged over accepted
  samples only; with no accepted samples the term is 0 and the report is
  flagged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields

import numpy as np
import torch

from .core_types import (
    SOURCE_KEY,
    TARGET_KEY,
    LabeledBatch,
    LossWeights,
    PseudoLabel,
    UnlabeledBatch,
)
from .networks import ParameterSet, classify, discriminate, encode, generate

PROB_FLOOR = 1e-12


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    arr = np.asarray(x, dtype=np.float64)
    if not arr.flags.writeable:  # e.g. frozen Sample pixels
        arr = arr.copy()
    return torch.as_tensor(arr)


def l1_distance(a, b) -> torch.Tensor:
    """Manhattan distance summed per row, averaged over the batch.

    1-D inputs are treated as single-row batches.
    """
    ta, tb = _as_tensor(a), _as_tensor(b)
    if ta.dim() == 1:
        ta = ta.unsqueeze(0)
    if tb.dim() == 1:
        tb = tb.unsqueeze(0)
    if ta.shape != tb.shape:
        raise ValueError(f"l1_distance shape mismatch: {tuple(ta.shape)} vs {tuple(tb.shape)}")
    return (ta - tb).abs().sum(dim=1).mean()


def cross_entropy(probs, labels) -> torch.Tensor:
    """Mean -log(p[label]) with a 1e-12 probability floor inside the log."""
    p = _as_tensor(probs)
    if p.dim() == 1:
        p = p.unsqueeze(0)
    lab = torch.as_tensor(np.asarray(labels, dtype=np.int64)).reshape(-1)
    if lab.shape[0] != p.shape[0]:
        raise ValueError(f"{lab.shape[0]} labels for a batch of {p.shape[0]}")
    if lab.numel() and (int(lab.min()) < 0 or int(lab.max()) >= p.shape[1]):
        raise ValueError(f"label out of [0, {p.shape[1]}): {lab.tolist()}")
    picked = p[torch.arange(p.shape[0]), lab]
    return -(picked.clamp_min(PROB_FLOOR).log()).mean()


def pseudo_arrays(pseudo: list[PseudoLabel]) -> tuple[np.ndarray, np.ndarray]:
    """(class_ids, accepted) arrays from a pseudo-label list."""
    ids = np.array([p.class_id for p in pseudo], dtype=np.int64)
    accepted = np.array([p.accepted for p in pseudo], dtype=bool)
    return ids, accepted


@dataclass(frozen=True)
class StyledBatches:
    """The four generator outputs for one (source, target) batch pair."""

    src_to_src: torch.Tensor
    src_to_tgt: torch.Tensor
    tgt_to_src: torch.Tensor
    tgt_to_tgt: torch.Tensor


def generate_styled(
    params: ParameterSet, src_pixels, tgt_pixels, detach: bool = False
) -> StyledBatches:
    """Encode both batches and render each in both domain styles.

    With detach=True the outputs are cut from the autograd graph, which is
    how the discriminator objective treats generated inputs as constants.
    """
    z_src = encode(params, src_pixels)
    z_tgt = encode(params, tgt_pixels)
    out = StyledBatches(
        src_to_src=generate(params, z_src, SOURCE_KEY),
        src_to_tgt=generate(params, z_src, TARGET_KEY),
        tgt_to_src=generate(params, z_tgt, SOURCE_KEY),
        tgt_to_tgt=generate(params, z_tgt, TARGET_KEY),
    )
    if detach:
        out = StyledBatches(*(t.detach() for t in
                              (out.src_to_src, out.src_to_tgt, out.tgt_to_src, out.tgt_to_tgt)))
    return out


def _neg_log(p: torch.Tensor) -> torch.Tensor:
    return -(p.clamp_min(PROB_FLOOR).log())


def _scalar(value) -> float:
    if isinstance(value, torch.Tensor):
        return float(value.detach())
    return float(value)


def generator_objective(
    params: ParameterSet,
    batch_s: LabeledBatch,
    batch_t: UnlabeledBatch,
    pseudo: list[PseudoLabel],
    weights: LossWeights,
    adv_weight: float = 1.0,
) -> tuple[torch.Tensor, dict]:
    """Encoder/generator loss.

    Per source sample: class term of the target-styled rendering under the
    target discriminator (true label), alpha-weighted pixel reconstruction
    of the source-styled rendering, beta-weighted L1 between the re-encoded
    codes of the two renderings. Mirrored for target samples with accepted
    pseudo labels, plus the non-saturating binary term pushing both
    cross-domain renderings toward "real".
    """
    if len(batch_s) == 0 or len(batch_t) == 0:
        raise ValueError("batches must be nonempty")
    if len(pseudo) != len(batch_t):
        raise ValueError(f"{len(pseudo)} pseudo labels for target batch of {len(batch_t)}")

    xs = _as_tensor(batch_s.pixels)
    xt = _as_tensor(batch_t.pixels)
    ids, accepted = pseudo_arrays(pseudo)

    z_src = encode(params, xs)
    z_tgt = encode(params, xt)
    src_to_src = generate(params, z_src, SOURCE_KEY)
    src_to_tgt = generate(params, z_src, TARGET_KEY)
    tgt_to_src = generate(params, z_tgt, SOURCE_KEY)
    tgt_to_tgt = generate(params, z_tgt, TARGET_KEY)

    disc_t_out = discriminate(params, "disc_target", src_to_tgt)
    disc_s_out = discriminate(params, "disc_source", tgt_to_src)

    zero = torch.zeros((), dtype=xs.dtype)

    # Target-styled renderings of source data keep the source label.
    ce_gen_target_style = cross_entropy(disc_t_out.class_probs, batch_s.labels)
    # Source-styled renderings of target data use accepted pseudo labels only.
    if accepted.any():
        ce_gen_source_style = cross_entropy(disc_s_out.class_probs[accepted], ids[accepted])
    else:
        ce_gen_source_style = zero

    recon_source = weights.alpha * l1_distance(src_to_src, xs)
    recon_target = weights.alpha * l1_distance(tgt_to_tgt, xt)

    semcon_source = weights.beta * l1_distance(encode(params, src_to_src),
                                               encode(params, src_to_tgt))
    semcon_target = weights.beta * l1_distance(encode(params, tgt_to_tgt),
                                               encode(params, tgt_to_src))

    if adv_weight != 0.0:
        adv_binary_g = adv_weight * (_neg_log(disc_s_out.real_prob).mean()
                                     + _neg_log(disc_t_out.real_prob).mean())
    else:
        adv_binary_g = zero

    total = (ce_gen_target_style + ce_gen_source_style + recon_source + recon_target
             + semcon_source + semcon_target + adv_binary_g)
    fragment = {
        "ce_gen_target_style": _scalar(ce_gen_target_style),
        "ce_gen_source_style": _scalar(ce_gen_source_style),
        "recon_source": _scalar(recon_source),
        "recon_target": _scalar(recon_target),
        "semcon_source": _scalar(semcon_source),
        "semcon_target": _scalar(semcon_target),
        "adv_binary_g": _scalar(adv_binary_g),
        "total_g": _scalar(total),
        "n_accepted": int(accepted.sum()),
        "target_class_terms_skipped": not bool(accepted.any()),
    }
    return total, fragment


def discriminator_objective(
    params: ParameterSet,
    batch_s: LabeledBatch,
    batch_t: UnlabeledBatch,
    pseudo: list[PseudoLabel],
    styled: StyledBatches,
    adv_weight: float = 1.0,
) -> tuple[torch.Tensor, dict]:
    """Discriminator loss over real and generated batches.

    The styled batches must be detached: generated inputs are constants
    here, so no gradient reaches the encoder or generator.
    """
    if len(pseudo) != len(batch_t):
        raise ValueError(f"{len(pseudo)} pseudo labels for target batch of {len(batch_t)}")
    xs = _as_tensor(batch_s.pixels)
    xt = _as_tensor(batch_t.pixels)
    ids, accepted = pseudo_arrays(pseudo)

    out_real_src = discriminate(params, "disc_source", xs)
    out_gen_src_style = discriminate(params, "disc_source", styled.tgt_to_src)
    out_real_tgt = discriminate(params, "disc_target", xt)
    out_gen_tgt_style = discriminate(params, "disc_target", styled.src_to_tgt)

    zero = torch.zeros((), dtype=xs.dtype)

    ce_disc_real_source = cross_entropy(out_real_src.class_probs, batch_s.labels)
    ce_disc_gen_target_style = cross_entropy(out_gen_tgt_style.class_probs, batch_s.labels)
    if accepted.any():
        ce_disc_gen_source_style = cross_entropy(
            out_gen_src_style.class_probs[accepted], ids[accepted])
        ce_disc_real_target = cross_entropy(out_real_tgt.class_probs[accepted], ids[accepted])
    else:
        ce_disc_gen_source_style = zero
        ce_disc_real_target = zero

    if adv_weight != 0.0:
        one = torch.ones((), dtype=xs.dtype)
        adv_binary_d = adv_weight * (
            _neg_log(out_real_src.real_prob).mean()
            + _neg_log(one - out_gen_src_style.real_prob).mean()
            + _neg_log(out_real_tgt.real_prob).mean()
            + _neg_log(one - out_gen_tgt_style.real_prob).mean()
        )
    else:
        adv_binary_d = zero

    total = (ce_disc_real_source + ce_disc_real_target + ce_disc_gen_source_style
             + ce_disc_gen_target_style + adv_binary_d)
    fragment = {
        "ce_disc_real_source": _scalar(ce_disc_real_source),
        "ce_disc_real_target": _scalar(ce_disc_real_target),
        "ce_disc_gen_source_style": _scalar(ce_disc_gen_source_style),
        "ce_disc_gen_target_style": _scalar(ce_disc_gen_target_style),
        "adv_binary_d": _scalar(adv_binary_d),
        "total_d": _scalar(total),
    }
    return total, fragment


def classifier_objective(
    params: ParameterSet,
    batch_s: LabeledBatch,
    batch_t: UnlabeledBatch,
    pseudo: list[PseudoLabel],
) -> tuple[torch.Tensor, dict]:
    """Classifier loss: source cross-entropy plus pseudo-labeled target
    cross-entropy over accepted samples (0 when none are accepted)."""
    if len(pseudo) != len(batch_t):
        raise ValueError(f"{len(pseudo)} pseudo labels for target batch of {len(batch_t)}")
    xs = _as_tensor(batch_s.pixels)
    xt = _as_tensor(batch_t.pixels)
    ids, accepted = pseudo_arrays(pseudo)

    ce_source = cross_entropy(classify(params, encode(params, xs)), batch_s.labels)
    if accepted.any():
        probs_t = classify(params, encode(params, xt))
        ce_target = cross_entropy(probs_t[accepted], ids[accepted])
    else:
        ce_target = torch.zeros((), dtype=xs.dtype)

    total = ce_source + ce_target
    fragment = {
        "ce_classifier_source": _scalar(ce_source),
        "ce_classifier_target_pseudo": _scalar(ce_target),
        "total_c": _scalar(total),
    }
    return total, fragment


def total_objective(l_g, l_d, l_c, gamma: float):
    """Compose the three objectives: l_g + l_d + gamma * l_c."""
    return l_g + l_d + gamma * l_c


@dataclass(frozen=True)
class LossReport:
    """Per-step scalar value of every objective term."""

    ce_gen_target_style: float
    ce_gen_source_style: float
    recon_source: float
    recon_target: float
    semcon_source: float
    semcon_target: float
    adv_binary_g: float
    ce_disc_real_source: float
    ce_disc_real_target: float
    ce_disc_gen_source_style: float
    ce_disc_gen_target_style: float
    adv_binary_d: float
    ce_classifier_source: float
    ce_classifier_target_pseudo: float
    total_g: float
    total_d: float
    total_c: float
    total: float
    n_accepted: int = 0
    target_class_terms_skipped: bool = False

    def is_finite(self) -> bool:
        values = [getattr(self, f.name) for f in fields(self)]
        return all(np.isfinite(v) for v in values if isinstance(v, float))


def make_report(g_frag: dict, d_frag: dict, c_frag: dict, gamma: float) -> LossReport:
    """Assemble a LossReport; total is composed as total_g + total_d + gamma*total_c."""
    merged = {**g_frag, **d_frag, **c_frag}
    merged["total"] = merged["total_g"] + merged["total_d"] + gamma * merged["total_c"]
    return LossReport(**merged)


def report_to_record(report: LossReport, step: int, wall_time: float) -> dict:
    record = {"step": step, "wall_time": wall_time}
    for f in fields(report):
        record[f.name] = getattr(report, f.name)
    return record


def report_to_json_line(report: LossReport, step: int, wall_time: float) -> str:
    return json.dumps(report_to_record(report, step, wall_time))


def nonfinite_terms(fragment: dict) -> list[str]:
    """Names of non-finite scalar entries in a loss fragment."""
    bad = []
    for name, value in fragment.items():
        if isinstance(value, float) and not np.isfinite(value):
            bad.append(name)
    return bad


__all__ = [
    "PROB_FLOOR",
    "l1_distance",
    "cross_entropy",
    "pseudo_arrays",
    "StyledBatches",
    "generate_styled",
    "generator_objective",
    "discriminator_objective",
    "classifier_objective",
    "total_objective",
    "LossReport",
    "make_report",
    "report_to_record",
    "report_to_json_line",
    "nonfinite_terms",
]
