"""Source pretraining of the classifier path and confidence-thresholded
pseudo-label assignment for target samples."""

from __future__ import annotations

import csv

import numpy as np
import torch

from .core_types import PseudoLabel, RunConfig, Sample
from .losses import cross_entropy
from .networks import ParameterSet, classify, encode
from .optim import apply_group_update, group_gradients


def pseudo_labels_from_probs(probs: np.ndarray, threshold: float) -> list[PseudoLabel]:
    """Acceptance rule on raw class distributions: argmax wins (ties to the
    lowest class index) and the label is accepted only when the top score
    strictly exceeds the threshold."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold out of (0,1]: {threshold}")
    out: list[PseudoLabel] = []
    for row in np.atleast_2d(np.asarray(probs, dtype=np.float64)):
        class_id = int(np.argmax(row))
        confidence = float(row[class_id])
        out.append(PseudoLabel(class_id=class_id, confidence=confidence,
                               accepted=confidence > threshold))
    return out


def assign_pseudo_labels(params: ParameterSet, target_pixels, threshold: float) -> list[PseudoLabel]:
    """Predict a class for each target sample and apply the strict
    confidence threshold."""
    pixels = getattr(target_pixels, "pixels", target_pixels)
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold out of (0,1]: {threshold}")
    with torch.no_grad():
        probs = classify(params, encode(params, pixels)).numpy()
    return pseudo_labels_from_probs(probs, threshold)


def dump_pseudo_labels(pseudo: list[PseudoLabel], path) -> None:
    """Write (index, class_id, confidence, accepted) rows as CSV for
    diagnosing pseudo-label drift."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "class_id", "confidence", "accepted"])
        for i, p in enumerate(pseudo):
            writer.writerow([i, p.class_id, f"{p.confidence:.10g}", int(p.accepted)])


def _source_arrays(source_data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(source_data, (list, tuple)):
        for i, s in enumerate(source_data):
            if not isinstance(s, Sample) or s.label is None:
                raise ValueError(f"source record {i} is unlabeled; pretraining needs labels")
        pixels = np.stack([s.pixels for s in source_data])
        labels = np.array([s.label for s in source_data], dtype=np.int64)
        return pixels, labels
    return np.asarray(source_data.pixels), np.asarray(source_data.labels)


def source_accuracy(params: ParameterSet, pixels: np.ndarray, labels: np.ndarray) -> float:
    with torch.no_grad():
        probs = classify(params, encode(params, pixels)).numpy()
    return float(np.mean(probs.argmax(axis=1) == labels))


def pretrain_source(
    params: ParameterSet,
    source_data,
    config: RunConfig,
    rng: np.random.Generator | None = None,
) -> tuple[ParameterSet, list[float]]:
    """Train encoder+classifier on labeled source data for
    config.pretrain_steps momentum-SGD steps.

    Only the encoder and classifier groups change; the accuracy curve has
    one entry per completed pass over the source set plus a final entry.
    """
    pixels, labels = _source_arrays(source_data)
    if np.any(labels >= config.n_classes):
        raise ValueError("source label outside configured class range")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n = pixels.shape[0]
    batch = min(config.batch_size, n)

    curve: list[float] = []
    order = rng.permutation(n)
    pos = 0
    for _ in range(config.pretrain_steps):
        if pos + batch > n:
            curve.append(source_accuracy(params, pixels, labels))
            order = rng.permutation(n)
            pos = 0
        idx = order[pos : pos + batch]
        pos += batch
        loss = cross_entropy(classify(params, encode(params, pixels[idx])), labels[idx])
        grads = {g: group_gradients(loss, params, g) for g in ("encoder", "classifier")}
        for group, g in grads.items():
            params = apply_group_update(params, group, g,
                                        config.learning_rate, config.momentum)
    if config.pretrain_steps > 0:
        curve.append(source_accuracy(params, pixels, labels))
    return params, curve


__all__ = ["pseudo_labels_from_probs", "assign_pseudo_labels", "dump_pseudo_labels",
           "pretrain_source", "source_accuracy"]
