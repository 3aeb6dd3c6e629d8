"""Target-domain evaluation, the semantic-loss ablation harness, and the
image-grid / embedding exports."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .core_types import RunConfig, SOURCE_KEY, TARGET_KEY
from .data_synth import DomainPair
from .networks import ParameterSet, classify, encode, generate
from .trainer import fit


def accuracy_from_arrays(
    params: ParameterSet, pixels: np.ndarray, labels: np.ndarray, n_classes: int
) -> tuple[float, np.ndarray]:
    """Accuracy and confusion matrix (rows = true class, cols = predicted)."""
    with torch.no_grad():
        probs = classify(params, encode(params, pixels)).numpy()
    pred = probs.argmax(axis=1)
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(labels, pred):
        confusion[t, p] += 1
    return float(np.mean(pred == labels)), confusion


def target_accuracy(params: ParameterSet, pair: DomainPair) -> tuple[float, np.ndarray]:
    """Fraction of target samples whose predicted class matches the held-out
    evaluation label, plus the confusion matrix."""
    labels = pair.target_eval_labels
    if labels is None or labels.size != len(pair.target):
        raise ValueError("evaluation labels are missing for the target set")
    pixels = np.stack([s.pixels for s in pair.target])
    return accuracy_from_arrays(params, pixels, labels, pair.n_classes)


@dataclass(frozen=True)
class AblationRow:
    seed: int
    acc_with: float
    acc_without: float
    semcon_max_with: float
    semcon_max_without: float
    pretrain_curves_match: bool


@dataclass(frozen=True)
class AblationResult:
    rows: list[AblationRow]
    mean_with: float
    mean_without: float

    @property
    def gap(self) -> float:
        return self.mean_with - self.mean_without

    def to_dict(self) -> dict:
        return {
            "rows": [{"seed": r.seed, "with": r.acc_with, "without": r.acc_without,
                      "semcon_max_without": r.semcon_max_without}
                     for r in self.rows],
            "mean_with": self.mean_with,
            "mean_without": self.mean_without,
            "gap": self.gap,
        }


def run_ablation(config: RunConfig, pair: DomainPair, seeds: list[int],
                 out_dir=None) -> AblationResult:
    """Per seed, train twice with identical data order: once with the
    configured semantic-consistency weight and once with it zeroed.

    The arms differ in nothing but that weight, so the accuracy gap
    isolates the semantic term's contribution.
    """
    if len(seeds) < 3:
        raise ValueError(f"ablation needs at least 3 seeds, got {len(seeds)}")
    rows: list[AblationRow] = []
    for seed in seeds:
        accs: dict[str, float] = {}
        for arm, beta in (("with", config.loss_weights.beta), ("without", 0.0)):
            arm_config = replace(
                config, seed=seed,
                loss_weights=replace(config.loss_weights, beta=beta))
            arm_dir = None if out_dir is None else Path(out_dir) / f"seed{seed}_{arm}"
            result = fit(arm_config, pair.source, pair.target,
                         eval_labels=pair.target_eval_labels, out_dir=arm_dir)
            accs[arm] = result.final_accuracy
        rows.append(AblationRow(seed=seed, acc_with=accs["with"],
                                acc_without=accs["without"]))
    return AblationResult(
        rows=rows,
        mean_with=float(np.mean([r.acc_with for r in rows])),
        mean_without=float(np.mean([r.acc_without for r in rows])),
    )


def _to_tile(row: np.ndarray, image_shape: tuple[int, int, int]) -> np.ndarray:
    """One flat pixel vector to an (H, W, 3) uint8 tile; 2-channel images get
    a zero blue channel so the grid stays a standard raster."""
    h, w, c = image_shape
    img = row.reshape(h, w, c)
    if c == 1:
        img = np.repeat(img, 3, axis=2)
    elif c == 2:
        img = np.concatenate([img, np.zeros((h, w, 1))], axis=2)
    elif c != 3:
        raise ValueError(f"cannot render {c}-channel images")
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


GRID_COLUMNS = ("source", "source_as_source", "source_as_target",
                "target", "target_as_target", "target_as_source")


def export_image_grid(params: ParameterSet, pair: DomainPair, n_rows: int,
                      path, seed: int = 0) -> Path:
    """Write a lossless PNG grid, six columns per row: real source, its
    source-styled and target-styled renderings, real target, its
    target-styled and source-styled renderings. Sample choice is seeded, so
    repeated exports are byte-identical."""
    if n_rows < 1:
        raise ValueError("n_rows must be positive")
    rng = np.random.default_rng(seed)
    src_idx = rng.choice(len(pair.source), size=n_rows, replace=n_rows > len(pair.source))
    tgt_idx = rng.choice(len(pair.target), size=n_rows, replace=n_rows > len(pair.target))
    src = np.stack([pair.source[i].pixels for i in src_idx])
    tgt = np.stack([pair.target[i].pixels for i in tgt_idx])

    with torch.no_grad():
        z_src = encode(params, src)
        z_tgt = encode(params, tgt)
        columns = [
            src,
            generate(params, z_src, SOURCE_KEY).numpy(),
            generate(params, z_src, TARGET_KEY).numpy(),
            tgt,
            generate(params, z_tgt, TARGET_KEY).numpy(),
            generate(params, z_tgt, SOURCE_KEY).numpy(),
        ]

    h, w, _ = pair.image_shape
    canvas = np.zeros((n_rows * h, 6 * w, 3), dtype=np.uint8)
    for r in range(n_rows):
        for col_i, col in enumerate(columns):
            canvas[r * h : (r + 1) * h, col_i * w : (col_i + 1) * w] = _to_tile(
                col[r], pair.image_shape)
    path = Path(path)
    Image.fromarray(canvas, mode="RGB").save(path, format="PNG")
    return path


def principal_axes(codes: np.ndarray) -> np.ndarray:
    """Top-2 principal directions of the code cloud, rows orthonormal.

    Component signs are fixed (largest-magnitude entry positive) so the
    projection is deterministic across runs.
    """
    centered = codes - codes.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    axes = vt[:2]
    for i in range(axes.shape[0]):
        j = int(np.argmax(np.abs(axes[i])))
        if axes[i, j] < 0:
            axes[i] = -axes[i]
    return axes


def export_embeddings(params: ParameterSet, pair: DomainPair, path,
                      class_filter: list[int] | None = None) -> np.ndarray:
    """Write per-sample records (domain, label, 2-D principal-component
    projection, full latent code) as CSV and return the projection axes.

    Target rows use the held-out evaluation labels so external tools can
    color a t-SNE of the full codes by class.
    """
    src_px = np.stack([s.pixels for s in pair.source])
    tgt_px = np.stack([s.pixels for s in pair.target])
    with torch.no_grad():
        src_codes = encode(params, src_px).numpy()
        tgt_codes = encode(params, tgt_px).numpy()
    codes = np.concatenate([src_codes, tgt_codes])
    axes = principal_axes(codes)
    projected = codes @ axes.T

    labels = np.concatenate([
        np.array([s.label for s in pair.source], dtype=np.int64),
        pair.target_eval_labels,
    ])
    domains = ["source"] * len(pair.source) + ["target"] * len(pair.target)

    d_z = codes.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["domain", "label", "pc1", "pc2"] + [f"z_{i}" for i in range(d_z)])
        for i, domain in enumerate(domains):
            if class_filter is not None and int(labels[i]) not in class_filter:
                continue
            writer.writerow([domain, int(labels[i]),
                             f"{projected[i, 0]:.12g}", f"{projected[i, 1]:.12g}"]
                            + [f"{v:.12g}" for v in codes[i]])
    return axes


__all__ = [
    "accuracy_from_arrays",
    "target_accuracy",
    "AblationRow",
    "AblationResult",
    "run_ablation",
    "GRID_COLUMNS",
    "export_image_grid",
    "principal_axes",
    "export_embeddings",
]
