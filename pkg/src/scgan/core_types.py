"""Shared data model: samples, batches, domain keys, labels, run configuration."""

from __future__ import annotations

import enum
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np


class Domain(enum.Enum):
    SOURCE = "source"
    TARGET = "target"


def _as_float_vector(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Sample:
    """One image, stored as a flat pixel vector in [0, 1].

    Source samples always carry a class label; target samples never do.
    Ground-truth target labels live in a separate evaluation-only table
    (see data_synth.DomainPair), so an unlabeled target sample is a
    type-level guarantee, not a convention.
    """

    pixels: np.ndarray
    label: Optional[int]
    domain: Domain

    def __post_init__(self):
        object.__setattr__(self, "pixels", _as_float_vector(self.pixels))
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError("sample pixels must be finite")
        if self.pixels.min(initial=0.0) < 0.0 or self.pixels.max(initial=0.0) > 1.0:
            raise ValueError(
                f"sample pixels out of [0, 1]: min={self.pixels.min()}, max={self.pixels.max()}"
            )
        if self.domain == Domain.SOURCE and self.label is None:
            raise ValueError("source samples must be labeled")
        if self.domain == Domain.TARGET and self.label is not None:
            raise ValueError("target samples must not carry labels during training")
        if self.label is not None and self.label < 0:
            raise ValueError(f"label must be nonnegative, got {self.label}")


@dataclass(frozen=True)
class DomainKey:
    """One-hot 2-vector steering the generator toward a domain's style."""

    onehot: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "onehot", _as_float_vector(self.onehot))
        v = self.onehot
        if v.shape != (2,) or sorted(v.tolist()) != [0.0, 1.0]:
            raise ValueError(f"domain key must be a one-hot 2-vector, got {v}")


SOURCE_KEY = DomainKey(np.array([1.0, 0.0]))
TARGET_KEY = DomainKey(np.array([0.0, 1.0]))


def make_domain_key(domain: Domain) -> DomainKey:
    """Fixed assignment: SOURCE -> [1, 0], TARGET -> [0, 1]."""
    return SOURCE_KEY if domain == Domain.SOURCE else TARGET_KEY


@dataclass(frozen=True)
class LatentCode:
    """Encoder output vector; the representation the classifier and the
    semantic-consistency distance operate on."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_float_vector(self.values))
        if not np.all(np.isfinite(self.values)):
            raise ValueError("latent code must be finite")


@dataclass(frozen=True)
class PseudoLabel:
    """Classifier-predicted label for a target sample.

    `accepted` records the strict-threshold decision made at assignment
    time: confidence > threshold.
    """

    class_id: int
    confidence: float
    accepted: bool

    def __post_init__(self):
        if self.class_id < 0:
            raise ValueError(f"class_id must be nonnegative, got {self.class_id}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of [0, 1]: {self.confidence}")


@dataclass(frozen=True)
class LossWeights:
    """Weights of the reconstruction (alpha), semantic-consistency (beta)
    and classifier (gamma) terms. Validated by validate_config, not here:
    config violations are reported as data, not exceptions."""

    alpha: float
    beta: float
    gamma: float


@dataclass(frozen=True)
class RunConfig:
    n_classes: int
    latent_dim: int
    image_shape: tuple[int, int, int]  # (H, W, C)
    loss_weights: LossWeights
    learning_rate: float
    momentum: float
    pseudo_threshold: float
    pretrain_steps: int
    train_steps: int
    batch_size: int
    seed: int
    hidden_dim: int = 64
    adv_weight: float = 1.0  # binary real/fake term weight; 0 disables it
    d_steps: int = 1
    g_steps: int = 1
    c_steps: int = 1

    @property
    def pixel_dim(self) -> int:
        h, w, c = self.image_shape
        return h * w * c


def validate_config(config: RunConfig) -> list[str]:
    """Return violation descriptions, one per broken invariant (empty if valid)."""
    problems: list[str] = []
    if config.n_classes < 2:
        problems.append("n_classes below minimum 2")
    if config.latent_dim < 1:
        problems.append("latent_dim must be positive")
    if len(config.image_shape) != 3 or any(d < 1 for d in config.image_shape):
        problems.append("image_shape must be three positive extents")
    if config.hidden_dim < 1:
        problems.append("hidden_dim must be positive")
    w = config.loss_weights
    for name, value in (("alpha", w.alpha), ("beta", w.beta), ("gamma", w.gamma)):
        if not np.isfinite(value) or value < 0:
            problems.append(f"loss weight {name} must be finite and nonnegative")
    if not np.isfinite(config.learning_rate) or config.learning_rate <= 0:
        problems.append("learning_rate must be positive")
    if not 0.0 <= config.momentum < 1.0:
        problems.append("momentum out of [0,1)")
    if not 0.0 < config.pseudo_threshold <= 1.0:
        problems.append("pseudo_threshold out of (0,1]")
    if config.pretrain_steps < 0:
        problems.append("pretrain_steps must be nonnegative")
    if config.train_steps < 0:
        problems.append("train_steps must be nonnegative")
    if config.batch_size < 2:
        problems.append("batch_size below minimum 2")
    if not np.isfinite(config.adv_weight) or config.adv_weight < 0:
        problems.append("adv_weight must be finite and nonnegative")
    for name in ("d_steps", "g_steps", "c_steps"):
        if getattr(config, name) < 1:
            problems.append(f"{name} must be at least 1")
    return problems


def config_to_items(config: RunConfig) -> list[tuple[str, str]]:
    """Flatten a RunConfig to sorted (key, value-string) pairs.

    Canonical representation used by the manifest, the flat config-file
    format and the checkpoint digest.
    """
    items: dict[str, str] = {}
    for f in fields(config):
        value = getattr(config, f.name)
        if f.name == "loss_weights":
            items["alpha"] = repr(value.alpha)
            items["beta"] = repr(value.beta)
            items["gamma"] = repr(value.gamma)
        elif f.name == "image_shape":
            h, w, c = value
            items["image_h"] = str(h)
            items["image_w"] = str(w)
            items["image_c"] = str(c)
        elif isinstance(value, float):
            items[f.name] = repr(value)
        else:
            items[f.name] = str(value)
    return sorted(items.items())


def config_from_items(items: dict[str, str]) -> RunConfig:
    """Inverse of config_to_items; unknown keys are rejected."""
    pairs = dict(items)

    def pop_int(key):
        return int(pairs.pop(key))

    def pop_float(key):
        return float(pairs.pop(key))

    weights = LossWeights(pop_float("alpha"), pop_float("beta"), pop_float("gamma"))
    shape = (pop_int("image_h"), pop_int("image_w"), pop_int("image_c"))
    config = RunConfig(
        n_classes=pop_int("n_classes"),
        latent_dim=pop_int("latent_dim"),
        image_shape=shape,
        loss_weights=weights,
        learning_rate=pop_float("learning_rate"),
        momentum=pop_float("momentum"),
        pseudo_threshold=pop_float("pseudo_threshold"),
        pretrain_steps=pop_int("pretrain_steps"),
        train_steps=pop_int("train_steps"),
        batch_size=pop_int("batch_size"),
        seed=pop_int("seed"),
        hidden_dim=pop_int("hidden_dim"),
        adv_weight=pop_float("adv_weight"),
        d_steps=pop_int("d_steps"),
        g_steps=pop_int("g_steps"),
        c_steps=pop_int("c_steps"),
    )
    if pairs:
        raise ValueError(f"unknown config keys: {sorted(pairs)}")
    return config


@dataclass(frozen=True)
class LabeledBatch:
    """Minibatch of source pixels with integer class labels."""

    pixels: np.ndarray  # (B, D) float64 in [0, 1]
    labels: np.ndarray  # (B,) int64

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        lb = np.asarray(self.labels, dtype=np.int64)
        if px.ndim != 2:
            raise ValueError(f"batch pixels must be 2-D, got shape {px.shape}")
        if lb.shape != (px.shape[0],):
            raise ValueError(f"labels shape {lb.shape} does not match batch of {px.shape[0]}")
        if np.any(lb < 0):
            raise ValueError("labeled batch contains negative labels")
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "labels", lb)

    def __len__(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class UnlabeledBatch:
    """Minibatch of target pixels; labels are structurally absent."""

    pixels: np.ndarray  # (B, D) float64 in [0, 1]

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise ValueError(f"batch pixels must be 2-D, got shape {px.shape}")
        object.__setattr__(self, "pixels", px)

    def __len__(self) -> int:
        return self.pixels.shape[0]


def batch_from_samples(samples: list[Sample]):
    """Stack samples into a LabeledBatch (all labeled) or UnlabeledBatch (none)."""
    if not samples:
        raise ValueError("cannot build a batch from zero samples")
    labeled = [s.label is not None for s in samples]
    pixels = np.stack([s.pixels for s in samples])
    if all(labeled):
        return LabeledBatch(pixels, np.array([s.label for s in samples], dtype=np.int64))
    if any(labeled):
        raise ValueError("cannot mix labeled and unlabeled samples in one batch")
    return UnlabeledBatch(pixels)


__all__ = [
    "Domain",
    "Sample",
    "DomainKey",
    "SOURCE_KEY",
    "TARGET_KEY",
    "make_domain_key",
    "LatentCode",
    "PseudoLabel",
    "LossWeights",
    "RunConfig",
    "validate_config",
    "config_to_items",
    "config_from_items",
    "LabeledBatch",
    "UnlabeledBatch",
    "batch_from_samples",
]
