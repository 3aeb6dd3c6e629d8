"""Deterministic desk-scale domain pairs (rotated two-moons, styled digit
glyphs) and the SCDS1 tensor-file format for fixtures."""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core_types import Domain, Sample

MAGIC = b"SCDS1"

# Two-moons points live well inside this half-width for any rotation and
# moderate noise; the affine map to [0,1] pixels is fixed across domains so
# rotation remains a genuine shift in pixel space.
COORD_HALF_WIDTH = 2.5


class DatasetFormatError(ValueError):
    """A dataset file violates the SCDS1 contract."""


class DigitStyle(enum.Enum):
    COLOR_BLEND = "color_blend"
    INVERT = "invert"
    NOISE_PATCH = "noise_patch"


@dataclass(frozen=True)
class DomainPair:
    """Labeled source samples plus an unlabeled training view of the target.

    Ground-truth target labels are held in an evaluation-only side table;
    the target Samples themselves are structurally unlabeled, so nothing
    downstream can peek.
    """

    source: list[Sample]
    target: list[Sample]
    target_eval_labels: np.ndarray  # (len(target),) int64, evaluation only
    n_classes: int
    image_shape: tuple[int, int, int]

    def __post_init__(self):
        labels = np.asarray(self.target_eval_labels, dtype=np.int64)
        if labels.shape != (len(self.target),):
            raise ValueError("one evaluation label per target sample is required")
        object.__setattr__(self, "target_eval_labels", labels)


@dataclass(frozen=True)
class DatasetFile:
    """A single-domain dataset parsed from one SCDS1 file (label -1 = absent)."""

    pixels: np.ndarray  # (N, H*W*C) float64
    labels: np.ndarray  # (N,) int64
    image_shape: tuple[int, int, int]
    n_classes: int


def coords_to_pixels(coords: np.ndarray) -> np.ndarray:
    """Affine map from point coordinates to [0,1] pixel values."""
    return np.clip((coords + COORD_HALF_WIDTH) / (2.0 * COORD_HALF_WIDTH), 0.0, 1.0)


def pixels_to_coords(pixels: np.ndarray) -> np.ndarray:
    return pixels * (2.0 * COORD_HALF_WIDTH) - COORD_HALF_WIDTH


# The two arcs are shifted so the figure is centered on the origin; a
# rotation about the origin is then a pure rotation of the data about its
# own center rather than a displacement.
_MOONS_CENTER = np.array([0.5, 0.25])


def _two_moons_points(n: int, noise_sd: float, rng: np.random.Generator):
    """Interleaved upper/lower moon with exact floor/ceil class balance."""
    n_upper = (n + 1) // 2
    n_lower = n // 2
    t_up = rng.uniform(0.0, np.pi, size=n_upper)
    t_lo = rng.uniform(0.0, np.pi, size=n_lower)
    upper = np.stack([np.cos(t_up), np.sin(t_up)], axis=1)
    lower = np.stack([1.0 - np.cos(t_lo), 0.5 - np.sin(t_lo)], axis=1)
    coords = np.concatenate([upper, lower]) - _MOONS_CENTER
    labels = np.concatenate([np.zeros(n_upper, dtype=np.int64),
                             np.ones(n_lower, dtype=np.int64)])
    if noise_sd > 0:
        coords = coords + rng.normal(0.0, noise_sd, size=coords.shape)
    return coords, labels


def rotate_coords(coords: np.ndarray, degrees: float) -> np.ndarray:
    theta = np.deg2rad(degrees)
    rot = np.array([[np.cos(theta), -np.sin(theta)],
                    [np.sin(theta), np.cos(theta)]])
    return coords @ rot.T


def make_two_moons_pair(
    n_per_domain: int, rotation_deg: float, noise_sd: float, seed: int
) -> DomainPair:
    """Source: standard two moons. Target: an independent draw of the same
    process with every point rotated about the origin.

    Points are stored as degenerate 1x1x2 images so every network contract
    is uniform across datasets.
    """
    if n_per_domain < 10:
        raise ValueError(f"n_per_domain must be at least 10, got {n_per_domain}")
    root = np.random.SeedSequence(seed)
    src_rng, tgt_rng = (np.random.default_rng(s) for s in root.spawn(2))
    src_coords, src_labels = _two_moons_points(n_per_domain, noise_sd, src_rng)
    tgt_coords, tgt_labels = _two_moons_points(n_per_domain, noise_sd, tgt_rng)
    tgt_coords = rotate_coords(tgt_coords, rotation_deg)

    src_pixels = coords_to_pixels(src_coords)
    tgt_pixels = coords_to_pixels(tgt_coords)
    source = [Sample(p, int(l), Domain.SOURCE) for p, l in zip(src_pixels, src_labels)]
    target = [Sample(p, None, Domain.TARGET) for p in tgt_pixels]
    return DomainPair(source=source, target=target, target_eval_labels=tgt_labels,
                      n_classes=2, image_shape=(1, 1, 2))


# 8x8 digit glyphs; '#' marks lit pixels.
_GLYPHS = {
    0: ("..####..", ".#....#.", ".#...##.", ".#..#.#.", ".#.#..#.", ".##...#.", ".#....#.", "..####.."),
    1: ("...##...", "..###...", ".#.##...", "...##...", "...##...", "...##...", "...##...", ".######."),
    2: ("..####..", ".#....#.", "......#.", ".....#..", "....#...", "...#....", "..#.....", ".######."),
    3: ("..####..", ".#....#.", "......#.", "...###..", "......#.", "......#.", ".#....#.", "..####.."),
    4: ("....##..", "...#.#..", "..#..#..", ".#...#..", ".######.", ".....#..", ".....#..", ".....#.."),
    5: (".######.", ".#......", ".#......", ".#####..", "......#.", "......#.", ".#....#.", "..####.."),
    6: ("..####..", ".#....#.", ".#......", ".#####..", ".#....#.", ".#....#.", ".#....#.", "..####.."),
    7: (".######.", "......#.", ".....#..", "....#...", "...#....", "...#....", "...#....", "...#...."),
    8: ("..####..", ".#....#.", ".#....#.", "..####..", ".#....#.", ".#....#.", ".#....#.", "..####.."),
    9: ("..####..", ".#....#.", ".#....#.", "..#####.", "......#.", "......#.", ".#....#.", "..####.."),
}


def _glyph_mask(digit: int) -> np.ndarray:
    rows = _GLYPHS[digit]
    return np.array([[1.0 if ch == "#" else 0.0 for ch in row] for row in rows])


def _render_clean_digit(digit: int, rng: np.random.Generator) -> np.ndarray:
    """One 8x8x3 grayscale-ish rendering with mild per-sample variation."""
    mask = _glyph_mask(digit)
    intensity = rng.uniform(0.7, 1.0)
    background = rng.uniform(0.0, 0.08)
    img = background + (intensity - background) * mask
    img = img[:, :, None].repeat(3, axis=2)
    img = img + rng.normal(0.0, 0.02, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _apply_style(img: np.ndarray, style: DigitStyle, strength: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Blend the clean rendering with a styled variant; strength 0 is the
    identity. Style-specific random draws happen for every sample so the
    per-sample RNG stream does not depend on strength."""
    if style == DigitStyle.COLOR_BLEND:
        # 2x2 grid of 4x4 solid color patches behind/over the whole image
        colors = rng.uniform(0.0, 1.0, size=(2, 2, 3))
        patch = np.repeat(np.repeat(colors, 4, axis=0), 4, axis=1)
        styled = patch
    elif style == DigitStyle.INVERT:
        styled = 1.0 - img
    elif style == DigitStyle.NOISE_PATCH:
        top, left = rng.integers(0, 5, size=2)
        noise = rng.uniform(0.0, 1.0, size=(4, 4, 3))
        styled = img.copy()
        styled[top : top + 4, left : left + 4, :] = noise
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unknown style {style}")
    return np.clip((1.0 - strength) * img + strength * styled, 0.0, 1.0)


def make_minidigits_pair(
    n_per_class: int, style: DigitStyle, seed: int, strength: float = 0.5
) -> DomainPair:
    """Source: clean 8x8x3 digit glyph renderings, 10 classes. Target: an
    independent draw of the same glyph process with the style transform
    blended in at the given strength."""
    if n_per_class < 5:
        raise ValueError(f"n_per_class must be at least 5, got {n_per_class}")
    if isinstance(style, str):
        style = DigitStyle(style)
    if not 0.0 <= strength <= 1.0:
        raise ValueError(f"strength out of [0,1]: {strength}")
    root = np.random.SeedSequence(seed)
    # The style transform draws from its own stream so the underlying clean
    # glyph process is identical for every style and strength.
    src_rng, tgt_rng, style_rng = (np.random.default_rng(s) for s in root.spawn(3))

    source, target, tgt_labels = [], [], []
    for digit in range(10):
        for _ in range(n_per_class):
            img = _render_clean_digit(digit, src_rng)
            source.append(Sample(img.ravel(), digit, Domain.SOURCE))
        for _ in range(n_per_class):
            img = _render_clean_digit(digit, tgt_rng)
            img = _apply_style(img, style, strength, style_rng)
            target.append(Sample(img.ravel(), None, Domain.TARGET))
            tgt_labels.append(digit)
    return DomainPair(source=source, target=target,
                      target_eval_labels=np.array(tgt_labels, dtype=np.int64),
                      n_classes=10, image_shape=(8, 8, 3))


# ---------------------------------------------------------------------------
# SCDS1 tensor-file format:
#   magic "SCDS1" | u32 count | u32 H | u32 W | u32 C | u32 n_classes
#   then per record: float32[H*W*C] pixels, int32 label (-1 = absent)
# ---------------------------------------------------------------------------

def write_dataset(path, pixels: np.ndarray, labels: np.ndarray,
                  image_shape: tuple[int, int, int], n_classes: int) -> None:
    pixels = np.asarray(pixels, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int32)
    h, w, c = image_shape
    if pixels.ndim != 2 or pixels.shape[1] != h * w * c:
        raise ValueError(f"pixels shape {pixels.shape} does not match image shape {image_shape}")
    if labels.shape != (pixels.shape[0],):
        raise ValueError("one label per record is required (-1 for absent)")
    if pixels.shape[0] == 0:
        raise ValueError("refusing to write an empty dataset")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<5I", pixels.shape[0], h, w, c, n_classes))
        for row, label in zip(pixels, labels):
            fh.write(row.tobytes())
            fh.write(struct.pack("<i", int(label)))


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise DatasetFormatError(f"truncated dataset file while reading {what}")
    return data


def read_dataset_file(path) -> DatasetFile:
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC), "magic") != MAGIC:
            raise DatasetFormatError(f"{path}: bad magic, not an SCDS1 file")
        count, h, w, c, n_classes = struct.unpack("<5I", _read_exact(fh, 20, "header"))
        if count == 0:
            raise DatasetFormatError(f"{path}: empty dataset")
        if min(h, w, c) == 0 or n_classes < 2:
            raise DatasetFormatError(f"{path}: bad header ({h}x{w}x{c}, {n_classes} classes)")
        dim = h * w * c
        pixels = np.empty((count, dim), dtype=np.float64)
        labels = np.empty(count, dtype=np.int64)
        for i in range(count):
            raw = _read_exact(fh, 4 * dim + 4, f"record {i}")
            row = np.frombuffer(raw[: 4 * dim], dtype="<f4").astype(np.float64)
            (label,) = struct.unpack("<i", raw[4 * dim :])
            if not np.all(np.isfinite(row)) or row.min() < 0.0 or row.max() > 1.0:
                raise DatasetFormatError(f"{path}: record {i} has pixels outside [0,1]")
            if label < -1 or label >= n_classes:
                raise DatasetFormatError(f"{path}: record {i} label {label} out of range")
            pixels[i] = row
            labels[i] = label
        if fh.read(1):
            raise DatasetFormatError(f"{path}: trailing bytes after {count} records")
    return DatasetFile(pixels=pixels, labels=labels, image_shape=(h, w, c), n_classes=n_classes)


PAIR_FILES = ("source.scds", "target.scds", "target_eval.scds")


def write_domain_pair(directory, pair: DomainPair) -> None:
    """Write a DomainPair fixture as three SCDS1 files in a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    src_px = np.stack([s.pixels for s in pair.source])
    src_lb = np.array([s.label for s in pair.source], dtype=np.int32)
    tgt_px = np.stack([s.pixels for s in pair.target])
    write_dataset(directory / "source.scds", src_px, src_lb, pair.image_shape, pair.n_classes)
    write_dataset(directory / "target.scds", tgt_px,
                  np.full(len(pair.target), -1, dtype=np.int32),
                  pair.image_shape, pair.n_classes)
    write_dataset(directory / "target_eval.scds", tgt_px, pair.target_eval_labels,
                  pair.image_shape, pair.n_classes)


def load_dataset(path):
    """Load a fixture: a directory with source/target/target_eval files
    becomes a DomainPair; a single SCDS1 file becomes a DatasetFile."""
    path = Path(path)
    if path.is_dir():
        for name in PAIR_FILES:
            if not (path / name).exists():
                raise DatasetFormatError(f"{path}: missing {name} in domain-pair directory")
        src = read_dataset_file(path / "source.scds")
        tgt = read_dataset_file(path / "target.scds")
        ev = read_dataset_file(path / "target_eval.scds")
        if src.image_shape != tgt.image_shape or src.n_classes != tgt.n_classes:
            raise DatasetFormatError(f"{path}: source/target header mismatch")
        if ev.pixels.shape != tgt.pixels.shape:
            raise DatasetFormatError(f"{path}: target_eval does not match target")
        if np.any(src.labels < 0):
            raise DatasetFormatError(f"{path}: source file contains unlabeled records")
        if np.any(ev.labels < 0):
            raise DatasetFormatError(f"{path}: target_eval file contains unlabeled records")
        source = [Sample(p, int(l), Domain.SOURCE) for p, l in zip(src.pixels, src.labels)]
        target = [Sample(p, None, Domain.TARGET) for p in tgt.pixels]
        return DomainPair(source=source, target=target, target_eval_labels=ev.labels,
                          n_classes=src.n_classes, image_shape=src.image_shape)
    return read_dataset_file(path)


def dataset_digest(pair: DomainPair) -> dict[str, str]:
    """sha256 digests of the pair's raw arrays, for the run manifest."""
    src_px = np.stack([s.pixels for s in pair.source])
    src_lb = np.array([s.label for s in pair.source], dtype=np.int64)
    tgt_px = np.stack([s.pixels for s in pair.target])

    def digest(*arrays):
        h = hashlib.sha256()
        for a in arrays:
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()

    return {
        "source_digest": digest(src_px, src_lb),
        "target_digest": digest(tgt_px),
        "target_eval_digest": digest(pair.target_eval_labels),
    }


def linear_probe_accuracy(
    train_pixels: np.ndarray, train_labels: np.ndarray,
    test_pixels: np.ndarray, test_labels: np.ndarray,
    n_classes: int, ridge: float = 1e-3,
) -> float:
    """Closed-form one-hot ridge regression probe; fully deterministic."""
    x = np.hstack([train_pixels, np.ones((train_pixels.shape[0], 1))])
    y = np.eye(n_classes)[train_labels]
    w = np.linalg.solve(x.T @ x + ridge * np.eye(x.shape[1]), x.T @ y)
    xt = np.hstack([test_pixels, np.ones((test_pixels.shape[0], 1))])
    pred = (xt @ w).argmax(axis=1)
    return float(np.mean(pred == test_labels))


__all__ = [
    "MAGIC",
    "COORD_HALF_WIDTH",
    "DatasetFormatError",
    "DigitStyle",
    "DomainPair",
    "DatasetFile",
    "coords_to_pixels",
    "pixels_to_coords",
    "rotate_coords",
    "make_two_moons_pair",
    "make_minidigits_pair",
    "write_dataset",
    "read_dataset_file",
    "write_domain_pair",
    "load_dataset",
    "dataset_digest",
    "linear_probe_accuracy",
]
