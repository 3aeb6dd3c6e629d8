"""End-to-end training: source pretraining, then alternating
discriminator / encoder+generator / classifier momentum-SGD updates, with
JSON-lines metrics, a run manifest, and bitwise-resumable checkpoints."""

from __future__ import annotations

import hashlib
import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import __version__ as code_version
from .core_types import (
    LabeledBatch,
    RunConfig,
    UnlabeledBatch,
    config_from_items,
    config_to_items,
    validate_config,
)
from .losses import (
    LossReport,
    classifier_objective,
    discriminator_objective,
    generate_styled,
    generator_objective,
    make_report,
    nonfinite_terms,
    report_to_json_line,
)
from .networks import (
    GROUPS,
    ParameterSet,
    init_parameters,
    iter_group_params,
    zeroed_momentum,
)
from .optim import apply_group_update, group_gradients, momentum_sgd_update
from .pseudo_labeler import assign_pseudo_labels, pretrain_source

CHECKPOINT_MAGIC = b"SCGAN"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


class CheckpointCorruptError(CheckpointError):
    """File is truncated or not a checkpoint at all."""


class CheckpointVersionError(CheckpointError):
    """Format version is not supported."""


class CheckpointDigestError(CheckpointError):
    """Checkpoint was written under a different configuration."""


class NonFiniteLossError(RuntimeError):
    """A loss term became NaN/Inf; parameters were left at their pre-step
    values."""

    def __init__(self, terms: list[str], step: int):
        super().__init__(f"non-finite loss terms {terms} at step {step}")
        self.terms = terms
        self.step = step


@dataclass
class Cycler:
    """Shuffled pass over dataset indices; reshuffles when a full batch no
    longer fits, so every batch has exactly batch_size rows."""

    order: np.ndarray
    pos: int = 0

    @staticmethod
    def fresh(n: int, rng: np.random.Generator) -> "Cycler":
        return Cycler(order=rng.permutation(n), pos=0)

    def next_batch(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if self.pos + batch_size > self.order.size:
            self.order = rng.permutation(self.order.size)
            self.pos = 0
        idx = self.order[self.pos : self.pos + batch_size]
        self.pos += batch_size
        return idx


@dataclass
class TrainState:
    params: ParameterSet
    step: int
    rng: np.random.Generator
    src_cycle: Cycler | None = None
    tgt_cycle: Cycler | None = None
    history: list[LossReport] = field(default_factory=list)


def config_digest(config: RunConfig) -> bytes:
    text = "\n".join(f"{k}={v}" for k, v in config_to_items(config))
    return hashlib.sha256(text.encode()).digest()


def train_step(
    state: TrainState,
    batch_s: LabeledBatch,
    batch_t: UnlabeledBatch,
    config: RunConfig,
) -> tuple[TrainState, LossReport]:
    """One adaptation step: assign pseudo labels, update the two
    discriminators on detached generated batches, update encoder+generator,
    then update classifier+encoder on the gamma-scaled classifier loss.

    Any non-finite loss aborts the step with the state untouched.
    """
    weights = config.loss_weights
    params = state.params

    def check_finite(fragment: dict):
        bad = nonfinite_terms(fragment)
        if bad:
            raise NonFiniteLossError(bad, state.step)

    try:
        pseudo = assign_pseudo_labels(params, batch_t, config.pseudo_threshold)
    except ValueError as exc:
        raise NonFiniteLossError(["pseudo_label_assignment"], state.step) from exc

    # Discriminator update: generated inputs are constants here.
    for _ in range(config.d_steps):
        styled = generate_styled(params, batch_s.pixels, batch_t.pixels, detach=True)
        d_loss, d_frag = discriminator_objective(
            params, batch_s, batch_t, pseudo, styled, config.adv_weight)
        check_finite(d_frag)
        grads = {g: group_gradients(d_loss, params, g)
                 for g in ("disc_source", "disc_target")}
        for group, g in grads.items():
            params = apply_group_update(params, group, g,
                                        config.learning_rate, config.momentum)

    # Encoder/generator update against the freshly updated discriminators.
    for _ in range(config.g_steps):
        g_loss, g_frag = generator_objective(
            params, batch_s, batch_t, pseudo, weights, config.adv_weight)
        check_finite(g_frag)
        grads = {g: group_gradients(g_loss, params, g) for g in ("encoder", "generator")}
        for group, g in grads.items():
            params = apply_group_update(params, group, g,
                                        config.learning_rate, config.momentum)

    # Classifier update; flows into the encoder too, scaled by gamma.
    for _ in range(config.c_steps):
        c_loss, c_frag = classifier_objective(params, batch_s, batch_t, pseudo)
        check_finite(c_frag)
        if weights.gamma != 0.0:
            scaled = weights.gamma * c_loss
            grads = {g: group_gradients(scaled, params, g)
                     for g in ("classifier", "encoder")}
            for group, g in grads.items():
                params = apply_group_update(params, group, g,
                                            config.learning_rate, config.momentum)

    report = make_report(g_frag, d_frag, c_frag, weights.gamma)
    new_state = TrainState(
        params=params,
        step=state.step + 1,
        rng=state.rng,
        src_cycle=state.src_cycle,
        tgt_cycle=state.tgt_cycle,
        history=state.history + [report],
    )
    return new_state, report


@dataclass
class FitResult:
    state: TrainState
    pretrain_curve: list[float]
    reports: list[LossReport]
    final_accuracy: float | None
    out_dir: Path | None


def write_manifest(path, config: RunConfig, extras: dict[str, str]) -> None:
    """Flat key=value manifest with the fully resolved config."""
    lines = [f"{k}={v}" for k, v in config_to_items(config)]
    lines += [f"{k}={v}" for k, v in sorted(extras.items())]
    lines.append(f"code_version={code_version}")
    Path(path).write_text("\n".join(lines) + "\n")


def fit(
    config: RunConfig,
    source_data,
    target_data,
    *,
    eval_labels: np.ndarray | None = None,
    out_dir=None,
    checkpoint_interval: int = 0,
    manifest_extras: dict[str, str] | None = None,
    resume_state: TrainState | None = None,
) -> FitResult:
    """Pretrain on source, then run config.train_steps adaptation steps.

    All randomness (init, batch order) derives from config.seed. Momentum
    buffers are reset between pretraining and adaptation so each phase
    starts from a clean optimizer state. When out_dir is given, a manifest,
    a JSON-lines metrics stream and periodic checkpoints are written there.
    """
    problems = validate_config(config)
    if problems:
        raise ValueError("invalid config: " + "; ".join(problems))

    from .core_types import Sample  # local import to keep module load light

    def split(data):
        if isinstance(data, (list, tuple)) and data and isinstance(data[0], Sample):
            px = np.stack([s.pixels for s in data])
            lb = [s.label for s in data]
            return px, lb
        raise ValueError("expected a nonempty list of Samples")

    src_pixels, src_labels = split(source_data)
    tgt_pixels, _ = split(target_data)
    if any(l is None for l in src_labels):
        raise ValueError("source data must be fully labeled")
    src_labels = np.asarray(src_labels, dtype=np.int64)
    if src_pixels.shape[1] != config.pixel_dim or tgt_pixels.shape[1] != config.pixel_dim:
        raise ValueError("data does not match configured image shape")
    batch = config.batch_size
    if batch > min(src_pixels.shape[0], tgt_pixels.shape[0]):
        raise ValueError("batch_size exceeds dataset size")

    out_path = Path(out_dir) if out_dir is not None else None
    metrics_fh = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        extras = dict(manifest_extras or {})
        write_manifest(out_path / "manifest.txt", config, extras)
        metrics_fh = open(out_path / "metrics.jsonl", "a" if resume_state else "w")

    try:
        if resume_state is not None:
            state = resume_state
            pretrain_curve: list[float] = []
        else:
            params = init_parameters(config, config.seed)
            rng = np.random.default_rng(np.random.SeedSequence(config.seed))
            params, pretrain_curve = pretrain_source(
                params, source_data, config, rng=rng)
            params = zeroed_momentum(params)
            state = TrainState(
                params=params, step=0, rng=rng,
                src_cycle=Cycler.fresh(src_pixels.shape[0], rng),
                tgt_cycle=Cycler.fresh(tgt_pixels.shape[0], rng),
            )

        reports: list[LossReport] = []
        while state.step < config.train_steps:
            idx_s = state.src_cycle.next_batch(batch, state.rng)
            idx_t = state.tgt_cycle.next_batch(batch, state.rng)
            batch_s = LabeledBatch(src_pixels[idx_s], src_labels[idx_s])
            batch_t = UnlabeledBatch(tgt_pixels[idx_t])
            state, report = train_step(state, batch_s, batch_t, config)
            reports.append(report)
            if metrics_fh is not None:
                metrics_fh.write(report_to_json_line(report, state.step, time.time()) + "\n")
            if (out_path is not None and checkpoint_interval > 0
                    and state.step % checkpoint_interval == 0):
                save_checkpoint(state, out_path / f"checkpoint_{state.step:06d}.scgan", config)

        final_accuracy = None
        if eval_labels is not None:
            from .eval_metrics import accuracy_from_arrays

            final_accuracy, _ = accuracy_from_arrays(
                state.params, tgt_pixels, np.asarray(eval_labels, dtype=np.int64),
                config.n_classes)
            if metrics_fh is not None:
                metrics_fh.write(json.dumps({
                    "step": state.step, "wall_time": time.time(),
                    "eval_target_accuracy": final_accuracy}) + "\n")
        if out_path is not None:
            save_checkpoint(state, out_path / "checkpoint_final.scgan", config)
    finally:
        if metrics_fh is not None:
            metrics_fh.close()

    return FitResult(state=state, pretrain_curve=pretrain_curve, reports=reports,
                     final_accuracy=final_accuracy, out_dir=out_path)


# ---------------------------------------------------------------------------
# Checkpoint format (versioned flat binary):
#   magic "SCGAN" | u32 version | 32-byte sha256 config digest
#   | u64 step | u32 len + config key=value text
#   | u32 len + rng/cycler state JSON
#   | per group in declaration order: raw float64 weight arrays
#   | same order: raw float64 momentum buffers
# ---------------------------------------------------------------------------

def _state_blob(state: TrainState) -> bytes:
    payload = {
        "rng": state.rng.bit_generator.state,
        "src_cycle": None if state.src_cycle is None else
            {"order": state.src_cycle.order.tolist(), "pos": state.src_cycle.pos},
        "tgt_cycle": None if state.tgt_cycle is None else
            {"order": state.tgt_cycle.order.tolist(), "pos": state.tgt_cycle.pos},
    }
    return json.dumps(payload).encode()


def _restore_blob(blob: bytes) -> tuple[np.random.Generator, Cycler | None, Cycler | None]:
    payload = json.loads(blob.decode())
    rng = np.random.default_rng()
    rng.bit_generator.state = payload["rng"]

    def cycler(entry):
        if entry is None:
            return None
        return Cycler(order=np.asarray(entry["order"], dtype=np.int64), pos=entry["pos"])

    return rng, cycler(payload["src_cycle"]), cycler(payload["tgt_cycle"])


def save_checkpoint(state: TrainState, path, config: RunConfig) -> None:
    digest = config_digest(config)
    config_text = "\n".join(f"{k}={v}" for k, v in config_to_items(config)).encode()
    blob = _state_blob(state)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(digest)
        fh.write(struct.pack("<Q", state.step))
        fh.write(struct.pack("<I", len(config_text)))
        fh.write(config_text)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for collection in (state.params.weights, state.params.momentum):
            for group in GROUPS:
                for _, tensor in collection[group].items():
                    fh.write(tensor.detach().numpy().astype(np.float64).tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointCorruptError(f"corrupt checkpoint: truncated while reading {what}")
    return data


def load_checkpoint(path, config: RunConfig | None = None) -> tuple[TrainState, RunConfig]:
    """Restore a TrainState. When config is given its digest must match the
    stored one; otherwise the embedded config is used."""
    with open(path, "rb") as fh:
        if _read_exact(fh, len(CHECKPOINT_MAGIC), "magic") != CHECKPOINT_MAGIC:
            raise CheckpointCorruptError("corrupt checkpoint: bad magic")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointVersionError(f"unsupported checkpoint version {version}")
        digest = _read_exact(fh, 32, "config digest")
        (step,) = struct.unpack("<Q", _read_exact(fh, 8, "step"))
        (config_len,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        config_text = _read_exact(fh, config_len, "config").decode()
        stored_items = dict(line.split("=", 1) for line in config_text.splitlines() if line)
        stored_config = config_from_items(stored_items)
        if config_digest(stored_config) != digest:
            raise CheckpointCorruptError("corrupt checkpoint: config does not match digest")
        if config is not None and config_digest(config) != digest:
            raise CheckpointDigestError(
                "checkpoint was written under a different configuration")
        config = stored_config

        (blob_len,) = struct.unpack("<I", _read_exact(fh, 4, "state length"))
        rng, src_cycle, tgt_cycle = _restore_blob(_read_exact(fh, blob_len, "state"))

        params = init_parameters(config, config.seed)
        for collection in (params.weights, params.momentum):
            for group in GROUPS:
                for name, tensor in collection[group].items():
                    raw = _read_exact(fh, 8 * tensor.numel(), f"{group}/{name}")
                    values = np.frombuffer(raw, dtype=np.float64).reshape(tuple(tensor.shape))
                    with torch.no_grad():
                        tensor.copy_(torch.from_numpy(values.copy()))
        if fh.read(1):
            raise CheckpointCorruptError("corrupt checkpoint: trailing bytes")

    return TrainState(params=params, step=step, rng=rng,
                      src_cycle=src_cycle, tgt_cycle=tgt_cycle), config


__all__ = [
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
    "CheckpointError",
    "CheckpointCorruptError",
    "CheckpointVersionError",
    "CheckpointDigestError",
    "NonFiniteLossError",
    "Cycler",
    "TrainState",
    "FitResult",
    "config_digest",
    "train_step",
    "write_manifest",
    "fit",
    "save_checkpoint",
    "load_checkpoint",
    "momentum_sgd_update",
]
