"""Command-line surface: synth, train, eval, ablate, gradcheck, export-grid,
export-embeddings.

Config files are flat key=value lines ('#' starts a comment). Precedence:
command-line flags > config file > built-in preset defaults. Exit codes:
0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import importlib.resources
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .core_types import LossWeights, RunConfig, validate_config
from .data_synth import (
    DatasetFormatError,
    DigitStyle,
    dataset_digest,
    load_dataset,
    make_minidigits_pair,
    make_two_moons_pair,
    write_domain_pair,
)
from .trainer import CheckpointError, fit, load_checkpoint, write_manifest

PRESET_NAMES = ("two_moons", "minidigits", "minidigits_hard", "object_style")

# Keys a config file may set; everything else is rejected up front.
CONFIG_KEYS = {
    "n_classes", "latent_dim", "image_h", "image_w", "image_c",
    "alpha", "beta", "gamma", "learning_rate", "momentum", "pseudo_threshold",
    "pretrain_steps", "train_steps", "batch_size", "seed", "hidden_dim",
    "adv_weight", "d_steps", "g_steps", "c_steps",
    "dataset", "n_per_domain", "rotation_deg", "noise_sd",
    "n_per_class", "style", "strength",
}

DATASET_DEFAULTS = {
    "dataset": "two_moons",
    "n_per_domain": "500",
    "rotation_deg": "35.0",
    "noise_sd": "0.08",
    "n_per_class": "20",
    "style": "color_blend",
    "strength": "0.5",
}


class UsageError(ValueError):
    """Bad user input: flags, config contents, file formats."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def parse_config_file(path) -> dict[str, str]:
    items: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        items[key] = value
    return items


def _preset_text(name: str) -> str:
    resource = importlib.resources.files("scgan").joinpath(f"presets/{name}.cfg")
    return resource.read_text()


def resolve_config(config_arg: str | None, overrides: dict[str, str]
                   ) -> tuple[RunConfig, dict[str, str]]:
    """Merge preset/file values with CLI overrides into a RunConfig plus the
    dataset spec, and report the resolved key=value map."""
    items = dict(DATASET_DEFAULTS)
    if config_arg is None:
        config_arg = "two_moons"
    if config_arg in PRESET_NAMES:
        path = None
        text = _preset_text(config_arg)
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                key, value = (p.strip() for p in line.split("=", 1))
                items[key] = value
    else:
        path = Path(config_arg)
        if not path.exists():
            raise UsageError(f"config {config_arg!r} is neither a preset "
                             f"{PRESET_NAMES} nor an existing file")
        items.update(parse_config_file(path))
    for key, value in overrides.items():
        if value is not None:
            items[str(key)] = str(value)

    def need(key):
        if key not in items:
            raise UsageError(f"config is missing required key {key!r}")
        return items[key]

    try:
        config = RunConfig(
            n_classes=int(need("n_classes")),
            latent_dim=int(need("latent_dim")),
            image_shape=(int(need("image_h")), int(need("image_w")), int(need("image_c"))),
            loss_weights=LossWeights(float(need("alpha")), float(need("beta")),
                                     float(need("gamma"))),
            learning_rate=float(need("learning_rate")),
            momentum=float(need("momentum")),
            pseudo_threshold=float(need("pseudo_threshold")),
            pretrain_steps=int(need("pretrain_steps")),
            train_steps=int(need("train_steps")),
            batch_size=int(need("batch_size")),
            seed=int(need("seed")),
            hidden_dim=int(items.get("hidden_dim", "64")),
            adv_weight=float(items.get("adv_weight", "1.0")),
            d_steps=int(items.get("d_steps", "1")),
            g_steps=int(items.get("g_steps", "1")),
            c_steps=int(items.get("c_steps", "1")),
        )
    except ValueError as exc:
        raise UsageError(f"bad config value: {exc}") from exc
    problems = validate_config(config)
    if problems:
        raise UsageError("invalid config: " + "; ".join(problems))
    return config, items


def synthesize_pair(items: dict[str, str], seed: int):
    kind = items["dataset"]
    if kind == "two_moons":
        return make_two_moons_pair(
            n_per_domain=int(items["n_per_domain"]),
            rotation_deg=float(items["rotation_deg"]),
            noise_sd=float(items["noise_sd"]),
            seed=seed,
        )
    if kind == "minidigits":
        return make_minidigits_pair(
            n_per_class=int(items["n_per_class"]),
            style=DigitStyle(items["style"]),
            seed=seed,
            strength=float(items["strength"]),
        )
    raise UsageError(f"unknown dataset kind {items['dataset']!r}")


def _load_pair(data_arg: str):
    pair = load_dataset(data_arg)
    from .data_synth import DomainPair

    if not isinstance(pair, DomainPair):
        raise UsageError(f"{data_arg} is a single-domain file, need a domain-pair directory")
    return pair


def _check_pair_matches(config: RunConfig, pair) -> None:
    if pair.image_shape != config.image_shape or pair.n_classes != config.n_classes:
        raise UsageError(
            f"dataset ({pair.image_shape}, {pair.n_classes} classes) does not match "
            f"config ({config.image_shape}, {config.n_classes} classes)")


def _cmd_synth(args) -> int:
    config, items = resolve_config(args.config, {"seed": args.seed})
    pair = synthesize_pair(items, config.seed)
    write_domain_pair(args.out, pair)
    write_manifest(Path(args.out) / "manifest.txt", config,
                   {**dataset_digest(pair), "command": "synth"})
    print(f"wrote domain pair ({len(pair.source)} source / {len(pair.target)} target) "
          f"to {args.out}")
    return 0


def _cmd_train(args) -> int:
    config, items = resolve_config(args.config, {"seed": args.seed})
    if args.data:
        pair = _load_pair(args.data)
    else:
        pair = synthesize_pair(items, config.seed)
    _check_pair_matches(config, pair)
    extras = {**dataset_digest(pair), "command": "train"}
    result = fit(config, pair.source, pair.target,
                 eval_labels=pair.target_eval_labels, out_dir=args.out,
                 checkpoint_interval=args.checkpoint_interval,
                 manifest_extras=extras)
    acc = result.final_accuracy
    pre = result.pretrain_curve[-1] if result.pretrain_curve else float("nan")
    print(f"pretrain source accuracy: {pre:.4f}")
    print(f"target accuracy after {config.train_steps} steps: {acc:.4f}")
    if result.out_dir is not None:
        print(f"outputs in {result.out_dir}")
    return 0


def _cmd_eval(args) -> int:
    state, config = load_checkpoint(args.checkpoint)
    pair = _load_pair(args.data)
    _check_pair_matches(config, pair)
    from .eval_metrics import target_accuracy

    acc, confusion = target_accuracy(state.params, pair)
    print(f"target accuracy: {acc:.4f}")
    print("confusion matrix (rows=true, cols=predicted):")
    for row in confusion:
        print("  " + " ".join(f"{v:5d}" for v in row))
    return 0


def _cmd_ablate(args) -> int:
    config, items = resolve_config(args.config, {})
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if args.data:
        pair = _load_pair(args.data)
    else:
        pair = synthesize_pair(items, config.seed)
    _check_pair_matches(config, pair)
    from .eval_metrics import run_ablation

    result = run_ablation(config, pair, seeds, out_dir=args.out)
    for row in result.rows:
        print(f"seed {row.seed}: with={row.acc_with:.4f} without={row.acc_without:.4f}")
    print(f"mean with semantic loss:    {result.mean_with:.4f}")
    print(f"mean without semantic loss: {result.mean_without:.4f}")
    print(f"gap: {result.gap:+.4f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out / "manifest.txt", config,
                       {**dataset_digest(pair), "command": "ablate",
                        "seeds": ",".join(str(s) for s in seeds)})
        (out / "ablation.json").write_text(json.dumps(result.to_dict(), indent=2) + "\n")
        print(f"results in {out}")
    return 0


GRADCHECK_SIZES = {
    # (image_shape, n_classes, latent_dim, hidden_dim); TINY stays under 500
    # parameters total so the finite-difference sweep is fast.
    "TINY": ((1, 1, 2), 2, 4, 6),
    "SMALL": ((4, 4, 1), 3, 6, 12),
}


def gradcheck_config(size: str, seed: int) -> RunConfig:
    image_shape, n_classes, latent, hidden = GRADCHECK_SIZES[size]
    return RunConfig(
        n_classes=n_classes, latent_dim=latent, image_shape=image_shape,
        loss_weights=LossWeights(10.0, 1.0, 0.2), learning_rate=0.01, momentum=0.9,
        pseudo_threshold=0.5, pretrain_steps=0, train_steps=0, batch_size=4,
        seed=seed, hidden_dim=hidden)


def run_gradcheck(size: str, seed: int, rel_tol: float = 1e-4):
    """Build a tiny model plus random batches and sweep every
    (objective, parameter-group) pair."""
    from .core_types import LabeledBatch, UnlabeledBatch
    from .networks import count_parameters, init_parameters
    from .numeric_oracle import gradcheck_suite
    from .pseudo_labeler import assign_pseudo_labels

    config = gradcheck_config(size, seed)
    params = init_parameters(config, seed)
    rng = np.random.default_rng(seed + 1)
    batch_s = LabeledBatch(rng.uniform(0, 1, (config.batch_size, config.pixel_dim)),
                           rng.integers(0, config.n_classes, config.batch_size))
    batch_t = UnlabeledBatch(rng.uniform(0, 1, (config.batch_size, config.pixel_dim)))
    pseudo = assign_pseudo_labels(params, batch_t, config.pseudo_threshold)
    rows = gradcheck_suite(params, batch_s, batch_t, pseudo, config.loss_weights,
                           adv_weight=config.adv_weight, rel_tol=rel_tol)
    return rows, count_parameters(params)


def _cmd_gradcheck(args) -> int:
    rows, n_params = run_gradcheck(args.size, args.seed)
    print(f"gradient check on {args.size} networks ({n_params} parameters)")
    failures = 0
    for row in rows:
        status = "PASS" if row.report.passed else "FAIL"
        if not row.report.passed:
            failures += 1
        print(f"{status} {row.loss_name:26s} {row.group:12s} {row.report.describe()}")
    print(f"{len(rows) - failures}/{len(rows)} pairs passed")
    return 0 if failures == 0 else 2


def _cmd_export_grid(args) -> int:
    state, config = load_checkpoint(args.checkpoint)
    pair = _load_pair(args.data)
    _check_pair_matches(config, pair)
    from .eval_metrics import export_image_grid

    export_image_grid(state.params, pair, args.rows, args.out, seed=args.seed)
    print(f"wrote {args.out}")
    return 0


def _cmd_export_embeddings(args) -> int:
    state, config = load_checkpoint(args.checkpoint)
    pair = _load_pair(args.data)
    _check_pair_matches(config, pair)
    from .eval_metrics import export_embeddings

    class_filter = None
    if args.classes:
        class_filter = [int(c) for c in args.classes.split(",") if c.strip()]
    export_embeddings(state.params, pair, args.out, class_filter=class_filter)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="scgan", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    def add_config(p):
        p.add_argument("--config", default=None,
                       help=f"preset name {PRESET_NAMES} or path to a key=value file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p = sub.add_parser("synth", help="write a domain-pair fixture")
    add_config(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="pretrain then adapt")
    add_config(p)
    p.add_argument("--data", default=None, help="domain-pair directory (default: synthesize)")
    p.add_argument("--out", default=None, help="directory for manifest/metrics/checkpoints")
    p.add_argument("--checkpoint-interval", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a domain pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="paired runs with/without the semantic loss")
    add_config(p)
    p.add_argument("--seeds", required=True, help="comma-separated seed list")
    p.add_argument("--data", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss gradient")
    p.add_argument("--size", choices=sorted(GRADCHECK_SIZES), default="TINY")
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("export-grid", help="write the six-column sample grid PNG")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rows", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_export_grid)

    p = sub.add_parser("export-embeddings", help="write latent codes + 2-D projection CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--classes", default=None, help="comma-separated class filter")
    p.set_defaults(func=_cmd_export_embeddings)
    return parser


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, DatasetFormatError, CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
