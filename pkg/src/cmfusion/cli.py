"""Command-line entry point: synth, mfcc, train, eval, ablate, gradcheck, export.

Settings resolve in precedence order: command-line flag, config-file value,
CMFUSION_SEED environment variable (seed only), built-in default.  All file
outputs are byte-reproducible for a fixed seed.  Exit codes: 0 success,
1 validation/configuration error, 2 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from pathlib import Path

import numpy as np

from . import train as train_mod
from .data import (Dataset, SynthSpec, generate_synthetic_dataset, save_dataset,
                   split_dataset)
from .errors import CmfusionError, ConfigError, FormatError, ValidationError
from .gradcheck import finite_diff_report
from .mfcc import MfccConfig, mfcc_features, read_wav
from .container import BUNDLE_MAGIC, write_container
from .model import VARIANTS, CmfusionModel, get_variant
from .seeding import substream
from .tensor import cross_entropy

DEFAULT_SEED = 0

# config-file schema: section -> allowed keys
CONFIG_SCHEMA = {
    "run": {"seed"},
    "train": {"learning_rate", "batch_size", "epochs", "k", "positive_class", "variant"},
    "synth": {"n_samples", "class_balance", "signal_mode", "burst_amplitude",
              "noise_scale", "burst_width", "min_offset", "train_ratio"},
    "paths": {"data", "out", "checkpoint"},
}


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (not 2) on usage errors, per the CLI contract."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: usage: {message}", file=sys.stderr)
        raise SystemExit(1)


def load_config(path) -> dict[str, dict[str, str]]:
    """Parse the INI-style run config, rejecting unknown sections and keys."""
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise FormatError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise FormatError(f"malformed config {path}: {exc}") from exc
    out: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in CONFIG_SCHEMA:
            raise ConfigError(f"{path}: unknown config section [{section}]")
        for key in parser[section]:
            if key not in CONFIG_SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key '{key}' in section [{section}]")
        out[section] = dict(parser[section])
    return out


def _resolve(flag_value, config: dict, section: str, key: str, default, cast):
    """flag > config file > default (seed additionally consults the env)."""
    if flag_value is not None:
        return flag_value
    section_map = config.get(section, {})
    if key in section_map:
        try:
            return cast(section_map[key])
        except ValueError as exc:
            raise ConfigError(f"config [{section}] {key}: {exc}") from exc
    return default


def _resolve_seed(flag_value, config: dict) -> int:
    if flag_value is not None:
        return flag_value
    if "seed" in config.get("run", {}):
        return int(config["run"]["seed"])
    env = os.environ.get("CMFUSION_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"CMFUSION_SEED must be an integer, got '{env}'") from exc
    return DEFAULT_SEED


def _add_config_and_seed(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI run config; flags override its values")
    p.add_argument("--seed", type=int, help="run seed (default: config, then "
                   "CMFUSION_SEED, then 0)")


def _train_config(args, config: dict) -> train_mod.TrainConfig:
    variant_name = _resolve(getattr(args, "variant", None), config, "train", "variant",
                            "cmfusion", str)
    return train_mod.TrainConfig(
        learning_rate=_resolve(args.lr, config, "train", "learning_rate", 1e-4, float),
        batch_size=_resolve(args.batch_size, config, "train", "batch_size", 64, int),
        epochs=_resolve(args.epochs, config, "train", "epochs", 40, int),
        k=_resolve(args.k, config, "train", "k", 5, int),
        seed=_resolve_seed(args.seed, config),
        variant=get_variant(variant_name),
        positive_class=_resolve(args.positive_class, config, "train",
                                "positive_class", 1, int),
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="cmfusion", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset and manifest")
    _add_config_and_seed(p)
    p.add_argument("--mode", choices=["separable", "synchrony-only"])
    p.add_argument("--n", type=int, help="number of samples")
    p.add_argument("--balance", type=float, help="fraction of class-0 samples")
    p.add_argument("--amplitude", type=float, help="signal amplitude")
    p.add_argument("--noise", type=float, help="noise scale")
    p.add_argument("--train-ratio", type=float, dest="train_ratio")
    p.add_argument("--k", type=int, help="fold count for the split")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("mfcc", help="extract MFCC features from WAV files")
    p.add_argument("wav", nargs="+", help="input WAV paths")
    p.add_argument("--out", required=True, help="output directory for bundles")

    p = sub.add_parser("train", help="train fold models on a split dataset")
    _add_config_and_seed(p)
    p.add_argument("--data", help="manifest path (overrides [paths] data)")
    p.add_argument("--out", help="output directory (overrides [paths] out)")
    p.add_argument("--variant", choices=sorted(VARIANTS))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--positive-class", type=int, dest="positive_class", choices=[0, 1])

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    _add_config_and_seed(p)
    p.add_argument("--checkpoint", help="checkpoint path (overrides [paths] checkpoint)")
    p.add_argument("--data", help="manifest path")
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--positive-class", type=int, dest="positive_class", choices=[0, 1])

    p = sub.add_parser("ablate", help="run an ablation suite")
    _add_config_and_seed(p)
    p.add_argument("--suite", required=True, choices=sorted(train_mod.ABLATION_SUITES))
    p.add_argument("--data", help="manifest path")
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--positive-class", type=int, dest="positive_class", choices=[0, 1])

    p = sub.add_parser("gradcheck", help="finite-difference check of every variant")
    _add_config_and_seed(p)
    p.add_argument("--variant", choices=sorted(VARIANTS) + ["all"], default="all")
    p.add_argument("--seeds", type=int, default=3, help="number of random probes")
    p.add_argument("--coords", type=int, default=5,
                   help="sampled coordinates per parameter tensor")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)

    p = sub.add_parser("export", help="export embeddings for projection tools")
    _add_config_and_seed(p)
    p.add_argument("--checkpoint", help="checkpoint path")
    p.add_argument("--data", help="manifest path")
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--stage", required=True, choices=list(train_mod.EXPORT_STAGES))
    p.add_argument("--out", required=True, help="output CSV path")
    return parser


# -- subcommand implementations ---------------------------------------------------


def _cmd_synth(args) -> int:
    config = load_config(args.config) if args.config else {}
    spec = SynthSpec(
        n_samples=_resolve(args.n, config, "synth", "n_samples", 400, int),
        class_balance=_resolve(args.balance, config, "synth", "class_balance", 0.5, float),
        signal_mode=_resolve(args.mode, config, "synth", "signal_mode", "separable", str),
        burst_amplitude=_resolve(args.amplitude, config, "synth", "burst_amplitude",
                                 6.0, float),
        noise_scale=_resolve(args.noise, config, "synth", "noise_scale", 1.0, float),
        seed=_resolve_seed(args.seed, config),
    )
    train_ratio = _resolve(args.train_ratio, config, "synth", "train_ratio", 0.7, float)
    k = _resolve(args.k, config, "train", "k", 5, int)
    samples, manifest = generate_synthetic_dataset(spec)
    manifest = split_dataset(manifest, train_ratio=train_ratio, k=k, seed=spec.seed)
    manifest_path = save_dataset(samples, manifest, args.out)
    print(f"wrote {len(samples)} samples and {manifest_path}")
    return 0


def _cmd_mfcc(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = MfccConfig()
    for wav_path in args.wav:
        wav = read_wav(wav_path)
        features = mfcc_features(wav, config)
        target = out_dir / (Path(wav_path).stem + ".cmfb")
        write_container(target, {"audio": features.astype(np.float32)},
                        magic=BUNDLE_MAGIC)
        print(f"{wav_path} -> {target} [{features.shape[0]}x{features.shape[1]}]")
    return 0


def _load_dataset(args, config: dict) -> Dataset:
    manifest_path = args.data or config.get("paths", {}).get("data")
    if not manifest_path:
        raise ConfigError("no dataset given; pass --data or set [paths] data")
    return Dataset.load(manifest_path)


def _cmd_train(args) -> int:
    config = load_config(args.config) if args.config else {}
    tc = _train_config(args, config)
    dataset = _load_dataset(args, config)
    out_dir = Path(args.out or config.get("paths", {}).get("out", "runs"))
    out_dir.mkdir(parents=True, exist_ok=True)
    result = train_mod.train(tc, dataset)
    for fold in result.folds:
        train_mod.save_checkpoint(fold.model, out_dir / f"fold{fold.fold}.cmfc")
    train_mod.write_history(result.history, out_dir / "history.ndjson")
    mean = result.mean_test_metrics()
    print(f"variant={tc.variant.name} folds={len(result.folds)} "
          f"test accuracy={mean['accuracy']:.4f} f1={mean['f1']:.4f} "
          f"precision={mean['precision']:.4f} recall={mean['recall']:.4f}")
    print(f"checkpoints and history written to {out_dir}")
    return 0


def _cmd_eval(args) -> int:
    config = load_config(args.config) if args.config else {}
    checkpoint = args.checkpoint or config.get("paths", {}).get("checkpoint")
    if not checkpoint:
        raise ConfigError("no checkpoint given; pass --checkpoint or set [paths] checkpoint")
    positive = _resolve(args.positive_class, config, "train", "positive_class", 1, int)
    model = train_mod.load_checkpoint(checkpoint)
    dataset = _load_dataset(args, config)
    records = dataset.manifest.subset(split=args.split)
    if not records:
        raise ValidationError(f"manifest has no '{args.split}' records")
    metrics = train_mod.evaluate(model, dataset.pick(records), positive)
    print(f"split={args.split} n={len(records)} accuracy={metrics.accuracy:.4f} "
          f"f1={metrics.f1:.4f} precision={metrics.precision:.4f} "
          f"recall={metrics.recall:.4f}"
          + (" (degenerate)" if metrics.degenerate else ""))
    return 0


def _cmd_ablate(args) -> int:
    config = load_config(args.config) if args.config else {}
    tc = _train_config(args, config)
    dataset = _load_dataset(args, config)
    rows = train_mod.run_ablation(args.suite, dataset, tc, parallel=args.parallel)
    out_path = args.out or config.get("paths", {}).get("out", f"{args.suite}.csv")
    train_mod.write_ablation_table(rows, out_path)
    for row in rows:
        if row.metrics is None:
            print(f"{row.variant:16s} ERROR: {row.error}")
        else:
            m = row.metrics
            print(f"{row.variant:16s} accuracy={m['accuracy']:.4f} f1={m['f1']:.4f} "
                  f"precision={m['precision']:.4f} recall={m['recall']:.4f}")
    print(f"table written to {out_path}")
    return 0


def _cmd_gradcheck(args) -> int:
    config = load_config(args.config) if args.config else {}
    seed = _resolve_seed(args.seed, config)
    names = sorted(VARIANTS) if args.variant == "all" else [args.variant]
    worst_overall = 0.0
    for name in names:
        variant = get_variant(name)
        worst_variant: dict[str, float] = {}
        for probe in range(args.seeds):
            rng = substream(seed, "gradcheck", name, probe)
            batch = {
                "video": rng.standard_normal((1, 100, 768)),
                "audio": rng.standard_normal((1, 100, 40)),
                "text": rng.standard_normal((1, 768)),
            }
            labels = rng.integers(0, 2, 1)
            model = CmfusionModel(variant, seed=seed * 997 + probe)
            params = model.parameters()
            f = lambda: cross_entropy(model.forward_logits(batch), labels)
            report = finite_diff_report(f, params, eps=args.eps,
                                        max_coords_per_param=args.coords, rng=rng)
            for layer, err in report.items():
                worst_variant[layer] = max(worst_variant.get(layer, 0.0), err)
        for layer, err in worst_variant.items():
            status = "ok" if err < args.tolerance else "FAIL"
            print(f"{name:16s} {layer:28s} {err:.3e} {status}")
        worst_overall = max(worst_overall, max(worst_variant.values()))
    print(f"max relative error: {worst_overall:.3e} (tolerance {args.tolerance:g})")
    return 0 if worst_overall < args.tolerance else 1


def _cmd_export(args) -> int:
    config = load_config(args.config) if args.config else {}
    checkpoint = args.checkpoint or config.get("paths", {}).get("checkpoint")
    if not checkpoint:
        raise ConfigError("no checkpoint given; pass --checkpoint or set [paths] checkpoint")
    model = train_mod.load_checkpoint(checkpoint)
    dataset = _load_dataset(args, config)
    records = dataset.manifest.subset(split=args.split)
    if not records:
        raise ValidationError(f"manifest has no '{args.split}' records")
    train_mod.export_embeddings(model, dataset.pick(records), args.stage, args.out)
    print(f"embeddings ({args.stage}) written to {args.out}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "mfcc": _cmd_mfcc,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "gradcheck": _cmd_gradcheck,
    "export": _cmd_export,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("error: usage: a subcommand is required", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ValidationError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 1
    except FormatError as exc:
        print(f"error: format: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 2
    except CmfusionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
