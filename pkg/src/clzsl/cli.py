"""Command-line entry point: synth, train, eval, sweep, inspect-weights.

Every command is deterministic given its inputs and seed; anything
time-dependent goes to a sidecar file so byte-identical reruns stay
byte-identical.  Exit codes: 0 success, 1 usage or configuration error,
2 data integrity error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import (TRAIN_PRESETS, TrainConfig, parse_override, read_config_file,
                     resolve_train_config)
from .data import load_corpus
from .errors import ConfigError, DataIntegrityError, NumericError
from .evaluation import evaluate
from .synth import SynthConfig, write_corpus_dir
from .training import load_checkpoint, run

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

SWEEP_FIXED_COLUMNS = ("index", "seed", "acc_czsl", "acc_unseen", "acc_seen", "harmonic")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we reserve that
        raise _UsageError(message)


def _render(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def _resolve_synth_config(args) -> SynthConfig:
    values: dict = {}
    if args.config:
        values.update(read_config_file(args.config))
    for item in args.set or []:
        key, val = parse_override(item)
        values[key] = val
    fields = {f.name: f for f in dataclasses.fields(SynthConfig)}
    coerced = {}
    for key, val in values.items():
        if key not in fields:
            raise ConfigError(f"unknown generator config field {key!r}")
        target = type(fields[key].default)
        try:
            coerced[key] = target(val)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"generator field {key!r}: cannot interpret {val!r}") from exc
    config = SynthConfig(**coerced)
    config.validate()
    return config


def cmd_synth(args) -> int:
    config = _resolve_synth_config(args)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ConfigError(f"output directory {out} is not empty (use --force to overwrite)")
    write_corpus_dir(config, out)
    manifest = {
        "command": "synth",
        "code_version": __version__,
        "config": {f: getattr(config, f) for f in config.__dataclass_fields__},
        "out": str(out),
    }
    _write_json(out / "run_manifest.json", manifest)
    print(f"wrote corpus to {out}")
    return EXIT_OK


def _train_from_manifest(args) -> tuple[TrainConfig, dict, Path]:
    manifest = json.loads(Path(args.manifest).read_text())
    config = resolve_train_config(file_values=manifest["config"])
    return config, manifest["flags"], Path(manifest["corpus"])


def cmd_train(args) -> int:
    if args.manifest:
        config, flags, corpus_dir = _train_from_manifest(args)
    else:
        if not args.corpus:
            raise _UsageError("train needs --corpus (or --manifest)")
        corpus_dir = Path(args.corpus)
        file_values = read_config_file(args.config) if args.config else {}
        overrides = dict(parse_override(item) for item in args.set or [])
        if args.no_pcl:
            overrides["pcl_enabled"] = False
        if args.no_pup:
            overrides["pup_enabled"] = False
        config = resolve_train_config(preset=args.preset, file_values=file_values,
                                      overrides=overrides)
        flags = {"no_pcl": bool(args.no_pcl), "no_pup": bool(args.no_pup)}

    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ConfigError(f"output directory {out} is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)

    corpus, space = load_corpus(corpus_dir)
    manifest = {
        "command": "train",
        "code_version": __version__,
        "corpus": str(corpus_dir),
        "config": config.as_dict(),
        "flags": flags,
        "out": str(out),
    }
    _write_json(out / "run_manifest.json", manifest)

    started = time.time()
    weights_path = out / "weights.csv" if args.log_weights else None
    weights_fh = open(weights_path, "w") if weights_path else None
    try:
        result = run(corpus, space, config, weights_log=weights_fh,
                     checkpoint_dir=out / "checkpoints")
    finally:
        if weights_fh:
            weights_fh.close()

    with open(out / "metrics.jsonl", "w") as fh:
        for entry in result.history:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    final = result.history[-1] if result.history else {}
    _write_json(out / "metrics.json", final)
    _write_json(out / "timing.json", {"wall_seconds": time.time() - started})
    if final:
        print(f"trained {config.epochs} epochs: "
              f"czsl={final['czsl_acc']:.1f} H={final['gzsl_h']:.1f} "
              f"(S={final['gzsl_seen']:.1f}, U={final['gzsl_unseen']:.1f})")
    else:
        print("trained 0 epochs")
    return EXIT_OK


def cmd_eval(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    corpus, space = load_corpus(args.corpus)
    modes = ["czsl", "gzsl"] if args.both else [args.mode]
    payload = {}
    for mode in modes:
        metrics = evaluate(ck.params, space.attributes, ck.store, corpus, mode,
                           ck.config.attention_axis)
        payload[mode] = {k: v for k, v in metrics.as_dict().items() if v is not None}
    text = json.dumps(payload, indent=1, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return EXIT_OK


def cmd_sweep(args) -> int:
    grid = read_config_file(args.grid)
    base_values = read_config_file(args.config) if args.config else {}
    base = resolve_train_config(preset=args.preset, file_values=base_values)
    corpus, space = load_corpus(args.corpus)

    names = sorted(grid)
    for name in names:
        if not isinstance(grid[name], list):
            raise ConfigError(f"grid entry {name!r} must be a list of values")
    header = list(SWEEP_FIXED_COLUMNS[:1]) + names + list(SWEEP_FIXED_COLUMNS[1:])
    rows = []
    combos = list(itertools.product(*(grid[n] for n in names))) if names else []
    for index, combo in enumerate(combos):
        overrides = dict(zip(names, combo))
        overrides["seed"] = base.seed + index
        config = resolve_train_config(file_values=base.as_dict(), overrides=overrides)
        result = run(corpus, space, config)
        final = result.history[-1] if result.history else {}
        row = [index] + [overrides[n] for n in names] + [
            config.seed,
            final.get("czsl_acc"), final.get("gzsl_unseen"),
            final.get("gzsl_seen"), final.get("gzsl_h"),
        ]
        rows.append(row)

    out = Path(args.out)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_render(v) if v is not None else "" for v in row])
    print(f"swept {len(rows)} grid points -> {out}")
    return EXIT_OK


def cmd_inspect_weights(args) -> int:
    path = Path(args.weights)
    if not path.exists():
        raise DataIntegrityError(f"weights CSV not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["epoch", "batch", "sample_index", "loss", "omega"]:
            raise DataIntegrityError(f"unexpected weights CSV header: {reader.fieldnames}")
        try:
            rows = [(int(r["epoch"]), int(r["sample_index"]), float(r["loss"]), float(r["omega"]))
                    for r in reader]
        except (KeyError, TypeError, ValueError) as exc:
            raise DataIntegrityError(f"malformed weights CSV row: {exc}") from exc

    by_epoch: dict[int, list] = {}
    for epoch, idx, loss, omega in rows:
        by_epoch.setdefault(epoch, []).append((idx, loss, omega))
    for epoch in sorted(by_epoch):
        samples = sorted(by_epoch[epoch], key=lambda r: (-r[2], r[0]))
        spread = samples[0][2] - samples[-1][2]
        print(f"epoch {epoch}: {len(samples)} samples, omega spread {spread:.3e}")
        if spread < 1e-9:
            print("  no differentiation: weights are uniform")
            continue
        for tag, block in (("top", samples[:args.top]), ("bottom", samples[-args.bottom:])):
            for idx, loss, omega in block:
                print(f"  {tag:6s} sample {idx:6d} omega {omega:.6f} loss {loss:.4f}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="clzsl", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus directory")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="flat JSON file of generator fields")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a corpus directory")
    p.add_argument("--corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="flat JSON file of training fields")
    p.add_argument("--preset", choices=sorted(TRAIN_PRESETS))
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--no-pcl", action="store_true", help="fix sample weights uniform")
    p.add_argument("--no-pup", action="store_true", help="never update prototypes")
    p.add_argument("--log-weights", action="store_true", help="write weights.csv")
    p.add_argument("--manifest", help="replay a previous run_manifest.json")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", choices=["czsl", "gzsl"], default="gzsl")
    p.add_argument("--both", action="store_true", help="emit both modes")
    p.add_argument("--out", help="also write the JSON to a file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid sweep over training fields")
    p.add_argument("--corpus", required=True)
    p.add_argument("--grid", required=True, help="JSON file: field -> list of values")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--config", help="base training config file")
    p.add_argument("--preset", choices=sorted(TRAIN_PRESETS))
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("inspect-weights", help="rank logged sample weights")
    p.add_argument("--weights", required=True)
    p.add_argument("--top", type=int, default=3)
    p.add_argument("--bottom", type=int, default=3)
    p.set_defaults(func=cmd_inspect_weights)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataIntegrityError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entry() -> None:
    raise SystemExit(main())
