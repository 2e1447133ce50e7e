"""Command-line entry point: ``python -m windsr <subcommand>``.

Subcommands: synth, ingest, train, eval-sr, eval-compress, report.
Failures exit with status 1 (2 for usage errors) and a JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import datahub
from .datahub import DatasetSplit, SynthSpec
from .errors import ConfigError, WindSRError
from .evalharness import ExperimentPlan, emit_report, run_compression_study, run_sr_study
from .metrics import records_from_json, records_to_csv, records_to_json
from .training import TrainConfig, train

log = logging.getLogger("windsr")


class UsageError(WindSRError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _direction(text: str) -> tuple[int, int]:
    try:
        a, b = (int(t) for t in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"direction must look like 1:2, got {text!r}")
    return a, b


def _named_path(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected NAME=PATH, got {text!r}")
    name, path = text.split("=", 1)
    return name, path


def cmd_synth(args) -> dict:
    spec = SynthSpec(height=args.height, width=args.width, altitudes=tuple(args.altitudes),
                     spectral_exponent=args.spectral_exponent, perturbation=args.perturbation,
                     count=args.count, mean_speed=args.mean_speed, std_speed=args.std_speed,
                     alpha=args.alpha, component=args.component)
    stack = datahub.synth_stack(args.seed, spec)
    datahub.save_stack(stack, args.out)
    return {"out": str(args.out), "fields": int(len(stack) * len(stack.altitudes))}


def cmd_ingest(args) -> dict:
    r0, r1, c0, c1 = args.window
    batch = datahub.ingest_wtk(args.path, args.altitudes, ((r0, r1), (c0, c1)), args.timestamps,
                               component=args.component, dataset_template=args.dataset_template)
    datahub.save_batch(batch, args.out)
    return {"out": str(args.out), "pairs": len(batch)}


def _load_pool(path, h1, h2):
    path = Path(path)
    if (path / "stack.json").is_file():
        return datahub.load_stack(path).pair(h1, h2)
    return datahub.load_batch(path)


def cmd_train(args) -> dict:
    overrides = {"epochs": args.epochs, "batch_size": args.batch_size,
                 "coords_per_instance": args.coords_per_instance, "learning_rate": args.learning_rate,
                 "scale_range": args.scale_range, "d": args.d, "seed": args.seed,
                 "decoder_variant": args.decoder_variant}
    if args.model_json:
        overrides["model"] = json.loads(args.model_json)
    config = TrainConfig.from_file(args.config, **overrides) if args.config else \
        TrainConfig(**{k: v for k, v in overrides.items() if v is not None})
    pool = _load_pool(args.data, args.h1, args.h2)
    parts = datahub.split(pool, args.n_train, args.n_test, args.split_seed)
    train_batch, stats = datahub.normalize(parts.train)
    out = Path(args.out)
    result = train(DatasetSplit(train_batch, parts.test, parts.seed), config, out)
    datahub.save_batch(parts.test, out / "test")
    (out / "train_config.json").write_text(json.dumps(config.to_dict(), indent=1))
    final = result.checkpoints[-1]
    model_path = out / "model.pt"
    model_path.write_bytes(final.read_bytes())
    return {"model": str(model_path), "test": str(out / "test"),
            "losses": [r["total"] for r in result.log]}


def _plan(args, study: str) -> ExperimentPlan:
    checkpoints = dict(args.model)
    kw = {"study": study, "variants": list(checkpoints), "checkpoints": checkpoints}
    if args.directions:
        kw["directions"] = args.directions
    if study == "super_resolution":
        if args.scales:
            kw["scales"] = args.scales
    else:
        kw.update(ppm_levels=args.ppm_q, bicubic_factors=args.bicubic_d, mu=args.mu, alpha=args.alpha)
    return ExperimentPlan(**kw)


def _write_table(records, out) -> None:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(records_to_json(records))


def cmd_eval_sr(args) -> dict:
    plan = _plan(args, "super_resolution")
    records = run_sr_study(plan, None, datahub.load_batch(args.test))
    _write_table(records, args.out)
    return {"out": str(args.out), "records": len(records)}


def cmd_eval_compress(args) -> dict:
    plan = _plan(args, "compression")
    records = run_compression_study(plan, None, datahub.load_batch(args.test))
    _write_table(records, args.out)
    return {"out": str(args.out), "records": len(records)}


def cmd_report(args) -> dict:
    tables = {}
    for name, path in args.table:
        if name in tables:
            raise ConfigError(f"duplicate table name {name}")
        tables[name] = records_from_json(Path(path).read_text())
    files = emit_report(tables, args.out)
    if args.print_csv:
        for rows in tables.values():
            sys.stdout.write(records_to_csv(rows))
    return {"files": [str(p) for p in files]}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="windsr", description="Joint wind-field reduction, super-resolution and cross-altitude prediction")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic multi-altitude stack")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--height", type=int, default=64)
    s.add_argument("--width", type=int, default=64)
    s.add_argument("--altitudes", type=float, nargs="+", default=[10.0, 160.0])
    s.add_argument("--count", type=int, default=100)
    s.add_argument("--spectral-exponent", type=float, default=3.0)
    s.add_argument("--perturbation", type=float, default=0.1)
    s.add_argument("--mean-speed", type=float, default=6.0)
    s.add_argument("--std-speed", type=float, default=1.5)
    s.add_argument("--alpha", type=float, default=0.16)
    s.add_argument("--component", choices=["northern", "eastern"], default="northern")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", help="extract a windowed pair batch from an HDF5 archive")
    s.add_argument("--path", required=True)
    s.add_argument("--altitudes", type=float, nargs=2, required=True)
    s.add_argument("--window", type=int, nargs=4, metavar=("R0", "R1", "C0", "C1"), required=True)
    s.add_argument("--timestamps", type=int, nargs="*", default=[])
    s.add_argument("--component", choices=["northern", "eastern"], default="northern")
    s.add_argument("--dataset-template", default="{component}_{altitude}m")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("train", help="train a model bundle on a stack or batch directory")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="YAML file with training fields; flags override it")
    s.add_argument("--h1", type=float, default=10.0)
    s.add_argument("--h2", type=float, default=160.0)
    s.add_argument("--n-train", type=int, required=True)
    s.add_argument("--n-test", type=int, required=True)
    s.add_argument("--split-seed", type=int, default=0)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--coords-per-instance", type=int)
    s.add_argument("--learning-rate", type=float)
    s.add_argument("--scale-range", type=float, nargs=2)
    s.add_argument("--d", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--decoder-variant", choices=["LIIF", "PEI", "GEI", "GPEI"])
    s.add_argument("--model-json", help="JSON object of model architecture overrides")
    s.set_defaults(func=cmd_train)

    for name, func in (("eval-sr", cmd_eval_sr), ("eval-compress", cmd_eval_compress)):
        s = sub.add_parser(name)
        s.add_argument("--test", required=True, help="test batch directory written by train")
        s.add_argument("--model", type=_named_path, action="append", default=[], metavar="VARIANT=CKPT")
        s.add_argument("--directions", type=_direction, nargs="+")
        s.add_argument("--out", required=True, help="JSON table to write")
        if name == "eval-sr":
            s.add_argument("--scales", type=float, nargs="+")
        else:
            s.add_argument("--ppm-q", type=int, nargs="*", default=[8, 16])
            s.add_argument("--bicubic-d", type=int, nargs="*", default=[4, 8])
            s.add_argument("--mu", type=float, default=255.0)
            s.add_argument("--alpha", type=float, default=0.16)
        s.set_defaults(func=func)

    s = sub.add_parser("report", help="render CSV, JSON and plots from study tables")
    s.add_argument("--table", type=_named_path, action="append", required=True, metavar="NAME=JSON")
    s.add_argument("--out", required=True)
    s.add_argument("--print-csv", action="store_true")
    s.set_defaults(func=cmd_report)
    return p


def _fail(exc: BaseException, code: int) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
    return code


def main(argv=None) -> int:
    torch.set_num_threads(1)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(exc, 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = args.func(args)
    except (WindSRError, OSError, ValueError, KeyError, IndexError) as exc:
        return _fail(exc, 1)
    if not getattr(args, "print_csv", False):
        print(json.dumps(summary, default=lambda o: float(o) if isinstance(o, np.floating) else str(o)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
