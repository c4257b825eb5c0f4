"""Command-line entry point.

Subcommands: synth, train, generate, evaluate, baseline.  A run is
configured by a key = value config file; command-line flags win over
config values.  Exit codes: 0 success, 1 usage error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import baselines, metrics
from .core import City, ODNetwork
from .data import SynthConfig, load_city, load_od_csv, save_city, save_od_csv, synth_city
from .exceptions import DataFormatError, DegenerateNetworkError, NumericError, OdgenError
from .trainer import OdgnTrainer, TrainConfig, generate_od_samples, load_generator

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def read_config(path: str | Path | None) -> dict:
    """Parse a key = value config file; '#' starts a comment."""
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"config file not found: {path}")
    out: dict = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataFormatError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = _coerce(value.strip())
    return out


def _coerce(value: str):
    low = value.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def _load_training_cities(dirs: list[str]) -> list[City]:
    cities = []
    missing = []
    for d in dirs:
        city = load_city(d)
        if city.od is None:
            missing.append(d)
        cities.append(city)
    if missing:
        raise DataFormatError(f"training cities missing od.csv: {', '.join(missing)}")
    return cities


def _emit_report(report: dict, out: str | None) -> None:
    text = json.dumps(report, indent=2)
    if out:
        Path(out).write_text(text + "\n")
    print(text)


def cmd_synth(args) -> int:
    mapping = read_config(args.config)
    if args.seed is not None:
        mapping["seed"] = args.seed
    n_cities = int(mapping.pop("n_cities", 1))
    base = SynthConfig.from_mapping(mapping)
    out_dir = Path(args.out)
    for k in range(n_cities):
        cfg = SynthConfig.from_mapping({**mapping, "seed": base.seed + k})
        city = synth_city(cfg)
        target = out_dir / f"city_{k:02d}"
        save_city(city, target)
        print(f"{target}: seed={cfg.seed} regions={cfg.n_regions}")
    return EXIT_OK


def cmd_train(args) -> int:
    mapping = read_config(args.config)
    if args.seed is not None:
        mapping["seed"] = args.seed
    if args.iters is not None:
        mapping["iters"] = args.iters
    cfg = TrainConfig.from_mapping(mapping)
    cities = _load_training_cities(args.train_dirs)
    out = Path(args.out)
    trainer = OdgnTrainer(cities, cfg)
    trainer.run(log_path=out.with_name(out.name + ".losses.csv"), checkpoint_path=out)
    print(f"checkpoint written to {out} after {trainer.iteration} iterations")
    return EXIT_OK


def cmd_generate(args) -> int:
    generator, cfg, _ = load_generator(args.checkpoint)
    city = load_city(args.target_dir)
    seed = args.seed if args.seed is not None else cfg.seed
    nets = generate_od_samples(generator, cfg, city, args.samples, seed)
    out = Path(args.out)
    if args.mean:
        flows = np.mean([n.flows for n in nets], axis=0)
        nets = [ODNetwork(flows=flows)]
        paths = [out]
    elif args.samples == 1:
        paths = [out]
    else:
        paths = [out.with_name(f"{out.stem}-{k}{out.suffix}") for k in range(len(nets))]
    for net, path in zip(nets, paths):
        if args.round:
            net = ODNetwork(flows=np.rint(net.flows))
        save_od_csv(net, city.region_ids, path)
        print(f"wrote {path}")
    return EXIT_OK


def _evaluate(real: ODNetwork, fake: ODNetwork, jsd_standard: bool) -> dict:
    return {
        "cpc": metrics.cpc(real, fake),
        "rmse": metrics.rmse(real, fake),
        "f_jsd": metrics.f_jsd(real, fake, standard=jsd_standard),
        "n_regions": real.n_regions,
        "jsd_standard": jsd_standard,
    }


def cmd_evaluate(args) -> int:
    city = load_city(args.real_dir)
    if city.od is None:
        raise DataFormatError(f"{args.real_dir}: no od.csv to evaluate against")
    fake = load_od_csv(args.generated, city.region_ids)
    _emit_report(_evaluate(city.od, fake, args.jsd_standard), args.out)
    return EXIT_OK


def cmd_baseline(args) -> int:
    cities = _load_training_cities(args.train_dirs)
    target = load_city(args.target_dir)
    if target.od is None:
        raise DataFormatError(f"{args.target_dir}: no od.csv to evaluate against")
    if args.model == "gravity":
        params = baselines.gravity_baseline_fit(cities)
        predicted = baselines.gravity_baseline_predict(target, params)
        extra = {"model": "gravity", "params": vars(params).copy()}
    else:
        cfg = baselines.DeepGravityConfig(seed=args.seed if args.seed is not None else 0)
        model = baselines.train_deep_gravity(cities, cfg=cfg)
        predicted = baselines.deep_gravity_predict(target, model)
        extra = {"model": "deepgravity"}
    report = _evaluate(target.od, predicted, args.jsd_standard)
    report.update(extra)
    _emit_report(report, args.out)
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="odgen", description="Origin-destination network generation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write synthetic city directories")
    p.add_argument("--config", required=True, help="synthesis config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the generator on cities with OD data")
    p.add_argument("train_dirs", nargs="+", help="city directories with od.csv")
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--seed", type=int)
    p.add_argument("--iters", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="generate OD networks for a target city")
    p.add_argument("checkpoint")
    p.add_argument("target_dir")
    p.add_argument("--out", required=True, help="output od.csv path")
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--mean", action="store_true", help="write the mean of all samples")
    p.add_argument("--round", action="store_true", help="round flows to integers")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score a generated OD file against a real city")
    p.add_argument("real_dir", help="city directory with od.csv")
    p.add_argument("generated", help="generated od.csv")
    p.add_argument("--jsd-standard", action="store_true", dest="jsd_standard")
    p.add_argument("--out", help="write the JSON report here as well")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline", help="fit, predict and evaluate a baseline")
    p.add_argument("train_dirs", nargs="+")
    p.add_argument("target_dir")
    p.add_argument("--model", choices=("gravity", "deepgravity"), default="gravity")
    p.add_argument("--jsd-standard", action="store_true", dest="jsd_standard")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_baseline)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataFormatError, DegenerateNetworkError, FileNotFoundError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except OdgenError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
