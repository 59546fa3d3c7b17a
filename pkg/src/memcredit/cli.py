"""Command line entry point.

    memcredit --mechanism reinstate_exact,synthetic --data-dir data/mnist5k \
              --capacity 1000 --steps 10000 --runs 3 --out metrics.csv --svg fig.svg
    memcredit --footprint atari
"""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError, IdxParseError, MemCreditError
from .harness import (FOOTPRINT_PRESETS, Scenario, TrainConfig, emit_outputs,
                      footprint_report, load_datasets, run_experiment)

EXIT_CONFIG, EXIT_DATA, EXIT_IO = 2, 3, 4

# flag -> TrainConfig field
FLAGS = {
    "capacity": int, "embed_dim": int, "tau": float, "steps": int, "eval_every": int,
    "eval_size": int, "runs": int, "seed": int, "subset_fraction": float,
    "synth_scale": float, "decoder_warmup": int, "data_dir": str, "out": str, "svg": str,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: config error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="memcredit", description=__doc__.split("\n")[0])
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--mechanism",
                   help="one mechanism or a comma-separated list, run one after another")
    for name, typ in FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), type=typ, dest=name)
    p.add_argument("--lr", type=float, help="learning rate for every network")
    p.add_argument("--footprint", metavar="PRESET",
                   help=f"print storage costs for {sorted(FOOTPRINT_PRESETS)} or 'config' and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _config(args) -> TrainConfig:
    cfg = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    overrides = {name: getattr(args, name) for name in FLAGS}
    if args.lr is not None:
        overrides.update(lr_encoder=args.lr, lr_decoder=args.lr, lr_synth=args.lr)
    return cfg.with_overrides(**overrides)


def _footprint(preset: str, cfg: TrainConfig) -> int:
    if preset == "config":
        scenario = Scenario(cfg.capacity, 784, 8, cfg.embed_dim, cfg.hidden, 8)
    elif preset in FOOTPRINT_PRESETS:
        scenario = FOOTPRINT_PRESETS[preset]
    else:
        raise ConfigError(f"unknown footprint preset {preset!r}")
    report = footprint_report(scenario)
    sys.stdout.write(report.to_text())
    if cfg.out:
        with open(cfg.out, "w", newline="") as fh:
            fh.write(report.to_csv())
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        if args.footprint:
            return _footprint(args.footprint, cfg)
        mechanisms = (args.mechanism or cfg.mechanism).split(",")
        configs = [cfg.with_overrides(mechanism=m.strip()).validate() for m in mechanisms]
        data = load_datasets(configs[0])
        records = []
        for c in configs:
            result = run_experiment(c, data)
            records.extend(result.records)
            final = result.final
            if final is None:
                print(f"{c.mechanism:>17s}: every run diverged ({len(result.diverged_runs)})")
            else:
                print(f"{c.mechanism:>17s}: final mean accuracy {final.mean_accuracy:.4f} "
                      f"(sd {final.std_accuracy:.4f}, {final.n_runs} runs, "
                      f"{final.n_diverged} diverged)")
        if cfg.out:
            emit_outputs(records, cfg.out, cfg.svg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IdxParseError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except MemCreditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
