"""Command-line entry point.

Exit codes: 0 success, 2 configuration error (bad or missing config,
missing checkpoint, unreadable files), 3 when the only failures are
ill-posed LS/LMMSE requests.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import bench
from .channel import generate_dataset, load_dataset, save_dataset
from .errors import ConfigError, FormatError
from .measurement import sample_phase_networks, subgaussian_tail_check
from .wgan import ChannelGenerator, train

log = logging.getLogger("genest")

EXIT_OK, EXIT_CONFIG, EXIT_ILL_POSED = 0, 2, 3


def _load_config(args) -> bench.ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    if args.config:
        if not Path(args.config).is_file():
            raise ConfigError(f"config file not found: {args.config}")
        cfg = bench.ExperimentConfig.from_json(args.config)
    elif args.preset:
        cfg = bench.preset(args.preset)
    else:
        raise ConfigError("missing config: pass --config PATH or --preset NAME")
    if args.seed is not None:
        cfg = cfg.replace(master_seed=args.seed)
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset(cfg, out: Path):
    path = out / "dataset.gchd"
    if path.exists():
        ds = load_dataset(path)
        if ds.config != cfg.channel or ds.master_seed != cfg.master_seed:
            raise ConfigError(f"{path} was generated with a different channel config or seed")
        return ds
    return generate_dataset(cfg.channel, cfg.train_size, cfg.master_seed)


def _generator(args, out: Path, required: bool) -> Optional[ChannelGenerator]:
    path = Path(args.generator) if args.generator else out / "generator.gnet"
    if not path.exists():
        if required:
            raise ConfigError(f"generator checkpoint not found: {path} (run train-gan first)")
        return None
    return ChannelGenerator.load(path)


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    print(f"wrote {path}")


# -------------------------------------------------------------- commands


def cmd_gen_data(args, cfg):
    out = _out_dir(args)
    ds = generate_dataset(cfg.channel, cfg.train_size, cfg.master_seed)
    save_dataset(ds, out / "dataset.gchd")
    power = np.mean(np.abs(ds.channels) ** 2, axis=(1, 2, 3))
    _write(out / "dataset_stats.csv",
           "count,n_f,n_r,n_t,mean_entry_power,std_entry_power\n"
           f"{len(ds)},{ds.channels.shape[1]},{ds.channels.shape[2]},{ds.channels.shape[3]},"
           f"{power.mean():.6f},{power.std():.6f}\n")
    print(f"wrote {out / 'dataset.gchd'}")
    return EXIT_OK


def cmd_train_gan(args, cfg):
    out = _out_dir(args)
    ds = _dataset(cfg, out)
    ckpt = out / "checkpoints" if cfg.wgan.checkpoint_every else None
    if ckpt:
        ckpt.mkdir(exist_ok=True)
    gen, tlog = train(ds, cfg.wgan, cfg.master_seed, checkpoint_dir=ckpt)
    gen.save(out / "generator.gnet")
    if tlog.best is not None:
        tlog.best.save(out / "generator_best.gnet")
        print(f"best stat_match at epoch {tlog.best_epoch}")
    _write(out / "training_log.csv", tlog.to_csv(record_time=args.record_time))
    print(f"wrote {out / 'generator.gnet'}")
    return EXIT_OK


def cmd_estimate(args, cfg):
    out = _out_dir(args)
    names = tuple(args.estimators.split(",")) if args.estimators else cfg.estimators
    if set(names) - set(bench.ESTIMATORS):
        raise ConfigError(f"unknown estimator in {names}")
    gen = _generator(args, out, "gan" in names)
    ds = _dataset(cfg, out) if "lmmse" in names else None
    snr = cfg.pilot_snr_db if args.snr is None else args.snr
    eta = cfg.eta if args.eta is None else args.eta
    res = bench.run_single_estimate(cfg, snr, eta, gen, ds, names)
    _write(out / "estimate.csv", res.to_csv())
    for r in res.rows:
        print(f"{r.estimator:6s} {r.nmse_db_mean:9.3f} dB {r.flags}")
    ill = [r.estimator for r in res.rows if r.flags.startswith("ill-posed") and r.trials == 0]
    if ill:
        print(f"ill-posed: {', '.join(ill)} (A^H A is singular at eta={eta:g})", file=sys.stderr)
        return EXIT_ILL_POSED
    return EXIT_OK


def _sweep(args, cfg, runner, name, needs_data=True):
    out = _out_dir(args)
    gen = _generator(args, out, "gan" in cfg.estimators)
    ds = _dataset(cfg, out) if needs_data and "lmmse" in cfg.estimators else None
    res = runner(cfg, gen, ds)
    _write(out / name, res.to_csv())
    return EXIT_OK


def cmd_sweep_snr(args, cfg):
    return _sweep(args, cfg, bench.run_snr_sweep, "sweep_snr.csv")


def cmd_sweep_pilots(args, cfg):
    return _sweep(args, cfg, bench.run_pilot_sweep, "sweep_pilots.csv")


def cmd_sweep_gen(args, cfg):
    out = _out_dir(args)
    gen = _generator(args, out, True)
    res = bench.run_generalization_sweep(cfg, gen)
    _write(out / "sweep_gen.csv", res.to_csv())
    return EXIT_OK


def cmd_ablate(args, cfg):
    out = _out_dir(args)
    res = bench.run_training_ablation(cfg, progress=print)
    _write(out / "ablation.csv", res.to_csv())
    return EXIT_OK


def cmd_check_subgaussian(args, cfg):
    out = _out_dir(args)
    rng = np.random.default_rng(bench.derive_seed(cfg.master_seed, 6))
    report = subgaussian_tail_check(cfg.transceiver, args.trials, rng)
    _write(out / "subgaussian.csv", report.to_csv())
    print("violation flagged" if report.violated else "no violation flagged")
    return EXIT_OK


def cmd_report(args, cfg):
    out = _out_dir(args)
    inputs = [Path(p) for p in args.inputs] if args.inputs else sorted(out.glob("*.csv"))
    written = 0
    for path in inputs:
        text = path.read_text()
        if not text.startswith(bench.CSV_HEADER):
            continue
        _write(path.with_suffix(".dat"), bench.csv_to_dat(text))
        written += 1
    if not written:
        raise ConfigError("no sweep CSVs found to convert")
    return EXIT_OK


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate and save the channel dataset"),
    "train-gan": (cmd_train_gan, "train the WGAN generator"),
    "estimate": (cmd_estimate, "run all estimators on one instance"),
    "sweep-snr": (cmd_sweep_snr, "NMSE vs SNR"),
    "sweep-pilots": (cmd_sweep_pilots, "NMSE vs pilot ratio"),
    "sweep-gen": (cmd_sweep_gen, "GAN NMSE vs cluster/ray mismatch"),
    "ablate-training": (cmd_ablate, "NMSE vs epochs/data/batch"),
    "check-subgaussian": (cmd_check_subgaussian, "Monte-Carlo tail check of the measurement entries"),
    "report": (cmd_report, "convert sweep CSVs to gnuplot .dat files"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="genest", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--preset", help="named config: desk, tiny or full")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("estimate", "sweep-snr", "sweep-pilots", "sweep-gen"):
            p.add_argument("--generator", help="generator checkpoint (default: OUT/generator.gnet)")
        if name == "estimate":
            p.add_argument("--snr", type=float, help="SNR in dB (default: pilot_snr_db)")
            p.add_argument("--eta", type=float, help="pilot ratio (default: eta)")
            p.add_argument("--estimators", help="comma-separated subset of gan,ls,lmmse,omp")
        if name == "train-gan":
            p.add_argument("--record-time", action="store_true",
                           help="fill the seconds column of training_log.csv (breaks byte-reproducibility)")
        if name == "check-subgaussian":
            p.add_argument("--trials", type=int, default=100_000)
        if name == "report":
            p.add_argument("inputs", nargs="*", help="CSV files (default: every sweep CSV in --out)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    fn = COMMANDS[args.command][0]
    try:
        cfg = _load_config(args)
        return fn(args, cfg)
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
