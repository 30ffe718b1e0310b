"""Seeded experiment harness: configs, estimator sweeps, CSV and gnuplot output.

Every trial draws its randomness from splitmix-derived seeds, so a sweep's
CSV depends only on (config, master seed), never on thread scheduling.
"""

from __future__ import annotations

import dataclasses
import io
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import estimators as est
from .channel import ChannelDataset, ClusterRayConfig, generate_dataset, sample_channel
from .errors import ConfigError, IllPosedError
from .measurement import (TransceiverConfig, build_operator, identity_networks, measure, orthogonal_pilots,
                          sample_phase_networks, sample_pilots)
from .wgan import ChannelGenerator, WganConfig, train

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
ESTIMATORS = ("gan", "ls", "lmmse", "omp")
CSV_HEADER = "experiment,sweep_param,value,estimator,snr_db,eta,nmse_db_mean,nmse_db_stderr,trials,flags"

_EXPERIMENT_IDS = {"snr": 1, "pilots": 2, "gen": 3, "ablation": 4, "estimate": 5}


# ------------------------------------------------------------------ seeds


def splitmix64(x: int) -> int:
    """One output of the splitmix64 generator seeded with ``x``."""
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, *indices: int) -> int:
    s = splitmix64(int(master_seed) & MASK64)
    for i in indices:
        s = splitmix64(s ^ (int(i) & MASK64))
    return s


def worker_count() -> int:
    raw = os.environ.get("GENEST_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"GENEST_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError("GENEST_THREADS must be >= 1")
    return n


def _parallel_map(fn: Callable, jobs: Sequence, threads: Optional[int] = None) -> list:
    threads = worker_count() if threads is None else threads
    if threads == 1 or len(jobs) < 2:
        return [fn(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))


# ----------------------------------------------------------------- config


def _tuplify(v):
    return tuple(_tuplify(x) for x in v) if isinstance(v, (list, tuple)) else v


def _build(default, data, section):
    """Section ``data`` applied on top of the ``default`` instance."""
    if data is None:
        return default
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be an object")
    names = {f.name for f in dataclasses.fields(default) if f.init}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    try:
        return dataclasses.replace(default, **{k: _tuplify(v) for k, v in data.items()})
    except TypeError as exc:
        raise ConfigError(f"bad {section!r} section: {exc}") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    channel: ClusterRayConfig = field(default_factory=ClusterRayConfig)
    transceiver: TransceiverConfig = field(default_factory=TransceiverConfig)
    wgan: WganConfig = field(default_factory=lambda: WganConfig(stat_every=25))
    inversion: est.InversionConfig = field(default_factory=est.InversionConfig)
    snr_grid_db: Tuple[float, ...] = (-10.0, -5.0, 0.0, 5.0, 10.0)
    eta_grid: Tuple[float, ...] = (1.0, 0.7, 0.5, 0.3)
    eta: float = 1.0  # pilot ratio for SNR and generalization sweeps
    pilot_snr_db: float = -5.0
    trials: int = 100
    estimators: Tuple[str, ...] = ESTIMATORS
    master_seed: int = 0
    train_size: int = 2000
    omp_sparsity: int = 8
    covariance_shrinkage: float = 1e-3
    baseline_architecture: str = "digital"  # LS/LMMSE on a fully digital reference, or "hybrid"
    gen_clusters: Tuple[int, ...] = (4, 6, 8, 10)
    gen_rays: Tuple[int, ...] = (1, 2, 4)
    ablation_grid: Tuple[Tuple[int, int, int], ...] = (
        (50, 500, 200), (50, 2000, 200), (200, 500, 200), (200, 2000, 200), (200, 2000, 100),
    )  # (epochs, data, batch)
    ablation_snr_db: float = 0.0
    test_channels: int = 100

    def __post_init__(self):
        if not self.snr_grid_db or not self.eta_grid:
            raise ConfigError("snr_grid_db and eta_grid must be non-empty")
        if any(not 0 < e <= 1 for e in (*self.eta_grid, self.eta)):
            raise ConfigError("pilot ratios must lie in (0, 1]")
        if self.trials < 1 or self.test_channels < 1:
            raise ConfigError("trials and test_channels must be >= 1")
        if not self.estimators or set(self.estimators) - set(ESTIMATORS):
            raise ConfigError(f"estimators must be a non-empty subset of {ESTIMATORS}")
        if self.baseline_architecture not in ("digital", "hybrid"):
            raise ConfigError("baseline_architecture must be 'digital' or 'hybrid'")
        if self.train_size < 1 or self.omp_sparsity < 1:
            raise ConfigError("train_size and omp_sparsity must be >= 1")
        if not self.gen_clusters or not self.gen_rays:
            raise ConfigError("generalization grids must be non-empty")
        if any(len(p) != 3 or min(p) < 1 for p in self.ablation_grid) or not self.ablation_grid:
            raise ConfigError("ablation_grid entries are (epochs, data, batch) with positive values")
        ch, tx = self.channel, self.transceiver
        if (ch.n_tx, ch.n_rx, ch.n_subcarriers) != (tx.n_tx, tx.n_rx, tx.n_f):
            raise ConfigError("channel and transceiver dimensions disagree")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        data = dict(data)
        base = cls()
        sections = {name: _build(getattr(base, name), data.pop(name, None), name)
                    for name in ("channel", "transceiver", "wgan", "inversion")}
        top = {f.name for f in dataclasses.fields(cls)} - set(sections)
        unknown = set(data) - top
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        try:
            return cls(**sections, **{k: _tuplify(v) for k, v in data.items()})
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc


def preset(name: str) -> ExperimentConfig:
    """Named configurations: ``desk`` (CI scale), ``tiny`` (smoke tests), ``full`` (reference scale)."""
    if name == "desk":
        return ExperimentConfig()
    if name == "tiny":
        ch = ClusterRayConfig(n_clusters=3, n_rays=2, n_tx_h=2, n_tx_v=2, n_rx_h=1, n_rx_v=2,
                              n_subcarriers=4, n_taps=2)
        tx = TransceiverConfig(n_tx=4, n_rx=2, n_tx_rf=2, n_rx_rf=1, n_streams=2, n_f=4, n_frames=2)
        return ExperimentConfig(
            channel=ch, transceiver=tx,
            wgan=WganConfig(epochs=3, batch_size=20, latent_dim=4, gen_hidden=(16, 32), critic_hidden=(16, 8)),
            inversion=est.InversionConfig(restarts=2, iterations=20),
            snr_grid_db=(-5.0, 5.0), eta_grid=(1.0, 0.5), trials=3, train_size=60, omp_sparsity=3,
            gen_clusters=(2, 3), gen_rays=(1, 2), ablation_grid=((2, 40, 20), (2, 60, 20)),
            test_channels=3,
        )
    if name == "full":
        ch = ClusterRayConfig(n_clusters=20, n_rays=2, n_tx_h=8, n_tx_v=8, n_rx_h=4, n_rx_v=4,
                              n_subcarriers=64, n_taps=8, antenna_spacing_wavelengths=0.1)
        tx = TransceiverConfig(n_tx=64, n_rx=16, n_tx_rf=16, n_rx_rf=1, n_streams=16, n_f=64, n_frames=16)
        return ExperimentConfig(
            channel=ch, transceiver=tx, wgan=WganConfig(epochs=3000, latent_dim=15, stat_every=100), train_size=5000,
            gen_clusters=(10, 15, 20, 25), gen_rays=(1, 2, 4, 8),
        )
    raise ConfigError(f"unknown preset {name!r} (choose desk, tiny or full)")


# ------------------------------------------------------------ sweep output


@dataclass
class SweepRow:
    experiment: str
    sweep_param: str
    value: str
    estimator: str
    snr_db: float
    eta: float
    nmse_db_mean: float
    nmse_db_stderr: float
    trials: int
    flags: str = ""


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.6f}"


@dataclass
class SweepResult:
    rows: List[SweepRow] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for r in self.rows:
            buf.write(",".join([r.experiment, r.sweep_param, r.value, r.estimator, _fmt(r.snr_db), _fmt(r.eta),
                                _fmt(r.nmse_db_mean), _fmt(r.nmse_db_stderr), str(r.trials), r.flags]) + "\n")
        return buf.getvalue()

    def write(self, path) -> None:
        Path(path).write_text(self.to_csv())

    def select(self, **match) -> List[SweepRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in match.items())]

    def mean(self, **match) -> float:
        rows = self.select(**match)
        if len(rows) != 1:
            raise KeyError(f"{len(rows)} rows match {match}")
        return rows[0].nmse_db_mean


def aggregate(values: Sequence[Optional[float]]) -> Tuple[float, float, int, str]:
    """Mean and standard error of per-trial dB values.

    ``None`` marks an ill-posed trial and is excluded; ``-inf`` (exact
    recovery) enters as the sentinel and sets the ``exact`` flag.
    """
    flags = []
    ok = [v for v in values if v is not None]
    bad = len(values) - len(ok)
    if bad:
        flags.append("ill-posed" if not ok else f"ill-posed={bad}/{len(values)}")
    if not ok:
        return math.nan, math.nan, 0, ";".join(flags)
    arr = np.array(ok, dtype=float)
    if np.isneginf(arr).any():
        flags.append("exact")
        arr = np.maximum(arr, est.NMSE_SENTINEL_DB)
    stderr = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
    return float(arr.mean()), stderr, int(arr.size), ";".join(flags)


# ---------------------------------------------------------------- trials


class Bench:
    """Shared state for one sweep: config, generator, covariance and OMP basis."""

    def __init__(self, cfg: ExperimentConfig, generator: Optional[ChannelGenerator] = None,
                 dataset: Optional[ChannelDataset] = None, estimators: Optional[Sequence[str]] = None):
        self.cfg = cfg
        self.estimators = tuple(estimators or cfg.estimators)
        if "gan" in self.estimators:
            if generator is None:
                raise ConfigError("GAN estimator requested but no generator checkpoint is available")
            if tuple(generator.dims) != cfg.channel.dims:
                raise ConfigError(f"generator dims {generator.dims} do not match channel {cfg.channel.dims}")
        self.generator = generator
        self.covariance = None
        if "lmmse" in self.estimators:
            if dataset is None:
                dataset = generate_dataset(cfg.channel, cfg.train_size, cfg.master_seed)
            self.covariance = est.channel_covariance(dataset.channels, cfg.covariance_shrinkage)
        self.basis = est.dft_dictionary(*cfg.channel.dims) if "omp" in self.estimators else None

    def run_trial(self, channel_cfg: ClusterRayConfig, snr_db: float, eta: float, trial_seed: int,
                  point_seed: int) -> Dict[str, Optional[float]]:
        """NMSE (dB) per estimator for one paired instance; ``None`` = ill-posed.

        The channel, phase networks and pilots come from ``trial_seed`` and are
        shared across sweep points; noise and latent restarts come from
        ``point_seed``.
        """
        cfg = self.cfg
        s_channel, s_hybrid, s_digital = np.random.SeedSequence(trial_seed).spawn(3)
        n_hybrid, n_digital, s_gan = np.random.SeedSequence(point_seed).spawn(3)
        H = sample_channel(channel_cfg, np.random.default_rng(s_channel)).per_subcarrier

        tcfg = cfg.transceiver
        rng = np.random.default_rng(s_hybrid)
        pilots = sample_pilots(tcfg, eta, rng)
        f_rf, w_rf = sample_phase_networks(tcfg, rng)
        op = build_operator(pilots, f_rf, w_rf, tcfg)
        rx = measure(op, H, snr_db, np.random.default_rng(n_hybrid))

        out: Dict[str, Optional[float]] = {}
        if "gan" in self.estimators:
            out["gan"] = est.estimate_gan(rx, op, self.generator, cfg.inversion,
                                          np.random.default_rng(s_gan), H).nmse_db
        if "omp" in self.estimators:
            out["omp"] = est.estimate_omp(rx, op, cfg.omp_sparsity, self.basis, H).nmse_db
        if "ls" in self.estimators or "lmmse" in self.estimators:
            if cfg.baseline_architecture == "digital":
                dcfg = TransceiverConfig.digital(tcfg.n_tx, tcfg.n_rx, tcfg.n_f)
                drng = np.random.default_rng(s_digital)
                dop = build_operator(orthogonal_pilots(dcfg, eta, drng), *identity_networks(dcfg), dcfg)
                drx = measure(dop, H, snr_db, np.random.default_rng(n_digital))
            else:
                dop, drx = op, rx
            for name in ("ls", "lmmse"):
                if name not in self.estimators:
                    continue
                try:
                    if name == "ls":
                        out[name] = est.estimate_ls(drx, dop, H).nmse_db
                    else:
                        out[name] = est.estimate_lmmse(drx, dop, self.covariance, H).nmse_db
                except IllPosedError:
                    out[name] = None
        return out

    def sweep(self, experiment: str, points: Sequence[dict]) -> Tuple[SweepResult, List[List[dict]]]:
        """Run ``cfg.trials`` paired trials at each point.

        Each point dict holds ``param``, ``value``, ``channel``, ``snr_db``,
        ``eta``, ``key`` (seed index) and optional ``flags``.
        """
        exp_id = _EXPERIMENT_IDS[experiment]
        ms = self.cfg.master_seed
        jobs = [(p, t) for p in range(len(points)) for t in range(self.cfg.trials)]

        def job(pt):
            p, t = pt
            pnt = points[p]
            trial_seed = derive_seed(ms, exp_id, 0, t)
            point_seed = derive_seed(ms, exp_id, pnt["key"] + 1, t)
            return (p, t), self.run_trial(pnt["channel"], pnt["snr_db"], pnt["eta"], trial_seed, point_seed)

        results = sorted(_parallel_map(job, jobs), key=lambda r: r[0])
        per_point: List[List[dict]] = [[] for _ in points]
        for (p, _), res in results:
            per_point[p].append(res)
        out = SweepResult()
        for pnt, trials in zip(points, per_point):
            for name in self.estimators:
                mean, se, n, flags = aggregate([tr[name] for tr in trials])
                extra = pnt.get("flags", "")
                flags = ";".join(f for f in (flags, extra) if f)
                out.rows.append(SweepRow(experiment, pnt["param"], str(pnt["value"]), name, float(pnt["snr_db"]),
                                         float(pnt["eta"]), mean, se, n, flags))
        return out, per_point


def _num(v) -> str:
    return f"{v:g}"


def run_snr_sweep(cfg: ExperimentConfig, generator: Optional[ChannelGenerator] = None,
                  dataset: Optional[ChannelDataset] = None) -> SweepResult:
    bench = Bench(cfg, generator, dataset)
    points = [dict(param="snr_db", value=_num(s), channel=cfg.channel, snr_db=s, eta=cfg.eta, key=i)
              for i, s in enumerate(cfg.snr_grid_db)]
    return bench.sweep("snr", points)[0]


def run_pilot_sweep(cfg: ExperimentConfig, generator: Optional[ChannelGenerator] = None,
                    dataset: Optional[ChannelDataset] = None) -> SweepResult:
    bench = Bench(cfg, generator, dataset)
    points = [dict(param="eta", value=_num(e), channel=cfg.channel, snr_db=cfg.pilot_snr_db, eta=e, key=i)
              for i, e in enumerate(cfg.eta_grid)]
    return bench.sweep("pilots", points)[0]


def run_generalization_sweep(cfg: ExperimentConfig, generator: ChannelGenerator,
                             train_clusters: Optional[int] = None, train_rays: Optional[int] = None,
                             test_grid: Optional[Dict[str, Sequence[int]]] = None) -> SweepResult:
    """GAN-only NMSE vs SNR on channels regenerated at each test grid point.

    The generator is assumed trained at (``train_clusters``, ``train_rays``),
    by default the config's channel settings; that point is flagged ``matched``.
    """
    train_clusters = cfg.channel.n_clusters if train_clusters is None else train_clusters
    train_rays = cfg.channel.n_rays if train_rays is None else train_rays
    grid = test_grid or {"clusters": cfg.gen_clusters, "rays": cfg.gen_rays}
    base = cfg.channel.replace(n_clusters=train_clusters, n_rays=train_rays)
    points = []
    for pi, (param, values) in enumerate(sorted(grid.items())):
        if param not in ("clusters", "rays"):
            raise ConfigError(f"unknown generalization axis {param!r}")
        for vi, v in enumerate(values):
            ch = base.replace(n_clusters=int(v)) if param == "clusters" else base.replace(n_rays=int(v))
            matched = (ch.n_clusters, ch.n_rays) == (train_clusters, train_rays)
            for si, s in enumerate(cfg.snr_grid_db):
                points.append(dict(param=param, value=str(int(v)), channel=ch, snr_db=s, eta=cfg.eta,
                                   key=(pi * 1000 + vi) * 1000 + si, flags="matched" if matched else ""))
    bench = Bench(cfg, generator, estimators=("gan",))
    return bench.sweep("gen", points)[0]


def run_training_ablation(cfg: ExperimentConfig, grid: Optional[Sequence[Tuple[int, int, int]]] = None,
                          progress: Optional[Callable[[str], None]] = None) -> SweepResult:
    """Train one generator per (epochs, data, batch) point and score it on held-out channels.

    Every generator is evaluated on the same ``test_channels`` instances at
    ``ablation_snr_db``.
    """
    grid = tuple(grid or cfg.ablation_grid)
    biggest = max(d for _, d, _ in grid)
    data = generate_dataset(cfg.channel, biggest, cfg.master_seed)
    eval_cfg = cfg.replace(trials=cfg.test_channels)
    out = SweepResult()
    for epochs, n_data, batch in grid:
        if progress:
            progress(f"ablation e={epochs} d={n_data} b={batch}")
        wcfg = dataclasses.replace(cfg.wgan, epochs=int(epochs), batch_size=int(batch))
        subset = ChannelDataset(cfg.channel, data.channels[:n_data], data.master_seed)
        gen, _ = train(subset, wcfg, cfg.master_seed)
        bench = Bench(eval_cfg, gen, estimators=("gan",))
        point = dict(param="epochs/data/batch", value=f"{epochs}/{n_data}/{batch}", channel=cfg.channel,
                     snr_db=cfg.ablation_snr_db, eta=cfg.eta, key=0)
        out.rows.extend(bench.sweep("ablation", [point])[0].rows)
    return out


def run_single_estimate(cfg: ExperimentConfig, snr_db: float, eta: float, generator=None, dataset=None,
                        estimators: Optional[Sequence[str]] = None) -> SweepResult:
    """One paired instance (trial 0) at the given operating point."""
    bench = Bench(cfg.replace(trials=1), generator, dataset, estimators)
    point = dict(param="single", value="0", channel=cfg.channel, snr_db=snr_db, eta=eta, key=0)
    return bench.sweep("estimate", [point])[0]


# ----------------------------------------------------------------- report


def parse_csv(text: str) -> List[dict]:
    lines = [l for l in text.splitlines() if l.strip()]
    if not lines or lines[0] != CSV_HEADER:
        raise ConfigError("not a sweep CSV (header mismatch)")
    keys = CSV_HEADER.split(",")
    return [dict(zip(keys, l.split(","))) for l in lines[1:]]


def csv_to_dat(text: str) -> str:
    """gnuplot data: one indexed block per (experiment, sweep_param, estimator, series).

    Columns are ``x mean stderr trials``; for the generalization sweep the
    series is the test value and x is the SNR.
    """
    rows = parse_csv(text)
    blocks: Dict[tuple, List[str]] = {}
    order = []
    for r in rows:
        if r["experiment"] == "gen":
            key = (r["experiment"], r["sweep_param"], r["estimator"], r["value"])
            x = r["snr_db"]
        else:
            key = (r["experiment"], r["sweep_param"], r["estimator"], "")
            x = r["value"]
            if "/" in x:
                x = str(len(blocks.get(key, [])))
        if key not in blocks:
            blocks[key] = []
            order.append(key)
        blocks[key].append(f"{x} {r['nmse_db_mean']} {r['nmse_db_stderr']} {r['trials']}")
    out = []
    for key in order:
        exp, param, name, series = key
        label = f"# experiment={exp} sweep={param} estimator={name}" + (f" {param}={series}" if series else "")
        out.append(label + "\n# x nmse_db_mean nmse_db_stderr trials\n" + "\n".join(blocks[key]))
    return "\n\n\n".join(out) + "\n"
