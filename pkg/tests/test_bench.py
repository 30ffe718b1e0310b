import json
import math

import numpy as np
import pytest

from genest import bench
from genest.bench import (ExperimentConfig, SweepResult, SweepRow, aggregate, csv_to_dat, derive_seed, parse_csv,
                          preset, run_generalization_sweep, run_pilot_sweep, run_single_estimate, run_snr_sweep,
                          run_training_ablation, splitmix64, worker_count)
from genest.channel import generate_dataset
from genest.errors import ConfigError
from genest.wgan import train


@pytest.fixture(scope="module")
def tiny():
    return preset("tiny")


@pytest.fixture(scope="module")
def tiny_gen(tiny):
    ds = generate_dataset(tiny.channel, tiny.train_size, tiny.master_seed)
    return train(ds, tiny.wgan, tiny.master_seed)[0]


# ------------------------------------------------------------------- seeds


def test_splitmix_reference_value():
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    assert splitmix64(1) != splitmix64(0)


def test_derive_seed_distinct():
    seeds = {derive_seed(0, e, p, t) for e in range(3) for p in range(4) for t in range(50)}
    assert len(seeds) == 600
    assert derive_seed(5, 1, 2) == derive_seed(5, 1, 2)
    assert derive_seed(-1) == derive_seed(2**64 - 1)


def test_worker_count(monkeypatch):
    monkeypatch.delenv("GENEST_THREADS", raising=False)
    assert worker_count() == 1
    monkeypatch.setenv("GENEST_THREADS", "3")
    assert worker_count() == 3
    for bad in ("0", "x"):
        monkeypatch.setenv("GENEST_THREADS", bad)
        with pytest.raises(ConfigError):
            worker_count()


# ------------------------------------------------------------------ config


def test_config_json_roundtrip(tmp_path, tiny):
    path = tmp_path / "c.json"
    path.write_text(tiny.to_json())
    assert ExperimentConfig.from_json(path) == tiny
    assert ExperimentConfig.from_dict({}) == ExperimentConfig()


@pytest.mark.parametrize("data", [
    {"bogus": 1},
    {"channel": {"n_clusters": 0}},
    {"wgan": {"nope": 2}},
    {"channel": 3},
    {"trials": 0},
    {"eta_grid": [0.0]},
    {"estimators": ["gan", "mystery"]},
    {"transceiver": {"n_tx": 8}},
    {"baseline_architecture": "analog"},
])
def test_config_rejects(data):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(data)


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json(bad)


def test_presets():
    desk = preset("desk")
    assert desk.channel.dims == (16, 4, 16)
    tx = desk.transceiver
    assert (tx.n_tx, tx.n_rx, tx.n_rx_rf, tx.n_tx_rf, tx.n_streams, tx.n_f, tx.n_frames) == (16, 4, 1, 4, 4, 16, 4)
    assert desk.channel.n_taps == 4 and desk.wgan.latent_dim == 8 and desk.train_size == 2000
    assert desk.wgan.epochs == 500 and desk.snr_grid_db == (-10, -5, 0, 5, 10)
    full = preset("full")
    assert full.channel.dims == (64, 16, 64) and full.wgan.latent_dim == 15 and full.wgan.epochs == 3000
    assert full.gen_clusters == (10, 15, 20, 25) and full.gen_rays == (1, 2, 4, 8)
    assert full.channel.angle_spread_deg == 5.0 and full.channel.antenna_spacing_wavelengths == 0.1
    with pytest.raises(ConfigError):
        preset("huge")


# ---------------------------------------------------------------- aggregate


def test_aggregate():
    mean, se, n, flags = aggregate([1.0, 3.0])
    assert (mean, n, flags) == (2.0, 2, "") and math.isclose(se, 1.0)
    mean, se, n, flags = aggregate([None, 2.0])
    assert (mean, se, n, flags) == (2.0, 0.0, 1, "ill-posed=1/2")
    mean, se, n, flags = aggregate([None, None])
    assert math.isnan(mean) and n == 0 and flags == "ill-posed"
    mean, _, _, flags = aggregate([-math.inf, 0.0])
    assert mean == -100.0 and flags == "exact"


def test_csv_format():
    res = SweepResult([SweepRow("snr", "snr_db", "-5", "ls", -5.0, 1.0, 1.23456789, math.nan, 0, "ill-posed")])
    lines = res.to_csv().splitlines()
    assert lines[0] == bench.CSV_HEADER
    assert lines[1] == "snr,snr_db,-5,ls,-5.000000,1.000000,1.234568,nan,0,ill-posed"
    assert parse_csv(res.to_csv())[0]["estimator"] == "ls"
    with pytest.raises(ConfigError):
        parse_csv("a,b\n1,2\n")


# ------------------------------------------------------------------ sweeps


def test_missing_generator_is_config_error(tiny):
    with pytest.raises(ConfigError):
        run_snr_sweep(tiny)


def test_snr_sweep_rows(tiny, tiny_gen):
    res = run_snr_sweep(tiny, tiny_gen)
    assert len(res.rows) == len(tiny.snr_grid_db) * len(tiny.estimators)
    assert {r.estimator for r in res.rows} == set(tiny.estimators)
    assert all(r.trials == tiny.trials for r in res.rows)


def test_ls_decreasing_in_snr(tiny):
    cfg = tiny.replace(estimators=("ls",), trials=40, snr_grid_db=(-10.0, -5.0, 0.0, 5.0, 10.0))
    means = [r.nmse_db_mean for r in run_snr_sweep(cfg).rows]
    assert all(b < a for a, b in zip(means, means[1:]))


def test_sweep_is_paired(tiny):
    # the channel and pilots come from the trial seed, so only noise differs between SNR points
    b = bench.Bench(tiny.replace(estimators=("ls",)))
    hi = b.run_trial(tiny.channel, 200.0, 1.0, 11, 1)["ls"]
    lo = b.run_trial(tiny.channel, 200.0, 1.0, 11, 2)["ls"]
    assert hi < -150 and lo < -150


def test_pilot_sweep_flags_ill_posed(tiny):
    cfg = tiny.replace(estimators=("ls", "lmmse", "omp"), eta_grid=(1.0, 0.3), trials=4)
    res = run_pilot_sweep(cfg)
    low = res.select(eta=0.3, estimator="ls")[0]
    assert low.flags.startswith("ill-posed")
    assert res.select(eta=0.3, estimator="omp")[0].trials == 4
    assert res.select(eta=1.0, estimator="ls")[0].flags == ""


def test_pilot_eta1_consistent_with_snr_sweep(tiny):
    cfg = tiny.replace(estimators=("ls",), trials=60, eta_grid=(1.0,), snr_grid_db=(tiny.pilot_snr_db,))
    a = run_pilot_sweep(cfg).rows[0]
    b = run_snr_sweep(cfg).rows[0]
    assert abs(a.nmse_db_mean - b.nmse_db_mean) < 3 * math.hypot(a.nmse_db_stderr, b.nmse_db_stderr)


def test_generalization_sweep(tiny, tiny_gen):
    res = run_generalization_sweep(tiny, tiny_gen)
    assert {r.estimator for r in res.rows} == {"gan"}
    matched = [r for r in res.rows if "matched" in r.flags]
    assert {r.sweep_param for r in matched} == {"clusters", "rays"}
    assert len(matched) == 2 * len(tiny.snr_grid_db)
    n_points = (len(tiny.gen_clusters) + len(tiny.gen_rays)) * len(tiny.snr_grid_db)
    assert len(res.rows) == n_points
    with pytest.raises(ConfigError):
        run_generalization_sweep(tiny, tiny_gen, test_grid={"speed": [1]})


def test_ablation_single_point(tiny):
    res = run_training_ablation(tiny, grid=[(1, 40, 20)])
    assert len(res.rows) == 1 and res.rows[0].value == "1/40/20"


def test_single_estimate(tiny, tiny_gen):
    res = run_single_estimate(tiny, -5.0, 1.0, tiny_gen)
    assert [r.trials for r in res.rows] == [1] * len(tiny.estimators)


def test_hybrid_baseline_is_ill_posed(tiny):
    cfg = tiny.replace(baseline_architecture="hybrid", estimators=("ls",))
    assert run_single_estimate(cfg, 0.0, 1.0).rows[0].flags == "ill-posed"


def test_threads_do_not_change_results(tiny, tiny_gen, monkeypatch):
    out = []
    for n in ("1", "3"):
        monkeypatch.setenv("GENEST_THREADS", n)
        out.append(run_snr_sweep(tiny, tiny_gen).to_csv())
    assert out[0] == out[1]


# ------------------------------------------------------------------ report


def test_csv_to_dat(tiny, tiny_gen):
    text = run_generalization_sweep(tiny, tiny_gen).to_csv()
    dat = csv_to_dat(text)
    blocks = dat.strip().split("\n\n\n")
    assert len(blocks) == len(tiny.gen_clusters) + len(tiny.gen_rays)
    assert blocks[0].startswith("# experiment=gen")
    rows = [l for l in blocks[0].splitlines() if not l.startswith("#")]
    assert len(rows) == len(tiny.snr_grid_db) and len(rows[0].split()) == 4


def test_partial_section_keeps_experiment_defaults():
    cfg = ExperimentConfig.from_dict({"wgan": {"epochs": 7}})
    assert cfg.wgan.epochs == 7 and cfg.wgan.stat_every == ExperimentConfig().wgan.stat_every
