import numpy as np
import pytest

from idsrecon.cli import main


def _simulate(tmp_path, n=20, traces=6, length=24, seed=7):
    out = tmp_path / "data"
    rc = main(["simulate", "-o", str(out), "--num-clusters", str(n),
               "--traces-per-cluster", str(traces), "--length", str(length),
               "--seed", str(seed)])
    assert rc == 0
    return out


def test_simulate_writes_files_and_is_reproducible(tmp_path):
    out1 = _simulate(tmp_path / "a")
    out2 = _simulate(tmp_path / "b")
    c1 = (out1 / "centers.txt").read_bytes()
    c2 = (out2 / "centers.txt").read_bytes()
    t1 = (out1 / "clusters.txt").read_bytes()
    t2 = (out2 / "clusters.txt").read_bytes()
    assert c1 == c2 and t1 == t2
    assert len(c1.splitlines()) == 20
    assert (out1 / "effective_config.txt").exists()


def test_simulate_seed_changes_output(tmp_path):
    out1 = _simulate(tmp_path / "a", seed=7)
    out2 = _simulate(tmp_path / "b", seed=8)
    assert (out1 / "centers.txt").read_bytes() != (out2 / "centers.txt").read_bytes()


def test_estimate_channel(tmp_path, capsys):
    out = _simulate(tmp_path, n=60, traces=4, length=60)
    rc = main(["estimate-channel", "--centers", str(out / "centers.txt"),
               "--clusters", str(out / "clusters.txt"),
               "--train-range", "1-60"])
    assert rc == 0
    text = capsys.readouterr().out
    est = {}
    for line in text.splitlines():
        parts = line.split()
        if len(parts) == 2 and parts[0].startswith("p_"):
            est[parts[0]] = float(parts[1])
    assert abs(est["p_ins"] - 0.017) < 0.02
    assert abs(est["p_del"] - 0.02) < 0.02
    assert abs(est["p_sub"] - 0.022) < 0.02


def test_estimate_channel_empty_range_is_config_error(tmp_path):
    out = _simulate(tmp_path)
    rc = main(["estimate-channel", "--centers", str(out / "centers.txt"),
               "--clusters", str(out / "clusters.txt"),
               "--train-range", "30-40"])
    assert rc == 2


def test_reconstruct_noiseless_recovers_centers(tmp_path):
    out = tmp_path / "data"
    main(["simulate", "-o", str(out), "--num-clusters", "5",
          "--traces-per-cluster", "3", "--length", "18", "--seed", "1",
          "--p-ins", "0", "--p-del", "0", "--p-sub", "0"])
    res = tmp_path / "res"
    rc = main(["reconstruct", "--centers", str(out / "centers.txt"),
               "--clusters", str(out / "clusters.txt"), "--code", "identity:18",
               "--algo", "multiply-posteriors", "--k", "2", "--delta", "6",
               "--seed", "0", "-o", str(res), "--dump-posteriors"])
    assert rc == 0
    ests = (res / "estimates.txt").read_text().strip().splitlines()
    centers = (out / "centers.txt").read_text().strip().splitlines()
    assert ests == centers
    assert (res / "posteriors.csv").read_text().startswith("cluster,position,")


def test_reconstruct_refuses_large_multitrace(tmp_path, capsys):
    out = _simulate(tmp_path)
    rc = main(["reconstruct", "--centers", str(out / "centers.txt"),
               "--clusters", str(out / "clusters.txt"), "--code", "identity:24",
               "--algo", "bcjr-multitrace", "--k", "4", "--seed", "0",
               "-o", str(tmp_path / "r")])
    assert rc == 2
    assert "force-multitrace" in capsys.readouterr().err


def test_evaluate_writes_reports(tmp_path):
    out = _simulate(tmp_path, n=30, traces=5, length=24)
    res = tmp_path / "eval"
    rc = main(["evaluate", "--centers", str(out / "centers.txt"),
               "--clusters", str(out / "clusters.txt"), "--code", "identity:24",
               "--algo", "multiply-posteriors", "--k-list", "1,2,3",
               "--metric", "hamming", "--delta", "8", "--split", "all",
               "--seed", "3", "-o", str(res)])
    assert rc == 0
    lines = (res / "report.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + 3 * 3
    plot = (res / "plot.csv").read_text().strip().splitlines()
    assert plot == ["K,hamming"] + [l for l in plot[1:]]
    assert len(plot) == 4


def test_evaluate_missing_dataset_path_fails_fast(tmp_path):
    rc = main(["evaluate", "--centers", str(tmp_path / "nope.txt"),
               "--clusters", str(tmp_path / "nope2.txt"),
               "--seed", "0", "-o", str(tmp_path / "e")])
    assert rc == 2


def test_ci_mode_requires_seed(tmp_path):
    rc = main(["simulate", "-o", str(tmp_path / "x"), "--ci",
               "--num-clusters", "2", "--traces-per-cluster", "1",
               "--length", "8"])
    assert rc == 2


def test_config_file_round_trip(tmp_path):
    out = _simulate(tmp_path)
    # rerun purely from the echoed config: byte-identical dataset
    cfg = out / "effective_config.txt"
    text = cfg.read_text().replace(str(out), str(tmp_path / "again"))
    cfg2 = tmp_path / "cfg.txt"
    cfg2.write_text(text)
    rc = main(["simulate", "--config", str(cfg2), "-o", str(tmp_path / "again")])
    assert rc == 0
    assert (out / "centers.txt").read_bytes() == \
        (tmp_path / "again" / "centers.txt").read_bytes()


def test_config_unknown_key_rejected(tmp_path):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("bogus_key = 7\n")
    rc = main(["simulate", "--config", str(cfg), "-o", str(tmp_path / "x"),
               "--seed", "0"])
    assert rc == 2


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("num_clusters = 4\nseed = 5\n")
    out = tmp_path / "y"
    rc = main(["simulate", "--config", str(cfg), "-o", str(out),
               "--num-clusters", "2"])
    assert rc == 0
    assert len((out / "centers.txt").read_text().strip().splitlines()) == 2


def test_evaluate_jobs_identical(tmp_path):
    out = _simulate(tmp_path, n=16, traces=4, length=20)
    reports = []
    for jobs, name in (("1", "j1"), ("2", "j2")):
        res = tmp_path / name
        rc = main(["evaluate", "--centers", str(out / "centers.txt"),
                   "--clusters", str(out / "clusters.txt"),
                   "--code", "identity:20", "--algo", "bmala",
                   "--k-list", "2", "--metric", "hamming", "--split", "all",
                   "--seed", "3", "--jobs", jobs, "-o", str(res)])
        assert rc == 0
        reports.append((res / "report.csv").read_text())
    assert reports[0] == reports[1]


def test_sweep_writes_table(tmp_path):
    out = _simulate(tmp_path, n=12, traces=4, length=20)
    res = tmp_path / "sw"
    rc = main(["sweep", "--centers", str(out / "centers.txt"),
               "--clusters", str(out / "clusters.txt"), "--code", "identity:20",
               "--k", "2", "--metric", "hamming", "--delta", "8",
               "--train-range", "1-4", "--validation-range", "5-8",
               "--test-range", "9-12", "--seed", "2",
               "--grid-beta-b", "1", "--grid-beta-e", "0.1,0.5",
               "--grid-beta-i", "0", "--grid-beta-o", "0.5",
               "-o", str(res)])
    assert rc == 0
    lines = (res / "sweep.csv").read_text().strip().splitlines()
    assert lines[0] == "beta_b,beta_e,beta_i,beta_o,hamming"
    assert len(lines) == 3
