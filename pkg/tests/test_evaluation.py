import numpy as np
import pytest

from idsrecon import (DNA, BetaParams, Cluster, ConfigError, DatasetError,
                      IDSParams, air_random_k, bcjr_once_rate, hamming_rate,
                      identity_encoder, load_dataset, mr_encoder,
                      run_algorithm, scramble, scrambled_eval,
                      simulate_clusters, split_dataset, sweep_betas,
                      symbolwise_cross_entropy, transmit, write_dataset)
from idsrecon.bcjr import PosteriorTable
from idsrecon.evaluation import write_plot_csv, write_report_csv

PAPER = IDSParams.from_error_rates(0.017, 0.02, 0.022)


def test_hamming_rate():
    assert hamming_rate(DNA.encode("ACGT"), DNA.encode("ACGT")) == 0.0
    assert hamming_rate(DNA.encode("ACGT"), DNA.encode("TGCA")) == 1.0
    assert hamming_rate(DNA.encode("ACGT"), DNA.encode("ACGA")) == 0.25
    with pytest.raises(ConfigError):
        hamming_rate(DNA.encode("ACG"), DNA.encode("ACGT"))


def test_cross_entropy_values():
    truth = DNA.encode("ACGT")
    delta = np.eye(4)[truth]
    assert symbolwise_cross_entropy(delta, truth) == pytest.approx(0.0, abs=1e-9)
    uniform = np.full((4, 4), 0.25)
    assert symbolwise_cross_entropy(uniform, truth) == pytest.approx(2.0)
    half = np.full((4, 4), 1 / 6)
    half[np.arange(4), truth] = 0.5
    assert symbolwise_cross_entropy(half, truth) == pytest.approx(1.0)


def test_cross_entropy_clipping_floor():
    truth = np.array([0], dtype=np.int8)
    wrong = np.array([[0.0, 1.0, 0.0, 0.0]])
    h = symbolwise_cross_entropy(wrong, truth)
    assert h == pytest.approx(-np.log2(1e-12))


def test_bcjr_once_rate():
    assert bcjr_once_rate(0.0, 1.0) == 2.0
    assert bcjr_once_rate(2.0, 1.0) == 0.0
    assert bcjr_once_rate(2.5, 0.5) == 0.0  # floored
    assert bcjr_once_rate(0.5, 104 / 110) == pytest.approx(1.5 * 104 / 110)
    with pytest.raises(ConfigError):
        bcjr_once_rate(-0.1, 1.0)


def test_air_random_k():
    rates = {4: 1.2554, 10: 1.5279}
    assert air_random_k(rates, {4: 1.0}) == pytest.approx(1.2554)
    assert air_random_k({1: 1.0, 2: 2.0}, {1: 0.5, 2: 0.5}) == pytest.approx(1.5)
    assert air_random_k(rates, {4: 0.5, 10: 0.5}) == pytest.approx(1.39165)
    with pytest.raises(ConfigError):
        air_random_k(rates, {4: 0.5, 10: 0.4})
    with pytest.raises(ConfigError):
        air_random_k(rates, {4: 0.5, 6: 0.5})


def test_dataset_round_trip(tmp_path):
    clusters = simulate_clusters(3, 4, 20, PAPER, seed=5)
    write_dataset(clusters, tmp_path / "c.txt", tmp_path / "t.txt")
    loaded = load_dataset(tmp_path / "c.txt", tmp_path / "t.txt")
    assert len(loaded) == 3
    for a, b in zip(clusters, loaded):
        assert np.array_equal(a.center, b.center)
        assert len(a.traces) == len(b.traces)
        for x, y in zip(a.traces, b.traces):
            assert np.array_equal(x, y)


def test_dataset_two_groups(tmp_path):
    (tmp_path / "c.txt").write_text("ACGT\nTTTT\n")
    (tmp_path / "t.txt").write_text("====\nACG\nACGT\n====\nTTT\n")
    clusters = load_dataset(tmp_path / "c.txt", tmp_path / "t.txt")
    assert len(clusters) == 2
    assert len(clusters[0].traces) == 2
    assert len(clusters[1].traces) == 1


def test_dataset_empty_clusters_file_warns(tmp_path):
    (tmp_path / "c.txt").write_text("ACGT\n")
    (tmp_path / "t.txt").write_text("")
    with pytest.warns(UserWarning):
        clusters = load_dataset(tmp_path / "c.txt", tmp_path / "t.txt")
    assert clusters == []


def test_dataset_count_mismatch(tmp_path):
    (tmp_path / "c.txt").write_text("ACGT\nTTTT\n")
    (tmp_path / "t.txt").write_text("====\nACG\n")
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "c.txt", tmp_path / "t.txt")


def test_dataset_bad_symbol_reports_line(tmp_path):
    (tmp_path / "c.txt").write_text("ACGT\n")
    (tmp_path / "t.txt").write_text("====\nACXT\n")
    with pytest.raises(DatasetError, match="t.txt:2"):
        load_dataset(tmp_path / "c.txt", tmp_path / "t.txt")


def test_split_dataset():
    clusters = [Cluster(np.zeros(4, dtype=np.int8), []) for _ in range(10)]
    tr, va, te = split_dataset(clusters, (1, 6), (7, 8), (9, 10))
    assert (len(tr), len(va), len(te)) == (6, 2, 2)
    with pytest.raises(ConfigError):
        split_dataset(clusters, (1, 6), (5, 8), (9, 10))
    with pytest.raises(ConfigError):
        split_dataset(clusters, (1, 12), (13, 14), (15, 16))
    # canonical split sizes on a full-size dataset
    big = clusters * 1000
    tr, va, te = split_dataset(big)
    assert (len(tr), len(va), len(te)) == (2000, 500, 7500)


def test_run_algorithm_dispatch():
    enc = identity_encoder(15, DNA)
    rng = np.random.default_rng(2)
    x = rng.integers(4, size=15).astype(np.int8)
    traces = [np.asarray(transmit(x, PAPER, rng)) for _ in range(3)]
    for algo in ("bcjr-multitrace", "trellis-bma", "multiply-posteriors", "bmala"):
        post, hard = run_algorithm(algo, enc, traces, PAPER, delta=8,
                                   betas=BetaParams(1, 0.5, 0, 1))
        assert len(hard) == 15
        if post is not None:
            assert post.probs.shape == (15, 4)
    post, hard = run_algorithm("bmala-map", enc, traces, PAPER, delta=8)
    assert post.probs.shape == (15, 4)
    with pytest.raises(ConfigError):
        run_algorithm("nope", enc, traces, PAPER)
    with pytest.raises(ConfigError):
        run_algorithm("bmala", mr_encoder(15, 2, DNA), traces, PAPER)


def test_scrambled_eval_reproducible_and_consistent():
    clusters = simulate_clusters(40, 6, 30, PAPER, seed=9)
    enc = identity_encoder(30, DNA)
    a = scrambled_eval(clusters, enc, "trellis-bma", 3, "hamming", 11, PAPER,
                       delta=8, betas=BetaParams(1, 0.5, 0, 1))
    b = scrambled_eval(clusters, enc, "trellis-bma", 3, "hamming", 11, PAPER,
                       delta=8, betas=BetaParams(1, 0.5, 0, 1))
    assert a.metrics == b.metrics
    assert a.n_samples == 40
    # entropy and rate come along for posterior algorithms and stay coupled
    h = a.metrics["entropy"][0]
    assert a.metrics["air"][0] == pytest.approx(max(0.0, (2 - h) * enc.rate))
    c = scrambled_eval(clusters, enc, "trellis-bma", 3, "hamming", 12, PAPER,
                       delta=8, betas=BetaParams(1, 0.5, 0, 1))
    assert c.metrics["hamming"] != a.metrics["hamming"]


def test_scrambled_eval_coded_descrambles_correctly():
    # noiseless channel: decoding through the scramble offset must recover
    # the drawn message exactly for every cluster
    noiseless = IDSParams(0, 0, 0, 1)
    rng = np.random.default_rng(14)
    enc = mr_encoder(24, 3, DNA)
    clusters = []
    for _ in range(12):
        center = rng.integers(4, size=24).astype(np.int8)
        clusters.append(Cluster(center, [center.copy() for _ in range(3)]))
    rep = scrambled_eval(clusters, enc, "trellis-bma", 2, "hamming", 3,
                         noiseless, betas=BetaParams(1, 0, 0, 1))
    assert rep.metrics["hamming"][0] == 0.0
    assert rep.metrics["air"][0] == pytest.approx(2.0 * enc.rate)


def test_scrambled_eval_skips_small_clusters():
    clusters = simulate_clusters(10, 3, 20, PAPER, seed=3)
    clusters += simulate_clusters(5, 1, 20, PAPER, seed=4)
    enc = identity_encoder(20, DNA)
    rep = scrambled_eval(clusters, enc, "multiply-posteriors", 2, "hamming", 1,
                         PAPER, delta=8)
    assert rep.skipped == 5
    assert rep.n_samples == 10
    with pytest.raises(ConfigError):
        scrambled_eval(clusters, enc, "multiply-posteriors", 7, "hamming", 1,
                       PAPER, delta=8)


def test_scrambled_eval_jobs_equivalence():
    clusters = simulate_clusters(12, 4, 20, PAPER, seed=6)
    enc = identity_encoder(20, DNA)
    a = scrambled_eval(clusters, enc, "bmala", 3, "hamming", 2, PAPER)
    b = scrambled_eval(clusters, enc, "bmala", 3, "hamming", 2, PAPER, jobs=2)
    assert a.metrics == b.metrics


def test_sweep_single_point_and_best():
    clusters = simulate_clusters(15, 4, 20, PAPER, seed=8)
    enc = identity_encoder(20, DNA)
    grid = {"beta_b": (1.0,), "beta_e": (0.1,), "beta_i": (0.0,), "beta_o": (0.5,)}
    best, table = sweep_betas(clusters, enc, 2, "hamming", 5, PAPER, delta=8,
                              grid=grid)
    assert best == BetaParams(1.0, 0.1, 0.0, 0.5)
    assert len(table) == 1
    grid["beta_o"] = (0.5, 1.0)
    best, table = sweep_betas(clusters, enc, 2, "hamming", 5, PAPER, delta=8,
                              grid=grid)
    assert len(table) == 2
    assert best in [bp for bp, _ in table]
    scores = dict(table)
    assert scores[best] == min(scores.values())


def test_csv_output(tmp_path):
    clusters = simulate_clusters(8, 4, 20, PAPER, seed=2)
    enc = identity_encoder(20, DNA)
    reps = [scrambled_eval(clusters, enc, "multiply-posteriors", k, "hamming",
                           1, PAPER, delta=8) for k in (1, 2)]
    out = tmp_path / "report.csv"
    write_report_csv(reps, out)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "algorithm,code,K,metric,value,ci,half_width,n_samples,skipped"
    assert len(lines) == 1 + 2 * 3  # hamming, entropy, air per K
    plot = tmp_path / "plot.csv"
    write_plot_csv(reps, "hamming", plot)
    rows = plot.read_text().strip().splitlines()
    assert rows[0] == "K,hamming"
    assert [r.split(",")[0] for r in rows[1:]] == ["1", "2"]
