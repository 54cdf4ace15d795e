"""Tests for shadow features, the binomial decision rule and the Boruta loop."""

import math

import numpy as np
import pytest

from boruta import (
    SHADOW_PREFIX,
    BorutaConfig,
    Decision,
    add_shadow_features,
    boruta_iteration,
    decide_features,
    run_boruta,
    two_sided_pvalue,
)
from data_model import DomainError, LabeledDataset
from evaluation import SyntheticSpec, generate_synthetic

FAST = dict(n_trees_per_iteration=15)


def _exact_two_sided(hits, trials):
    lower = sum(math.comb(trials, k) for k in range(0, hits + 1)) / 2**trials
    upper = sum(math.comb(trials, k) for k in range(hits, trials + 1)) / 2**trials
    return min(1.0, 2 * min(lower, upper))


def test_shadows_double_the_columns():
    rng = np.random.default_rng(0)
    d = LabeledDataset(tuple(f"f{j}" for j in range(5)), rng.normal(size=(30, 5)), rng.integers(0, 5, 30))
    extended = add_shadow_features(d, 11)
    assert extended.n_features == 10
    np.testing.assert_array_equal(extended.rows[:, :5], d.rows)
    assert extended.feature_names[5:] == tuple(f"{SHADOW_PREFIX}f{j}" for j in range(5))
    for j in range(5):
        assert sorted(extended.rows[:, 5 + j]) == sorted(d.rows[:, j])
    np.testing.assert_array_equal(extended.labels, d.labels)


def test_shadow_degenerate_cases():
    single = LabeledDataset(("a", "b"), [[1.0, 2.0]], [3])
    np.testing.assert_array_equal(add_shadow_features(single, 0).rows, [[1.0, 2.0, 1.0, 2.0]])
    constant = LabeledDataset(("c",), np.full((8, 1), 4.0), [0, 1] * 4)
    assert (add_shadow_features(constant, 5).rows[:, 1] == 4.0).all()


def test_shadows_are_reshuffled_per_seed():
    d = LabeledDataset(("x",), np.arange(50.0).reshape(50, 1), [0] * 50)
    first = add_shadow_features(d, 1).rows[:, 1]
    second = add_shadow_features(d, 2).rows[:, 1]
    assert not np.array_equal(first, second)


@pytest.mark.parametrize(
    "hits,expected",
    [(15, Decision.CONFIRMED), (0, Decision.REJECTED), (8, Decision.TENTATIVE)],
)
def test_decision_examples(hits, expected):
    cfg = BorutaConfig(multiple_testing="none")
    assert decide_features({"f": hits}, 15, cfg)["f"] == expected


def test_fifteen_of_fifteen_pvalue():
    assert two_sided_pvalue(15, 15) == pytest.approx(2 * 0.5**15, rel=1e-12)


def test_decisions_match_exact_binomial_oracle():
    cfg = BorutaConfig(multiple_testing="none")
    cases = 0
    for trials in range(1, 31):
        for hits in range(trials + 1):
            exact = _exact_two_sided(hits, trials)
            assert abs(two_sided_pvalue(hits, trials) - exact) < 1e-12
            if exact < cfg.alpha and 2 * hits > trials:
                expected = Decision.CONFIRMED
            elif exact < cfg.alpha and 2 * hits < trials:
                expected = Decision.REJECTED
            else:
                expected = Decision.TENTATIVE
            assert decide_features({"f": hits}, trials, cfg)["f"] == expected
            cases += 1
    assert cases == 495


def test_bonferroni_divides_alpha_by_undecided_count():
    # p(7 of 7) = 0.015625: significant alone, not once alpha is split across four features
    lone = decide_features({"a": 7}, 7, BorutaConfig())
    assert lone["a"] == Decision.CONFIRMED
    many = decide_features({"a": 7, "b": 3, "c": 4, "d": 3}, 7, BorutaConfig())
    assert many["a"] == Decision.TENTATIVE


def test_decide_requires_trials():
    with pytest.raises(DomainError):
        decide_features({"a": 0}, 0, BorutaConfig())


def test_config_validation():
    with pytest.raises(DomainError):
        BorutaConfig(alpha=1.5)
    with pytest.raises(DomainError):
        BorutaConfig(max_iterations=0)
    with pytest.raises(DomainError):
        BorutaConfig(multiple_testing="holm")


def test_constant_single_feature_never_hits():
    d = LabeledDataset(("c",), np.full((40, 1), 2.0), [0, 1, 2, 3] * 10)
    result = boruta_iteration(d, ["c"], BorutaConfig(**FAST), iteration=1)
    assert result.z == {"c": 0.0}
    assert result.mzsa == 0.0
    assert result.hits == set()


def test_one_iteration_leaves_everything_tentative(labelled_blobs):
    report = run_boruta(labelled_blobs, BorutaConfig(max_iterations=1, **FAST))
    assert report.iterations_run == 1
    assert {f.decision for f in report.features} == {Decision.TENTATIVE}


def test_informative_features_are_confirmed(labelled_blobs):
    report = run_boruta(labelled_blobs, BorutaConfig(max_iterations=25, seed=3, **FAST))
    assert report.decision_of("x0") == Decision.CONFIRMED
    assert report.decision_of("x1") == Decision.CONFIRMED
    assert report.decision_of("noise") != Decision.CONFIRMED
    assert report.selected_features() == ["x0", "x1"]


def test_report_bookkeeping(labelled_blobs):
    report = run_boruta(labelled_blobs, BorutaConfig(max_iterations=12, seed=5, **FAST))
    assert len(report.mzsa_history) == len(report.shadow_history) == report.iterations_run
    for item in report.features:
        assert item.hits <= item.trials <= report.iterations_run
        assert len(item.z_history) == item.trials
        assert not item.feature.startswith(SHADOW_PREFIX)
    for lo, mean, hi in report.shadow_history:
        assert lo <= mean <= hi
    frame = report.to_frame()
    assert list(frame.columns) == ["feature", "decision", "hits", "trials", "mean_z", "median_z", "rank"]
    assert set(frame["feature"]) == {"x0", "x1", "noise"}


def test_rejected_features_stop_accruing_trials():
    rng = np.random.default_rng(1)
    labels = np.repeat(np.arange(5), 30)
    signal = labels[:, None] + rng.normal(0, 0.1, size=(150, 1))
    noise = rng.normal(size=(150, 4))
    d = LabeledDataset(("signal", "n0", "n1", "n2", "n3"), np.hstack([signal, noise]), labels)
    report = run_boruta(d, BorutaConfig(max_iterations=30, seed=2, **FAST))
    history = report.history()["z_history"]
    for item in report.features:
        assert len(history[item.feature]) == item.trials
    rejected = report.names_with(Decision.REJECTED)
    assert rejected
    # the confirmed signal keeps being tested until the noise is decided
    signal_trials = next(f.trials for f in report.features if f.feature == "signal")
    assert signal_trials == report.iterations_run
    assert report.decision_of("signal") == Decision.CONFIRMED


def test_boruta_is_deterministic(labelled_blobs):
    cfg = BorutaConfig(max_iterations=6, seed=9, **FAST)
    first = run_boruta(labelled_blobs, cfg)
    second = run_boruta(labelled_blobs, cfg, workers=3)
    assert first.to_frame().equals(second.to_frame())
    assert first.history() == second.history()


def test_empty_feature_set_is_an_error():
    d = LabeledDataset((), np.zeros((3, 0)), [0, 1, 2])
    with pytest.raises(DomainError):
        run_boruta(d, BorutaConfig())


@pytest.mark.slow
def test_all_noise_features_rarely_hit():
    rates = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        d = LabeledDataset(tuple(f"n{j}" for j in range(5)), rng.normal(size=(150, 5)), rng.integers(0, 5, 150))
        result = boruta_iteration(d, list(d.feature_names), BorutaConfig(n_trees_per_iteration=50, seed=seed), 1)
        rates.append(len(result.hits) / 5)
    assert np.mean(rates) < 0.25


@pytest.mark.slow
def test_boruta_recovers_planted_features():
    successes = 0
    for seed in range(10):
        _, d = generate_synthetic(SyntheticSpec(n_rows=2000, n_informative=10, n_noise=10, noise_level=0.1, seed=1))
        train = d.subset(range(1200))
        report = run_boruta(train, BorutaConfig(seed=seed), workers=4)
        confirmed = sum(report.decision_of(f"informative_{k}") == Decision.CONFIRMED for k in range(10))
        rejected = sum(report.decision_of(f"noise_{k}") == Decision.REJECTED for k in range(10))
        successes += confirmed >= 9 and rejected >= 9
    assert successes >= 9


@pytest.mark.slow
def test_label_copy_beats_every_shadow():
    hits = 0
    names = ("label_copy",) + tuple(f"n{j}" for j in range(9))
    for seed in range(100):
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, 5, size=150)
        rows = np.hstack([labels[:, None].astype(float), rng.normal(size=(150, 9))])
        d = LabeledDataset(names, rows, labels)
        result = boruta_iteration(d, list(names), BorutaConfig(n_trees_per_iteration=50, seed=seed), 1)
        hits += "label_copy" in result.hits
    assert hits >= 95
