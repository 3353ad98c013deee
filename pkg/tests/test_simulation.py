import math
import types

import numpy as np
import pytest

from rupclass.em import TrimMask, fit
from rupclass.simulation import (
    STUDY1_SIGMA,
    STUDY1_TAU,
    STUDY2_MU,
    STUDY2_SIGMA,
    STUDY2_TAU,
    MethodSpec,
    SimulatedData,
    StudyIConfig,
    StudyIIConfig,
    gen_study1,
    gen_study2,
    metrics,
    n_contaminated,
    parse_methods,
    run_benchmark,
    sample_gaussian_mixture,
    sample_t_mixture,
)


def test_study1_clean_split():
    d = gen_study1(StudyIConfig(eta=0.0), np.random.default_rng(0))
    assert d.X.shape == (200, 2) and d.Y.shape == (400, 2)
    assert not d.contaminated.any()
    np.testing.assert_array_equal(d.labels, d.true_labelled)


@pytest.mark.parametrize("eta", [0.05, 0.10, 0.15, 0.20, 0.25])
def test_study1_contamination_counts(eta):
    d = gen_study1(StudyIConfig(eta=eta), np.random.default_rng(1))
    k = math.ceil(eta / 2 * 200 - 1e-9)
    assert d.flipped.sum() == k and d.outlier.sum() == k
    assert d.contaminated.sum() == round(eta * 200)
    assert np.all(d.true_labelled[d.flipped] == 2) and np.all(d.labels[d.flipped] == 0)
    assert np.all(np.abs(d.X[d.outlier]) <= 20)
    assert np.all(d.true_labelled[d.outlier] == -1)
    assert len(d.X) == 200 + k
    r = gen_study1(StudyIConfig(eta=eta, outliers="replace"), np.random.default_rng(1))
    assert len(r.X) == 200 and r.contaminated.sum() == 2 * k


def test_study1_fifteen_percent_example():
    d = gen_study1(StudyIConfig(eta=0.15), np.random.default_rng(2))
    assert d.flipped.sum() == 15 and d.outlier.sum() == 15 and d.contaminated.sum() == 30
    assert n_contaminated(0.15, 200) == 15


def test_study1_class_proportions():
    rng = np.random.default_rng(3)
    _, cls = sample_gaussian_mixture(100_000, STUDY1_TAU, np.zeros((3, 2)), STUDY1_SIGMA, rng)
    np.testing.assert_allclose(np.bincount(cls) / 1e5, STUDY1_TAU, atol=0.01)


def test_study2_layout():
    d = gen_study2(StudyIIConfig(), np.random.default_rng(4))
    assert d.Y.shape == (750, 10)
    assert d.flipped.sum() == 10 and d.outlier.sum() == 15
    assert d.contaminated.sum() / 250 == pytest.approx(0.10)
    assert np.all((d.X[d.outlier] >= 10) & (d.X[d.outlier] <= 15))
    assert np.all(d.labels[d.flipped] != d.true_labelled[d.flipped])
    assert STUDY2_MU.shape == (4, 10)


def test_t_sampler_moments():
    rng = np.random.default_rng(5)
    x, _ = sample_t_mixture(100_000, np.array([1.0]), STUDY2_MU[:1], STUDY2_SIGMA[:1], 6.0, rng)
    assert np.max(np.abs(x.mean(axis=0))) < 0.05
    y, _ = sample_t_mixture(100_000, np.array([1.0]), STUDY2_MU[1:2], STUDY2_SIGMA[1:2], 6.0, rng)
    cov = np.cov(y.T)
    np.testing.assert_allclose(np.diag(cov), 3.0, rtol=0.08)
    assert np.max(np.abs(cov - np.diag(np.diag(cov)))) < 0.15


def _fake_fit(zeta, labels_l, labels_u):
    return types.SimpleNamespace(mask=TrimMask(np.asarray(zeta, bool), np.ones(len(labels_u), bool)),
                                 labels_labelled=np.asarray(labels_l), labels_unlabelled=np.asarray(labels_u))


def _toy_data():
    return SimulatedData(
        X=np.zeros((6, 2)), labels=np.array([0, 0, 1, 1, 0, 2]), Y=np.zeros((3, 2)),
        true_labelled=np.array([0, 0, 1, 1, 2, 2]), true_unlabelled=np.array([0, 1, 2]),
        flipped=np.array([False, False, False, False, True, False]),
        outlier=np.zeros(6, bool),
    )


def test_metrics_toy_examples():
    d = _toy_data()
    d.flipped[1] = True
    d.labels[1] = 1
    # Both flips planted; unit 4 trimmed and reassigned to its true class 2, unit 1 kept.
    m = metrics(_fake_fit([1, 1, 1, 1, 0, 1], [0, 1, 1, 1, 2, 2], [0, 1, 2]), d)
    assert (m["pct_trimmed"], m["pct_assigned"]) == (0.5, 1.0)
    assert m["error"] == 0.0
    perfect = metrics(_fake_fit([1, 0, 1, 1, 0, 1], [0, 0, 1, 1, 2, 2], [0, 1, 2]), d)
    assert perfect == {"error": 0.0, "pct_trimmed": 1.0, "pct_assigned": 1.0, "pct_contaminated_trimmed": 1.0}
    untrimmed = metrics(_fake_fit(np.ones(6), [0, 0, 1, 1, 2, 2], [0, 1, 1]), d)
    assert untrimmed["pct_trimmed"] == 0.0 and math.isnan(untrimmed["pct_assigned"])
    assert untrimmed["error"] == pytest.approx(1 / 3)


def test_method_spec_parsing():
    s = MethodSpec.parse("RUPCLASS:al=0.05,au=0.1,c=4,model=vev,label=R5")
    assert (s.mode, s.alpha_l, s.alpha_u, s.c, s.model, s.name) == ("rupclass", 0.05, 0.1, 4.0, "VEV", "R5")
    assert MethodSpec.parse("edda:al=0.3").alpha_l == 0.0
    assert MethodSpec.parse("REDDA:au=0.2").alpha_u == 0.0
    specs = parse_methods(["REDDA", "RUPCLASS"])
    assert (specs[0].alpha_l, specs[1].alpha_l, specs[1].alpha_u) == (0.15, 0.15, 0.05)
    with pytest.raises(ValueError):
        MethodSpec.parse("SVM")
    with pytest.raises(ValueError):
        MethodSpec.parse("REDDA:zz=1")
    with pytest.raises(ValueError):
        parse_methods(["REDDA", "REDDA:al=0.1"])


def test_single_replicate_report_equals_its_metrics():
    rep = run_benchmark("study1", ["EDDA", "RUPCLASS"], B=1, seed=3, etas=[0.1], nsamp=5)
    r = rep.replicates[0]
    assert rep.cell("EDDA", 0.1)["mean"] == r.metrics["EDDA"]["error"]
    assert rep.cell("RUPCLASS", 0.1, "pct_trimmed")["mean"] == r.metrics["RUPCLASS"]["pct_trimmed"]
    assert rep.cell("EDDA", 0.1)["sd"] == 0.0


def test_benchmark_is_deterministic_and_job_independent():
    a = run_benchmark("study1", ["EDDA", "REDDA"], B=3, seed=11, etas=[0.0, 0.2], nsamp=5, jobs=1)
    b = run_benchmark("study1", ["EDDA", "REDDA"], B=3, seed=11, etas=[0.0, 0.2], nsamp=5, jobs=2)
    assert a.to_csv() == b.to_csv()
    header = a.to_csv().splitlines()[0]
    assert header == "method,eta,metric,mean,sd,B,failures"


def test_benchmark_records_failures(monkeypatch):
    import rupclass.simulation as sim
    from rupclass.em import DegenerateFitError

    real = sim.fit

    def failing(*args, **kw):
        if kw["mode"] == "upclass":
            raise DegenerateFitError("nope")
        return real(*args, **kw)

    monkeypatch.setattr(sim, "fit", failing)
    rep = run_benchmark("study1", ["EDDA", "UPCLASS"], B=2, seed=0, etas=[0.0], nsamp=3)
    assert rep.cell("UPCLASS", 0.0)["failures"] == 2
    assert math.isnan(rep.cell("UPCLASS", 0.0)["mean"])
    assert "NA" in rep.to_csv()


def test_planted_far_outliers_are_trimmed():
    for seed in range(10):
        for eta in (0.05, 0.10, 0.15):
            d = gen_study1(StudyIConfig(eta=eta), np.random.default_rng(seed))
            f = fit(d.X, d.labels, d.Y, mode="rupclass", alpha_l=0.15, alpha_u=0.05, c=20.0, nsamp=20, seed=seed)
            far = d.outlier & (np.abs(d.X).max(axis=1) > 15)
            assert not f.mask.zeta[far].any()


def test_benchmark_rejects_bad_input():
    with pytest.raises(ValueError):
        run_benchmark("study1", ["EDDA"], B=0, seed=0)
    with pytest.raises(ValueError):
        run_benchmark("study3", ["EDDA"], B=1, seed=0)
    with pytest.raises(ValueError):
        StudyIConfig(eta=0.3)
