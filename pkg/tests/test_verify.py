import json

import numpy as np
import pytest
from scipy import stats

from branchcoal.discrete import b_from_d
from branchcoal.measure import INF, PointMassMeasure
from branchcoal.trees import standing_ancestry
from branchcoal.verify import (REFERENCE_A, REFERENCE_B, CheckResult, CheckSpec, acceptance_specs, binomial_z,
                               check_seed, chi2_threshold, ks_one_sample, reference_genealogy, run_suite,
                               two_sample_chi2)


def _genealogy_check(expect_a):
    def run(rng):
        A, D = standing_ancestry(reference_genealogy(), 6)
        bad = sum(a != e for a, e in zip(A[:9], expect_a))
        return CheckResult(bad, 0, bad == 0)
    return run


def _uniform_mean(rng):
    x = rng.random(1000)
    z = abs(x.mean() - 0.5) / (x.std(ddof=1) / np.sqrt(x.size))
    return CheckResult(z, 3.0, z <= 3.0, {"mean": x.mean()})


def test_reference_genealogy_regression():
    rep = run_suite(acceptance_specs("discrete")[:1])
    assert rep.passed and rep.outcomes[0].statistic == 0


def test_reference_constants():
    A, D = standing_ancestry(reference_genealogy(), 6)
    assert tuple(A[:9]) == REFERENCE_A and A[9] == INF
    B = b_from_d([(A[i], D[i][A[i]]) for i in range(9)])
    assert B == [PointMassMeasure.from_mapping(m) for m in REFERENCE_B]


def test_corrupted_oracle_fails():
    bad = list(REFERENCE_A)
    bad[4] = 5
    rep = run_suite([CheckSpec("good", _genealogy_check(REFERENCE_A)),
                     CheckSpec("corrupted", _genealogy_check(tuple(bad)))])
    assert [o.passed for o in rep.outcomes] == [True, False]
    assert not rep.passed
    assert rep.outcomes[1].line().startswith("FAIL")


def test_determinism_and_order():
    specs = [CheckSpec("u1", _uniform_mean), CheckSpec("u2", _uniform_mean)]
    r1, r2 = run_suite(specs, seed=5), run_suite(specs, seed=5)
    assert [o.statistic for o in r1.outcomes] == [o.statistic for o in r2.outcomes]
    assert [o.name for o in r1.outcomes] == ["u1", "u2"]
    # streams are per check name
    assert r1.outcomes[0].statistic != r1.outcomes[1].statistic
    assert run_suite(specs[1:], seed=5).outcomes[0].statistic == r1.outcomes[1].statistic
    assert run_suite(specs, seed=6).outcomes[0].statistic != r1.outcomes[0].statistic


def test_parallel_matches_serial():
    specs = [CheckSpec(f"u{i}", _uniform_mean) for i in range(4)]
    s = run_suite(specs, seed=3)
    p = run_suite(specs, seed=3, workers=2)
    assert [o.statistic for o in s.outcomes] == [o.statistic for o in p.outcomes]


def test_json_schema():
    rep = run_suite([CheckSpec("u", _uniform_mean), CheckSpec("g", _genealogy_check(REFERENCE_A))], seed=1)
    doc = json.loads(rep.to_json())
    assert doc["seed"] == 1
    for row in doc["checks"]:
        assert set(row) == {"name", "statistic", "threshold", "pass", "seconds"}
        assert isinstance(row["pass"], bool)


def test_misconfigured_specs():
    with pytest.raises(ValueError):
        run_suite([CheckSpec("x", _uniform_mean), CheckSpec("x", _uniform_mean)])
    with pytest.raises(ValueError):
        acceptance_specs("nope")


def test_acceptance_catalogue():
    specs = acceptance_specs()
    assert len(specs) == 12
    assert [s.name.split()[0] for s in specs] == [f"AC{i}" for i in range(1, 13)]
    assert {s.suite for s in specs} == {"discrete", "csb", "apps"}
    assert sum(len(acceptance_specs(k)) for k in ("discrete", "csb", "apps")) == 12


def test_check_seed_distinct():
    a = np.random.default_rng(check_seed(0, "a")).random()
    b = np.random.default_rng(check_seed(0, "b")).random()
    assert a != b


def test_chi2_threshold():
    assert chi2_threshold(2) == pytest.approx(8.0)
    assert chi2_threshold(50) == pytest.approx(80.0)


def test_two_sample_chi2_pools_and_matches_scipy():
    c1 = np.array([50, 60, 3, 2, 40])
    c2 = np.array([55, 50, 4, 1, 45])
    stat, df = two_sample_chi2(c1, c2)
    pooled = np.array([[50, 60, 40, 5], [55, 50, 45, 5]])
    ref = stats.chi2_contingency(pooled, correction=False)
    assert df == 3 and stat == pytest.approx(ref[0], rel=1e-12)


def test_ks_one_sample_matches_scipy(rng):
    x = rng.exponential(size=500)
    assert ks_one_sample(x, lambda t: 1 - np.exp(-t)) == pytest.approx(stats.kstest(x, "expon").statistic,
                                                                       rel=1e-12)
    # censored draws count toward n but never lower the empirical CDF
    d = ks_one_sample(x[x < 1.0], lambda t: 1 - np.exp(-t), n_total=x.size)
    assert d <= ks_one_sample(x, lambda t: 1 - np.exp(-t)) + 1e-12


def test_binomial_z():
    assert binomial_z(50, 100, 0.5) == 0.0
    assert binomial_z(60, 100, 0.5) == pytest.approx(2.0)
    assert binomial_z(0, 10, 0.0) == 0.0 and binomial_z(1, 10, 0.0) == np.inf
