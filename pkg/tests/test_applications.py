import math

import numpy as np
import pytest

from branchcoal.applications import (ClusterSample, ClusterSampler, cluster_pgf_given_v, disintegration_check,
                                     disintegration_rhs, first_infinite_index, lf_iid_check, sample_UV,
                                     uv_horizon, v_law, yaglom_distribution)
from branchcoal.errors import HorizonError, ParameterError
from branchcoal.offspring import iterate_pgf, linear_fractional, poisson, table
from branchcoal.verify import binomial_z, chi2_threshold

LF = linear_fractional(0.6, 0.4)
BIN = table({0: 0.6, 2: 0.4})
MIX = table({0: 0.5, 1: 0.2, 2: 0.3})


def test_iid_critical(rng):
    rep = lf_iid_check(0.5, 0.5, 20_000, rng, horizon=2000)
    row = next(r for r in rep["tail_rows"] if r["n"] == 3)
    assert row["exact"] == pytest.approx(0.25)
    assert row["z"] < 3
    assert rep["p_value"] > 0.001


def test_iid_subcritical(rng):
    rep = lf_iid_check(0.6, 0.4, 20_000, rng, horizon=2000)
    row = next(r for r in rep["tail_rows"] if r["n"] == math.inf)
    assert row["exact"] == pytest.approx(1 / 3, abs=1e-12)
    assert row["z"] < 3 and rep["max_z"] < 3.5
    assert rep["p_value"] > 0.001


def test_iid_p_values_not_systematically_small(rng):
    p = [lf_iid_check(0.6, 0.4, 3000, rng, horizon=500)["p_value"] for _ in range(20)]
    assert sum(x < 0.05 for x in p) <= 5
    assert np.mean(p) > 0.3


def test_yaglom_geometric():
    y = yaglom_distribution(LF)
    k = np.arange(1, 40)
    np.testing.assert_allclose([y.pmf(int(i)) for i in k], (1 / 3) * (2 / 3) ** (k - 1), atol=1e-12)
    # stopping on a TV step below tol leaves an error of order tol / (1 - m)
    assert y.alpha_1 == pytest.approx(1 / 3, abs=1e-11)
    assert y.pgf(0.5) == pytest.approx(0.25, abs=1e-12)
    assert y.pgf(0.0) == 0.0 and y.pgf(1.0) == pytest.approx(1.0, abs=1e-12)
    assert y.residual <= 1e-8 and y.truncation_mass < 1e-11


def test_yaglom_binary_table(rng):
    y = yaglom_distribution(BIN)
    assert sum(y.pmf(k) for k in range(1, y.k_max + 1)) == pytest.approx(1.0, abs=1e-11)
    assert y.residual <= 1e-8
    assert max(y.pmf(k) for k in range(1, 30, 2)) < 1e-15
    # exact conditional law at generation 80 by polynomial composition
    f = np.array([0.6, 0.0, 0.4])
    law = np.array([0.0, 1.0])
    for _ in range(80):
        law = np.polynomial.polynomial.polyval(np.polynomial.Polynomial(f), law).coef[:400]
    cond = law[1:] / law[1:].sum()
    np.testing.assert_allclose(cond[:40], [y.pmf(k) for k in range(1, 41)], atol=1e-6)
    # generation-by-generation simulation, conditioned on survival at n = 30
    z = np.ones(20_000_000, dtype=np.int64)
    for _ in range(30):
        z = 2 * rng.binomial(z, 0.4)
        z = z[z > 0]
    for k in (2, 4, 6):
        assert binomial_z(np.sum(z == k), z.size, y.pmf(k)) < 4


def test_yaglom_alpha_1_is_tail_limit():
    for dist in (LF, BIN, poisson(0.7)):
        y = yaglom_distribution(dist)
        tab = iterate_pgf(dist, 200)
        assert y.alpha_1 == pytest.approx(float(tab.tail[200]), abs=1e-10)


def test_yaglom_rejects_critical():
    with pytest.raises(ParameterError):
        yaglom_distribution(poisson(1.0))


def test_v_law_values():
    y = yaglom_distribution(LF)
    tab = iterate_pgf(LF, 300)
    assert v_law(LF, tab, y, 0) == pytest.approx(1 / 3, abs=1e-11)
    assert v_law(LF, tab, y, 1) == pytest.approx(5 / 9, abs=1e-11)
    vals = [v_law(LF, tab, y, n) for n in range(301)]
    assert all(a <= b + 1e-15 for a, b in zip(vals, vals[1:]))
    assert vals[-1] == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(HorizonError):
        v_law(LF, tab, y, 301)
    with pytest.raises(ParameterError):
        v_law(LF, tab, y, -1)


def test_cluster_sample_invariant():
    with pytest.raises(ParameterError):
        ClusterSample(2, 0)
    with pytest.raises(ParameterError):
        ClusterSample(1, 3)


def test_uv_sampler(rng):
    y = yaglom_distribution(LF)
    tab, H = uv_horizon(LF)
    smp = ClusterSampler(LF, tab, H)
    n = 100_000
    U, V = smp.sample_many(n, rng)
    assert np.all((V == 0) == (U == 1))
    assert binomial_z(np.sum(V <= 1), n, 5 / 9) < 3
    cnt = np.bincount(U)
    for k in range(1, 12):
        assert binomial_z(cnt[k], n, y.pmf(k)) < 3.5
    s = sample_UV(LF, tab, y, H, rng)
    assert (s.V == 0) == (s.U == 1)


def test_pgf_identity_endpoints():
    tab = iterate_pgf(BIN, 30)
    for n in (1, 4, 30):
        assert cluster_pgf_given_v(BIN, tab, n, 0.0) == pytest.approx(0.0, abs=1e-12)
        assert cluster_pgf_given_v(BIN, tab, n, 1.0) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ParameterError):
        cluster_pgf_given_v(BIN, tab, 0, 0.5)


def test_pgf_identity_matches_conditioned_sampler(rng):
    tab, H = uv_horizon(BIN)
    smp = ClusterSampler(BIN, tab, H)
    for n in (1, 3):
        U = np.array([smp.sample_U_given_V(n, rng) for _ in range(20_000)])
        x = 0.6 ** U
        assert abs(x.mean() - cluster_pgf_given_v(BIN, tab, n, 0.6)) < 3 * x.std() / math.sqrt(x.size)


@pytest.mark.parametrize("dist", [LF, MIX], ids=["lf", "mixed"])
def test_disintegration(dist, rng):
    y = yaglom_distribution(dist)
    tab, H = uv_horizon(dist)
    for s in (0.0, 0.25, 0.5, 0.75, 1.0):
        assert disintegration_rhs(dist, tab, y, s, H) == pytest.approx(y.pgf(s), abs=1e-5)
    rows = disintegration_check(dist, y, [0.25, 0.5, 0.75], 50_000, rng)
    assert all(r["pass"] for r in rows)
    with pytest.raises(ParameterError):
        disintegration_check(dist, y, [1.5], 10, rng)


def test_first_infinite_index_geometric(rng):
    tab = iterate_pgf(LF, 200)
    n = 20_000
    U = np.array([first_infinite_index(LF, tab, rng) for _ in range(n)])
    cnt = np.bincount(U)
    stat, df = 0.0, -1
    for k in range(1, cnt.size):
        e = n * (1 / 3) * (2 / 3) ** (k - 1)
        if e >= 10:
            stat += (cnt[k] - e) ** 2 / e
            df += 1
    assert stat < chi2_threshold(df)
    with pytest.raises(ParameterError):
        first_infinite_index(BIN, iterate_pgf(BIN, 10), rng)
