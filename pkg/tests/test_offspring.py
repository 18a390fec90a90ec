import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from branchcoal.errors import HorizonError, ParameterError
from branchcoal.offspring import (ZetaPrimeSampler, binary, branch_length_tail, geometric, iterate_pgf,
                                  lf_branch_tail, linear_fractional, make_offspring, pgf, pgf_derivative,
                                  poisson, sample_offspring, sample_zeta_prime, table, zeta_prime_law,
                                  zeta_prime_pmf)
from branchcoal.trees import sample_walk
from branchcoal.verify import binomial_z

FAMILIES = [linear_fractional(0.6, 0.4), linear_fractional(0.5, 0.5), poisson(1.0), poisson(1.7),
            geometric(0.4), binary(0.45), table({0: 0.3, 1: 0.2, 3: 0.5}), table({0: 0.25, 2: 0.75})]


def test_means():
    assert linear_fractional(0.5, 0.5).mean == pytest.approx(1.0)
    lf = linear_fractional(0.6, 0.4)
    assert lf.mean == pytest.approx(2 / 3)
    h = 1e-6
    assert (lf.pgf(1.0) - lf.pgf(1.0 - h)) / h == pytest.approx(2 / 3, rel=1e-5)
    assert table({0: 0.25, 2: 0.75}).mean == 1.5


@pytest.mark.parametrize("text, mean", [
    ("lf:a=0.5,b=0.5", 1.0), ("poisson:mu=1.0", 1.0), ("geometric:q=0.5", 1.0),
    ("binary:p=0.5", 1.0), ("table:0=0.25,2=0.75", 1.5),
])
def test_descriptors(text, mean):
    assert make_offspring(text).mean == pytest.approx(mean)


def test_table_csv(tmp_path):
    f = tmp_path / "law.csv"
    f.write_text("k,prob\n0,0.25\n2,0.75\n")
    d = make_offspring(f"table:@{f}")
    assert d.pmf(2) == 0.75 and d.pmf(1) == 0.0


@pytest.mark.parametrize("bad", [
    lambda: linear_fractional(1.0, 0.5), lambda: linear_fractional(0.5, -0.1), lambda: poisson(0.0),
    lambda: table({0: 0.5, 1: 0.4}), lambda: table({0: 1.2, 1: -0.2}), lambda: make_offspring("zipf:s=2"),
])
def test_invalid_parameters(bad):
    with pytest.raises(ParameterError):
        bad()


def test_pgf_values():
    assert pgf(linear_fractional(0.5, 0.5), 0.0) == pytest.approx(0.5)
    assert pgf(poisson(1.0), 0.0) == pytest.approx(math.exp(-1))
    lf = linear_fractional(0.6, 0.4)
    assert pgf_derivative(lf, 0.0) == pytest.approx(0.24)
    h = 1e-6
    assert (lf.pgf(h) - lf.pgf(0.0)) / h == pytest.approx(0.24, rel=1e-4)
    with pytest.raises(ParameterError):
        pgf(lf, 1.5)


@pytest.mark.parametrize("dist", FAMILIES, ids=lambda d: d.describe())
def test_pgf_shape(dist):
    s = np.linspace(0, 1, 101)
    f = np.array([dist.pgf(x) for x in s])
    assert f[-1] == pytest.approx(1.0, abs=1e-14)
    assert f[0] == pytest.approx(dist.pmf(0), abs=1e-14)
    assert np.all(np.diff(f) >= -1e-15)
    assert np.all(np.diff(f, 2) >= -1e-12)


def test_iterates_poisson():
    tab = iterate_pgf(poisson(1.0), 2)
    assert tab.extinction[1] == pytest.approx(math.exp(-1), abs=1e-12)
    assert tab.survival[1] == pytest.approx(0.632121, abs=1e-6)
    assert tab.extinction[2] == pytest.approx(0.531464, abs=1e-6)
    assert tab.derivative[2] == pytest.approx(math.exp(-1) * math.exp(math.exp(-1) - 1), rel=1e-14)
    # six-digit value 0.195515; the rounded 0.195519 quoted elsewhere is off in the last digits
    assert tab.derivative[2] == pytest.approx(0.195515, abs=1e-6)
    assert tab.derivative[2] == pytest.approx(0.195519, abs=1e-5)
    assert (tab.extinction[0], tab.survival[0], tab.derivative[0]) == (0.0, 1.0, 1.0)


def test_survival_matches_trees(rng):
    dist, n = poisson(1.0), 100_000
    tab = iterate_pgf(dist, 2)
    alive = np.zeros(3)
    for _ in range(n):
        w = sample_walk(dist, rng, max_height=2)
        hs = np.bincount(_heights(w), minlength=3)
        alive += hs[:3] > 0
    for k in (1, 2):
        assert binomial_z(alive[k], n, tab.survival[k]) < 3


def _heights(walk):
    from branchcoal.trees import heights
    return heights(walk).heights


def test_branch_length_tail():
    tab = iterate_pgf(poisson(1.0), 5)
    assert branch_length_tail(tab, 0) == 1.0
    assert branch_length_tail(tab, 1) == pytest.approx(0.58198, abs=1e-5)
    assert branch_length_tail(tab, 1) == pytest.approx(math.exp(-1) / (1 - math.exp(-1)), rel=1e-14)
    assert branch_length_tail(tab, 2) == pytest.approx(0.417288, abs=1e-6)
    assert branch_length_tail(tab, 2) == pytest.approx(0.41730, abs=1e-4)
    with pytest.raises(HorizonError):
        branch_length_tail(tab, 6)


def test_lf_branch_tail_values():
    assert lf_branch_tail(0.5, 0.5, 3) == pytest.approx(0.25)
    assert lf_branch_tail(0.6, 0.4, 1) == pytest.approx(0.6)
    assert lf_branch_tail(0.6, 0.4, math.inf) == pytest.approx(1 / 3)
    assert lf_branch_tail(0.6, 0.4, 200) == pytest.approx(1 / 3, abs=1e-12)


def test_lf_branch_tail_matches_table():
    grid = [0.0, 0.2, 0.4, 0.6, 0.8]
    for a in grid:
        for b in grid:
            tab = iterate_pgf(linear_fractional(a, b), 50)
            for n in range(51):
                assert lf_branch_tail(a, b, n) == pytest.approx(tab.tail[n], abs=1e-12)


def test_sample_offspring(rng):
    assert set(binary(0.5).sample(rng, 1000)) <= {0, 2}
    x = poisson(0.9).sample(rng, 1_000_000)
    assert abs(x.mean() - 0.9) < 3 * math.sqrt(0.9 / x.size)
    assert all(sample_offspring(table({1: 1.0}), rng) == 1 for _ in range(20))


@pytest.mark.parametrize("dist", FAMILIES, ids=lambda d: d.describe())
def test_product_identity(dist):
    tab = iterate_pgf(dist, 50)
    prod = 1.0
    for n in range(1, 51):
        law = zeta_prime_law(dist, tab, n)
        assert law.sum() == pytest.approx(1.0, abs=1e-12)
        prod *= law[0]
        assert prod == pytest.approx(tab.tail[n], abs=1e-10)
        assert 0.0 <= tab.tail[n] <= tab.tail[n - 1] + 1e-15


def test_product_identity_at_two():
    dist = poisson(1.0)
    tab = iterate_pgf(dist, 2)
    assert zeta_prime_pmf(dist, tab, 1, 0) * zeta_prime_pmf(dist, tab, 2, 0) == pytest.approx(0.41730, abs=1e-4)


def test_degenerate_zeta_prime(rng):
    d = table({1: 1.0})
    tab = iterate_pgf(d, 5)
    assert all(sample_zeta_prime(d, tab, n, rng) == 0 for n in range(1, 6))
    assert zeta_prime_pmf(d, tab, 3, 0) == pytest.approx(1.0)


def test_zeta_prime_geometric_for_lf(rng):
    a, b, n = 0.5, 0.5, 3
    d = linear_fractional(a, b)
    tab = iterate_pgf(d, n)
    draws = np.array([sample_zeta_prime(d, tab, n, rng) for _ in range(100_000)])
    p = float(tab.survival[n - 1])
    bn = b * p / (1 - b + b * p)
    geo = lambda k: (1 - bn) * bn**k
    stat, df = 0.0, -1
    for k in range(12):
        e = draws.size * geo(k)
        if e >= 10:
            stat += (np.sum(draws == k) - e) ** 2 / e
            df += 1
    assert stat < df + 3 * math.sqrt(2 * df)


@pytest.mark.parametrize("dist", [poisson(1.0), table({0: 0.3, 1: 0.2, 3: 0.5})], ids=str)
def test_rejection_and_pmf_agree(dist, rng):
    n = 2
    tab = iterate_pgf(dist, n)
    draws = np.array([sample_zeta_prime(dist, tab, n, rng) for _ in range(50_000)])
    law = zeta_prime_law(dist, tab, n)
    for k in range(4):
        assert binomial_z(np.sum(draws == k), draws.size, law[k]) < 3.5


def test_scan_sampler_first_level(rng):
    dist = poisson(1.0)
    tab = iterate_pgf(dist, 30)
    smp = ZetaPrimeSampler(dist, tab)
    n = 100_000
    first = np.array([smp.first_nonzero(1, 30, rng) or 31 for _ in range(n)])
    for k in (1, 2, 5, 10):
        assert binomial_z(np.sum(first > k), n, tab.tail[k]) < 3


@st.composite
def finite_laws(draw):
    w = draw(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=6).filter(lambda v: sum(v) > 0.05))
    w = np.array(w) / sum(w)
    return table(list(w))


@settings(max_examples=60, deadline=None)
@given(finite_laws(), st.integers(1, 40))
def test_table_invariants(dist, n):
    tab = iterate_pgf(dist, n)
    assert tab.extinction[0] == 0.0 and tab.derivative[0] == 1.0
    assert np.all(np.diff(tab.survival) <= 1e-15)
    t = tab.tail[1:]
    ok = np.isfinite(t)
    assert np.all((t[ok] >= -1e-15) & (t[ok] <= 1 + 1e-12))
