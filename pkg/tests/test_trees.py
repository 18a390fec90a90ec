import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from branchcoal.errors import HorizonError, ParameterError, RejectionBudgetExceeded
from branchcoal.offspring import binary, iterate_pgf, poisson, table, zeta_prime_law
from branchcoal.trees import (LukasiewiczWalk, PlanarTree, first_pair_samples, first_survivor_time,
                              forest_coalescent, great_aunt_functional, heights, sample_conditioned_walk,
                              sample_spine_pair, sample_spine_tree, sample_walk, spine_decomposition,
                              spine_pair_pmf, standing_ancestry, tree_from_newick, write_walk_csv)
from branchcoal.verify import binomial_z, chi2_threshold


def _walk(*vals):
    return LukasiewiczWalk(np.array(vals))


def test_walk_validation():
    with pytest.raises(ParameterError):
        _walk(1, 0)
    with pytest.raises(ParameterError):
        _walk(0, 2, 0)
    with pytest.raises(ParameterError):
        _walk(0, -1, 0)
    w = _walk(0, -1)
    assert w.killed and w.n_vertices == 1


def test_degenerate_walks(rng):
    w = sample_walk(table({0: 1.0}), rng)
    assert w.values.tolist() == [0, -1] and w.killed
    line = sample_walk(table({1: 1.0}), rng, max_steps=50)
    assert line.truncated and not line.killed and set(line.values.tolist()) == {0}
    with pytest.raises(ParameterError):
        sample_walk(poisson(1.0), rng, max_steps=0)


def test_walk_increment_mean(rng):
    vals = []
    total = 0
    while total < 1_000_000:
        w = sample_walk(poisson(0.9), rng)
        steps = w.offspring_counts() - 1
        vals.append(steps)
        total += steps.size
    x = np.concatenate(vals)
    assert abs(x.mean() + 0.1) < 3 * math.sqrt(0.9 / x.size)


def test_heights_small(four_vertex_tree):
    w = four_vertex_tree.walk()
    assert w.values.tolist()[:4] == [0, 1, 1, 0]
    assert heights(w).heights.tolist() == [0, 1, 2, 1]
    assert heights(_walk(0)).heights.tolist() == [0]
    assert first_survivor_time(heights(w), 2) == 2
    assert first_survivor_time(heights(_walk(0, -1)), 1) is None
    with pytest.raises(ParameterError):
        first_survivor_time(heights(w), 0)


def test_heights_match_explicit_depths(rng):
    for _ in range(100):
        w = sample_walk(poisson(1.0), rng, max_steps=20_000)
        if not w.killed:
            continue
        tree = PlanarTree.from_walk(w)
        assert heights(w).heights.tolist() == tree.depths
        assert np.array_equal(tree.walk().values, w.values)
        assert tree_from_newick(tree.newick()).counts == tree.counts
        assert PlanarTree.from_nested(tree.to_nested()).counts == tree.counts


def test_reaching_height_is_first_survivor(rng):
    for _ in range(300):
        w = sample_walk(poisson(1.1), rng, max_height=4)
        tree = PlanarTree.from_walk(w)
        for h in range(1, 5):
            assert (first_survivor_time(heights(w), h) is not None) == (tree.generation_size(h) > 0)


def test_survival_frequency(rng):
    tab = iterate_pgf(poisson(1.0), 3)
    n = 100_000
    hits = sum(first_survivor_time(heights(sample_walk(poisson(1.0), rng, max_height=3)), 3) is not None
               for _ in range(n))
    assert binomial_z(hits, n, tab.survival[3]) < 3


def test_newick_and_labels(four_vertex_tree):
    assert four_vertex_tree.newick() == "((),);"
    assert four_vertex_tree.labels() == [(), (1,), (1, 1), (2,)]
    assert tree_from_newick(";").counts == (0,)
    with pytest.raises(ParameterError):
        tree_from_newick("(a,)")
    with pytest.raises(ParameterError):
        PlanarTree((2, 0))


def test_conditioned_walk(rng):
    w = sample_conditioned_walk(table({2: 1.0}), 2, rng, max_tries=1)
    assert first_survivor_time(heights(w), 2) is not None
    for cut in (True, False):
        for _ in range(50):
            w = sample_conditioned_walk(poisson(1.0), 3, rng, cut=cut)
            s = first_survivor_time(heights(w), 3)
            assert s is not None and s < w.n_vertices
    with pytest.raises(RejectionBudgetExceeded):
        sample_conditioned_walk(poisson(0.2), 12, rng, max_tries=5)


def test_acceptance_rate(rng):
    dist = poisson(1.0)
    tab = iterate_pgf(dist, 4)
    n = 50_000
    acc = sum(first_survivor_time(heights(sample_walk(dist, rng, max_height=4)), 4) is not None
              for _ in range(n))
    assert binomial_z(acc, n, tab.survival[4]) < 3


def test_spine_small(four_vertex_tree):
    sp = spine_decomposition(four_vertex_tree.walk(), 2)
    assert sp.record_times == (2, 1, 0)
    assert sp.pairs == ((0, 0), (0, 1))
    assert great_aunt_functional(four_vertex_tree.walk(), 2, {2: 1}) == 1
    assert great_aunt_functional(four_vertex_tree.walk(), 2, lambda k: 0) == 0
    with pytest.raises(ParameterError):
        great_aunt_functional(four_vertex_tree.walk(), 2, {3: 1.0})
    with pytest.raises(HorizonError):
        spine_decomposition(four_vertex_tree.walk(), 3)


def test_spine_sibling_tree(sibling_tree):
    sp = spine_decomposition(sibling_tree.walk(), 4)
    assert sp.pairs == ((0, 2), (1, 1), (1, 2), (2, 1))
    assert sibling_tree.labels()[sp.sigma] == (3, 2, 2, 1)
    assert len(sibling_tree.children()[0]) == 4


def test_spine_invariants(rng):
    dist = poisson(1.2)
    for _ in range(1000):
        h = int(rng.integers(1, 6))
        w = sample_conditioned_walk(dist, h, rng)
        sp = spine_decomposition(w, h)
        assert sp.alpha[0] == 0
        assert sp.record_times[1] == sp.record_times[0] - 1
        jumps = np.diff(w.values)
        for k in range(1, h + 1):
            assert sp.jumps[k - 1] == jumps[sp.record_times[k]]
        f = {k: int(rng.integers(0, 5)) for k in range(1, h + 1)}
        assert great_aunt_functional(w, h, f) == sum(r * f[k] for k, r in zip(range(1, h + 1), sp.rho))


def test_offshoot_pgf_from_younger_siblings(rng):
    """Generating function of the next-level offshoot count versus younger sibling counts."""
    dist, h = poisson(1.0), 3
    tab = iterate_pgf(dist, h)
    rho = np.array([spine_decomposition(sample_conditioned_walk(dist, h, rng), h).rho
                    for _ in range(20_000)])
    for n in range(1, h + 1):
        law = zeta_prime_law(dist, tab, n)
        p = float(tab.survival[n - 1])
        for s in (0.25, 0.5, 0.75):
            exact = float(np.sum(law * s ** np.arange(law.size)))
            x = (1 - p + p * s) ** rho[:, n - 1]
            assert abs(x.mean() - exact) < 3 * x.std() / math.sqrt(x.size)


def test_spine_pair_pmf_normalized():
    dist = poisson(1.3)
    tab = iterate_pgf(dist, 5)
    for n in range(1, 6):
        tot = sum(spine_pair_pmf(dist, tab, n, j, k) for j in range(60) for k in range(60))
        assert tot == pytest.approx(1.0, abs=1e-10)
        assert spine_pair_pmf(dist, tab, n, -1, 0) == 0.0
    alt = sum(spine_pair_pmf(dist, tab, 3, j, k, form="alternative") for j in range(60) for k in range(60))
    # the alternative form is also a probability law, just a different one
    assert alt == pytest.approx(1.0, abs=1e-10)
    assert spine_pair_pmf(dist, tab, 3, 1, 0, form="alternative") == 0.0
    assert spine_pair_pmf(dist, tab, 3, 1, 0) > 0.01
    with pytest.raises(ParameterError):
        spine_pair_pmf(dist, tab, 2, 0, 0, form="other")


def test_spine_pair_sampler(rng):
    dist = table({0: 0.3, 1: 0.2, 3: 0.5})
    tab = iterate_pgf(dist, 4)
    n_draw = 40_000
    for n in (1, 3):
        draws = [sample_spine_pair(dist, tab, n, rng) for _ in range(n_draw)]
        for j in range(3):
            for k in range(3):
                c = sum(1 for d in draws if d == (j, k))
                p = spine_pair_pmf(dist, tab, n, j, k)
                if p > 0:
                    assert binomial_z(c, n_draw, p) < 4
                else:
                    assert c == 0
    h1 = [sample_spine_pair(dist, tab, 1, rng)[0] for _ in range(200)]
    assert set(h1) == {0}


def test_spine_tree_matches_rejection(rng):
    dist, h, n = poisson(1.0), 3, 10_000
    tab = iterate_pgf(dist, h)
    a = [sample_spine_tree(dist, tab, h, rng).generation_size(h) for _ in range(n)]
    b = [PlanarTree.from_walk(sample_conditioned_walk(dist, h, rng)).generation_size(h) for _ in range(n)]
    stat, df = _two_sample(a, b)
    assert stat < chi2_threshold(df)


def test_spine_tree_pairs_match_rejection(rng):
    dist, h, n = poisson(1.0), 3, 10_000
    tab = iterate_pgf(dist, h)
    spine = [spine_decomposition(sample_spine_tree(dist, tab, h, rng).walk(), h).pairs for _ in range(n)]
    rej = [spine_decomposition(sample_conditioned_walk(dist, h, rng), h).pairs for _ in range(n)]
    for lvl in range(h):
        stat, df = _two_sample([min(p[lvl][0], 3) * 4 + min(p[lvl][1], 3) for p in spine],
                               [min(p[lvl][0], 3) * 4 + min(p[lvl][1], 3) for p in rej])
        assert stat < chi2_threshold(df)


def _two_sample(a, b):
    from branchcoal.verify import two_sample_chi2
    m = max(max(a), max(b)) + 1
    return two_sample_chi2(np.bincount(a, minlength=m), np.bincount(b, minlength=m))


def test_spine_tree_deep_subcritical(rng):
    dist = poisson(0.5)
    tab = iterate_pgf(dist, 25)
    tree = sample_spine_tree(dist, tab, 25, rng)
    assert tree.generation_size(25) >= 1
    w = sample_conditioned_walk(dist, 25, rng, table=tab)
    assert first_survivor_time(heights(w), 25) is not None


def test_binary_forest_pattern(rng):
    fc = forest_coalescent(table({2: 1.0}), 1, 9, rng)
    assert fc.values.tolist() == [1] * 8
    assert fc.censored.tolist() == [False, True] * 4
    assert fc.extended()[:2] == [1, math.inf]
    with pytest.raises(ParameterError):
        forest_coalescent(binary(0.5), 1, 1, rng)


def test_forest_structure(rng):
    fc = forest_coalescent(poisson(1.1), 4, 300, rng)
    assert fc.values.size == 299
    assert np.all((fc.values >= 1) & (fc.values <= 4))
    assert np.all(fc.values[fc.censored] == 4)
    assert fc.censored.sum() == fc.n_trees - (0 if fc.censored[-1] else 1)


def test_forest_tail(rng):
    dist = poisson(1.0)
    tab = iterate_pgf(dist, 3)
    n = 100_000
    a1 = first_pair_samples(dist, 3, n, rng, n_values=1)[:, 0]
    for k, ref in ((1, 0.58198), (2, 0.41730)):
        assert ref == pytest.approx(tab.tail[k], abs=1e-4)
        assert binomial_z(np.sum(a1 > k), n, tab.tail[k]) < 3


def test_standing_ancestry_reference():
    from branchcoal.verify import REFERENCE_A, reference_genealogy
    tree = reference_genealogy()
    A, D = standing_ancestry(tree, 6)
    assert tree.generation_size(6) == 10
    assert tuple(A[:9]) == REFERENCE_A and A[9] == math.inf
    assert D[0] == {1: 2, 2: 1, 3: 0, 4: 0, 5: 0, 6: 1}


def test_walk_csv(tmp_path, four_vertex_tree):
    path = tmp_path / "walk.csv"
    write_walk_csv(four_vertex_tree.walk(), path)
    rows = path.read_text().splitlines()
    assert rows[0] == "visit,W,H"
    assert rows[1:4] == ["0,0,0", "1,1,1", "2,1,2"]
    assert rows[-1] == "4,-1,"


@st.composite
def nested_trees(draw, depth=4):
    if depth == 0:
        return []
    n = draw(st.integers(0, 3))
    return [draw(nested_trees(depth=depth - 1)) for _ in range(n)]


@settings(max_examples=200, deadline=None)
@given(nested_trees())
def test_round_trip(nested):
    tree = PlanarTree.from_nested(nested)
    assert tree.to_nested() == nested
    assert PlanarTree.from_walk(tree.walk()).counts == tree.counts
    assert tree_from_newick(tree.newick()).counts == tree.counts
    assert heights(tree.walk()).heights.tolist() == tree.depths


@settings(max_examples=200, deadline=None)
@given(nested_trees(), st.integers(1, 4))
def test_functional_identity(nested, h):
    tree = PlanarTree.from_nested(nested)
    w = tree.walk()
    if first_survivor_time(heights(w), h) is None:
        return
    sp = spine_decomposition(w, h)
    f = {k: k * k for k in range(1, h + 1)}
    assert great_aunt_functional(w, h, f) == sum(r * f[k] for k, r in zip(range(1, h + 1), sp.rho))
    A, D = standing_ancestry(tree, h)
    assert len(A) == tree.generation_size(h)
