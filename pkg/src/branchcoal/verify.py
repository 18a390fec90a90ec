"""Executable cross-checks pairing every sampler with an exact oracle.

Each check receives its own seeded generator, derived from the suite seed
and the check name, so reports are reproducible and independent of which
other checks run alongside.
"""
from __future__ import annotations

import json
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from . import applications as apps
from . import csb
from .discrete import b_from_d, d_chain, residual_multiplicities
from .measure import INF, PointMassMeasure
from .offspring import (binary, iterate_pgf, linear_fractional, make_offspring, poisson, table,
                        zeta_prime_law)
from .trees import (PlanarTree, first_pair_samples, great_aunt_functional, heights,
                    sample_conditioned_walk, sample_spine_tree, spine_decomposition,
                    spine_pair_pmf, standing_ancestry)

__all__ = [
    "CheckResult", "CheckSpec", "CheckOutcome", "CheckReport", "run_suite", "acceptance_specs",
    "chi2_threshold", "two_sample_chi2", "reference_genealogy", "REFERENCE_A", "REFERENCE_B",
]


# -- plumbing ------------------------------------------------------------------------------

@dataclass(frozen=True)
class CheckResult:
    statistic: float
    threshold: float
    passed: bool
    details: dict = field(default_factory=dict)


@dataclass(frozen=True)
class CheckSpec:
    """One named check; ``run`` maps a generator to a :class:`CheckResult`."""

    name: str
    run: Callable[[np.random.Generator], CheckResult]
    kind: str = "3sigma"
    suite: str = "misc"
    budget_seconds: float = math.inf
    description: str = ""


@dataclass(frozen=True)
class CheckOutcome:
    name: str
    statistic: float
    threshold: float
    passed: bool
    seconds: float
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (f"{flag}  {self.name}: statistic={self.statistic:.6g} threshold={self.threshold:.6g} "
                f"({self.seconds:.2f}s)")


@dataclass(frozen=True)
class CheckReport:
    seed: int
    outcomes: tuple[CheckOutcome, ...]

    @property
    def passed(self) -> bool:
        return all(o.passed for o in self.outcomes)

    def to_json(self) -> str:
        rows = [{"name": o.name, "statistic": _jsonable(o.statistic), "threshold": _jsonable(o.threshold),
                 "pass": bool(o.passed), "seconds": round(o.seconds, 3)} for o in self.outcomes]
        return json.dumps({"seed": self.seed, "checks": rows}, indent=2)


def _jsonable(x):
    x = float(x)
    return x if math.isfinite(x) else str(x)


def check_seed(seed: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])


def _run_one(spec: CheckSpec, seed: int) -> CheckOutcome:
    rng = np.random.default_rng(check_seed(seed, spec.name))
    t0 = time.perf_counter()
    res = spec.run(rng)
    dt = time.perf_counter() - t0
    return CheckOutcome(spec.name, float(res.statistic), float(res.threshold), bool(res.passed), dt,
                        res.details)


def run_suite(specs: Sequence[CheckSpec], seed: int = 0, workers: int = 1) -> CheckReport:
    """Run ``specs`` in order (or in parallel with ``workers > 1``) and collect the outcomes."""
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValueError("check names must be unique")
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            outs = list(ex.map(_run_one, specs, [seed] * len(specs)))
    else:
        outs = [_run_one(s, seed) for s in specs]
    return CheckReport(seed, tuple(outs))


# -- statistics helpers ------------------------------------------------------------------------

def chi2_threshold(df: int) -> float:
    """Normal-approximation 3 sigma bound ``df + 3 sqrt(2 df)``."""
    return df + 3.0 * math.sqrt(2.0 * df)


def two_sample_chi2(c1: np.ndarray, c2: np.ndarray, min_count: float = 10.0) -> tuple[float, int]:
    """Homogeneity statistic over matched cells; sparse cells are pooled into one."""
    c1, c2 = np.asarray(c1, float).ravel(), np.asarray(c2, float).ravel()
    tot = c1 + c2
    dense = tot >= min_count
    a = np.append(c1[dense], c1[~dense].sum())
    b = np.append(c2[dense], c2[~dense].sum())
    keep = (a + b) > 0
    a, b = a[keep], b[keep]
    n1, n2 = a.sum(), b.sum()
    e1 = (a + b) * n1 / (n1 + n2)
    e2 = (a + b) * n2 / (n1 + n2)
    stat = float(np.sum((a - e1) ** 2 / e1 + (b - e2) ** 2 / e2))
    return stat, int(a.size - 1)


def binomial_z(count: float, n: int, p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0 if count == n * p else math.inf
    return abs(count - n * p) / math.sqrt(n * p * (1 - p))


def ks_one_sample(x: np.ndarray, cdf: Callable[[np.ndarray], np.ndarray], n_total: Optional[int] = None) -> float:
    """Kolmogorov distance; ``x`` holds the finite draws and ``n_total`` counts all of them."""
    xs = np.sort(np.asarray(x, float))
    n = n_total if n_total is not None else xs.size
    F = cdf(xs)
    hi = np.arange(1, xs.size + 1) / n - F
    lo = F - np.arange(0, xs.size) / n
    return float(max(hi.max(initial=0.0), lo.max(initial=0.0)))


# -- worked example ------------------------------------------------------------------------------

REFERENCE_A = (1, 1, 2, 1, 6, 1, 3, 1, 3)
REFERENCE_B = ({1: 2}, {1: 1}, {2: 1}, {1: 1}, {6: 1}, {1: 1}, {3: 2}, {1: 1, 3: 1}, {3: 1})


def reference_genealogy() -> PlanarTree:
    """Ten standing individuals descending from one ancestor six generations back."""
    leaves = lambda k: [[] for _ in range(k)]
    left = [[[[leaves(3), leaves(2)]]]]
    right = [[[[leaves(2)], [leaves(2)], [leaves(1)]]]]
    return PlanarTree.from_nested([left, right])


# -- acceptance checks ---------------------------------------------------------------------------

def _ac1(rng) -> CheckResult:
    A, D = standing_ancestry(reference_genealogy(), 6)
    expect_B = [PointMassMeasure.from_mapping(m) for m in REFERENCE_B]
    via_d = b_from_d([(A[i], D[i][A[i]]) for i in range(9)])
    res = residual_multiplicities(A)
    via_r = [res.measure(k) for k in range(1, 10)]
    bad = int(tuple(A[:9]) != REFERENCE_A) + int(A[9] != INF)
    bad += sum(x != e for x, e in zip(via_d, expect_B)) + sum(x != e for x, e in zip(via_r, expect_B))
    return CheckResult(bad, 0, bad == 0, {"A": [str(a) for a in A], "B": [str(b) for b in via_d]})


def _ac2(rng) -> CheckResult:
    dist = poisson(1.0)
    tab = iterate_pgf(dist, 3)
    n = 100_000
    a1 = first_pair_samples(dist, 3, n, rng, n_values=1)[:, 0]
    zs, det = [], {}
    for k in (1, 2):
        p = float(tab.tail[k])
        emp = float(np.mean(a1 > k))
        zs.append(binomial_z(emp * n, n, p))
        det[f"P(A>{k})"] = {"empirical": emp, "exact": p}
    return CheckResult(max(zs), 3.0, max(zs) <= 3.0, det)


def _ac3(rng) -> CheckResult:
    fams = [linear_fractional(0.6, 0.4), poisson(1.0), binary(0.4), table({0: 0.3, 1: 0.2, 3: 0.5})]
    worst = 0.0
    for dist in fams:
        tab = iterate_pgf(dist, 50)
        prod = 1.0
        for n in range(1, 51):
            prod *= float(zeta_prime_law(dist, tab, n)[0])
            worst = max(worst, abs(prod - float(tab.tail[n])))
    return CheckResult(worst, 1e-10, worst <= 1e-10)


def _ac4(rng) -> CheckResult:
    laws = [poisson(1.0), linear_fractional(0.5, 0.5), table({0: 0.3, 1: 0.2, 3: 0.5}), binary(0.45)]
    tabs = [iterate_pgf(d, 12) for d in laws]
    bad = compared = 0
    for r in range(1000):
        i = r % len(laws)
        traj = d_chain(laws[i], tabs[i], 40, rng, horizon=12)
        bs = b_from_d(traj)
        res = residual_multiplicities(traj.A)
        for k in range(1, len(bs) + 1):
            m = res.measure(k)
            if m is None:
                continue
            compared += 1
            bad += m != bs[k - 1]
    return CheckResult(bad, 0, bad == 0 and compared > 10_000, {"compared": compared})


def _ac5(rng) -> CheckResult:
    dist = poisson(1.0)
    n = 100_000
    tree = np.minimum(first_pair_samples(dist, 6, n, rng, n_values=2), 6)
    tab = iterate_pgf(dist, 6)
    chain = np.empty((n, 2), dtype=np.int64)
    for r in range(n):
        A = d_chain(dist, tab, 2, rng, horizon=6).A
        chain[r] = [min(a, 6) for a in A]
    cells = lambda m: np.bincount((m[:, 0] - 1) * 6 + (m[:, 1] - 1), minlength=36)
    stat, df = two_sample_chi2(cells(tree), cells(chain))
    thr = chi2_threshold(df)
    return CheckResult(stat, thr, stat <= thr, {"df": df})


def _ac6(rng) -> CheckResult:
    dist = poisson(1.2)
    h = 5
    bad = 0
    for _ in range(1000):
        walk = sample_conditioned_walk(dist, h, rng, cut=False)
        f = {k: int(v) for k, v in zip(range(1, h + 1), rng.integers(-5, 6, h))}
        sd = spine_decomposition(walk, h)
        rhs = sum(r * f[k] for k, r in zip(range(1, h + 1), sd.rho))
        bad += great_aunt_functional(walk, h, f) != rhs
    return CheckResult(bad, 0, bad == 0)


def _ac7(rng) -> CheckResult:
    dist = poisson(1.0)
    h, level, n = 4, 2, 100_000
    tab = iterate_pgf(dist, h)
    counts: dict = {}
    z_rej = np.empty(n // 5, dtype=np.int64)
    for r in range(n):
        walk = sample_conditioned_walk(dist, h, rng, cut=True)
        sd = spine_decomposition(walk, h)
        key = (sd.alpha[level - 1], sd.rho[level - 1])
        counts[key] = counts.get(key, 0) + 1
        if r < z_rej.size:
            z_rej[r] = int(np.sum(heights(walk).heights == h))
    cells = [(j, k) for j in range(12) for k in range(12)]

    def worst_z(form):
        zs = []
        for j, k in cells:
            p = spine_pair_pmf(dist, tab, level, j, k, form)
            if n * p >= 5 or counts.get((j, k), 0) >= 5:
                zs.append(binomial_z(counts.get((j, k), 0), n, min(p, 1.0)))
        return max(zs)

    z_norm = worst_z("normalized")
    z_alt = worst_z("alternative")
    alt_mass = sum(spine_pair_pmf(dist, tab, level, j, k, "alternative") for j, k in cells)
    z_spine = np.array([int(sample_spine_tree(dist, tab, h, rng).generation_size(h)) for _ in range(z_rej.size)])
    m = int(max(z_rej.max(), z_spine.max())) + 1
    stat, df = two_sample_chi2(np.bincount(z_rej, minlength=m), np.bincount(z_spine, minlength=m))
    thr = chi2_threshold(df)
    ok = z_norm <= 3.0 and z_alt > 3.0 and stat <= thr
    return CheckResult(z_norm, 3.0, ok, {"alternative_form_max_z": z_alt, "alternative_form_mass": alt_mass,
                                         "spine_vs_rejection_chi2": stat, "chi2_threshold": thr})


_MECHS = {
    "lambda^2": lambda: csb.BranchingMechanism(0.0, 1.0),
    "lambda^1.5": lambda: csb.BranchingMechanism(levy=csb.StableLevy(1.5, 1.0)),
    "lambda^2-lambda": lambda: csb.BranchingMechanism(-1.0, 1.0),
    "lambda^2+lambda": lambda: csb.BranchingMechanism(1.0, 1.0),
}


def _ac8(rng) -> CheckResult:
    xs = np.geomspace(0.01, 10.0, 50)
    worst = 0.0
    for mk in _MECHS.values():
        m = mk()
        for x in xs:
            worst = max(worst, abs(m.v(float(x), numeric=True) / m.v(float(x)) - 1.0))
    return CheckResult(worst, 1e-8, worst <= 1e-8)


def _ac9(rng) -> CheckResult:
    eps, x = 0.1, 0.5
    M = {k: f() for k, f in _MECHS.items()}
    exact = {
        "lambda^2": eps / x,
        "lambda^1.5": eps / x,
        "lambda^2-lambda": math.expm1(eps) / math.expm1(x),
    }
    errs = {k: abs(csb.a_tail(M[k], eps, x, numeric=True) - v) for k, v in exact.items()}
    errs["atom lambda^2+lambda"] = abs(csb.atom_at_infinity(M["lambda^2+lambda"], eps, numeric=True)
                                       + math.expm1(-eps))
    ks = {}
    for k, m in M.items():
        A, _ = csb.sample_a_n_array(m, eps, 100_000, rng)
        fin = A[np.isfinite(A)]
        ks[k] = ks_one_sample(fin, lambda t: 1.0 - np.array([csb.a_tail(m, eps, float(s)) for s in t]), A.size)
    worst_err, worst_ks = max(errs.values()), max(ks.values())
    return CheckResult(worst_ks, 0.01, worst_err <= 1e-6 and worst_ks <= 0.01,
                       {"formula_errors": errs, "ks": ks})


def _ac10(rng) -> CheckResult:
    eps, x = 0.1, 0.5
    est, se = csb.tail_via_rho0(_MECHS["lambda^1.5"](), eps, x, 10_000, rng)
    z = abs(est - 0.2) / se
    f1, s1 = csb.tail_via_rho0(_MECHS["lambda^2"](), eps, x, 10, rng)
    f2, _ = csb.tail_via_rho0(_MECHS["lambda^2"](), eps, x, 10, rng)
    feller_ok = s1 == 0.0 and f1 == f2 and abs(f1 - 0.2) <= 1e-12
    return CheckResult(z, 3.0, z <= 3.0 and feller_ok, {"stable": [est, se], "feller": f1})


def _ac11(rng) -> CheckResult:
    rows = csb.rescaling_experiment(csb.lf_critical_scheme(0.5), 0.1, [10, 100, 1000], 0, rng)
    d = [r["sup_distance"] for r in rows]
    mc = csb.rescaling_experiment(csb.lf_critical_scheme(0.5), 0.1, [1000], 10_000, rng)[0]
    ok = d[0] > d[1] > d[2] and d[2] < 0.01 and mc["ks_one_sample"] <= 0.02
    return CheckResult(mc["ks_one_sample"], 0.02, ok, {"sup_distance": d, **mc})


def _ac12(rng) -> CheckResult:
    dist = linear_fractional(0.6, 0.4)
    y = apps.yaglom_distribution(dist)
    tab, H = apps.uv_horizon(dist)
    smp = apps.ClusterSampler(dist, tab, H)
    n = 100_000
    U, V = smp.sample_many(n, rng)
    zs = {"P(V<=0)": binomial_z(np.sum(V <= 0), n, 1 / 3), "P(V<=1)": binomial_z(np.sum(V <= 1), n, 5 / 9)}
    geo = lambda k: (1 / 3) * (2 / 3) ** (k - 1)
    cnt = np.bincount(U)
    for k in range(1, cnt.size):
        if n * geo(k) >= 5:
            zs[f"U={k}"] = binomial_z(cnt[k], n, geo(k))
    vals = 0.5 ** U.astype(float)
    zs["disintegration s=0.5"] = abs(vals.mean() - 0.25) / (vals.std(ddof=1) / math.sqrt(n))
    worst = max(zs.values())
    return CheckResult(worst, 3.0, worst <= 3.0, {"z": zs, "yaglom_pgf_0.5": y.pgf(0.5)})


_ACCEPTANCE = [
    ("AC1 worked genealogy", _ac1, "exact-equality", "discrete", 1),
    ("AC2 branch length tail", _ac2, "3sigma", "discrete", 30),
    ("AC3 product identity", _ac3, "sup-distance", "discrete", 1),
    ("AC4 residual multiplicities", _ac4, "exact-equality", "discrete", 10),
    ("AC5 chain vs trees", _ac5, "chi2", "discrete", 60),
    ("AC6 great-aunt functional", _ac6, "exact-equality", "discrete", 10),
    ("AC7 spine pair law", _ac7, "3sigma", "discrete", 120),
    ("AC8 v accuracy", _ac8, "sup-distance", "csb", 5),
    ("AC9 law of A and N", _ac9, "sup-distance", "csb", 60),
    ("AC10 great-aunt tail", _ac10, "3sigma", "csb", 60),
    ("AC11 rescaled coalescent", _ac11, "sup-distance", "csb", 300),
    ("AC12 cluster disintegration", _ac12, "3sigma", "apps", 60),
]


def acceptance_specs(suite: str = "all") -> list[CheckSpec]:
    if suite not in ("all", "discrete", "csb", "apps"):
        raise ValueError(f"unknown suite {suite!r}")
    return [CheckSpec(name, fn, kind, s, budget) for name, fn, kind, s, budget in _ACCEPTANCE
            if suite in ("all", s)]
