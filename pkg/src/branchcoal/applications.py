"""Linear-fractional independence and the disintegration of the Yaglom limit."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .discrete import _advance, _resolve_lf_tail, _scan
from .errors import HorizonError, NumericalError, ParameterError
from .measure import INF
from .offspring import (IteratedPgfTable, OffspringDistribution, ZetaPrimeSampler,
                        generation_law_given_survival, iterate_pgf, lf_branch_tail,
                        linear_fractional, series_coefficients)

__all__ = [
    "YaglomTable", "ClusterSample", "lf_iid_check", "yaglom_distribution", "v_law",
    "uv_horizon", "ClusterSampler", "sample_UV", "cluster_pgf_given_v",
    "disintegration_rhs", "disintegration_check", "first_infinite_index",
]


# -- i.i.d. branch lengths ----------------------------------------------------------------

def lf_iid_check(a: float, b: float, n_pairs: int, rng: np.random.Generator,
                 horizon: int = 100000, cap: int = 6) -> dict:
    """Compare D-chain branch lengths for ``linear_fractional(a, b)`` with the i.i.d. prediction.

    Draws ``2 n_pairs`` consecutive branch lengths from one chain and splits
    them into disjoint pairs.  Reports the largest standardized deviation of
    the empirical tail from the closed form at ``n = 0..cap-1`` (and at
    ``inf``), and a chi-square independence test on ``(A ^ cap, A' ^ cap)``.
    """
    dist = linear_fractional(a, b)
    tab = iterate_pgf(dist, horizon)
    smp = ZetaPrimeSampler(dist, tab)
    k = 2 * n_pairs
    A = np.empty(k)
    known, resolved = {}, 0
    for i in range(k):
        a_i, n_i, _ = _scan(known, resolved, horizon, smp, rng)
        if a_i != INF:
            known[a_i] = n_i
        A[i] = a_i
        known = _advance(known, resolved, horizon, a_i, n_i)
    levels = list(range(1, cap))
    worst, rows = 0.0, []
    for n in levels + [INF]:
        exact = lf_branch_tail(a, b, n) if n != INF else lf_branch_tail(a, b, horizon)
        emp = float(np.mean(A > n)) if n != INF else float(np.mean(A == INF))
        sd = math.sqrt(max(exact * (1 - exact), 1e-300) / k)
        z = abs(emp - exact) / sd if exact not in (0.0, 1.0) else (0.0 if emp == exact else math.inf)
        worst = max(worst, z)
        rows.append({"n": n, "empirical": emp, "exact": exact, "z": z})
    cells = np.minimum(A, cap).astype(int)
    x, y = cells[0::2], cells[1::2]
    vals = np.unique(cells)
    table = np.array([[np.sum((x == u) & (y == w)) for w in vals] for u in vals])
    keep = table.sum(1) > 0
    table = table[keep][:, table.sum(0) > 0]
    if min(table.shape) > 1:
        chi2, pval, dof, _ = stats.chi2_contingency(table, correction=False)
    else:
        chi2, pval, dof = 0.0, 1.0, 0
    return {"tail_rows": rows, "max_z": worst, "sup_distance": max(abs(r["empirical"] - r["exact"]) for r in rows),
            "chi2": float(chi2), "dof": int(dof), "p_value": float(pval), "n_pairs": n_pairs}


def first_infinite_index(dist: OffspringDistribution, table: IteratedPgfTable,
                         rng: np.random.Generator, max_steps: int = 1_000_000) -> int:
    """``min{i : A_i = inf}`` along the D-chain.

    Censored scans are completed with the closed-form tail, so only
    linear-fractional laws are accepted.  A finite level beyond the horizon
    restarts the state from fresh levels.
    """
    if not dist.is_lf:
        raise ParameterError("exact resolution of infinite branch lengths needs a linear-fractional law")
    H = table.n_max
    smp = ZetaPrimeSampler(dist, table)
    known, resolved = {}, 0
    for i in range(1, max_steps + 1):
        A, N, _ = _scan(known, resolved, H, smp, rng)
        if A == INF:
            A, N = _resolve_lf_tail(dist, H, rng)
            if A == INF:
                return i
            known = {}
            continue
        known[A] = N
        known = _advance(known, resolved, H, A, N)
    raise NumericalError(f"no infinite branch length within {max_steps} steps")


# -- Yaglom limit ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class YaglomTable:
    """Quasi-stationary law ``alpha[k]`` for ``k >= 1`` (``alpha[0] = 0``)."""

    alpha: np.ndarray
    truncation_mass: float
    iterations: int
    change: float
    residual: float = math.nan

    @property
    def k_max(self) -> int:
        return self.alpha.size - 1

    @property
    def alpha_1(self) -> float:
        return float(self.alpha[1])

    def pmf(self, k: int) -> float:
        return float(self.alpha[k]) if 0 <= k <= self.k_max else 0.0

    def pgf(self, s: float) -> float:
        """``a(s) = sum_k alpha_k s^k``."""
        if not 0.0 <= s <= 1.0:
            raise ParameterError("s must lie in [0, 1]")
        return float(np.polynomial.polynomial.polyval(s, self.alpha))


def _quasi_stationarity_residual(dist: OffspringDistribution, alpha: np.ndarray) -> float:
    """``max_j |P_alpha(Z_1 = j | Z_1 != 0) - alpha_j|`` for ``j <= K/2``."""
    K = alpha.size - 1
    q = float(dist.pgf(0.0))

    def law(s):
        y = 1.0 - dist.complement(1.0 - s)
        return np.polynomial.polynomial.polyval(y, alpha)

    coef = np.real(series_coefficients(law, k_init=max(64, 2 * K)))
    norm = 1.0 - float(np.polynomial.polynomial.polyval(q, alpha))
    pz = coef[1:] / norm
    j = min(K // 2, pz.size)
    return float(np.max(np.abs(pz[:j] - alpha[1:j + 1])))


def yaglom_distribution(dist: OffspringDistribution, tol: float = 1e-12, k_init: int = 64,
                        k_max: int = 1 << 20, max_iter: int = 100000) -> YaglomTable:
    """Limit of ``P(Z_n = . | Z_n >= 1)`` for a strictly subcritical law.

    The conditional law is iterated on ``K`` roots of unity until the total
    variation change between generations drops below ``tol``; ``K`` doubles
    until the mass beyond the table is below ``tol / 10``.
    """
    if not dist.mean < 1.0:
        raise ParameterError("the Yaglom limit needs a strictly subcritical law")
    K = k_init
    while K <= k_max:
        s = np.exp(2j * np.pi * np.arange(K) / K)
        x = 1.0 - s
        p = 1.0
        prev = None
        change = math.inf
        for it in range(1, max_iter + 1):
            x = dist.complement(x)
            p = float(dist.complement(p))
            if p < 1e-280:
                raise NumericalError("survival probability underflows before convergence")
            coef = -np.real(np.fft.fft(x / p)) / K
            law = coef[: K // 2].copy()
            law[0] = 0.0
            if prev is not None:
                change = 0.5 * float(np.abs(law - prev).sum())
                if change < tol:
                    break
            prev = law
        else:
            raise NumericalError(f"no convergence within {max_iter} generations")
        alias = float(np.max(np.abs(coef[K // 2:])))
        lost = abs(1.0 - law.sum())
        if alias < tol / 10 and lost < tol / 10:
            law = np.clip(law, 0.0, None)
            last = int(np.nonzero(law > 0)[0].max()) if np.any(law > 0) else 1
            alpha = law[: last + 1]
            res = _quasi_stationarity_residual(dist, alpha)
            return YaglomTable(alpha, float(max(lost, alias)), it, change, res)
        K *= 2
    raise NumericalError("support truncation did not converge")


def v_law(dist: OffspringDistribution, table: IteratedPgfTable, yaglom: YaglomTable, n: int) -> float:
    """``P(V <= n) = alpha_1 p_n / f'_n(0)``."""
    if n < 0:
        raise ParameterError("n must be nonnegative")
    if n > table.n_max:
        raise HorizonError(f"n = {n} exceeds the table horizon {table.n_max}")
    return min(1.0, yaglom.alpha_1 * math.exp(table.log_survival[n] - table.log_derivative[n]))


# -- cluster of the most recent common ancestor ----------------------------------------------

@dataclass(frozen=True)
class ClusterSample:
    U: int
    V: int

    def __post_init__(self) -> None:
        if self.U < 1 or self.V < 0 or (self.V == 0) != (self.U == 1):
            raise ParameterError("a cluster has U = 1 exactly when V = 0")


def _nonzero_probs(table: IteratedPgfTable) -> np.ndarray:
    """``P(zeta'_n != 0)`` for ``n = 1..n_max``."""
    return -np.expm1(table.log_zeta_zero[1:])


def _beyond_mass(table: IteratedPgfTable, horizon: int) -> float:
    """Mass ``sum_{n > horizon} P(zeta'_n != 0)``, extrapolated geometrically past the table."""
    pr = _nonzero_probs(table)
    inside = float(pr[horizon:].sum())
    if pr.size < 2 or pr[-2] <= 0:
        return inside
    r = pr[-1] / pr[-2]
    if r >= 1:
        return math.inf
    return inside + float(pr[-1] * r / (1 - r))


def uv_horizon(dist: OffspringDistribution, mass: float = 1e-6, n_start: int = 64):
    """Table and horizon with ``sum_{n > horizon} P(zeta'_n != 0) < mass``."""
    if not dist.mean < 1.0:
        raise ParameterError("cluster sampling needs a strictly subcritical law")
    n = n_start
    while True:
        tab = iterate_pgf(dist, n)
        pr = _nonzero_probs(tab)
        tail = np.array([_beyond_mass(tab, h) for h in range(n)])
        ok = np.nonzero(tail < mass)[0]
        if ok.size:
            return tab, int(max(ok[0], 1))
        n *= 2
        if n > 1 << 22:
            raise NumericalError("horizon search did not converge")


class ClusterSampler:
    """Exact draws of ``(U, V)``.

    ``V`` is the largest level carrying a nonzero independent ``zeta'_n``.
    Given ``V = n``, the root's number of children with descendants at
    generation ``n`` is drawn conditioned to be at least two, and each of
    them contributes an independent ``Z_{n-1}`` conditioned to be positive.
    """

    def __init__(self, dist: OffspringDistribution, table: IteratedPgfTable, horizon: int,
                 mass: float = 1e-6):
        if horizon > table.n_max:
            raise HorizonError(f"horizon {horizon} exceeds the table horizon {table.n_max}")
        beyond = _beyond_mass(table, horizon)
        if not beyond < mass:
            raise HorizonError(f"mass {beyond:.2e} of nonzero levels lies beyond the horizon")
        self.dist, self.table, self.horizon = dist, table, horizon
        neg = -table.log_zeta_zero[1: horizon + 1]
        # R[n] = sum_{k > n} -log P(zeta'_k = 0), n = 0..horizon
        self._R = np.concatenate([np.cumsum(neg[::-1])[::-1], [0.0]])
        self._gen_cdf: dict[int, np.ndarray] = {}
        self._zeta_cdf: dict[int, np.ndarray] = {}

    def sample_V(self, rng: np.random.Generator, size: Optional[int] = None):
        e = rng.standard_exponential(size)
        # V = min{n : R[n] < E}; R is nonincreasing
        v = np.searchsorted(-self._R, -e, side="right")
        return v if size is not None else int(v)

    def _cdf_positive_generation(self, n: int) -> np.ndarray:
        cdf = self._gen_cdf.get(n)
        if cdf is None:
            law = generation_law_given_survival(self.dist, n)
            cdf = np.cumsum(law) / law.sum()
            self._gen_cdf[n] = cdf
        return cdf

    def _cdf_zeta_at_least_two(self, n: int) -> np.ndarray:
        cdf = self._zeta_cdf.get(n)
        if cdf is None:
            p = float(self.table.survival[n - 1])
            law = np.real(series_coefficients(lambda s: 1.0 - self.dist.complement(p * (1.0 - s))))
            law = np.clip(law, 0.0, None)
            law[:2] = 0.0
            if law.sum() <= 0:
                raise ParameterError(f"two surviving children at level {n} are impossible")
            cdf = np.cumsum(law) / law.sum()
            self._zeta_cdf[n] = cdf
        return cdf

    def sample_U_given_V(self, n: int, rng: np.random.Generator) -> int:
        if n == 0:
            return 1
        zc = self._cdf_zeta_at_least_two(n)
        k = int(min(np.searchsorted(zc, rng.random(), side="right"), zc.size - 1))
        gc = self._cdf_positive_generation(n - 1)
        idx = np.minimum(np.searchsorted(gc, rng.random(k), side="right"), gc.size - 1)
        return int(idx.sum())

    def sample(self, rng: np.random.Generator) -> ClusterSample:
        v = self.sample_V(rng)
        return ClusterSample(self.sample_U_given_V(v, rng), v)

    def sample_many(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        V = self.sample_V(rng, n)
        U = np.array([self.sample_U_given_V(int(v), rng) for v in V], dtype=np.int64)
        return U, V


def sample_UV(dist: OffspringDistribution, table: IteratedPgfTable, yaglom: Optional[YaglomTable],
              horizon: int, rng: np.random.Generator) -> ClusterSample:
    """One draw of ``(U, V)``; ``yaglom`` is accepted for symmetry and not needed."""
    return ClusterSampler(dist, table, horizon).sample(rng)


def cluster_pgf_given_v(dist: OffspringDistribution, table: IteratedPgfTable, n: int, s: float) -> float:
    """``E(s^{Z_n} | zeta_n >= 2)`` from the pgf:
    ``[f(f_{n-1}(s)) - f_n(0) - f'(f_{n-1}(0)) (f_{n-1}(s) - f_{n-1}(0))] / P(zeta_n >= 2)``.
    """
    if n < 1:
        raise ParameterError("n must be at least 1")
    c = 1.0 - s  # 1 - f_{n-1}(s)
    for _ in range(n - 1):
        c = float(dist.complement(c))
    p_prev = float(table.survival[n - 1])
    deriv = float(dist.derivative_at_complement(p_prev))
    top = (float(table.survival[n]) - float(dist.complement(c))) - deriv * (p_prev - c)
    bottom = float(table.survival[n]) - deriv * p_prev
    return top / bottom


def disintegration_rhs(dist: OffspringDistribution, table: IteratedPgfTable, yaglom: YaglomTable,
                       s: float, horizon: Optional[int] = None) -> float:
    """``P(V = 0) s + sum_n P(V = n) E(s^{Z_n} | zeta_n >= 2)`` evaluated exactly."""
    horizon = table.n_max if horizon is None else horizon
    cdf = [v_law(dist, table, yaglom, n) for n in range(horizon + 1)]
    out = cdf[0] * s
    for n in range(1, horizon + 1):
        out += (cdf[n] - cdf[n - 1]) * cluster_pgf_given_v(dist, table, n, s)
    return out


def disintegration_check(dist: OffspringDistribution, yaglom: YaglomTable, s_grid: Sequence[float],
                         n_samples: int, rng: np.random.Generator, mass: float = 1e-6) -> list[dict]:
    """Compare ``a(s)`` with the Monte Carlo mean of ``s^U`` over cluster draws."""
    for s in s_grid:
        if not 0.0 <= s <= 1.0:
            raise ParameterError("s must lie in [0, 1]")
    tab, H = uv_horizon(dist, mass)
    smp = ClusterSampler(dist, tab, H, mass)
    U, _ = smp.sample_many(n_samples, rng)
    rows = []
    for s in s_grid:
        vals = np.power(float(s), U)
        est = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else math.inf
        lhs = yaglom.pgf(s)
        diff = abs(est - lhs)
        rows.append({"s": s, "yaglom_pgf": lhs, "mc": est, "stderr": se, "pgf_identity":
                     disintegration_rhs(dist, tab, yaglom, s, H),
                     "pass": diff <= 3 * se if se > 0 else diff <= 1e-12})
    return rows
