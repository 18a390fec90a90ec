"""Offspring laws of Galton-Watson trees, their pgfs and pgf iterates.

Every law exposes the complementary map ``x -> 1 - f(1 - x)`` in a form that
keeps full relative accuracy for small ``x``.  Survival probabilities and the
thinned laws below are all computed through it, so deep subcritical horizons
do not lose precision to cancellation.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Mapping, Sequence, Union

import numpy as np

from .errors import HorizonError, ParameterError, RejectionBudgetExceeded

FAMILIES = ("linear_fractional", "poisson", "geometric", "binary", "table")


def _cexpm1(z):
    """``exp(z) - 1`` for complex ``z`` without cancellation near zero."""
    z = np.asarray(z, dtype=complex)
    x, y = z.real, z.imag
    return (np.expm1(x) * np.cos(y) - 2.0 * np.sin(0.5 * y) ** 2) + 1j * (np.exp(x) * np.sin(y))


def _horner(coeffs: np.ndarray, y):
    acc = np.zeros_like(y) if isinstance(y, np.ndarray) else 0.0 * y
    for c in coeffs[::-1]:
        acc = acc * y + c
    return acc


@dataclass(frozen=True)
class OffspringDistribution:
    """Law of the number of children of one individual.

    Use the factory functions :func:`linear_fractional`, :func:`poisson`,
    :func:`geometric`, :func:`binary` and :func:`table` rather than building
    instances directly.
    """

    family: str
    params: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown offspring family {self.family!r}")

    # -- internal parametrisations -------------------------------------------------
    @cached_property
    def _lf(self) -> tuple[float, float]:
        if self.family == "linear_fractional":
            return self.params[0], self.params[1]
        q = self.params[0]
        return 1.0 - q, q

    @cached_property
    def _probs(self) -> np.ndarray:
        if self.family == "binary":
            p = self.params[0]
            return np.array([1.0 - p, 0.0, p])
        return np.asarray(self.params, dtype=float)

    @cached_property
    def _tails(self) -> np.ndarray:
        # P(xi > i) for i = 0..K-1
        probs = self._probs
        return 1.0 - np.cumsum(probs)[:-1] if probs.size > 1 else np.zeros(0)

    @property
    def is_lf(self) -> bool:
        return self.family in ("linear_fractional", "geometric")

    @property
    def is_finite(self) -> bool:
        return self.family in ("binary", "table")

    @property
    def max_offspring(self) -> float:
        return float(self._probs.size - 1) if self.is_finite else math.inf

    # -- moments and probabilities -------------------------------------------------
    @cached_property
    def mean(self) -> float:
        if self.is_lf:
            a, b = self._lf
            return (1.0 - a) / (1.0 - b)
        if self.family == "poisson":
            return self.params[0]
        probs = self._probs
        return float(np.dot(np.arange(probs.size), probs))

    def pmf(self, k):
        """P(xi = k); accepts scalars or integer arrays."""
        k_arr = np.asarray(k)
        scalar = k_arr.ndim == 0
        k_arr = np.atleast_1d(k_arr).astype(np.int64)
        out = np.zeros(k_arr.shape, dtype=float)
        ok = k_arr >= 0
        if self.is_lf:
            a, b = self._lf
            out[ok & (k_arr == 0)] = a
            pos = ok & (k_arr >= 1)
            out[pos] = (1.0 - a) * (1.0 - b) * np.power(b, k_arr[pos] - 1.0)
        elif self.family == "poisson":
            mu = self.params[0]
            kk = k_arr[ok].astype(float)
            out[ok] = np.exp(kk * math.log(mu) - mu - np.array([math.lgamma(x + 1.0) for x in kk]))
        else:
            probs = self._probs
            inside = ok & (k_arr < probs.size)
            out[inside] = probs[k_arr[inside]]
        return float(out[0]) if scalar else out

    def tail(self, i: int) -> float:
        """P(xi > i)."""
        if i < 0:
            return 1.0
        if self.is_lf:
            a, b = self._lf
            return (1.0 - a) * b**i
        if self.family == "poisson":
            return float(1.0 - sum(self.pmf(k) for k in range(i + 1)))
        return float(self._tails[i]) if i < self._tails.size else 0.0

    # -- generating function ---------------------------------------------------------
    def complement(self, x):
        """Return ``1 - f(1 - x)``; valid for complex ``x`` with ``|1 - x| <= 1``."""
        if self.is_lf:
            a, b = self._lf
            return (1.0 - a) * x / (1.0 - b + b * x)
        if self.family == "poisson":
            mu = self.params[0]
            if np.iscomplexobj(x):
                return -_cexpm1(-mu * x)
            return -np.expm1(-mu * x)
        # 1 - y^k = x (1 + y + ... + y^{k-1}) with y = 1 - x
        return x * _horner(self._tails, 1.0 - x)

    def derivative_at_complement(self, x):
        """Return ``f'(1 - x)``."""
        if self.is_lf:
            a, b = self._lf
            return (1.0 - a) * (1.0 - b) / (1.0 - b + b * x) ** 2
        if self.family == "poisson":
            mu = self.params[0]
            return mu * np.exp(-mu * x)
        probs = self._probs
        return _horner(np.arange(1, probs.size) * probs[1:], 1.0 - x)

    def pgf(self, s: float) -> float:
        _check_unit(s)
        return float(1.0 - self.complement(1.0 - s))

    def pgf_derivative(self, s: float) -> float:
        _check_unit(s)
        return float(self.derivative_at_complement(1.0 - s))

    # -- sampling --------------------------------------------------------------------
    def sample(self, rng: np.random.Generator, size=None):
        if self.is_lf:
            a, b = self._lf
            shape = () if size is None else size
            u = rng.random(shape)
            g = rng.geometric(1.0 - b, shape) if b > 0 else np.ones(shape, dtype=np.int64)
            out = np.where(u < a, 0, g)
        elif self.family == "poisson":
            out = rng.poisson(self.params[0], size)
        else:
            cdf = np.cumsum(self._probs)
            cdf[-1] = 1.0
            out = np.searchsorted(cdf, rng.random(size), side="right")
        return int(out) if size is None else np.asarray(out, dtype=np.int64)

    def describe(self) -> str:
        if self.family == "linear_fractional":
            return f"lf:a={self.params[0]},b={self.params[1]}"
        if self.family == "poisson":
            return f"poisson:mu={self.params[0]}"
        if self.family == "geometric":
            return f"geometric:q={self.params[0]}"
        if self.family == "binary":
            return f"binary:p={self.params[0]}"
        return "table:" + ",".join(f"{k}={p}" for k, p in enumerate(self.params) if p)


def _check_unit(s: float) -> None:
    if not 0.0 <= s <= 1.0:
        raise ParameterError(f"pgf argument must lie in [0, 1], got {s}")


def _check_prob(name: str, x: float, upper_open: bool = True) -> float:
    x = float(x)
    bad = not (0.0 <= x < 1.0) if upper_open else not (0.0 <= x <= 1.0)
    if bad:
        rng = "[0, 1)" if upper_open else "[0, 1]"
        raise ParameterError(f"{name} must lie in {rng}, got {x}")
    return x


def linear_fractional(a: float, b: float) -> OffspringDistribution:
    """P(xi = 0) = a and P(xi = k) = (1-a)(1-b) b^(k-1) for k >= 1."""
    return OffspringDistribution("linear_fractional", (_check_prob("a", a), _check_prob("b", b)))


def poisson(mu: float) -> OffspringDistribution:
    if not mu > 0:
        raise ParameterError(f"poisson mean must be positive, got {mu}")
    return OffspringDistribution("poisson", (float(mu),))


def geometric(q: float) -> OffspringDistribution:
    """P(xi = k) = (1-q) q^k for k >= 0."""
    return OffspringDistribution("geometric", (_check_prob("q", q),))


def binary(p: float) -> OffspringDistribution:
    """Two children with probability p, none otherwise."""
    return OffspringDistribution("binary", (_check_prob("p", p, upper_open=False),))


def table(pmf: Union[Mapping[int, float], Sequence[float]]) -> OffspringDistribution:
    """Finitely supported law from ``{k: P(xi = k)}`` or a probability vector."""
    if isinstance(pmf, Mapping):
        if not pmf:
            raise ParameterError("empty offspring table")
        if any(int(k) != k or k < 0 for k in pmf):
            raise ParameterError("offspring counts must be nonnegative integers")
        probs = np.zeros(int(max(pmf)) + 1)
        for k, p in pmf.items():
            probs[int(k)] += float(p)
    else:
        probs = np.asarray(pmf, dtype=float)
    if probs.size == 0 or np.any(probs < 0) or not np.all(np.isfinite(probs)):
        raise ParameterError("offspring probabilities must be finite and nonnegative")
    if abs(probs.sum() - 1.0) > 1e-12:
        raise ParameterError(f"offspring table sums to {probs.sum()!r}, not 1")
    nz = np.nonzero(probs)[0]
    probs = probs[: nz[-1] + 1]
    return OffspringDistribution("table", tuple(float(p) for p in probs))


def read_table_csv(path: Union[str, Path]) -> OffspringDistribution:
    """Read a ``k,prob`` CSV file into a finitely supported law."""
    pmf: dict[int, float] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            k = int(row["k"])
            pmf[k] = pmf.get(k, 0.0) + float(row["prob"])
    return table(pmf)


def _parse_kv(body: str) -> dict[str, str]:
    out = {}
    for item in filter(None, (s.strip() for s in body.split(","))):
        if "=" not in item:
            raise ParameterError(f"expected key=value, got {item!r}")
        key, val = item.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def make_offspring(desc) -> OffspringDistribution:
    """Build a law from a descriptor such as ``"lf:a=0.6,b=0.4"``.

    Recognised descriptors are ``lf:a=,b=``, ``poisson:mu=``,
    ``geometric:q=``, ``binary:p=``, ``table:@file.csv`` and the inline form
    ``table:0=0.25,2=0.75``.  Existing distributions and ``{k: p}`` mappings
    are accepted as well.
    """
    if isinstance(desc, OffspringDistribution):
        return desc
    if isinstance(desc, Mapping):
        return table(desc)
    if not isinstance(desc, str) or ":" not in desc:
        raise ParameterError(f"cannot parse offspring descriptor {desc!r}")
    head, body = desc.split(":", 1)
    head = head.strip().lower()
    try:
        if head == "table":
            if body.startswith("@"):
                return read_table_csv(body[1:])
            return table({int(k): float(v) for k, v in _parse_kv(body).items()})
        kv = {k: float(v) for k, v in _parse_kv(body).items()}
        if head in ("lf", "linear_fractional"):
            return linear_fractional(kv["a"], kv["b"])
        if head == "poisson":
            return poisson(kv["mu"])
        if head == "geometric":
            return geometric(kv["q"])
        if head == "binary":
            return binary(kv["p"])
    except KeyError as exc:
        raise ParameterError(f"descriptor {desc!r} is missing parameter {exc}") from None
    raise ParameterError(f"unknown offspring family {head!r}")


def pgf(dist: OffspringDistribution, s: float) -> float:
    return dist.pgf(s)


def pgf_derivative(dist: OffspringDistribution, s: float) -> float:
    return dist.pgf_derivative(s)


def sample_offspring(dist: OffspringDistribution, rng: np.random.Generator) -> int:
    return dist.sample(rng)


# -- iterates ------------------------------------------------------------------------

_UNDERFLOW = 1e-280


@dataclass(frozen=True, eq=False)
class IteratedPgfTable:
    """Iterates ``f_n(0)`` for ``n = 0..n_max`` and the derived products.

    ``survival[n]`` is ``p_n = 1 - f_n(0)``.  ``log_derivative[n]`` is the log of
    ``f'_n(0) = prod_{k<=n} f'(f_{k-1}(0))``; everything is kept in log form so
    ratios stay accurate when both terms underflow.
    """

    dist: OffspringDistribution
    survival: np.ndarray
    log_survival: np.ndarray
    log_factors: np.ndarray

    @property
    def n_max(self) -> int:
        return self.survival.size - 1

    @cached_property
    def extinction(self) -> np.ndarray:
        return 1.0 - self.survival

    @cached_property
    def log_derivative(self) -> np.ndarray:
        return np.cumsum(self.log_factors)

    @cached_property
    def derivative(self) -> np.ndarray:
        return np.exp(self.log_derivative)

    @cached_property
    def log_tail(self) -> np.ndarray:
        """log P(A_1 > n) = log(f'_n(0) / p_n)."""
        with np.errstate(invalid="ignore"):
            return self.log_derivative - self.log_survival

    @cached_property
    def tail(self) -> np.ndarray:
        return np.exp(self.log_tail)

    @cached_property
    def log_zeta_zero(self) -> np.ndarray:
        """log P(zeta'_n = 0) = log(p_{n-1} f'(f_{n-1}(0)) / p_n); entry 0 is 0."""
        out = np.zeros_like(self.log_survival)
        with np.errstate(invalid="ignore"):
            out[1:] = self.log_survival[:-1] + self.log_factors[1:] - self.log_survival[1:]
        return np.minimum(out, 0.0)

    def check_level(self, n: int) -> None:
        if not 0 <= n <= self.n_max:
            raise HorizonError(f"level {n} outside the table horizon 0..{self.n_max}")


def iterate_pgf(dist: OffspringDistribution, n_max: int) -> IteratedPgfTable:
    if n_max < 0:
        raise ParameterError("n_max must be nonnegative")
    surv = np.empty(n_max + 1)
    log_surv = np.empty(n_max + 1)
    factors = np.empty(n_max + 1)
    surv[0], log_surv[0], factors[0] = 1.0, 0.0, 0.0
    log_m = math.log(dist.mean) if dist.mean > 0 else -math.inf
    p = 1.0
    with np.errstate(divide="ignore"):
        for n in range(1, n_max + 1):
            factors[n] = math.log(d) if (d := float(dist.derivative_at_complement(p))) > 0 else -math.inf
            if p > _UNDERFLOW:
                p = float(dist.complement(p))
                log_surv[n] = math.log(p) if p > 0 else -math.inf
            else:
                # linear regime: 1 - f(1 - x) = m x + O(x^2)
                log_surv[n] = log_surv[n - 1] + log_m
                p = math.exp(log_surv[n])
            surv[n] = p
    for arr in (surv, log_surv, factors):
        arr.setflags(write=False)
    return IteratedPgfTable(dist, surv, log_surv, factors)


def branch_length_tail(tab: IteratedPgfTable, n: int) -> float:
    """P(A_1 > n) = f'_n(0) / p_n = P(Z_n = 1 | Z_n != 0)."""
    tab.check_level(n)
    if tab.log_survival[n] == -math.inf:
        raise ParameterError(f"the tree cannot survive {n} generations")
    return float(tab.tail[n])


def lf_branch_tail(a: float, b: float, n) -> float:
    """Closed-form P(A_1 > n) for the linear-fractional law; ``n`` may be ``inf``."""
    a, b = _check_prob("a", a), _check_prob("b", b)
    if n == math.inf:
        return 1.0 - b / a if a > b else 0.0
    if a == b:
        return (1.0 - a) / (n * a + 1.0 - a)
    m = (1.0 - a) / (1.0 - b)
    return (b - a) / (b * m**n - a)


# -- thinned laws ----------------------------------------------------------------------

def series_coefficients(func: Callable[[np.ndarray], np.ndarray], k_init: int = 64,
                        k_max: int = 1 << 20, rel_tol: float = 1e-15) -> np.ndarray:
    """Taylor coefficients of a function analytic on the closed unit disc.

    The function is sampled on ``K`` roots of unity and transformed; ``K``
    doubles until the upper half of the spectrum is below ``rel_tol`` times
    the sup of ``|func|``, so aliasing is negligible for the returned lower
    half.
    """
    k = k_init
    while k <= k_max:
        vals = func(np.exp(2j * np.pi * np.arange(k) / k))
        coef = np.fft.fft(vals) / k
        scale = max(float(np.max(np.abs(vals))), 1e-300)
        if float(np.max(np.abs(coef[k // 2:]))) <= rel_tol * scale:
            return coef[: k // 2].real.copy()
        k *= 2
    raise HorizonError("generating function has too heavy a tail for series extraction")


def zeta_prime_law(dist: OffspringDistribution, tab: IteratedPgfTable, n: int) -> np.ndarray:
    """Probability vector of zeta'_n, indexed by its value m = 0, 1, ...

    zeta_n counts the children of one individual that still have descendants
    n - 1 generations later; its pgf is ``f(1 - p_{n-1} + p_{n-1} s)``, and
    zeta'_n is zeta_n - 1 given zeta_n != 0.
    """
    if n < 1:
        raise ParameterError("zeta'_n is defined for n >= 1")
    tab.check_level(n)
    p_prev, p_n = float(tab.survival[n - 1]), float(tab.survival[n])
    if p_n <= 0.0:
        raise ParameterError(f"survival probability at level {n} underflows or vanishes")
    coef = series_coefficients(lambda s: dist.complement(p_prev * (1.0 - s)) / p_n)
    law = -coef[1:]
    law[law < 0.0] = 0.0
    return law


def zeta_prime_pmf(dist: OffspringDistribution, tab: IteratedPgfTable, n: int, m: int) -> float:
    law = zeta_prime_law(dist, tab, n)
    return float(law[m]) if 0 <= m < law.size else 0.0


def sample_zeta_prime(dist: OffspringDistribution, tab: IteratedPgfTable, n: int,
                      rng: np.random.Generator, max_tries: int = 1_000_000) -> int:
    """Draw zeta'_n by thinning an offspring draw and rejecting empty thinnings."""
    if n < 1:
        raise ParameterError("zeta'_n is defined for n >= 1")
    tab.check_level(n)
    p_prev = float(tab.survival[n - 1])
    for _ in range(max_tries):
        kept = rng.binomial(dist.sample(rng), p_prev)
        if kept:
            return int(kept) - 1
    raise RejectionBudgetExceeded(f"no surviving child in {max_tries} attempts at level {n}")


class ZetaPrimeSampler:
    """Fast exact draws of the fresh coordinates used by the coalescent chains.

    The first nonzero zeta'_n on a run of fresh levels is found by inverting
    the product of the zero probabilities, which are read from the pgf table.
    The value of a nonzero coordinate is drawn from the pgf-derived law.
    """

    def __init__(self, dist: OffspringDistribution, tab: IteratedPgfTable):
        self.dist = dist
        self.table = tab
        neg = -tab.log_zeta_zero
        neg[0] = 0.0
        self._cum = np.cumsum(neg)
        self._cdf: dict[int, np.ndarray] = {}

    @property
    def horizon(self) -> int:
        return self.table.n_max

    def first_nonzero(self, lo: int, hi: int, rng: np.random.Generator):
        """First level in ``lo..hi`` with a nonzero fresh coordinate, else ``None``."""
        hi = min(hi, self.horizon)
        if lo > hi:
            return None
        target = self._cum[lo - 1] + rng.standard_exponential()
        n = int(np.searchsorted(self._cum, target, side="right"))
        return n if n <= hi else None

    def positive_value(self, n: int, rng: np.random.Generator) -> int:
        """Draw zeta'_n conditioned to be at least one."""
        cdf = self._cdf.get(n)
        if cdf is None:
            w = zeta_prime_law(self.dist, self.table, n)[1:]
            if w.sum() <= 0:
                raise ParameterError(f"zeta'_{n} is almost surely zero")
            cdf = np.cumsum(w) / w.sum()
            self._cdf[n] = cdf
        return 1 + int(min(np.searchsorted(cdf, rng.random(), side="right"), cdf.size - 1))

    def fresh_value(self, n: int, rng: np.random.Generator) -> int:
        """Draw an unconditioned zeta'_n."""
        if rng.random() < math.exp(self.table.log_zeta_zero[n]):
            return 0
        return self.positive_value(n, rng)


# -- conditioned generation sizes ------------------------------------------------------

def generation_law_given_survival(dist: OffspringDistribution, n: int) -> np.ndarray:
    """P(Z_n = k | Z_n >= 1) for k = 0, 1, ... (entry 0 is zero), Z_0 = 1.

    Coefficients of ``(1 - f_n(s)) / p_n`` obtained by iterating the
    complementary map on the unit circle.
    """
    if n < 0:
        raise ParameterError("generation index must be nonnegative")
    p_n = 1.0
    for _ in range(n):
        p_n = float(dist.complement(p_n))
    if p_n <= 0.0:
        raise ParameterError(f"survival to generation {n} is impossible or underflows")

    def g(s):
        x = 1.0 - s
        for _ in range(n):
            x = dist.complement(x)
        return x / p_n

    law = -series_coefficients(g)
    law[0] = 0.0
    law[law < 0.0] = 0.0
    return law
