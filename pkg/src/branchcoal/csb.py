"""Continuous-state branching limit: mechanisms, scale functions and the coalescent.

A mechanism is ``psi(l) = a l + beta l^2 + int (e^{-l r} - 1 + l r 1{r<1}) Lambda(dr)``.
For stable Levy parts the compensator is taken over the whole half-line so
that ``stable(alpha, c)`` alone gives ``psi(l) = c l^alpha``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, optimize, special, stats

from .discrete import _b_transition, _scan
from .errors import MalformedDrawError, NumericalError, ParameterError
from .measure import INF, PointMassMeasure
from .offspring import ZetaPrimeSampler, iterate_pgf, linear_fractional, lf_branch_tail

__all__ = [
    "StableLevy", "DensityLevy", "BranchingMechanism", "parse_mechanism", "CsbDraw",
    "GreatAuntMeasure", "a_tail", "atom_at_infinity", "a_n_joint", "n_given_a_pmf", "n_given_a_survival",
    "sample_a_n", "sample_a_n_array", "b_eps_step", "b_eps_chain", "sample_rho0",
    "tail_via_rho0", "slice_rate", "untruncated_intensity", "RescalingScheme",
    "lf_critical_scheme", "rescaling_experiment",
]

_QUAD = dict(epsabs=0.0, epsrel=1e-12, limit=400)


def _quad(f, lo, hi, tol: float = 1e-10, **kw):
    """``scipy`` quadrature; fails unless the error estimate is below ``tol (1 + |value|)``."""
    opts = {**_QUAD, **kw}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err = integrate.quad(f, lo, hi, **opts)
    if not (math.isfinite(val) and err <= tol * (1.0 + abs(val))):
        raise NumericalError(f"quadrature on [{lo}, {hi}] did not converge (error {err:.1e})")
    return val


def _e2(y):
    """``e^{-y} - 1 + y`` without cancellation (scalar or array)."""
    if isinstance(y, float):
        return y * y * (0.5 - y / 6.0 + y * y / 24.0) if abs(y) < 1e-3 else math.expm1(-y) + y
    y = np.asarray(y, float)
    with np.errstate(over="ignore"):
        out = np.where(np.abs(y) < 1e-3, y * y * (0.5 - y / 6.0 + y * y / 24.0), np.expm1(-y) + y)
    return out if out.ndim else float(out)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)


def _gauss_legendre(f, cuts: np.ndarray) -> float:
    """Composite 20-point rule on consecutive ``cuts``; ``f`` is vectorised."""
    a, b = cuts[:-1, None], cuts[1:, None]
    r = 0.5 * (b - a) * _GL_NODES + 0.5 * (b + a)
    return float(np.sum(0.5 * (b - a) * _GL_WEIGHTS * f(r)))


# -- Levy measures -------------------------------------------------------------------

@dataclass(frozen=True)
class StableLevy:
    """``Lambda(dr) = C r^{-1-alpha} dr`` scaled so that its contribution is ``c l^alpha``."""

    alpha: float
    c: float = 1.0

    def __post_init__(self) -> None:
        if not 1.0 < self.alpha < 2.0:
            raise ParameterError("stable index must lie in (1, 2)")
        if not self.c > 0:
            raise ParameterError("stable scale must be positive")

    @property
    def C(self) -> float:
        return self.c * self.alpha * (self.alpha - 1.0) / math.gamma(2.0 - self.alpha)

    def density(self, z):
        return self.C * np.power(z, -1.0 - self.alpha)


@dataclass(frozen=True, eq=False)
class DensityLevy:
    """Levy measure with a density ``w`` on ``(lower, upper)``.

    A density built by :meth:`from_grid` is piecewise linear; its integrals
    are computed segment by segment with a fixed Gauss rule, which is exact
    up to rounding wherever the kernel is smooth on the segment.
    """

    w: Callable[[float], float]
    lower: float = 0.0
    upper: float = math.inf
    knots: Optional[np.ndarray] = None

    @classmethod
    def from_grid(cls, z: Sequence[float], w: Sequence[float]) -> "DensityLevy":
        """Piecewise-linear density through the grid, zero outside it."""
        z, w = np.asarray(z, float), np.asarray(w, float)
        if z.ndim != 1 or z.size < 2 or np.any(np.diff(z) <= 0) or z[0] < 0 or np.any(w < 0):
            raise ParameterError("grid must be increasing, nonnegative, with nonnegative weights")
        return cls(lambda x: np.interp(x, z, w, left=0.0, right=0.0), float(z[0]), float(z[-1]), z)

    def density(self, z):
        return self.w(z)

    def _cuts(self, lo: float, hi: float, lam: float, span: float, points) -> np.ndarray:
        cuts = {lo, hi, 1.0, *points}
        if lam > 0:
            if self.knots is None:
                cuts |= {k / lam for k in (1.0, 10.0, 100.0)}
            else:
                # pieces of length 1/lam wherever e^{-lam r} is not negligible
                top = min(hi, lo + span / lam)
                cuts |= set(np.linspace(lo, top, int(min(2000, math.ceil((top - lo) * lam))) + 1))
        if self.knots is None:
            if lam > 100.0:
                # power-law densities between 100/lam and 1 need decade splits
                cuts |= {10.0 ** -j for j in range(1, int(math.log10(lam / 100.0)) + 1)}
        else:
            cuts |= set(self.knots.tolist())
        return np.array(sorted(c for c in cuts if lo <= c <= hi))

    def integrate(self, kernel, lo: float = 0.0, hi: float = math.inf, lam: float = 0.0,
                  span: float = 60.0, points=()) -> float:
        """``int_lo^hi kernel(r) w(r) dr`` over the support; ``kernel`` must accept arrays.

        ``lam`` is the rate of any exponential factor in the kernel and
        ``span`` how many multiples of ``1 / lam`` it takes to become negligible.
        """
        lo, hi = max(lo, self.lower), min(hi, self.upper)
        if not hi > lo:
            return 0.0
        cuts = self._cuts(lo, hi, lam, span, points)
        if self.knots is not None:
            return _gauss_legendre(lambda r: kernel(r) * self.w(r), cuts)
        return sum(_quad(lambda r: float(kernel(r)) * self.w(r), a, b) for a, b in zip(cuts[:-1], cuts[1:]))


# -- mechanism -------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BranchingMechanism:
    a: float = 0.0
    beta: float = 0.0
    levy: Optional[object] = None

    def __post_init__(self) -> None:
        if self.beta < 0:
            raise ParameterError("Gaussian coefficient must be nonnegative")
        if self.beta == 0 and self.levy is None:
            raise ParameterError("a pure drift mechanism violates Grey's condition")
        if isinstance(self.levy, DensityLevy):
            # integrability of (1 ^ z^2) w and Grey's condition
            self.levy.integrate(np.square, hi=1.0)
            self.levy.integrate(np.ones_like, lo=1.0)
            try:
                grey = self.phi(self.eta + 1.0)
            except NumericalError:
                grey = math.inf
            if not math.isfinite(grey):
                raise ParameterError("Grey's condition fails (a bounded density needs beta > 0)")

    # closed-form families
    @property
    def family(self) -> str:
        if self.levy is None:
            return "feller" if self.a == 0 else "quadratic"
        if isinstance(self.levy, StableLevy):
            return "stable" if self.a == 0 and self.beta == 0 else "stable-mixed"
        return "density"

    def describe(self) -> str:
        if self.levy is None:
            return f"lk:a={self.a:g},beta={self.beta:g}"
        if isinstance(self.levy, StableLevy):
            return f"stable:alpha={self.levy.alpha:g},c={self.levy.c:g},a={self.a:g},beta={self.beta:g}"
        return f"density:a={self.a:g},beta={self.beta:g}"

    # psi and derivatives
    def psi(self, lam: float) -> float:
        lam = float(lam)
        out = self.a * lam + self.beta * lam * lam
        lv = self.levy
        if isinstance(lv, StableLevy):
            out += lv.c * lam**lv.alpha
        elif isinstance(lv, DensityLevy):
            out += lv.integrate(lambda r: _e2(lam * r), hi=1.0, lam=lam)
            out += lv.integrate(lambda r: np.expm1(-lam * r), lo=1.0, lam=lam)
        return out

    def psi_prime(self, lam: float) -> float:
        lam = float(lam)
        out = self.a + 2.0 * self.beta * lam
        lv = self.levy
        if isinstance(lv, StableLevy):
            out += lv.c * lv.alpha * lam ** (lv.alpha - 1.0)
        elif isinstance(lv, DensityLevy):
            out -= lv.integrate(lambda r: r * np.expm1(-lam * r), hi=1.0, lam=lam)
            out -= lv.integrate(lambda r: r * np.exp(-lam * r), lo=1.0, lam=lam)
        return out

    def _psi_above_eta(self, d: float) -> float:
        """``psi(eta + d)``, factored when the mechanism is quadratic."""
        if self.levy is None:
            return (self.eta + d) * (self.a + self.beta * self.eta + self.beta * d)
        return self.psi(self.eta + d)

    def psi_tilde(self, u: float) -> float:
        if self.levy is None:
            return self.a + self.beta * u
        if self.family == "stable":
            return self.levy.c * u ** (self.levy.alpha - 1.0)
        return self.psi(u) / u

    @cached_property
    def psi_prime_zero(self) -> float:
        """``psi'(0+)``; may be ``-inf`` for heavy-tailed density Levy parts."""
        if not isinstance(self.levy, DensityLevy):
            return float(self.a)
        try:
            big = self.levy.integrate(lambda r: r, lo=1.0)
        except NumericalError:
            return -math.inf
        return self.a - big

    @cached_property
    def eta(self) -> float:
        """Largest root of psi; zero unless the mechanism is supercritical."""
        if self.psi_prime_zero >= -1e-12 * (1.0 + abs(self.a)):
            return 0.0
        if self.levy is None:
            return -self.a / self.beta
        hi = 1.0
        while self.psi(hi) <= 0:
            hi *= 2.0
            if hi > 1e300:
                raise NumericalError("no finite bracket for the root of psi")
        lo = 0.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.psi(mid) <= 0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-15 * hi:
                break
        return hi

    # scale functions
    def phi(self, lam: float, numeric: bool = False) -> float:
        """``int_lam^inf du / psi(u)`` for ``lam > eta``."""
        eta = self.eta
        if not lam > eta:
            raise ParameterError(f"phi needs lambda > eta = {eta}")
        if not numeric:
            fam = self.family
            if fam == "feller":
                return 1.0 / (self.beta * lam)
            if fam == "quadratic":
                return math.log1p(self.a / (self.beta * lam)) / self.a
            if fam == "stable":
                al = self.levy.alpha
                return lam ** (1.0 - al) / (self.levy.c * (al - 1.0))
        d = lam - eta
        L = max(2.0 * lam, eta + 1.0)
        # near eta: u = eta + d e^s; beyond L: u = L / w
        head = _quad(lambda s: d * math.exp(s) / self._psi_above_eta(d * math.exp(s)),
                     0.0, math.log((L - eta) / d))
        tail = _quad(lambda w: L / (w * w * self.psi(L / w)), 0.0, 1.0)
        return head + tail

    def v(self, x: float, numeric: bool = False) -> float:
        """Inverse of ``phi`` on ``(eta, inf)``."""
        if not x > 0:
            raise ParameterError("v needs x > 0")
        if not numeric:
            fam = self.family
            if fam == "feller":
                return 1.0 / (self.beta * x)
            if fam == "quadratic":
                if self.a * x > 700.0:
                    return self.a / self.beta * math.exp(-self.a * x)
                return self.a / (self.beta * math.expm1(self.a * x))
            if fam == "stable":
                al = self.levy.alpha
                return (self.levy.c * (al - 1.0) * x) ** (-1.0 / (al - 1.0))
        eta = self.eta
        g = lambda t: math.log(self.phi(eta + math.exp(t), numeric=True)) - math.log(x)
        lo, hi = -1.0, 1.0
        while g(lo) < 0:
            lo -= 2.0 * (1.0 + abs(lo))
            if lo < -700:
                # a subcritical v decays exponentially and leaves double range
                return eta + math.exp(-700.0)
        while g(hi) > 0:
            hi += 2.0 * (1.0 + abs(hi))
            if hi > 700:
                raise NumericalError("v: upper bracket not found")
        # safeguarded Newton on t = log(lambda - eta), using phi' = -1/psi
        t = 0.5 * (lo + hi)
        for _ in range(100):
            lam = eta + math.exp(t)
            ph = self.phi(lam, numeric=True)
            gt = math.log(ph) - math.log(x)
            if gt > 0:
                lo = t
            else:
                hi = t
            step = gt * self._psi_above_eta(lam - eta) * ph / (lam - eta)
            nt = t + step
            if not lo < nt < hi:
                nt = 0.5 * (lo + hi)
            if abs(nt - t) <= 1e-14 * max(1.0, abs(t)) or hi - lo <= 1e-14:
                return eta + math.exp(nt)
            t = nt
        raise NumericalError("v: iteration did not converge")

    def psi_tilde_inverse(self, y: float) -> float:
        """The ``u > eta`` with ``psi_tilde(u) = y``."""
        fam = self.family
        if fam in ("feller", "quadratic"):
            return (y - self.a) / self.beta
        if fam == "stable":
            return (y / self.levy.c) ** (1.0 / (self.levy.alpha - 1.0))
        eta = self.eta
        g = lambda t: self.psi_tilde(eta + math.exp(t)) - y
        lo, hi = -1.0, 1.0
        while g(lo) > 0:
            lo -= 2.0 * (1.0 + abs(lo))
        while g(hi) < 0:
            hi += 2.0 * (1.0 + abs(hi))
        return eta + math.exp(optimize.brentq(g, lo, hi, xtol=1e-14, rtol=1e-15))

    # Lambda-integrals for the multiplicity law
    def _q(self, n: int, v: float) -> float:
        """``v^n int Lambda(dz) e^{-vz} z^{n+1}/(n+1)!`` plus the Gaussian term for n = 1."""
        out = self.beta * v if n == 1 else 0.0
        lv = self.levy
        if isinstance(lv, StableLevy):
            out += lv.C * math.exp(math.lgamma(n + 1.0 - lv.alpha) - math.lgamma(n + 2.0)) \
                * v ** (lv.alpha - 1.0)
        elif isinstance(lv, DensityLevy):
            c = n * math.log(v) - math.lgamma(n + 2.0)

            def g(z):
                with np.errstate(divide="ignore"):
                    return np.exp(c + (n + 1) * np.log(z) - v * z)

            out += lv.integrate(g, lam=v, span=n + 60.0 + 10.0 * math.sqrt(n), points=((n + 1) / v,))
        return out

    def _q_total(self, v: float) -> float:
        """``sum_n q_n(v) = psi'(v) - psi_tilde(v)``."""
        if self.family == "stable":
            return self.levy.c * (self.levy.alpha - 1.0) * v ** (self.levy.alpha - 1.0)
        return self.psi_prime(v) - self.psi_tilde(v)


_DESCRIPTOR_KEYS = {"a", "beta", "alpha", "c"}


def parse_mechanism(text: str) -> BranchingMechanism:
    """``feller:beta=1``, ``stable:alpha=1.5,c=1``, ``lk:a=-1,beta=1`` or
    ``density:@file.csv,beta=1`` (a ``z,w`` grid, optionally with ``a`` and ``beta``)."""
    head, _, rest = text.partition(":")
    head = head.strip().lower()
    path = None
    if head == "density":
        path, _, rest = rest.partition(",")
        path = path.lstrip("@")
    kw = {}
    for item in filter(None, rest.split(",")):
        k, _, val = item.partition("=")
        k = k.strip()
        if k not in _DESCRIPTOR_KEYS:
            raise ParameterError(f"unknown mechanism parameter {k!r}")
        kw[k] = float(val)
    if path is not None:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return BranchingMechanism(kw.get("a", 0.0), kw.get("beta", 0.0),
                                  DensityLevy.from_grid(data[:, 0], data[:, 1]))
    if head == "feller":
        return BranchingMechanism(0.0, kw.get("beta", 1.0))
    if head == "lk":
        return BranchingMechanism(kw.get("a", 0.0), kw.get("beta", 1.0))
    if head == "stable":
        return BranchingMechanism(kw.get("a", 0.0), kw.get("beta", 0.0),
                                  StableLevy(kw.get("alpha", 1.5), kw.get("c", 1.0)))
    raise ParameterError(f"unknown mechanism family {head!r}")


# -- law of (A, N) -----------------------------------------------------------------------

@dataclass(frozen=True)
class CsbDraw:
    A: float
    N: Optional[int] = None

    def __post_init__(self) -> None:
        if self.A != INF and (self.N is None or self.N < 1):
            raise MalformedDrawError("finite draws need N >= 1")
        if not self.A > 0:
            raise MalformedDrawError("levels are positive")


def _check_eps(eps: float) -> None:
    if not eps > 0:
        raise ParameterError("epsilon must be positive")


def a_tail(mech: BranchingMechanism, eps: float, x: float, numeric: bool = False) -> float:
    """``P(A_1^eps > x)``."""
    _check_eps(eps)
    if x < eps:
        raise ParameterError("x must be at least epsilon")
    if x == eps:
        return 1.0
    if x == INF:
        return atom_at_infinity(mech, eps, numeric)
    return mech.psi_tilde(mech.v(x, numeric)) / mech.psi_tilde(mech.v(eps, numeric))


def atom_at_infinity(mech: BranchingMechanism, eps: float, numeric: bool = False) -> float:
    """``P(A_1^eps = inf)``: positive only for subcritical mechanisms."""
    _check_eps(eps)
    return max(0.0, mech.psi_prime_zero) / mech.psi_tilde(mech.v(eps, numeric))


def a_n_joint(mech: BranchingMechanism, eps: float, x: float, n: int) -> float:
    """Density in ``x`` of ``(A_1^eps, N_1^eps)`` at ``N = n``."""
    if n < 1:
        raise ParameterError("multiplicities start at 1")
    return a_tail(mech, eps, x) * mech._q(int(n), mech.v(x))


def n_given_a_pmf(mech: BranchingMechanism, x: float, n_terms: int) -> np.ndarray:
    """``P(N = n | A = x)`` for ``n = 1..n_terms``."""
    v = mech.v(x)
    total = mech._q_total(v)
    return np.array([mech._q(n, v) for n in range(1, n_terms + 1)]) / total


def n_given_a_survival(mech: BranchingMechanism, x: float, n: int) -> float:
    """``P(N >= n | A = x)``."""
    if n <= 1:
        return 1.0
    if mech.levy is None:
        return 0.0
    if mech.family == "stable":
        return math.exp(_stable_log_survival(mech.levy.alpha, n))
    return max(0.0, 1.0 - float(n_given_a_pmf(mech, x, n - 1).sum()))


def _stable_log_survival(alpha: float, n):
    # sum_{m >= n} Gamma(m+1-alpha)/(m+1)! is a Beta integral
    n = np.asarray(n, float)
    return special.gammaln(n + 1.0 - alpha) - special.gammaln(2.0 - alpha) - special.gammaln(n + 1.0)


class _NSampler:
    """Draws ``N | A = x`` by inversion.

    Stable parts use the closed-form survival function; a density part is
    inverted term by term with the remainder known exactly from ``psi``.
    """

    def __init__(self, mech: BranchingMechanism, n_max: int = 1_000_000):
        self.mech = mech
        self.n_max = n_max

    def draw(self, x: float, u: float, v: Optional[float] = None) -> int:
        mech = self.mech
        if mech.levy is None:
            return 1
        if mech.family == "stable":
            return self._stable(u)
        v = mech.v(x) if v is None else v
        total = mech._q_total(v)
        acc = 0.0
        target = u * total
        for n in range(1, self.n_max + 1):
            acc += mech._q(n, v)
            if acc > target:
                return n
            if total - acc <= 1e-15 * total:
                return n + 1
        raise NumericalError(f"multiplicity inversion did not terminate by n = {self.n_max}")

    def _stable(self, u: float) -> int:
        # largest n with P(N >= n) > u
        al = self.mech.levy.alpha
        lu = math.log(u) if u > 0 else -math.inf
        lo, hi = 1, 2
        while _stable_log_survival(al, hi) > lu:
            lo, hi = hi, 2 * hi
            if hi > 1 << 62:
                return lo
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if _stable_log_survival(al, mid) > lu:
                lo = mid
            else:
                hi = mid
        return lo


def _a_from_uniforms(mech: BranchingMechanism, eps: float, u: np.ndarray, scale: float, atom: float):
    """Tail inversion ``A = phi(psi_tilde^{-1}(u psi_tilde(v(eps))))`` for a batch.

    The targets are sorted so that ``phi`` is accumulated from ``phi(v(eps)) = eps``
    with one short integral per draw.  Returns ``A`` and ``v(A)``.
    """
    A = np.full(u.size, INF)
    V = np.full(u.size, mech.eta)
    fin = np.nonzero(u >= atom)[0]
    lam = np.array([mech.psi_tilde_inverse(float(ui) * scale) for ui in u[fin]])
    x, prev = eps, mech.v(eps)
    for i in np.argsort(-lam):
        if lam[i] < prev:
            x += _quad(lambda s: 1.0 / mech.psi(s), float(lam[i]), prev)
            prev = float(lam[i])
        A[fin[i]], V[fin[i]] = x, lam[i]
    return A, V


def sample_a_n(mech: BranchingMechanism, eps: float, rng: np.random.Generator) -> CsbDraw:
    """One draw of ``(A_1^eps, N_1^eps)`` by inversion of the tail then of ``N | A``."""
    A, N = sample_a_n_array(mech, eps, 1, rng)
    return CsbDraw(float(A[0]), None if A[0] == INF else int(N[0]))


def sample_a_n_array(mech: BranchingMechanism, eps: float, size: int, rng: np.random.Generator):
    """``size`` independent draws as arrays ``(A, N)``; ``N = 0`` where ``A = inf``."""
    _check_eps(eps)
    scale = mech.psi_tilde(mech.v(eps))
    atom = atom_at_infinity(mech, eps)
    u = rng.random(size)
    w = rng.random(size)
    fam = mech.family
    A = np.empty(size)
    V = None
    if fam in ("feller", "stable"):
        A[:] = eps / u
    elif fam == "quadratic":
        a = mech.a
        # P(A > x) = -expm1(-a eps) / -expm1(-a x)
        inside = u >= atom
        A[~inside] = INF
        A[inside] = -np.log1p(np.expm1(-a * eps) / u[inside]) / a
    else:
        A, V = _a_from_uniforms(mech, eps, u, scale, atom)
    smp = _NSampler(mech)
    N = np.array([0 if A[i] == INF else smp.draw(A[i], w[i], None if V is None else V[i])
                  for i in range(size)], dtype=np.int64)
    return A, N


def b_eps_step(b: PointMassMeasure, draw) -> PointMassMeasure:
    """B^eps transition; a tie ``A == a_1`` has probability zero and is treated as no insertion."""
    A, N = (draw.A, draw.N) if isinstance(draw, CsbDraw) else draw
    if not A > 0:
        raise MalformedDrawError("levels are positive")
    return _b_transition(b, A, N)


def b_eps_chain(mech: BranchingMechanism, eps: float, steps: int,
                rng: np.random.Generator) -> list[PointMassMeasure]:
    A, N = sample_a_n_array(mech, eps, steps, rng)
    out, b = [], PointMassMeasure()
    for a, n in zip(A, N):
        b = b_eps_step(b, (float(a), None if a == INF else int(n)))
        out.append(b)
    return out


# -- continuous great-aunt measure ----------------------------------------------------------

@dataclass(frozen=True)
class GreatAuntMeasure:
    horizon: float
    beta: float
    atoms: tuple[tuple[float, float], ...] = ()
    min_atom: float = 0.0

    def __post_init__(self) -> None:
        ts = [t for t, _ in self.atoms]
        if ts != sorted(ts) or any(not (0 < t <= self.horizon and d > 0) for t, d in self.atoms):
            raise ParameterError("atoms must be sorted with t in (0, h] and positive sizes")

    def Y(self, x: float) -> float:
        """``beta x + sum_{t_j <= x} Delta_j``."""
        return self.beta * x + sum(d for t, d in self.atoms if t <= x)

    def L(self, y: float) -> float:
        """Right inverse ``inf{x : Y(x) > y}``; ``inf`` if ``Y`` stays at or below ``y`` on ``[0, h]``."""
        if y < 0:
            return 0.0
        acc, prev = 0.0, 0.0
        for t, d in self.atoms + ((self.horizon, 0.0),):
            # continuous part on [prev, t)
            if self.beta > 0 and acc + self.beta * (t - prev) > y:
                return prev + (y - acc) / self.beta
            acc += self.beta * (t - prev)
            if acc + d > y:
                return t
            acc += d
            prev = t
        return INF


def _stable_rho0_atoms(mech, t0, t1, rng, min_atom):
    lv = mech.levy
    al, C = lv.alpha, lv.C
    # dominating intensity dt C z^{-alpha} dz on z > delta; z is Pareto(alpha - 1)
    rate = (t1 - t0) * C * min_atom ** (1.0 - al) / (al - 1.0)
    k = rng.poisson(rate)
    t = rng.uniform(t0, t1, k)
    z = min_atom * rng.random(k) ** (-1.0 / (al - 1.0))
    return t, z


def _density_rho0_atoms(mech, t0, t1, rng, min_atom):
    """Proposal dt w(z) min(z, 1/v(t1)) dz, inverted on a tabulated cumulative."""
    lv = mech.levy
    cap = 1.0 / mech.v(t1)
    lo = max(min_atom, lv.lower)
    hi = lv.upper if math.isfinite(lv.upper) else max(10.0 * lo, 1.0) * 1e4
    grid = np.geomspace(lo, hi, 4001)
    g = np.array([lv.density(z) * min(z, cap) for z in grid])
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (g[1:] + g[:-1]) * np.diff(grid))])
    rate = (t1 - t0) * cum[-1]
    k = rng.poisson(rate)
    t = rng.uniform(t0, t1, k)
    z = np.interp(rng.random(k) * cum[-1], cum, grid)
    prop = np.minimum(z, cap)
    return t, z, prop


def _rho0_atoms(mech: BranchingMechanism, t0: float, t1: float, rng: np.random.Generator,
                min_atom: float):
    """Atoms ``(t, Delta)`` with ``t in (t0, t1]`` and ``Delta >= min_atom``."""
    if mech.levy is None or t1 <= t0:
        return np.empty(0), np.empty(0)
    if isinstance(mech.levy, StableLevy):
        t, z = _stable_rho0_atoms(mech, t0, t1, rng, min_atom)
        prop = z
    else:
        t, z, prop = _density_rho0_atoms(mech, t0, t1, rng, min_atom)
    v = np.array([mech.v(s) for s in t])
    # accept with (1 - e^{-vz}) / (v * proposal)
    keep = rng.random(t.size) * v * prop < -np.expm1(-v * z)
    t, z, v = t[keep], z[keep], v[keep]
    # r | (t, z) has density v e^{-v(z - r)} / (1 - e^{-vz}) on (0, z): z - r is exp(v) truncated to (0, z)
    u = rng.random(t.size)
    w = -np.log1p(u * np.expm1(-v * z)) / v
    r = z - w
    keep = r >= min_atom
    order = np.argsort(t[keep])
    return t[keep][order], r[keep][order]


def sample_rho0(mech: BranchingMechanism, h: float, rng: np.random.Generator,
                min_atom: float = 1e-4) -> GreatAuntMeasure:
    """Continuous great-aunt measure on ``(0, h]``.

    Infinitely many small atoms accumulate, so only atoms of size at least
    ``min_atom`` are drawn; the dropped part is recorded as ``min_atom``.
    """
    if not h > 0:
        raise ParameterError("horizon must be positive")
    t, r = _rho0_atoms(mech, 0.0, h, rng, min_atom)
    return GreatAuntMeasure(h, mech.beta, tuple(zip(t.tolist(), r.tolist())),
                            min_atom if mech.levy is not None else 0.0)


def slice_rate(mech: BranchingMechanism, t: float, min_atom: float) -> float:
    """Intensity at time ``t`` of atoms of size at least ``min_atom``."""
    if mech.levy is None:
        return 0.0
    v = mech.v(t)
    f = lambda z: -np.expm1(-v * (z - min_atom)) / v
    if isinstance(mech.levy, StableLevy):
        return _quad(lambda z: f(z) * mech.levy.density(z), min_atom, math.inf)
    return mech.levy.integrate(f, lo=min_atom, lam=v)


def _small_atom_exponent(mech: BranchingMechanism, eps: float, x: float, min_atom: float) -> float:
    """``int_eps^x dt int_{r < min_atom} pi^{(t)}(dr) (1 - e^{-v(t) r})``."""
    lv, d = mech.levy, min_atom
    if lv is None:
        return 0.0

    def inner(t):
        v = mech.v(t)
        # int Lambda(dz) e^{-vz} [(e^{v m} - 1)/v - m], m = min(z, d)
        small = lambda z: -np.expm1(-v * z) / v - z * np.exp(-v * z)
        c = math.expm1(v * d) / v - d
        large = lambda z: np.exp(-v * z) * c
        if isinstance(lv, StableLevy):
            return _quad(lambda z: small(z) * lv.density(z), 0.0, d) \
                + _quad(lambda z: large(z) * lv.density(z), d, math.inf)
        return lv.integrate(small, hi=d, lam=v) + lv.integrate(large, lo=d, lam=v)

    return _quad(inner, eps, x, epsrel=1e-10)


def tail_via_rho0(mech: BranchingMechanism, eps: float, x: float, n_samples: int,
                  rng: np.random.Generator, min_atom: float = 1e-3) -> tuple[float, float]:
    """Monte Carlo estimate of ``P(A_1^eps > x)`` from the great-aunt measure.

    Averages ``exp(-beta int_eps^x v - sum_{eps <= t_j <= x} v(t_j) Delta_j)``.
    Atoms below ``min_atom`` are integrated out exactly, so the estimator is
    unbiased.  Returns ``(estimate, standard error)``.
    """
    _check_eps(eps)
    if x < eps:
        raise ParameterError("x must be at least epsilon")
    if x == eps:
        return 1.0, 0.0
    drift = mech.beta * _quad(mech.v, eps, x)
    base = drift + _small_atom_exponent(mech, eps, x, min_atom)
    if mech.levy is None:
        return math.exp(-base), 0.0
    vals = np.empty(n_samples)
    for i in range(n_samples):
        t, r = _rho0_atoms(mech, eps, x, rng, min_atom)
        s = sum(mech.v(tj) * rj for tj, rj in zip(t, r))
        vals[i] = math.exp(-base - s)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_samples))


def untruncated_intensity(mech: BranchingMechanism, x: float, n: int) -> float:
    """Candidate intensity ``nu(dx, {n})/dx`` for the coalescent without truncation.

    This is the joint density of ``(A_1^eps, N_1^eps)`` multiplied by
    ``psi_tilde(v(eps))``, which removes every dependence on ``eps``.  It is a
    formula evaluator only; no sampler is built on it.
    """
    v = mech.v(x)
    return mech.psi_tilde(v) * mech._q(int(n), v)


# -- discrete-to-continuous rescaling -----------------------------------------------------------

@dataclass(frozen=True)
class RescalingScheme:
    """Offspring laws ``xi_p`` with time scale ``gamma_p`` and a target mechanism."""

    offspring: Callable
    gamma: Callable[[int], float]
    target: BranchingMechanism
    name: str = ""
    lf_params: Optional[Callable] = None


def lf_critical_scheme(q: float = 0.5) -> RescalingScheme:
    """Critical linear-fractional law with ``gamma_p = p``; the limit is Feller's diffusion."""
    if not 0 < q < 1:
        raise ParameterError("q must lie in (0, 1)")
    # tail ~ (1 - q) / (q n): Feller with beta = q / (1 - q) after time scaling
    return RescalingScheme(lambda p: linear_fractional(q, q), lambda p: float(p),
                           BranchingMechanism(0.0, q / (1.0 - q)), f"lf-critical:q={q:g}",
                           lambda p: (q, q))


def _lf_sup_distance(a: float, b: float, g: float, eps: float, target, far: float = 1e4) -> float:
    """Exact ``sup_x |P(A/g > x | A >= g eps) - target(x)|`` over ``x >= eps``."""
    m0 = math.ceil(g * eps - 1e-12)
    base = lf_branch_tail(a, b, m0 - 1)
    n_hi = int(max(g * far, m0 + 10))
    n = np.arange(m0, n_hi + 1)
    tails = np.array([lf_branch_tail(a, b, int(k)) for k in n]) if a != b else \
        (1.0 - a) / (n * a + 1.0 - a)
    cond = tails / base
    # on [n/g, (n+1)/g) the discrete tail equals cond[n]; target decreases on that interval
    left = np.maximum(n / g, eps)
    right = (n + 1) / g
    t_left = np.array([target(float(s)) for s in left])
    t_right = np.array([target(float(s)) for s in right])
    d = np.maximum(np.abs(cond - t_left), np.abs(cond - t_right))
    return float(max(d.max(), cond[-1], t_right[-1]))


def rescaling_experiment(scheme: RescalingScheme, eps: float, p_list: Sequence[int],
                         n_samples: int, rng: np.random.Generator, horizon_factor: float = 1000.0):
    """Convergence report of the rescaled discrete coalescent to the B^eps chain.

    For every ``p``: the exact sup-distance between the conditional discrete
    tail and the limit tail, and a Monte Carlo comparison of the first
    coalescence level at least ``gamma_p eps`` (rescaled) and its multiplicity
    against draws of the limit chain.
    """
    if scheme.lf_params is None:
        raise ParameterError("the exact distance needs closed-form branch-length tails")
    target = lambda x: a_tail(scheme.target, eps, x)
    rows = []
    for p in p_list:
        a, b = scheme.lf_params(p)
        g = scheme.gamma(p)
        row = {"p": p, "sup_distance": _lf_sup_distance(a, b, g, eps, target)}
        if n_samples:
            dist = scheme.offspring(p)
            H = int(math.ceil(g * horizon_factor))
            tab = iterate_pgf(dist, H)
            smp = ZetaPrimeSampler(dist, tab)
            thr = math.ceil(g * eps - 1e-12)
            A, N = _first_deep_atoms(smp, H, thr, n_samples, rng)
            x = A / g
            lim_A, lim_N = sample_a_n_array(scheme.target, eps, n_samples, rng)
            finite = np.isfinite(x)
            cdf = lambda s: 1.0 - np.array([target(float(t)) if t > eps else 1.0 for t in np.atleast_1d(s)])
            xs = np.sort(x[finite])
            ecdf_hi = np.arange(1, xs.size + 1) / n_samples
            ecdf_lo = np.arange(0, xs.size) / n_samples
            F = cdf(xs)
            row["ks_one_sample"] = float(max(np.max(ecdf_hi - F), np.max(F - ecdf_lo), 0.0))
            cens = H / g
            row["ks_two_sample"] = float(stats.ks_2samp(np.minimum(x, cens), np.minimum(lim_A, cens)).statistic)
            row["censored_fraction"] = float(1.0 - finite.mean())
            row["p_n_gt_1"] = float(np.mean(N[finite] > 1))
            row["p_n_gt_1_limit"] = float(np.mean(lim_N[np.isfinite(lim_A)] > 1))
        rows.append(row)
    return rows


def _first_deep_atoms(smp: ZetaPrimeSampler, H: int, thr: int, n: int, rng: np.random.Generator):
    """Run ``n`` D-chains from a fresh state until the branch length reaches ``thr``.

    Returns that first deep level ``A_{tau_1}`` and its count ``D_{tau_1}(A_{tau_1})``
    (``inf``/0 when the level exceeds the horizon).
    """
    from .discrete import _advance
    As = np.empty(n)
    Ns = np.zeros(n, dtype=np.int64)
    for i in range(n):
        known, resolved = {}, 0
        while True:
            A, N, _ = _scan(known, resolved, H, smp, rng)
            if A == INF or A >= thr:
                As[i] = A
                Ns[i] = N or 0
                break
            known[A] = N
            known = _advance(known, resolved, H, A, N)
    return As, Ns
