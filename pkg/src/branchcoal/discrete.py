"""Markov chains generating the coalescent point process of a standing population.

The D-chain keeps, for every level n, the number of younger surviving
offshoots of the current individual's ancestor n generations back.  The
B-chain keeps the point measure of pending coalescence levels with their
multiplicities; its smallest atom is the next branch length.

Levels that have never been inspected are "fresh": their D-values are
independent copies of zeta'_n and are only drawn when a scan reaches them.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import HorizonError, InconsistentTrajectoryError, MalformedDrawError, ParameterError
from .measure import INF, Level, PointMassMeasure, support_min
from .offspring import (IteratedPgfTable, OffspringDistribution, ZetaPrimeSampler, iterate_pgf,
                        lf_branch_tail)

__all__ = [
    "DSequence", "CoalescentTrajectory", "BChainState", "support_min", "sample_A_zeta",
    "d_step", "b_step", "b_chain_step", "d_chain", "b_chain", "b_from_d",
    "coalescence_time", "residual_multiplicities", "ResidualRecords",
]


# -- D-chain -----------------------------------------------------------------------

@dataclass(frozen=True)
class DSequence:
    """State of the D-chain.

    ``known`` lists inspected levels with their counts (zeros included).
    Unlisted levels ``<= resolved`` are zero; unlisted levels above
    ``resolved`` (up to ``horizon``) are fresh, i.e. not yet drawn.
    """

    horizon: int
    known: tuple[tuple[int, int], ...] = ()
    resolved: int = 0

    def __post_init__(self) -> None:
        prev = 0
        for n, c in self.known:
            if not prev < n <= self.horizon:
                raise ParameterError(f"levels must increase within 1..{self.horizon}")
            if c < 0:
                raise ParameterError("counts must be nonnegative")
            prev = n
        if not 0 <= self.resolved <= self.horizon:
            raise ParameterError("resolved level outside the horizon")

    @classmethod
    def fresh(cls, horizon: int) -> "DSequence":
        """All levels undrawn: the law of the chain's first state."""
        return cls(horizon)

    @classmethod
    def explicit(cls, horizon: int, counts: Mapping[int, int]) -> "DSequence":
        """Fully specified state; unlisted levels are zero."""
        return cls(horizon, tuple(sorted((int(n), int(c)) for n, c in counts.items())), horizon)

    def as_dict(self) -> dict[int, int]:
        return dict(self.known)

    def value(self, n: int) -> Optional[int]:
        """Count at level ``n``, or ``None`` if that level is still fresh."""
        d = dict(self.known)
        if n in d:
            return d[n]
        return 0 if n <= self.resolved else None

    def first_nonzero(self) -> Optional[Level]:
        """Smallest positive level when it is determined without drawing."""
        for n, c in self.known:
            if n > self.resolved:
                break
            if c > 0:
                return n
        if self.resolved == self.horizon:
            return next((n for n, c in self.known if c > 0), INF)
        return None


def _scan(known: dict, resolved: int, horizon: int, sampler: ZetaPrimeSampler,
          rng: np.random.Generator, skip=frozenset(), limit: Optional[int] = None):
    """Locate the smallest nonzero level, drawing fresh levels lazily.

    Returns ``(A, N, fresh)`` with ``A = inf`` and ``N = None`` when every level
    up to ``limit`` (default: the horizon) is zero.  Levels in ``skip`` are
    treated as known zeros.  ``fresh`` tells whether ``A`` was a fresh level.
    """
    top = horizon if limit is None else min(limit, horizon)
    for n in sorted(k for k in known if k <= min(resolved, top)):
        if known[n] > 0:
            return n, known[n], False
    lo = resolved + 1
    barriers = sorted({k for k in known if k > resolved} | {k for k in skip if k > resolved})
    for b in barriers + [top + 1]:
        if b > top + 1:
            b = top + 1
        n = sampler.first_nonzero(lo, min(b - 1, top), rng)
        if n is not None:
            return n, sampler.positive_value(n, rng), True
        if b > top:
            break
        if b in known and b not in skip and known[b] > 0:
            return b, known[b], False
        lo = b + 1
    return INF, None, False


def _advance(known: dict, resolved: int, horizon: int, A, N) -> dict:
    """Known levels of the next D-state after reading branch length ``A``."""
    if A == INF:
        return {}
    nxt = {n: c for n, c in known.items() if n > A}
    for n in range(A + 1, resolved + 1):
        nxt.setdefault(n, 0)
    nxt[A] = N - 1
    return nxt


def _sampler_for(dist, table, horizon, sampler=None) -> ZetaPrimeSampler:
    if sampler is not None:
        return sampler
    if table is None:
        table = iterate_pgf(dist, horizon)
    if horizon > table.n_max:
        raise HorizonError(f"horizon {horizon} exceeds the table horizon {table.n_max}")
    return ZetaPrimeSampler(dist, table)


def d_step(d: DSequence, dist: OffspringDistribution, table: IteratedPgfTable,
           rng: np.random.Generator, sampler: Optional[ZetaPrimeSampler] = None):
    """One transition of the D-chain.

    Returns ``(d_next, A)`` where ``A`` is the smallest nonzero level of ``d``
    (``inf`` when all levels up to the horizon vanish).  Levels above ``A``
    are kept, level ``A`` is decremented and levels below ``A`` become fresh.
    """
    d_next, A, _ = _d_step_full(d, _sampler_for(dist, table, d.horizon, sampler), rng)
    return d_next, A


def _d_step_full(d: DSequence, sampler: ZetaPrimeSampler, rng):
    known = d.as_dict()
    A, N, _ = _scan(known, d.resolved, d.horizon, sampler, rng)
    if A != INF:
        known[A] = N
    nxt = _advance(known, d.resolved, d.horizon, A, N)
    return DSequence(d.horizon, tuple(sorted(nxt.items())), 0), A, N


def sample_A_zeta(dist: OffspringDistribution, table: IteratedPgfTable, horizon: int,
                  rng: np.random.Generator, skip: Iterable[int] = (), limit: Optional[int] = None,
                  sampler: Optional[ZetaPrimeSampler] = None, resolve_censored: bool = False):
    """Draw ``(A, N)`` with the law of ``(A_1, zeta'_{A_1})``.

    Fresh coordinates zeta'_n are scanned upward from n = 1 until one is
    nonzero.  Levels in ``skip`` are known zeros and are passed over; the scan
    stops after ``limit`` (default: ``horizon``).  A draw with no nonzero level
    is returned as ``(inf, None)``.

    With ``resolve_censored`` (linear-fractional laws only) a censored draw is
    completed exactly beyond the horizon with the closed-form tail, so that
    ``inf`` means a genuinely infinite branch length.
    """
    smp = _sampler_for(dist, table, horizon, sampler)
    A, N, _ = _scan({}, 0, horizon, smp, rng, frozenset(skip), limit)
    if A == INF and resolve_censored:
        return _resolve_lf_tail(dist, horizon, rng)
    return A, N


def _resolve_lf_tail(dist: OffspringDistribution, horizon: int, rng: np.random.Generator):
    if not dist.is_lf:
        raise ParameterError("exact resolution of censored draws needs a linear-fractional law")
    a, b = dist._lf
    base = lf_branch_tail(a, b, horizon)
    atom = lf_branch_tail(a, b, INF)
    u = rng.random() * base
    if u < atom:
        return INF, None
    # smallest n > horizon with tail(n) <= u, by doubling then bisection
    lo, hi = horizon, horizon + 1
    while lf_branch_tail(a, b, hi) > u:
        lo, hi = hi, 2 * hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if lf_branch_tail(a, b, mid) > u:
            lo = mid
        else:
            hi = mid
    n = hi
    # zeta'_n for these laws is geometric with success probability 1 - b_n
    p_prev = _lf_survival(a, b, n - 1)
    b_n = b * p_prev / (1.0 - b + b * p_prev)
    return n, int(rng.geometric(1.0 - b_n)) if b_n > 0 else 1


def _lf_survival(a: float, b: float, n: int) -> float:
    """p_n for the linear-fractional law."""
    if a == b:
        return (1.0 - a) / (1.0 - a + n * a)
    m = (1.0 - a) / (1.0 - b)
    # 1 - f_n(0) = m^n (1 - s0) / (m^n - s0) with fixed point s0 = a / b
    s0 = a / b if b > 0 else math.inf
    if s0 == math.inf:
        return (1.0 - a) ** n
    mn = m**n
    return mn * (1.0 - s0) / (mn - s0)


# -- B-chain -----------------------------------------------------------------------

def _b_transition(b: PointMassMeasure, A, N, exclude_tie: bool = True) -> PointMassMeasure:
    if A != INF and (N is None or int(N) != N or N < 1):
        raise MalformedDrawError(f"finite level {A} needs a positive integer multiplicity, got {N}")
    a1 = b.support_min()
    b_star = b.remove_min_unit()
    a1_star = b_star.support_min()
    if A < a1_star and not (exclude_tie and A == a1):
        return b_star.add(A, int(N))
    return b_star


def b_step(b: PointMassMeasure, draw) -> PointMassMeasure:
    """Deterministic B-chain update given an independent draw ``(A, N)``.

    One unit of mass is removed at the smallest level ``a_1``; the draw is
    added as ``N`` units at level ``A`` when ``A`` lies strictly below the
    new smallest level and differs from ``a_1``.
    """
    A, N = draw
    return _b_transition(b, A, N, exclude_tie=True)


@dataclass(frozen=True)
class BChainState:
    """B-measure together with the levels currently known to hold no offshoots.

    A level whose last unit of mass is consumed stays empty until a larger
    branch length is read; draws must skip it meanwhile.  ``depleted`` holds
    those levels.
    """

    measure: PointMassMeasure = PointMassMeasure()
    depleted: frozenset = frozenset()


def b_chain_step(state: BChainState, dist: OffspringDistribution, table: IteratedPgfTable,
                 horizon: int, rng: np.random.Generator,
                 sampler: Optional[ZetaPrimeSampler] = None,
                 track_depleted: bool = True) -> BChainState:
    """One transition of the B-chain.

    With ``track_depleted`` the draw avoids levels emptied earlier, which
    makes the chain reproduce the D-chain law exactly.  Without it every
    draw is an unconditioned ``(A_1, zeta'_{A_1})`` copy.
    """
    smp = _sampler_for(dist, table, horizon, sampler)
    b = state.measure
    a1 = b.support_min()
    a1_star = b.remove_min_unit().support_min()
    if track_depleted:
        gone = set(state.depleted)
        if b and b.weight_at(a1) == 1:
            gone.add(a1)
        limit = horizon if a1_star == INF else int(a1_star) - 1
        A, N, _ = _scan({}, 0, horizon, smp, rng, frozenset(gone), limit)
        nxt = b_step(b, (A, N))
        s = nxt.support_min()
        return BChainState(nxt, frozenset(g for g in gone if g > s))
    A, N, _ = _scan({}, 0, horizon, smp, rng)
    return BChainState(b_step(b, (A, N)), frozenset())


# -- trajectories --------------------------------------------------------------------

@dataclass(frozen=True)
class CoalescentTrajectory:
    """Branch lengths with, optionally, multiplicities and B-measures."""

    A: tuple
    N: Optional[tuple] = None
    B: Optional[tuple[PointMassMeasure, ...]] = None
    D: Optional[tuple[DSequence, ...]] = None

    def __post_init__(self) -> None:
        if any(not a >= 1 for a in self.A):
            raise ParameterError("branch lengths are at least 1")
        if self.B is not None:
            for i, (a, bm) in enumerate(zip(self.A, self.B)):
                if bm.support_min() != a:
                    raise InconsistentTrajectoryError(f"B_{i + 1} does not start at A_{i + 1}")

    def __len__(self) -> int:
        return len(self.A)


def d_chain(dist: OffspringDistribution, table: Optional[IteratedPgfTable], steps: int,
            rng: np.random.Generator, horizon: Optional[int] = None,
            start: Optional[DSequence] = None, keep_states: bool = False,
            sampler: Optional[ZetaPrimeSampler] = None) -> CoalescentTrajectory:
    """Run the D-chain for ``steps`` transitions from ``start`` (default: all fresh).

    Records ``A_i`` and ``N_i = D_i(A_i)``; with ``keep_states`` also the
    states ``D_i`` with every level up to ``A_i`` resolved.
    """
    if horizon is None:
        horizon = start.horizon if start is not None else (table.n_max if table else None)
    if horizon is None:
        raise ParameterError("a horizon is required")
    smp = _sampler_for(dist, table, horizon, sampler)
    d = start or DSequence.fresh(horizon)
    known, resolved = d.as_dict(), d.resolved
    As, Ns, states = [], [], []
    for _ in range(steps):
        A, N, _ = _scan(known, resolved, horizon, smp, rng)
        if A != INF:
            known[A] = N
        if keep_states:
            res = max(resolved, A if A != INF else horizon)
            full = {n: c for n, c in known.items()}
            states.append(DSequence(horizon, tuple(sorted(full.items())), res))
        As.append(A)
        Ns.append(N)
        known = _advance(known, resolved, horizon, A, N)
        resolved = 0
    return CoalescentTrajectory(tuple(As), tuple(Ns), None, tuple(states) if keep_states else None)


def b_chain(dist: OffspringDistribution, table: Optional[IteratedPgfTable], steps: int,
            rng: np.random.Generator, horizon: Optional[int] = None,
            track_depleted: bool = True,
            sampler: Optional[ZetaPrimeSampler] = None) -> CoalescentTrajectory:
    """Run the B-chain from the null measure; ``A_i`` is the smallest atom of ``B_i``."""
    horizon = horizon if horizon is not None else table.n_max
    smp = _sampler_for(dist, table, horizon, sampler)
    state = BChainState()
    Bs = []
    for _ in range(steps):
        state = b_chain_step(state, dist, smp.table, horizon, rng, smp, track_depleted)
        Bs.append(state.measure)
    return CoalescentTrajectory(tuple(b.support_min() for b in Bs), None, tuple(Bs))


def b_from_d(traj) -> list[PointMassMeasure]:
    """B-measures read off a D-chain trajectory.

    Accepts a :class:`CoalescentTrajectory` with ``A`` and ``N`` (or ``D``
    states) filled in, or a sequence of ``(A_i, D_i(A_i))`` pairs.
    """
    if isinstance(traj, CoalescentTrajectory):
        if traj.D is not None:
            pairs = []
            for a, d in zip(traj.A, traj.D):
                first = d.first_nonzero()
                if first != a:
                    raise InconsistentTrajectoryError(
                        f"recorded A = {a} but the state's first nonzero level is {first}")
                pairs.append((a, None if a == INF else d.value(a)))
        elif traj.N is not None:
            pairs = list(zip(traj.A, traj.N))
        else:
            raise InconsistentTrajectoryError("trajectory lacks multiplicities")
    else:
        pairs = list(traj)
    out: list[PointMassMeasure] = []
    b = PointMassMeasure()
    for i, (a, n) in enumerate(pairs):
        if a != INF and (n is None or n < 1):
            raise InconsistentTrajectoryError(f"D_{i + 1}(A_{i + 1}) must be positive")
        if i == 0:
            b = PointMassMeasure() if a == INF else PointMassMeasure.single(a, n)
        else:
            a1 = b.support_min()
            b_star = b.remove_min_unit()
            if a < b_star.support_min() and a != a1:
                b = b_star.add(a, n)
            else:
                b = b_star
        if b.support_min() != a:
            raise InconsistentTrajectoryError(
                f"B_{i + 1} starts at {b.support_min()} but A_{i + 1} = {a}")
        if a != INF and b.weight_at(a) != n:
            raise InconsistentTrajectoryError(
                f"B_{i + 1} carries {b.weight_at(a)} units at A_{i + 1} but D gives {n}")
        out.append(b)
    return out


def coalescence_time(A: Sequence, i: int, j: int):
    """Coalescence level of standing individuals ``i < j`` (1-based)."""
    if not 1 <= i < j <= len(A) + 1:
        raise IndexError(f"need 1 <= i < j <= {len(A) + 1}, got i={i}, j={j}")
    return max(A[i - 1: j - 1])


@dataclass(frozen=True)
class ResidualRecords:
    """For each i: ``t_i`` (first later index with a larger value, 1-based; ``None``
    if not inside the window) and ``N_i`` (repeats of ``A_i`` before ``t_i``)."""

    A: tuple
    t: tuple
    N: tuple

    def count(self, i: int, k: int) -> Optional[int]:
        """``N_{ik}``: repeats of ``A_i`` in ``k..t_i - 1``; ``None`` if unresolved."""
        a, t = self.A[i - 1], self.t[i - 1]
        if a == INF:
            return 0
        if k >= (t if t is not None else len(self.A) + 1) and t is not None:
            return 0
        if t is None:
            return None
        return sum(1 for j in range(k, t) if self.A[j - 1] == a)

    def measure(self, k: int) -> Optional[PointMassMeasure]:
        """The measure built from residual counts at step ``k``; ``None`` if unresolved."""
        masses: dict = {}
        kept: list = []
        for i in range(1, k + 1):
            n_ik = self.count(i, k)
            if n_ik is None:
                return None
            if not n_ik:
                continue
            if all(self.A[i - 1] < self.A[ip - 1] for ip in kept):
                masses[self.A[i - 1]] = masses.get(self.A[i - 1], 0) + n_ik
            kept.append(i)
        return PointMassMeasure.from_mapping(masses)


def residual_multiplicities(A: Sequence) -> ResidualRecords:
    A = tuple(A)
    ts, ns = [], []
    for i, a in enumerate(A, start=1):
        t = next((s for s in range(i, len(A) + 1) if A[s - 1] > a), None)
        ts.append(t)
        end = t if t is not None else len(A) + 1
        ns.append(sum(1 for j in range(i, end) if A[j - 1] == a) if a != INF else 0)
    return ResidualRecords(A, tuple(ts), tuple(ns))


# -- export --------------------------------------------------------------------------

def _fmt(x) -> str:
    return "+inf" if x == INF else str(x)


def write_trajectory_csv(traj: CoalescentTrajectory, path, measures=None) -> None:
    """Write ``step,A,levels,weights`` rows; lists are ``;``-joined."""
    measures = measures if measures is not None else traj.B
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["step", "A", "levels", "weights"])
        for i, a in enumerate(traj.A, start=1):
            if measures is not None:
                bm = measures[i - 1]
                levels = ";".join(_fmt(x) for x in bm.levels)
                weights = ";".join(str(w) for w in bm.weights)
            else:
                levels = weights = ""
            wr.writerow([i, _fmt(a), levels, weights])
