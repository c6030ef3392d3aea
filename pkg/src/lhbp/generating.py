"""Monotone fixed-point engine for truncated progeny generating vectors.

A level-k truncation pins coordinate k+1 to a boundary value s and applies
the generating vector to coordinates 0..k.  Starting from (0, ..., 0, s) the
iteration increases componentwise to the minimal fixed point; coordinate i of
the limit is the composed embedded generating function evaluated at s, so the
boundary s = 0 yields the global extinction vector of the truncated process
and s = 1 its partial extinction vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import (Example2Model, ExplicitModel, LHBPModel, ProductLaw,
                    TableLaw, TridiagonalModel)

EPS_FLOOR = 10 * np.finfo(float).eps


class ComputationError(RuntimeError):
    """Raised when a gating computation fails to converge."""


@dataclass
class TruncationResult:
    level: int
    boundary: float
    vector: np.ndarray
    iterations: int
    residual: float
    converged: bool


# ---------------------------------------------------------------------------
# compiled sweeps

class _GenericSweep:
    """Vectorised simultaneous update built from per-type law entries.

    Types are grouped into blocks sharing an entry pattern; each entry
    contributes prob * prod_offsets u[idx + off] ** count elementwise.
    """

    def __init__(self, model: LHBPModel, k: int):
        self.k = k
        self.blocks = []
        if isinstance(model, ExplicitModel) and k > model.tail_from + 1:
            head_end = model.tail_from
            for i in range(head_end + 1):
                self.blocks.append(self._single_block(model, i))
            idx = np.arange(head_end + 1, k + 1)
            self.blocks.append(self._pattern_block(model.law(head_end + 1),
                                                   head_end + 1, idx))
        else:
            for i in range(k + 1):
                self.blocks.append(self._single_block(model, i))

    @staticmethod
    def _law_pattern(law, owner: int):
        """Entries as (prob, ((offset, count), ...)) relative to the owner."""
        out = []
        if isinstance(law, TableLaw):
            for counts, p in law.entries:
                out.append((p, tuple((t - owner, float(c)) for t, c in counts)))
        else:
            assert isinstance(law, ProductLaw)
            expanded = [((), 1.0)]
            for t, pmf in law.coords:
                expanded = [(fac + (((t - owner), c),) if c else fac, w * p)
                            for fac, w in expanded for c, p in pmf]
            for fac, w in expanded:
                out.append((w, fac))
        return out

    def _single_block(self, model, i):
        idx = np.array([i])
        entries = [(np.array([p]), fac)
                   for p, fac in self._law_pattern(model.law(i), i)]
        return idx, entries

    def _pattern_block(self, law, owner, idx):
        entries = [(np.full(len(idx), p), fac)
                   for p, fac in self._law_pattern(law, owner)]
        return idx, entries

    def __call__(self, u, out):
        out[self.k + 1] = u[self.k + 1]
        for idx, entries in self.blocks:
            acc = np.zeros(len(idx))
            for probs, factors in entries:
                term = probs.copy()
                for off, cnt in factors:
                    term *= u[idx + off] ** cnt
                acc += term
            out[idx] = acc


class _Example2Sweep:
    def __init__(self, model: Example2Model, k: int):
        self.k = k
        self.gamma = model.gamma
        j = np.arange(1, k + 1, dtype=float)
        self.cj = (j + 1) / (4 * j)
        self.dj = (3 * j - 1) / (4 * j)

    def __call__(self, u, out):
        k, g = self.k, self.gamma
        out[0] = 0.25 * u[1] ** 4 + 0.75
        if k >= 1:
            inner = g * u[0:k] + (1 - g) * u[2:k + 2]
            out[1:k + 1] = self.cj * inner ** 4 + self.dj
        out[k + 1] = u[k + 1]


class _TridiagonalSweep:
    def __init__(self, model: TridiagonalModel, k: int):
        self.k = k
        self.m = model
        # scale factors for the upward coordinate of types 0..k
        self.scale = np.array([model._scale(i) for i in range(k + 1)])
        self.w = np.where(np.isinf(self.scale), 0.0, 1.0 / self.scale)

    @staticmethod
    def _pgf(mean, x):
        fl = math.floor(mean)
        fr = mean - fl
        if fr == 0.0:
            return x ** fl
        return (1 - fr) * x ** fl + fr * x ** (fl + 1)

    def __call__(self, u, out):
        k, m = self.k, self.m
        up = u[1:k + 2]
        with np.errstate(invalid="ignore"):
            xc = up ** self.scale
        xc = np.where((up == 1.0), 1.0, xc)  # 1 ** inf
        f_up = self.w * self._pgf(m.c, xc) + (1.0 - self.w)
        val = f_up
        if m.b:
            val = val * self._pgf(m.b, u[0:k + 1])
        if m.a and k >= 1:
            val = val.copy()
            val[1:] *= self._pgf(m.a, u[0:k])
        out[0:k + 1] = val
        out[k + 1] = u[k + 1]


@lru_cache(maxsize=64)
def _compiled(model: LHBPModel, k: int):
    if isinstance(model, Example2Model):
        return _Example2Sweep(model, k)
    if isinstance(model, TridiagonalModel):
        return _TridiagonalSweep(model, k)
    return _GenericSweep(model, k)


def generic_sweep(model: LHBPModel, k: int):
    """Uncached generic sweep; cross-checks the family fast paths in tests."""
    return _GenericSweep(model, k)


# ---------------------------------------------------------------------------
# iteration

def iterate_to_limit(model: LHBPModel, k: int, s: float, tol: float = 1e-12,
                     max_iter: int = 10_000_000,
                     start: np.ndarray | None = None) -> TruncationResult:
    """Iterate the level-k truncated generating vector with boundary s.

    The start vector defaults to (0, ..., 0, s); any supplied start must lie
    below the target fixed point and below its own image (warm starts from a
    lower truncation level satisfy this). Iteration is componentwise
    nondecreasing.  A final Aitken step extrapolates the geometric tail, which
    sharpens slowly mixing truncations without leaving the bracket [u_n, u*].
    """
    if not (0.0 <= s <= 1.0):
        raise ValueError(f"boundary must lie in [0, 1], got {s}")
    sweep = _compiled(model, k)
    u = np.zeros(k + 2) if start is None else np.asarray(start, dtype=float).copy()
    u[k + 1] = s
    new = np.empty_like(u)
    prev_delta = math.inf
    n = 0
    converged = False
    while n < max_iter:
        n += 1
        sweep(u, new)
        delta = float(np.max(new - u))
        if delta <= tol or delta <= EPS_FLOOR:
            converged = True
            break
        u, new = new, u
        prev_delta = delta
    if not converged:
        sweep(u, new)
        delta = float(np.max(np.abs(new - u)))
        return TruncationResult(k, s, new.copy(), n, delta, False)
    refined = new
    if 0.0 < delta < prev_delta < math.inf:
        rho = delta / prev_delta
        candidate = np.minimum(new + (new - u) * (rho / (1.0 - rho)), 1.0)
        candidate[k + 1] = s
        if _residual(sweep, candidate) <= _residual(sweep, new):
            refined = candidate
    res = _residual(sweep, refined)
    return TruncationResult(k, s, refined.copy(), n, res, True)


def _residual(sweep, u) -> float:
    img = np.empty_like(u)
    sweep(u, img)
    return float(np.max(np.abs(img - u)))


# ---------------------------------------------------------------------------
# extinction ladder

@dataclass
class ExtinctionLadder:
    levels: tuple[int, ...]
    window: int
    q_results: list[TruncationResult]
    qtilde_results: list[TruncationResult]
    q_estimate: np.ndarray
    qtilde_estimate: np.ndarray
    q_stall: str
    qtilde_stall: str
    converged: bool

    @property
    def q_window(self) -> np.ndarray:
        return np.array([r.vector[:self.window] for r in self.q_results])

    @property
    def qtilde_window(self) -> np.ndarray:
        return np.array([r.vector[:self.window] for r in self.qtilde_results])


def default_schedule(cap: int) -> tuple[int, ...]:
    """Powers of two up to the cap (geometric levels suit stall detection)."""
    levels = []
    k = 1
    while k <= cap:
        levels.append(k)
        k *= 2
    if levels[-1] != cap:
        levels.append(cap)
    return tuple(levels)


def extinction_ladder(model: LHBPModel, schedule, window: int = 8,
                      tol: float = 1e-12) -> ExtinctionLadder:
    """Run both boundaries over an increasing truncation schedule.

    Each global-extinction run warm-starts from the previous level (padded
    with zeros), which makes the reported ladder nondecreasing by
    construction; each partial run warm-starts from the same level's global
    vector, which enforces the q <= qtilde sandwich.
    """
    schedule = tuple(schedule)
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be strictly increasing")
    if window > schedule[0] + 2:
        raise ValueError("window exceeds the smallest truncation size")
    q_results, qt_results = [], []
    prev = None
    for k in schedule:
        start = None
        if prev is not None:
            start = np.zeros(k + 2)
            start[:len(prev) - 1] = prev[:-1]
        rq = iterate_to_limit(model, k, 0.0, tol=tol, start=start)
        start_t = rq.vector.copy()
        start_t[k + 1] = 1.0
        rt = iterate_to_limit(model, k, 1.0, tol=tol, start=start_t)
        # the sandwich holds mathematically; guard the last float ulp
        rt.vector = np.maximum(rt.vector, rq.vector)
        prev = rq.vector
        q_results.append(rq)
        qt_results.append(rt)
    q_est, q_stall = _extrapolate([r.vector[:window] for r in q_results], tol)
    qt_est, qt_stall = _extrapolate([r.vector[:window] for r in qt_results], tol)
    q_est = np.minimum(q_est, qt_est)
    return ExtinctionLadder(
        levels=schedule, window=window,
        q_results=q_results, qtilde_results=qt_results,
        q_estimate=q_est, qtilde_estimate=qt_est,
        q_stall=q_stall, qtilde_stall=qt_stall,
        converged=all(r.converged for r in q_results + qt_results),
    )


def _extrapolate(vectors, tol):
    """Geometric (Richardson-style) limit estimate with a stall class."""
    last = vectors[-1].astype(float).copy()
    if len(vectors) < 3:
        return np.clip(last, 0.0, 1.0), "short"
    d_prev = float(np.max(np.abs(vectors[-2] - vectors[-3])))
    d_last = float(np.max(np.abs(vectors[-1] - vectors[-2])))
    if d_last < tol:
        return np.clip(last, 0.0, 1.0), "converged"
    stall = "improving"
    if d_prev > 0:
        r = d_last / d_prev
        if r >= 0.7:
            stall = "stalled-slow"
        if 0.0 < r < 1.0:
            last = last + (vectors[-1] - vectors[-2]) * (r / (1.0 - r))
    return np.clip(last, 0.0, 1.0), stall
