"""Construction and diagnostics of the fixed-point continuum.

For an irreducible model the fixed points of the generating vector form a
curve parametrised by the type-0 coordinate: every anchor between the global
and partial extinction values extends to a unique vector, built index by
index through monotone inversion.  Each coordinate solves the scalar
equation G_j(s_0, ..., s_j, x) = s_j in its last argument, which coincides
with inverting the embedded generating function g_j along the curve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedded import embedded_moments, eval_g
from .model import G_value, LHBPModel

ENDPOINT_SLACK = 1e-6


class RangeError(ValueError):
    """Target lies outside the reachable interval [g_k(0), g_k(1)]."""


def invert_g(model: LHBPModel, k: int, target: float, tol: float = 1e-12,
             max_steps: int = 60) -> float:
    """Unique preimage of ``target`` under the monotone map g_k."""
    g0 = eval_g(model, k, 0.0)
    g1 = eval_g(model, k, 1.0)
    if not (g0 - tol <= target <= g1 + tol):
        raise RangeError(
            f"target {target!r} outside [g_{k}(0), g_{k}(1)] = [{g0}, {g1}]")
    if abs(g0 - target) <= tol:
        return 0.0
    if abs(g1 - target) <= tol:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        gm = eval_g(model, k, mid)
        if abs(gm - target) <= tol:
            return mid
        if gm < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class FixedPointCurve:
    anchor_index: int
    anchor_value: float
    values: np.ndarray          # s_0 .. s_J (shorter if truncated)
    residual: float             # max |G_i(s) - s_i| over the window
    decay: np.ndarray           # (1 - s_k) * m_{0->k-1} where defined
    failure_index: int | None   # first index whose inversion left [0, 1]

    @property
    def ok(self) -> bool:
        return self.failure_index is None


def _solve_coordinate(model: LHBPModel, j: int, buf: np.ndarray,
                      target: float, tol: float) -> float | None:
    """Solve G_j(s_0..s_j, x) = target for x in [0, 1]; None if out of range."""

    def f(x: float) -> float:
        buf[j + 1] = x
        return G_value(model, j, buf)

    lo, hi = 0.0, 1.0
    flo, fhi = f(0.0), f(1.0)
    if not (flo - 1e-12 <= target <= fhi + 1e-12):
        return None
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm - target) <= tol or hi - lo <= 1e-16:
            return mid
        if fm < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def curve_from_anchor(model: LHBPModel, s0: float, J: int, tol: float = 1e-12,
                      bounds: tuple[float, float] | None = None) -> FixedPointCurve:
    """Extend an index-0 anchor to a fixed-point vector over indices 0..J.

    ``bounds`` should be (q_0, qt_0) approximations from a truncation ladder;
    anchors outside them (with a small slack) are rejected outright.  A range
    failure at some index truncates the curve there: the anchor is then
    numerically indistinguishable from an extinction vector coordinate.
    """
    if bounds is not None:
        lo, hi = bounds
        if not (lo - ENDPOINT_SLACK <= s0 <= hi + ENDPOINT_SLACK):
            raise RangeError(
                f"anchor {s0!r} outside [{lo}, {hi}] (+/- {ENDPOINT_SLACK})")
    solve_tol = min(tol, 1e-13)
    buf = np.zeros(J + 2)
    buf[0] = s0
    failure = None
    n_vals = 1
    for j in range(J):
        x = _solve_coordinate(model, j, buf, buf[j], solve_tol)
        if x is None:
            failure = j
            break
        buf[j + 1] = x
        n_vals += 1
    values = buf[:n_vals].copy()
    residual = 0.0
    for i in range(n_vals - 1):
        residual = max(residual, abs(G_value(model, i, values) - values[i]))
    mom = embedded_moments(model, max(n_vals - 2, 0), with_a=False)
    usable = min(n_vals - 1, mom.ok_through + 1)
    decay = (1.0 - values[1:usable + 1]) * mom.m0[:usable]
    return FixedPointCurve(0, s0, values, residual, decay, failure)


# ---------------------------------------------------------------------------
# decay diagnostics


@dataclass
class TrendClass:
    label: str                 # "stabilizing" | "diverging" | "vanishing"
    level: float | None        # the stabilised constant, when stabilizing


def classify_trend(seq: np.ndarray) -> TrendClass:
    """Finite-window trend of a positive sequence.

    Stabilizing when the last quarter's relative range stays under 5%;
    otherwise the log-slope per index decides, with its sign breaking the
    tie for drifts slower than 1% per index (a linear ramp over a long
    window moves the range far more than the local slope).
    """
    seq = np.asarray(seq, dtype=float)
    seq = seq[np.isfinite(seq)]
    if len(seq) == 0:
        return TrendClass("stabilizing", None)
    tail = seq[-max(2, len(seq) // 4):]
    top = float(np.max(tail))
    if top <= 0.0:
        return TrendClass("vanishing", None)
    rel = (top - float(np.min(tail))) / top
    if rel < 0.05:
        return TrendClass("stabilizing", float(np.mean(tail)))
    logs = np.log(np.maximum(tail, 1e-300))
    slope = (logs[-1] - logs[0]) / max(len(tail) - 1, 1)
    return TrendClass("diverging" if slope > 0 else "vanishing", None)


@dataclass
class DecayReport:
    decay: np.ndarray
    decay_trend: TrendClass
    ratio_q: np.ndarray | None
    ratio_q_trend: TrendClass | None
    ratio_qtilde: np.ndarray | None
    ratio_qtilde_trend: TrendClass | None


def decay_diagnostics(curve: FixedPointCurve, moments,
                      q_window: np.ndarray | None = None,
                      qtilde_window: np.ndarray | None = None) -> DecayReport:
    """Report (1 - s_k) m_{0->k-1} and the gap ratios against the extinction
    vectors, each with a finite-window trend class."""
    usable = min(len(curve.values) - 1, moments.ok_through + 1)
    decay = (1.0 - curve.values[1:usable + 1]) * moments.m0[:usable]

    def ratios(window):
        if window is None:
            return None, None
        n = min(len(window), len(curve.values))
        gap_s = 1.0 - curve.values[:n]
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(gap_s > 0, (1.0 - window[:n]) / gap_s, np.inf)
        return r, classify_trend(r)

    rq, tq = ratios(q_window)
    rt, tt = ratios(qtilde_window)
    return DecayReport(decay, classify_trend(decay), rq, tq, rt, tt)
