"""Exact structural checks on finite kernels.

Two kernel properties drive everything downstream:

* stochastic monotonicity: the tail p(x, (y, inf)) is nondecreasing in x for
  every threshold y; equivalently the quantile map G(x, u) is nondecreasing
  in x for every u.
* the shift-tail property ("condition 1"): p(x, (x + y, inf)) is
  nonincreasing in x for every real shift y; equivalently G(x, u) - x is
  nonincreasing in x.

Both are decided exactly on the grid.  Tails are piecewise constant, so
quantifying over all real shifts reduces to the finite union of shifted
grids, and monotonicity over all state pairs reduces to consecutive pairs by
transitivity.  Each check returns a :class:`CheckReport` carrying the worst
violating witness when it fails.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .kernels import FiniteKernel, KernelError, KernelSequence, build_ginv

__all__ = [
    "Property",
    "Witness",
    "CheckReport",
    "GinvReports",
    "ClosureReport",
    "check_stoch_monotone",
    "check_condition1",
    "check_ginv_monotone",
    "check_supermodular",
    "check_closure",
]

DEFAULT_CHECK_TOL = 1e-10


class Property(enum.Enum):
    STOCH_MONOTONE = "stoch_monotone"
    CONDITION1 = "condition1"
    SUPERMODULAR = "supermodular"


class Witness(NamedTuple):
    """Worst violation: the state pair, the threshold, and the overshoot."""

    x1: float
    x2: float
    threshold: float
    gap: float


@dataclass(frozen=True)
class CheckReport:
    property: Property
    passed: bool
    tolerance: float
    witness: Witness | None = None

    def __post_init__(self):
        if self.passed == (self.witness is not None):
            raise ValueError("witness must be present exactly when the check fails")
        if self.witness is not None and not self.witness.gap > self.tolerance:
            raise ValueError("witness gap must exceed the tolerance")

    def to_dict(self) -> dict:
        return {
            "property": self.property.value,
            "passed": self.passed,
            "tolerance": self.tolerance,
            "witness": None if self.witness is None else self.witness._asdict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


class GinvReports(NamedTuple):
    """Verdicts of the generalized-inverse scan (one per property)."""

    stoch_monotone: CheckReport
    condition1: CheckReport


class ClosureReport(NamedTuple):
    """Re-check of a composed sequence plus the accumulated tolerance budget."""

    stoch_monotone: CheckReport
    condition1: CheckReport
    tol_budget: float

    @property
    def passed(self) -> bool:
        return self.stoch_monotone.passed and self.condition1.passed


def _report(prop: Property, tol: float, worst_gap: float, worst: Witness | None) -> CheckReport:
    if worst is not None and worst_gap > tol:
        return CheckReport(prop, False, tol, worst)
    return CheckReport(prop, True, tol, None)


def check_stoch_monotone(kernel: FiniteKernel, tol: float = DEFAULT_CHECK_TOL) -> CheckReport:
    """Tail test: p(x1, (y, inf)) <= p(x2, (y, inf)) + tol for consecutive x1 < x2.

    Grid thresholds suffice because tails only jump at grid states.
    """
    tails = kernel.tails()
    states = kernel.space.as_array()
    gaps = tails[:-1, :] - tails[1:, :]
    worst, worst_gap = None, -np.inf
    if gaps.size:
        i, j = np.unravel_index(int(np.argmax(gaps)), gaps.shape)
        worst_gap = float(gaps[i, j])
        worst = Witness(float(states[i]), float(states[i + 1]), float(states[j]), worst_gap)
    return _report(Property.STOCH_MONOTONE, tol, worst_gap, worst)


def _is_uniform(states: np.ndarray) -> bool:
    if states.size < 3:
        return True
    d = np.diff(states)
    return bool(np.max(np.abs(d - d[0])) <= 1e-12 * max(1.0, abs(d[0])))


def _snap(states: np.ndarray) -> float:
    """Slack for locating real thresholds between grid states.

    Shifted thresholds x2 + (s - x1) are recombined in floating point and can
    land one ulp off a grid state, flipping a step-function comparison; the
    snap counts states within this slack as "at or below" the threshold.
    """
    return 1e-12 * max(1.0, float(np.max(np.abs(states))))


def _cdf_at(cdf_row: np.ndarray, states: np.ndarray, t: np.ndarray, snap: float = 0.0) -> np.ndarray:
    """F_x(t) = p(x, (-inf, t]) for real thresholds t, given the CDF row of x."""
    pos = np.searchsorted(states, t + snap, side="right")
    full = np.concatenate(([0.0], cdf_row))
    return full[pos]


def _tail_at(cdf_row: np.ndarray, states: np.ndarray, t: np.ndarray, snap: float = 0.0) -> np.ndarray:
    """p(x, (t, inf)) for real thresholds t, given the CDF row of x."""
    return 1.0 - _cdf_at(cdf_row, states, t, snap)


def check_condition1(kernel: FiniteKernel, tol: float = DEFAULT_CHECK_TOL) -> CheckReport:
    """Shift-tail test: p(x1, (x1+y, inf)) >= p(x2, (x2+y, inf)) - tol for x1 < x2.

    Shifted tails are piecewise constant in y with jumps on
    {s - x : s grid state, x in {x1, x2}}, so scanning that finite union is
    exhaustive over all real y.  On uniform grids the shifted thresholds are
    grid states again and the scan is exact integer index arithmetic; uneven
    grids fall back to real thresholds with an ulp snap.
    """
    states = kernel.space.as_array()
    worst, worst_gap = None, -np.inf
    if _is_uniform(states):
        # y = (m - i1) * delta: compare tail(i1, m) against tail(i2, m + 1).
        tails = kernel.tails()
        gaps = tails[1:, 1:] - tails[:-1, :-1]
        if gaps.size:
            i, m = np.unravel_index(int(np.argmax(gaps)), gaps.shape)
            worst_gap = float(gaps[i, m])
            worst = Witness(
                float(states[i]), float(states[i + 1]),
                float(states[m] - states[i]), worst_gap,
            )
        return _report(Property.CONDITION1, tol, worst_gap, worst)

    cdf = np.cumsum(kernel.rows, axis=1)
    snap = _snap(states)
    for i in range(kernel.size - 1):
        x1, x2 = states[i], states[i + 1]
        ys = np.unique(np.concatenate((states - x1, states - x2)))
        gap = _tail_at(cdf[i + 1], states, x2 + ys, snap) - _tail_at(cdf[i], states, x1 + ys, snap)
        j = int(np.argmax(gap))
        if gap[j] > worst_gap:
            worst_gap = float(gap[j])
            worst = Witness(float(x1), float(x2), float(ys[j]), worst_gap)
    return _report(Property.CONDITION1, tol, worst_gap, worst)


def _critical_levels(kernel: FiniteKernel, step: float = 1e-4) -> np.ndarray:
    """u-grid of (0, 1] augmented by every CDF jump level of the kernel."""
    grid = np.arange(step, 1.0 + step / 2, step)
    cdf = np.cumsum(kernel.rows, axis=1)
    levels = cdf[(cdf > 0.0) & (cdf <= 1.0)]
    return np.unique(np.concatenate((grid, levels.ravel(), [1.0])))


def check_ginv_monotone(kernel: FiniteKernel, tol: float = DEFAULT_CHECK_TOL) -> GinvReports:
    """Quantile-map scan equivalent to the two tail tests.

    Evaluates G(x, u) on the 1e-4 u-grid augmented by all CDF jump levels;
    the jump levels make the scan exact (G is constant between consecutive
    pooled levels and left-continuous at them).  Violations G(x1,u) > G(x2,u)
    are scored by the probability margin by which u clears the other row's
    CDF; the worst such margin equals the worst tail gap, so verdicts agree
    with :func:`check_stoch_monotone` / :func:`check_condition1` at the same
    tolerance, floating point included.
    """
    table = build_ginv(kernel)
    states = kernel.space.as_array()
    us = _critical_levels(kernel)
    uniform = _is_uniform(states)
    snap = _snap(states)
    worst_m, gap_m = None, -np.inf
    worst_c, gap_c = None, -np.inf
    prev = np.searchsorted(table.cdf_rows[0], us, side="left")
    for i in range(kernel.size - 1):
        cdf_lo, cdf_hi = table.cdf_rows[i], table.cdf_rows[i + 1]
        cur = np.searchsorted(cdf_hi, us, side="left")
        g_lo, g_hi = prev, cur

        # Monotonicity: G(x1,u) > G(x2,u).  Margin u - F_{x1}(G(x2,u)).
        viol = np.flatnonzero(g_lo > g_hi)
        if viol.size:
            margin = us[viol] - cdf_lo[g_hi[viol]]
            k = int(np.argmax(margin))
            if margin[k] > gap_m:
                gap_m = float(margin[k])
                worst_m = Witness(
                    float(states[i]), float(states[i + 1]), float(us[viol[k]]), gap_m
                )

        # Shift property: G(x2,u)-x2 > G(x1,u)-x1.
        # Margin u - F_{x2}(x2 + (G(x1,u)-x1)).
        if uniform:
            # consecutive pair on a uniform grid: the comparison threshold is
            # the grid state one step above G(x1,u) -- exact index arithmetic
            # a violation forces g_lo + 1 <= g_hi - 1 < n, so indexing is safe
            viol = np.flatnonzero(g_hi > g_lo + 1)
            if viol.size:
                margin = us[viol] - cdf_hi[g_lo[viol] + 1]
                k = int(np.argmax(margin))
                if margin[k] > gap_c:
                    gap_c = float(margin[k])
                    worst_c = Witness(
                        float(states[i]), float(states[i + 1]), float(us[viol[k]]), gap_c
                    )
        else:
            incr_lo = states[g_lo] - states[i]
            incr_hi = states[g_hi] - states[i + 1]
            viol = np.flatnonzero(incr_hi > incr_lo + snap)
            if viol.size:
                t = states[i + 1] + incr_lo[viol]
                margin = us[viol] - _cdf_at(cdf_hi, states, t, snap)
                k = int(np.argmax(margin))
                if margin[k] > gap_c:
                    gap_c = float(margin[k])
                    worst_c = Witness(
                        float(states[i]), float(states[i + 1]), float(us[viol[k]]), gap_c
                    )
        prev = cur

    return GinvReports(
        _report(Property.STOCH_MONOTONE, tol, gap_m, worst_m),
        _report(Property.CONDITION1, tol, gap_c, worst_c),
    )


def check_supermodular(
    h: Callable[[float, float], float],
    grid_x: Sequence[float],
    grid_y: Sequence[float],
    tol: float = DEFAULT_CHECK_TOL,
) -> CheckReport:
    """2x2 increment test on consecutive grid squares.

    h(x1, y2) + h(x2, y1) <= h(x1, y1) + h(x2, y2) on consecutive pairs is
    sufficient for the full grid: the inequality telescopes across the
    lattice.
    """
    xs = np.asarray(sorted(grid_x), dtype=float)
    ys = np.asarray(sorted(grid_y), dtype=float)
    H = np.array([[h(x, y) for y in ys] for x in xs], dtype=float)
    if not np.all(np.isfinite(H)):
        raise KernelError("h must be finite on the whole grid")
    viol = H[:-1, 1:] + H[1:, :-1] - H[:-1, :-1] - H[1:, 1:]
    worst, worst_gap = None, -np.inf
    if viol.size:
        i, j = np.unravel_index(int(np.argmax(viol)), viol.shape)
        worst_gap = float(viol[i, j])
        worst = Witness(float(xs[i]), float(xs[i + 1]), float(ys[j]), worst_gap)
    return _report(Property.SUPERMODULAR, tol, worst_gap, worst)


def check_closure(seq: KernelSequence, tol: float = DEFAULT_CHECK_TOL) -> ClosureReport:
    """Compose the whole sequence and re-run both checks on the product.

    For kernels that individually pass, the product must pass as well; a
    failure here indicates floating-point tolerance leakage, so the report
    carries the accumulated row-tolerance budget alongside the verdicts.
    """
    rows = seq.kernels[0].rows
    budget = seq.kernels[0].row_tol
    for k in seq.kernels[1:]:
        rows = rows @ k.rows
        budget += k.row_tol
    product = FiniteKernel(seq.space, rows, budget)
    return ClosureReport(
        check_stoch_monotone(product, tol),
        check_condition1(product, tol),
        budget,
    )
