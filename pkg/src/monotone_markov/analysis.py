"""Exact linear-algebra engine: stationary laws, curves, shape certification.

All quantities here are computed by dense matrix/vector products, never by
simulation, so curve values carry only floating-point error.  Shape
certificates mechanize the structural claims (nonnegative / monotone /
convex) on the sampled time grid; tolerances are explicit everywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .checks import check_stoch_monotone
from .kernels import FiniteKernel, KernelError, OrderedStateSpace, n_step

__all__ = [
    "Distribution",
    "Curve",
    "ShapeCertificate",
    "PreconditionError",
    "StationarySolveError",
    "stationary",
    "require_unique_stationary",
    "covariance_curve",
    "supermod_curve",
    "difference_curve",
    "three_point_check",
    "four_point_check",
    "transient_mean_curve",
    "transient_variance_curve",
    "transient_pair_expectation",
    "certify_shape",
    "curve_to_csv",
    "curve_to_json",
]

DEFAULT_STATIONARY_TOL = 1e-10
DEFAULT_SHAPE_TOL = 1e-10


class PreconditionError(ValueError):
    """A theorem hypothesis the operation relies on does not hold."""


class StationarySolveError(RuntimeError):
    """No probability vector solves the balance equations within tolerance."""


@dataclass(frozen=True, eq=False)
class Distribution:
    """Probability vector over an ordered state space."""

    space: OrderedStateSpace
    mass: np.ndarray
    tol: float = 1e-9
    meta: str = ""

    def __post_init__(self):
        mass = np.array(self.mass, dtype=float)
        if mass.shape != (self.space.size,):
            raise KernelError(f"mass must have length {self.space.size}")
        if mass.min() < -self.tol:
            raise KernelError(f"negative mass {mass.min()!r}")
        total = mass.sum()
        if abs(total - 1.0) > self.tol:
            raise KernelError(f"mass sums to {total!r}, not 1 within tol={self.tol}")
        mass = np.clip(mass, 0.0, None) / np.clip(mass, 0.0, None).sum()
        mass.flags.writeable = False
        object.__setattr__(self, "mass", mass)

    @classmethod
    def point_mass(cls, space: OrderedStateSpace, x: float) -> "Distribution":
        mass = np.zeros(space.size)
        mass[space.index_of(x)] = 1.0
        return cls(space, mass, meta=f"point mass at {x}")

    @classmethod
    def uniform(cls, space: OrderedStateSpace) -> "Distribution":
        return cls(space, np.full(space.size, 1.0 / space.size), meta="uniform")

    def mean(self) -> float:
        return float(self.mass @ self.space.as_array())


@dataclass(frozen=True, eq=False)
class Curve:
    """Finite sequence (t_k, v_k) with a provenance string."""

    times: np.ndarray
    values: np.ndarray
    meta: str = ""

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        values = np.array(self.values, dtype=float)
        if times.shape != values.shape or times.ndim != 1:
            raise KernelError("times and values must be 1-d arrays of equal length")
        if times.size == 0:
            raise KernelError("curve must be nonempty")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise KernelError("times must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise KernelError("curve values must be finite")
        times.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class ShapeCertificate:
    """Mechanized verdicts for a sampled curve, with violation witnesses.

    Convexity/concavity are certified on the stored grid only (plain second
    differences on uniform grids, divided-difference slopes otherwise);
    nothing is claimed between samples.
    """

    nonnegative: bool
    nonincreasing: bool
    nondecreasing: bool
    convex: bool
    concave: bool
    tol: float
    witnesses: dict = field(default_factory=dict)
    note: str = ""

    def __post_init__(self):
        for name in ("nonnegative", "nonincreasing", "nondecreasing", "convex", "concave"):
            ok = getattr(self, name)
            if not ok and name not in self.witnesses:
                raise ValueError(f"false flag {name!r} must carry a witness index")

    def to_dict(self) -> dict:
        return {
            "nonnegative": self.nonnegative,
            "nonincreasing": self.nonincreasing,
            "nondecreasing": self.nondecreasing,
            "convex": self.convex,
            "concave": self.concave,
            "tol": self.tol,
            "witnesses": dict(self.witnesses),
            "note": self.note,
        }


def _tab1(f, states: np.ndarray) -> np.ndarray:
    """Tabulate a univariate function (or accept a pre-tabulated array)."""
    if isinstance(f, (np.ndarray, list, tuple)):
        arr = np.asarray(f, dtype=float)
        if arr.shape != states.shape:
            raise KernelError("tabulated function must match the grid size")
        return arr
    try:
        arr = np.asarray(f(states), dtype=float)
        if arr.shape == states.shape:
            return arr
    except Exception:
        pass
    return np.asarray([float(f(s)) for s in states], dtype=float)


def _tab2(h, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Tabulate a bivariate function on xs x ys."""
    if isinstance(h, np.ndarray):
        if h.shape != (xs.size, ys.size):
            raise KernelError("tabulated h must match the grid shape")
        return np.asarray(h, dtype=float)
    try:
        arr = np.asarray(h(xs[:, None], ys[None, :]), dtype=float)
        if arr.shape == (xs.size, ys.size):
            return arr
    except Exception:
        pass
    return np.asarray([[float(h(x, y)) for y in ys] for x in xs], dtype=float)


def stationary(kernel: FiniteKernel, tol: float = DEFAULT_STATIONARY_TOL) -> Distribution:
    """Invariant distribution via the null space of (P^T - I).

    Solves the balance equations augmented with the normalization row by
    least squares (the minimum-norm solution is the canonical element when
    the invariant distribution is not unique, e.g. the uniform law for the
    identity kernel).  Non-uniqueness is detected from the singular values
    and flagged in ``meta``, not raised.
    """
    P = kernel.rows
    n = kernel.size
    A = P.T - np.eye(n)
    sv = np.linalg.svd(A, compute_uv=False)
    rank_tol = max(sv[0], 1.0) * n * np.finfo(float).eps * 16
    null_dim = int(np.sum(sv <= rank_tol))
    aug = np.vstack([A, np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(aug, rhs, rcond=None)
    pi = np.clip(pi, 0.0, None)
    total = pi.sum()
    if total <= 0:
        raise StationarySolveError("least-squares solution has no positive mass")
    pi = pi / total
    residual = float(np.max(np.abs(pi @ P - pi)))
    if residual > tol:
        raise StationarySolveError(
            f"no probability solution within tol={tol}: residual {residual:.3e}"
        )
    meta = "unique" if null_dim <= 1 else f"non-unique (null dimension {null_dim})"
    return Distribution(kernel.space, pi, tol=max(tol, 1e-12), meta=meta)


def require_unique_stationary(dist: Distribution) -> Distribution:
    """Reject distributions flagged non-unique by :func:`stationary`."""
    if dist.meta.startswith("non-unique"):
        raise PreconditionError(
            f"stationarity-dependent shape claim refused: {dist.meta}"
        )
    return dist


def _check_same_space(*kernels: FiniteKernel):
    s0 = kernels[0].space.states
    for k in kernels[1:]:
        if k.space.states != s0:
            raise KernelError("kernels must share one state space")


def covariance_curve(
    kernel: FiniteKernel,
    init: Distribution,
    f1,
    f2,
    t_max: int,
) -> Curve:
    """Cov(f1(X_0), f2(X_t)) for t = 0..t_max, exactly.

    Forward vector iteration: one pass propagates both the f1-weighted and
    the plain occupation vectors, so the cost is O(t_max n^2).
    """
    if init.space.states != kernel.space.states:
        raise KernelError("init must live on the kernel's state space")
    states = kernel.space.as_array()
    f1v, f2v = _tab1(f1, states), _tab1(f2, states)
    P = kernel.rows
    weighted = init.mass * f1v
    occupation = init.mass.copy()
    m1 = float(init.mass @ f1v)
    values = np.empty(t_max + 1)
    for t in range(t_max + 1):
        values[t] = weighted @ f2v - m1 * (occupation @ f2v)
        if t < t_max:
            weighted = weighted @ P
            occupation = occupation @ P
    return Curve(np.arange(t_max + 1), values, meta="covariance_curve")


def supermod_curve(
    kernel: FiniteKernel,
    init: Distribution,
    h,
    t_max: int,
) -> Curve:
    """E h(X_0, X_t) for t = 0..t_max, exactly (joint-law matrix iteration)."""
    if init.space.states != kernel.space.states:
        raise KernelError("init must live on the kernel's state space")
    states = kernel.space.as_array()
    H = _tab2(h, states, states)
    P = kernel.rows
    joint = np.diag(init.mass)
    values = np.empty(t_max + 1)
    for t in range(t_max + 1):
        values[t] = float(np.sum(joint * H))
        if t < t_max:
            joint = joint @ P
    return Curve(np.arange(t_max + 1), values, meta="supermod_curve")


def difference_curve(
    kernel: FiniteKernel,
    init: Distribution,
    h,
    s: int,
    t_max: int,
) -> Curve:
    """E h(X_0, X_t - X_{t+s}) for t = 0..t_max, exactly.

    The inner expectation over the step from t to t+s is folded into a
    matrix C[x, y] = sum_z P^s(y, z) h(x, y - z) once, after which the same
    joint-law iteration as :func:`supermod_curve` applies.
    """
    if s < 1 or s != int(s):
        raise KernelError("s must be a positive integer")
    if init.space.states != kernel.space.states:
        raise KernelError("init must live on the kernel's state space")
    states = kernel.space.as_array()
    n = kernel.size
    Ps = n_step(kernel, int(s)).rows
    C = np.empty((n, n))
    for j in range(n):
        hj = _tab2(h, states, states[j] - states)
        C[:, j] = hj @ Ps[j]
    P = kernel.rows
    joint = np.diag(init.mass)
    values = np.empty(t_max + 1)
    for t in range(t_max + 1):
        values[t] = float(np.sum(joint * C))
        if t < t_max:
            joint = joint @ P
    return Curve(np.arange(t_max + 1), values, meta=f"difference_curve(s={int(s)})")


def three_point_check(
    p1: FiniteKernel,
    p2: FiniteKernel,
    h,
) -> tuple[float, float]:
    """(E h(X_0, X_2), E h(X_1, X_2)) for X_0 ~ pi_1 -> p1 -> X_1 -> p2 -> X_2.

    Exact sums; the caller asserts lhs <= rhs + tol.  pi_1 is computed
    internally and must satisfy the balance equations within solver
    tolerance.
    """
    _check_same_space(p1, p2)
    states = p1.space.as_array()
    H = _tab2(h, states, states)
    pi1 = stationary(p1).mass
    joint02 = (pi1[:, None] * p1.rows) @ p2.rows
    lhs = float(np.sum(joint02 * H))
    joint12 = pi1[:, None] * p2.rows
    rhs = float(np.sum(joint12 * H))
    return lhs, rhs


def four_point_check(
    p1: FiniteKernel,
    p2: FiniteKernel,
    p3: FiniteKernel,
    h,
) -> tuple[float, float]:
    """(E h(X_0, X_2 - X_3), E h(X_1, X_2 - X_3)) along X_0 ~ pi_1 -> p1 -> p2 -> p3."""
    _check_same_space(p1, p2, p3)
    states = p1.space.as_array()
    n = p1.size
    pi1 = stationary(p1).mass
    A = p1.rows @ p2.rows          # x -> z weights for lhs
    lhs = 0.0
    rhs = 0.0
    for z in range(n):
        hz = _tab2(h, states, states[z] - states)   # [first-arg, w]
        v = hz @ p3.rows[z]                          # E_w h(., s_z - s_w)
        lhs += float((pi1 * A[:, z]) @ v)
        rhs += float((pi1 * p2.rows[:, z]) @ v)
    return lhs, rhs


def _require_upward_start(kernel: FiniteKernel, x0: float) -> int:
    """Validate the hypothesis X_0 <= X_t for a start at x0.

    Sufficient operational form: the row at x0 puts no mass strictly below
    x0 and the kernel is stochastically monotone (induction then bounds
    every later step from below by x0).
    """
    i0 = kernel.space.index_of(x0)
    mass_below = float(kernel.rows[i0, :i0].sum())
    if mass_below > kernel.row_tol:
        raise PreconditionError(
            f"row at x0={x0} puts mass {mass_below!r} strictly below x0"
        )
    rep = check_stoch_monotone(kernel)
    if not rep.passed:
        raise PreconditionError(
            "kernel is not stochastically monotone "
            f"(worst tail gap {rep.witness.gap!r}), so X_0 <= X_t is not guaranteed"
        )
    return i0


def transient_mean_curve(kernel: FiniteKernel, x0: float, t_max: int) -> Curve:
    """E_{x0} X_t for t = 0..t_max; requires the upward-start hypothesis."""
    i0 = _require_upward_start(kernel, x0)
    states = kernel.space.as_array()
    dist = np.zeros(kernel.size)
    dist[i0] = 1.0
    values = np.empty(t_max + 1)
    for t in range(t_max + 1):
        values[t] = dist @ states
        if t < t_max:
            dist = dist @ kernel.rows
    return Curve(np.arange(t_max + 1), values, meta=f"transient_mean_curve(x0={x0})")


def transient_variance_curve(kernel: FiniteKernel, x0: float, t_max: int) -> Curve:
    """Var_{x0}(X_t) for t = 0..t_max.  No shape is claimed for this curve."""
    i0 = _require_upward_start(kernel, x0)
    states = kernel.space.as_array()
    dist = np.zeros(kernel.size)
    dist[i0] = 1.0
    values = np.empty(t_max + 1)
    for t in range(t_max + 1):
        m = dist @ states
        values[t] = dist @ states**2 - m * m
        if t < t_max:
            dist = dist @ kernel.rows
    return Curve(np.arange(t_max + 1), values, meta=f"transient_variance_curve(x0={x0})")


def transient_pair_expectation(kernel: FiniteKernel, x0: float, s: int, t: int, h) -> float:
    """E h(X_s, X_t) for the chain started at x0, exactly (0 <= s <= t)."""
    if not 0 <= s <= t:
        raise KernelError("need 0 <= s <= t")
    states = kernel.space.as_array()
    H = _tab2(h, states, states)
    i0 = kernel.space.index_of(x0)
    w = np.zeros(kernel.size)
    w[i0] = 1.0
    for _ in range(int(s)):
        w = w @ kernel.rows
    joint = w[:, None] * n_step(kernel, int(t - s)).rows
    return float(np.sum(joint * H))


def _monotone_flags(values: np.ndarray, tol: float):
    d = np.diff(values)
    if d.size == 0:
        return True, True, {}
    wit = {}
    noninc = bool(np.all(d <= tol))
    if not noninc:
        wit["nonincreasing"] = int(np.argmax(d))
    nondec = bool(np.all(d >= -tol))
    if not nondec:
        wit["nondecreasing"] = int(np.argmin(d))
    return noninc, nondec, wit


def certify_shape(curve: Curve, tol: float = DEFAULT_SHAPE_TOL) -> ShapeCertificate:
    """Certify nonnegativity, monotonicity and convexity/concavity on the grid.

    Uniform grids use plain second differences; non-uniform grids use
    divided-difference slopes.  With fewer than three points the convexity
    flags are vacuously true (noted).
    """
    v = curve.values
    t = curve.times
    witnesses = {}
    nonneg = bool(np.all(v >= -tol))
    if not nonneg:
        witnesses["nonnegative"] = int(np.argmin(v))
    noninc, nondec, wit = _monotone_flags(v, tol)
    witnesses.update(wit)

    notes = ["grid-sampled certificate"]
    if len(v) < 3:
        convex = concave = True
        notes.append("fewer than 3 points: convexity flags vacuous")
    else:
        dt = np.diff(t)
        uniform = np.max(np.abs(dt - dt[0])) <= 1e-12 * max(1.0, abs(dt[0]))
        if uniform:
            second = v[2:] - 2 * v[1:-1] + v[:-2]
            notes.append("uniform grid: plain second differences")
        else:
            slopes = np.diff(v) / dt
            second = np.diff(slopes)
            notes.append("non-uniform grid: divided-difference slopes")
        convex = bool(np.all(second >= -tol))
        if not convex:
            witnesses["convex"] = int(np.argmin(second))
        concave = bool(np.all(second <= tol))
        if not concave:
            witnesses["concave"] = int(np.argmax(second))

    return ShapeCertificate(
        nonnegative=nonneg,
        nonincreasing=noninc,
        nondecreasing=nondec,
        convex=convex,
        concave=concave,
        tol=tol,
        witnesses=witnesses,
        note="; ".join(notes),
    )


def curve_to_csv(curve: Curve, header_lines: Sequence[str] = ()) -> str:
    lines = [f"# {h}" for h in header_lines]
    lines.append("t,value")
    for t, v in zip(curve.times, curve.values):
        lines.append(f"{float(t)!r},{float(v)!r}")
    return "\n".join(lines) + "\n"


def curve_to_json(curve: Curve, certificate: ShapeCertificate | None = None) -> str:
    payload = {
        "times": curve.times.tolist(),
        "values": curve.values.tolist(),
        "meta": curve.meta,
    }
    if certificate is not None:
        payload["certificate"] = certificate.to_dict()
    return json.dumps(payload)
