"""Constructors for the standard model families.

Each constructor returns a :class:`FiniteKernel` whose ``meta`` carries the
predicted verdicts of the two structural checks (key ``"predicted"``), the
model name and parameters, and any truncation bookkeeping.  The predictions
are part of the test surface: the checkers must reproduce them on every
instance.

Unbounded state spaces are truncated to finite grids.  The upper boundary
aggregates overflow mass onto the top state (a clamp, which is monotone and
1-Lipschitz, so it preserves both structural properties); the clamped mass
is always reported in ``meta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import stats

from .checks import DEFAULT_CHECK_TOL
from .kernels import FiniteKernel, KernelError, OrderedStateSpace, integer_space

__all__ = [
    "BirthDeathSpec",
    "WalkSpec",
    "JointBDGenerator",
    "TruncationError",
    "reflected_walk",
    "two_sided_reflected_walk",
    "state_dependent_walk",
    "birth_death_skeleton",
    "default_skeleton_dt",
    "bd_coupled_generator",
    "joint_skeleton",
    "project_joint_rows",
    "shot_noise_skeleton",
    "dam_skeleton",
    "absorbed_poisson",
]


class TruncationError(ValueError):
    """The chosen grid loses more mass than the model tolerates."""


def _validate_increments(increment_dist: Mapping[int, float]) -> list[tuple[int, float]]:
    if not increment_dist:
        raise KernelError("increment distribution must be nonempty")
    items = []
    total = 0.0
    for y, w in increment_dist.items():
        y = int(y)
        w = float(w)
        if w < 0:
            raise KernelError(f"negative probability {w!r} for increment {y}")
        total += w
        items.append((y, w))
    if abs(total - 1.0) > 1e-12:
        raise KernelError(f"increment probabilities sum to {total!r}")
    return items


def _predicted(monotone: bool, condition1: bool) -> dict:
    return {"stoch_monotone": bool(monotone), "condition1": bool(condition1)}


def reflected_walk(increment_dist: Mapping[int, float], max_state: int) -> FiniteKernel:
    """One-step law of a random walk reflected at 0, clamped to [0, max_state].

    Row x is the law of min(max(x + Y, 0), max_state).  Reflection keeps the
    walk stochastically monotone with nonincreasing increments, and the
    clamp preserves both, so the predicted verdicts are pass/pass.
    """
    items = _validate_increments(increment_dist)
    if max_state < 0:
        raise KernelError("max_state must be >= 0")
    n = max_state + 1
    rows = np.zeros((n, n))
    clamp = np.zeros(n)
    for x in range(n):
        for y, w in items:
            target = x + y
            if target > max_state:
                clamp[x] += w
                target = max_state
            elif target < 0:
                target = 0
            rows[x, target] += w
    return FiniteKernel(
        integer_space(0, max_state),
        rows,
        meta={
            "model": "reflected_walk",
            "params": {"increments": dict(increment_dist), "max_state": max_state},
            "predicted": _predicted(True, True),
            "truncation_mass": float(clamp.max()),
        },
    )


def two_sided_reflected_walk(increment_dist: Mapping[int, float], b: int) -> FiniteKernel:
    """One-step law of a random walk reflected at both 0 and b.

    The two-sided clamp is itself the model (finite buffer), so no
    truncation mass is reported.
    """
    if b < 1:
        raise KernelError("b must be >= 1")
    items = _validate_increments(increment_dist)
    n = b + 1
    rows = np.zeros((n, n))
    for x in range(n):
        for y, w in items:
            rows[x, min(max(x + y, 0), b)] += w
    return FiniteKernel(
        integer_space(0, b),
        rows,
        meta={
            "model": "two_sided_reflected_walk",
            "params": {"increments": dict(increment_dist), "b": b},
            "predicted": _predicted(True, True),
        },
    )


@dataclass(frozen=True)
class WalkSpec:
    """Per-state up/down/stay probabilities of a nearest-neighbour walk."""

    p: tuple[float, ...]
    q: tuple[float, ...]
    r: tuple[float, ...]

    def __post_init__(self):
        p, q, r = (tuple(float(v) for v in a) for a in (self.p, self.q, self.r))
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", r)
        if not len(p) == len(q) == len(r):
            raise KernelError("p, q, r must have equal length")
        if len(p) == 0:
            raise KernelError("walk spec must be nonempty")
        if q[0] != 0.0:
            raise KernelError("q at the minimal state must be 0")
        for i, (pi, qi, ri) in enumerate(zip(p, q, r)):
            if min(pi, qi, ri) < 0:
                raise KernelError(f"negative probability at state {i}")
            if abs(pi + qi + ri - 1.0) > 1e-12:
                raise KernelError(f"p+q+r != 1 at state {i}")

    @property
    def size(self) -> int:
        return len(self.p)


def state_dependent_walk(spec: WalkSpec, tol: float = DEFAULT_CHECK_TOL) -> FiniteKernel:
    """Tridiagonal kernel of a state-dependent walk on 0..n-1.

    The up-move at the top state folds into staying (finite truncation).
    Predicted verdicts, evaluated on the effective (post-fold) rates:
    monotone iff p_{i-1} <= 1 - q_i for every i >= 1; the shift property
    iff q is nondecreasing and p is nonincreasing.
    """
    n = spec.size
    p_eff = np.array(spec.p)
    folded = p_eff[-1]
    p_eff[-1] = 0.0
    q = np.array(spec.q)
    rows = np.zeros((n, n))
    for i in range(n):
        if i > 0:
            rows[i, i - 1] = q[i]
        if i < n - 1:
            rows[i, i + 1] = p_eff[i]
        # the given stay mass keeps rows exact; the fold adds the top p back
        rows[i, i] = spec.r[i] + (folded if i == n - 1 else 0.0)
    monotone = bool(np.all(p_eff[:-1] <= 1.0 - q[1:] + tol)) if n > 1 else True
    condition1 = bool(
        np.all(np.diff(q) >= -tol) and np.all(np.diff(p_eff) <= tol)
    )
    meta = {
        "model": "state_dependent_walk",
        "params": {"p": spec.p, "q": spec.q, "r": spec.r},
        "predicted": _predicted(monotone, condition1),
    }
    if folded > 0:
        meta["truncation_mass"] = float(folded)
    return FiniteKernel(integer_space(0, n - 1), rows, meta=meta)


@dataclass(frozen=True)
class BirthDeathSpec:
    """Per-state birth and death rates of a finite birth-death chain."""

    lambdas: tuple[float, ...]
    mus: tuple[float, ...]
    truncation_note: str = ""

    def __post_init__(self):
        lambdas = tuple(float(v) for v in self.lambdas)
        mus = tuple(float(v) for v in self.mus)
        object.__setattr__(self, "lambdas", lambdas)
        object.__setattr__(self, "mus", mus)
        if len(lambdas) != len(mus) or not lambdas:
            raise KernelError("lambdas and mus must be nonempty and equally long")
        if min(lambdas) < 0 or min(mus) < 0:
            raise KernelError("rates must be nonnegative")
        if mus[0] != 0.0:
            raise KernelError("death rate at the minimal state must be 0")

    @property
    def size(self) -> int:
        return len(self.lambdas)

    def effective_lambdas(self) -> np.ndarray:
        """Birth rates with the top state's birth dropped (finite truncation)."""
        lam = np.array(self.lambdas)
        lam[-1] = 0.0
        return lam

    def generator(self) -> np.ndarray:
        lam = self.effective_lambdas()
        mu = np.array(self.mus)
        n = self.size
        Q = np.zeros((n, n))
        for i in range(n):
            if i < n - 1:
                Q[i, i + 1] = lam[i]
            if i > 0:
                Q[i, i - 1] = mu[i]
            Q[i, i] = -(lam[i] + (mu[i] if i > 0 else 0.0))
        return Q


def _uniformized_rows(Q: np.ndarray, t: float, trunc_tol: float) -> tuple[np.ndarray, dict]:
    """exp(Qt) by uniformization with a Poisson tail cutoff.

    The partial sum is renormalized row-wise by the retained Poisson mass,
    which keeps rows exactly stochastic; the dropped tail is reported.
    """
    n = Q.shape[0]
    rate = float(np.max(-np.diag(Q)))
    if rate == 0.0:
        return np.eye(n), {"uniformization_rate": 0.0, "poisson_tail": 0.0,
                           "note": "zero exit rates: identity kernel"}
    P_u = np.eye(n) + Q / rate
    lam = rate * t
    K = int(stats.poisson.ppf(1.0 - trunc_tol, lam)) + 2
    weights = stats.poisson.pmf(np.arange(K + 1), lam)
    retained = float(weights.sum())
    S = np.zeros((n, n))
    term = np.eye(n)
    for k in range(K + 1):
        S += weights[k] * term
        if k < K:
            term = term @ P_u
    S /= retained
    return S, {"uniformization_rate": rate, "poisson_tail": 1.0 - retained}


def birth_death_skeleton(
    spec: BirthDeathSpec, t: float, trunc_tol: float = 1e-12
) -> FiniteKernel:
    """Discrete skeleton P(t) = exp(Qt) of a finite birth-death chain.

    Predicted verdicts: monotone always (any birth-death chain is); the
    shift property iff the birth rates are nonincreasing and the death
    rates nondecreasing, evaluated on the effective (truncated) rates.
    """
    if t <= 0:
        raise KernelError("t must be positive")
    Q = spec.generator()
    rows, info = _uniformized_rows(Q, t, trunc_tol)
    lam = spec.effective_lambdas()
    mu = np.array(spec.mus)
    condition1 = bool(np.all(np.diff(lam) <= 0) and np.all(np.diff(mu) >= 0))
    meta = {
        "model": "birth_death_skeleton",
        "params": {"lambdas": spec.lambdas, "mus": spec.mus, "t": t},
        "predicted": _predicted(True, condition1),
        **info,
    }
    if spec.lambdas[-1] != 0.0:
        meta["truncation_note"] = "top birth rate dropped by truncation"
    elif spec.truncation_note:
        meta["truncation_note"] = spec.truncation_note
    return FiniteKernel(integer_space(0, spec.size - 1), rows, meta=meta)


def default_skeleton_dt(spec: BirthDeathSpec) -> float:
    """Step small enough that ||Q dt||_inf <= 0.1."""
    Q = spec.generator()
    norm = float(np.max(np.sum(np.abs(Q), axis=1)))
    return 0.1 / norm if norm > 0 else 1.0


@dataclass(frozen=True, eq=False)
class JointBDGenerator:
    """Coupled generator of two ordered birth-death chains on {(i,j): i <= j}.

    Off the diagonal the chains move independently; on the diagonal the
    moves are synchronized so the lower chain never overtakes the upper one.
    """

    pair_states: tuple[tuple[int, int], ...]
    Q: np.ndarray

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float)
        m = len(self.pair_states)
        if Q.shape != (m, m):
            raise KernelError("generator shape must match the pair-state count")
        off = Q - np.diag(np.diag(Q))
        if off.min() < 0:
            raise KernelError("off-diagonal rates must be nonnegative")
        if np.max(np.abs(Q.sum(axis=1))) > 1e-9:
            raise KernelError("generator rows must sum to 0")
        for (i, j) in self.pair_states:
            if not 0 <= i <= j:
                raise KernelError(f"pair state ({i},{j}) leaves the ordered cone")
        Q.flags.writeable = False
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "_index", {p: k for k, p in enumerate(self.pair_states)})

    @property
    def size(self) -> int:
        return len(self.pair_states)

    def index(self, i: int, j: int) -> int:
        return self._index[(i, j)]


def bd_coupled_generator(spec1: BirthDeathSpec, spec2: BirthDeathSpec) -> JointBDGenerator:
    """Ordered coupling of two birth-death chains (lower chain 1, upper chain 2).

    Requires lambda1_i <= lambda2_i and mu1_i >= mu2_i for every i; the
    joint chain then lives on {(i, j): i <= j} and each coordinate is
    marginally the corresponding birth-death chain.
    """
    if spec1.size != spec2.size:
        raise KernelError("specs must share one (truncated) state range")
    lam1, lam2 = spec1.effective_lambdas(), spec2.effective_lambdas()
    mu1, mu2 = np.array(spec1.mus), np.array(spec2.mus)
    for i in range(spec1.size):
        if lam1[i] > lam2[i]:
            raise KernelError(
                f"rate ordering violated at index {i}: lambda1={lam1[i]} > lambda2={lam2[i]}"
            )
        if mu1[i] < mu2[i]:
            raise KernelError(
                f"rate ordering violated at index {i}: mu1={mu1[i]} < mu2={mu2[i]}"
            )
    n = spec1.size
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    index = {pair: k for k, pair in enumerate(pairs)}
    m = len(pairs)
    Q = np.zeros((m, m))

    def add(src, dst, rate):
        if rate > 0:
            Q[index[src], index[dst]] += rate

    for (i, j) in pairs:
        if i < j:
            add((i, j), (i + 1, j), lam1[i])
            if i > 0:
                add((i, j), (i - 1, j), mu1[i])
            add((i, j), (i, j + 1), lam2[j] if j < n - 1 else 0.0)
            if j - 1 >= i:
                add((i, j), (i, j - 1), mu2[j])
        else:
            if i < n - 1:
                add((i, i), (i + 1, i + 1), lam1[i])
                add((i, i), (i, i + 1), lam2[i] - lam1[i])
            if i > 0:
                add((i, i), (i - 1, i), mu1[i] - mu2[i])
                add((i, i), (i - 1, i - 1), mu2[i])
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return JointBDGenerator(tuple(pairs), Q)


def joint_skeleton(gen: JointBDGenerator, t: float, trunc_tol: float = 1e-12) -> np.ndarray:
    """Row-stochastic uniformized skeleton of the coupled generator."""
    rows, _ = _uniformized_rows(gen.Q, t, trunc_tol)
    return rows


def project_joint_rows(gen: JointBDGenerator, rows: np.ndarray, coord: int) -> np.ndarray:
    """Project pair-space transition rows onto one coordinate's marginal law.

    Returns a (num_pairs, n) matrix whose row for pair (i, j) is the law of
    the chosen coordinate one skeleton step later.
    """
    if coord not in (0, 1):
        raise KernelError("coord must be 0 or 1")
    n = max(j for _, j in gen.pair_states) + 1
    out = np.zeros((gen.size, n))
    targets = np.array([pair[coord] for pair in gen.pair_states])
    for col, tgt in enumerate(targets):
        out[:, tgt] += rows[:, col]
    return out


def _compound_poisson_law(
    jump_dist: Mapping[float, float], lam: float, tail_tol: float = 1e-15
) -> list[tuple[float, float]]:
    """Exact law of a compound-Poisson increment with a finite jump law.

    The Poisson count is cut at a quantile with tail <= tail_tol and the
    law renormalized, so the returned atoms sum to 1 exactly.
    """
    jumps = [(float(v), float(w)) for v, w in jump_dist.items()]
    if any(v < 0 for v, _ in jumps):
        raise KernelError("jump values must be nonnegative")
    if any(w < 0 for _, w in jumps):
        raise KernelError("jump probabilities must be nonnegative")
    total = sum(w for _, w in jumps)
    if abs(total - 1.0) > 1e-12:
        raise KernelError(f"jump probabilities sum to {total!r}")
    if lam < 0:
        raise KernelError("jump intensity must be nonnegative")
    if lam == 0.0:
        return [(0.0, 1.0)]
    K = int(stats.poisson.ppf(1.0 - tail_tol, lam)) + 2
    pmf = stats.poisson.pmf(np.arange(K + 1), lam)
    law: dict[float, float] = {0.0: float(pmf[0])}
    conv: dict[float, float] = {0.0: 1.0}
    for k in range(1, K + 1):
        nxt: dict[float, float] = {}
        for v, w in conv.items():
            for jv, jw in jumps:
                key = v + jv
                nxt[key] = nxt.get(key, 0.0) + w * jw
        conv = nxt
        for v, w in conv.items():
            law[v] = law.get(v, 0.0) + float(pmf[k]) * w
    norm = sum(law.values())
    return sorted((v, w / norm) for v, w in law.items())


def _round_to_grid(values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Nearest grid index, ties resolved upward; out-of-range values clamp."""
    mids = (grid[1:] + grid[:-1]) / 2.0
    return np.searchsorted(mids, values, side="right")


def _jump_decay_kernel(
    decayed: np.ndarray,
    jump_law: Sequence[tuple[float, float]],
    grid: OrderedStateSpace,
    model: str,
    params: dict,
    overflow_tol: float = 1e-6,
) -> FiniteKernel:
    """Kernel of x -> round(decayed[x] + J) on the grid, with overflow audit.

    Overflow is the stationary-weighted mass that lands strictly above the
    top grid state (and is clamped there): weighting by the kernel's own
    equilibrium measures the mass actually lost in the regime the model
    settles into.
    """
    garr = grid.as_array()
    n = grid.size
    rows = np.zeros((n, n))
    clamp = np.zeros(n)
    for jv, jw in jump_law:
        v = decayed + jv
        idx = _round_to_grid(v, garr)
        clamp += jw * (v > garr[-1])
        np.add.at(rows, (np.arange(n), idx), jw)
    overflow = 0.0
    if clamp.max() > 0.0:
        from .analysis import stationary

        pi = stationary(FiniteKernel(grid, rows), tol=1e-8).mass
        overflow = float(pi @ clamp)
    if overflow > overflow_tol:
        raise TruncationError(
            f"stationary-weighted grid overflow mass {overflow:.3e} exceeds {overflow_tol}"
        )
    return FiniteKernel(
        grid,
        rows,
        meta={
            "model": model,
            "params": params,
            "predicted": _predicted(True, True),
            "clamp_mass_max": float(clamp.max()),
            "overflow_mass": overflow,
        },
    )


def shot_noise_skeleton(
    r: float,
    jump_dist: Mapping[float, float],
    jump_rate: float,
    dt: float,
    grid: OrderedStateSpace,
) -> FiniteKernel:
    """One-step skeleton of a linear-release storage process on a grid.

    x maps to the nearest grid point of x e^{-r dt} + J(dt), with J(dt) a
    compound-Poisson increment.  On a uniform grid the monotone rounding
    preserves both structural properties, so the predicted verdicts are
    pass/pass.
    """
    if r <= 0 or dt <= 0:
        raise KernelError("r and dt must be positive")
    a = math.exp(-r * dt)
    if a < 0.5:
        raise KernelError(f"dt too large: e^(-r dt) = {a:.3f} < 0.5")
    law = _compound_poisson_law(jump_dist, jump_rate * dt)
    decayed = grid.as_array() * a
    return _jump_decay_kernel(
        decayed,
        law,
        grid,
        "shot_noise_skeleton",
        {"r": r, "jump_rate": jump_rate, "dt": dt, "decay": a,
         "jumps": dict(jump_dist)},
    )


def dam_skeleton(
    release: Callable[[float], float],
    jump_dist: Mapping[float, float],
    jump_rate: float,
    dt: float,
    grid: OrderedStateSpace,
) -> FiniteKernel:
    """Euler one-step skeleton of a storage process with nondecreasing release.

    x maps to the nearest grid point of max(x - release(x) dt, min state)
    plus a compound-Poisson inflow.  Requires the Euler drift map to remain
    nondecreasing on the grid (small enough dt), which is what preserves the
    structural properties through rounding.
    """
    if dt <= 0:
        raise KernelError("dt must be positive")
    garr = grid.as_array()
    rel = np.asarray([float(release(x)) for x in garr])
    if rel.min() < 0:
        raise KernelError("release rates must be nonnegative")
    if np.any(np.diff(rel) < 0):
        raise KernelError("release rule must be nondecreasing")
    raw = garr - rel * dt
    if np.any(np.diff(raw) < 0):
        raise KernelError(
            "Euler drift map is decreasing on the grid: reduce dt or flatten release"
        )
    base = np.maximum(raw, garr[0])
    law = _compound_poisson_law(jump_dist, jump_rate * dt)
    return _jump_decay_kernel(
        base,
        law,
        grid,
        "dam_skeleton",
        {"jump_rate": jump_rate, "dt": dt, "jumps": dict(jump_dist)},
    )


def absorbed_poisson(k: int, m: int, lam: float, dt: float) -> FiniteKernel:
    """Skeleton of a Poisson counter started at k and absorbed at m.

    From state i < m the increment is Poisson(lam dt) capped at m - i; m is
    absorbing.  The cap is exact (the tail mass goes to m), so rows are
    exactly stochastic.
    """
    if not 0 <= k <= m:
        raise KernelError("need 0 <= k <= m")
    if lam < 0 or dt <= 0:
        raise KernelError("lam must be nonnegative and dt positive")
    states = integer_space(k, m)
    n = m - k + 1
    rows = np.zeros((n, n))
    for i in range(n - 1):
        jumps = np.arange(n - 1 - i)
        pmf = stats.poisson.pmf(jumps, lam * dt)
        rows[i, i : n - 1] = pmf
        rows[i, n - 1] = 1.0 - pmf.sum()
    rows[n - 1, n - 1] = 1.0
    return FiniteKernel(
        states,
        rows,
        meta={
            "model": "absorbed_poisson",
            "params": {"k": k, "m": m, "lam": lam, "dt": dt},
            "predicted": _predicted(True, True),
        },
    )
