"""Seeded Monte Carlo engine driven by the generalized-inverse coupling.

All paths in a coupled bundle consume one shared uniform stream, which is
the construction behind every pathwise-ordering statement in this library:
for monotone kernels the bundle stays ordered across initial states, and
under the shift-tail property the increments stay ordered the opposite way.

Streams come from numpy's PCG64 via ``SeedSequence.spawn``, so the initial
draw and the path driver are independent sub-streams of one seed and every
result is a deterministic function of (kernel, parameters, seed).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .analysis import Distribution
from .kernels import (
    FiniteKernel,
    GeneralizedInverseTable,
    KernelError,
    KernelSequence,
    build_ginv,
)

__all__ = [
    "CoupledPaths",
    "Estimate",
    "PathEnsemble",
    "simulate_coupled",
    "simulate_ensemble",
    "ensemble_supermod_curve",
    "ensemble_covariance_curve",
    "ensemble_difference_curve",
    "mc_supermod_curve",
    "mc_covariance_curve",
    "mc_autocovariance",
    "estimates_to_csv",
]


@dataclass(frozen=True, eq=False)
class CoupledPaths:
    """Trajectories from several initial states under one uniform stream."""

    initial_states: tuple[float, ...]
    steps: int
    trajectories: np.ndarray  # [initial, time] of state values
    seed: int

    def ordering_violations(self) -> int:
        """Count of (pair, time) points where a lower start overtakes a higher one."""
        return int(np.sum(np.diff(self.trajectories, axis=0) < 0))

    def increment_ordering_violations(self) -> int:
        """Like :meth:`ordering_violations` for X_t(x) - x across initial states."""
        incr = self.trajectories - np.asarray(self.initial_states)[:, None]
        return int(np.sum(np.diff(incr, axis=0) > 0))


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo point estimate with its standard error."""

    value: float
    std_error: float
    n_samples: int

    def __post_init__(self):
        if self.std_error < 0:
            raise ValueError("std_error must be nonnegative")
        if self.n_samples < 2:
            raise ValueError("need at least 2 samples")


def _tables(kernel) -> list[GeneralizedInverseTable]:
    if isinstance(kernel, KernelSequence):
        return [build_ginv(k) for k in kernel.kernels]
    return [build_ginv(kernel)]


def _space(kernel):
    return kernel.space


def simulate_coupled(
    kernel: FiniteKernel | KernelSequence,
    initial_states: Sequence[float],
    steps: int,
    seed: int,
) -> CoupledPaths:
    """Evolve one path per initial state, all driven by the same uniforms.

    A :class:`KernelSequence` is cycled step by step (time-varying chain).
    Uniform draws are mapped to (0, 1] so they stay inside the quantile
    query's domain.
    """
    if steps < 0:
        raise KernelError("steps must be >= 0")
    space = _space(kernel)
    tables = _tables(kernel)
    init = tuple(float(x) for x in initial_states)
    if not init:
        raise KernelError("need at least one initial state")
    if any(b < a for a, b in zip(init, init[1:])):
        raise KernelError("initial_states must be ordered ascending")
    idx = np.asarray([space.index_of(x) for x in init], dtype=np.int64)
    states = space.as_array()
    rng = np.random.default_rng(seed)
    us = 1.0 - rng.random(steps)
    traj = np.empty((len(init), steps + 1))
    traj[:, 0] = states[idx]
    n_tables = len(tables)
    for t in range(steps):
        cdf_rows = tables[t % n_tables].cdf_rows
        # one shared u across the bundle; #(F < u) is the first index with F >= u
        idx = (cdf_rows[idx] < us[t]).sum(axis=1)
        traj[:, t + 1] = states[idx]
    traj.flags.writeable = False
    return CoupledPaths(init, steps, traj, seed)


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Independent path bundle for estimator post-processing.

    ``state_indices`` has shape [n_paths, steps + 1]; column t is X_t.  One
    simulated ensemble serves every estimator below, which keeps large
    cross-checks cheap.
    """

    kernel: FiniteKernel
    state_indices: np.ndarray
    seed: int

    @property
    def n_paths(self) -> int:
        return self.state_indices.shape[0]

    @property
    def steps(self) -> int:
        return self.state_indices.shape[1] - 1

    def values(self, t: int) -> np.ndarray:
        return self.kernel.space.as_array()[self.state_indices[:, t]]


def simulate_ensemble(
    kernel: FiniteKernel,
    init: Distribution,
    steps: int,
    n_paths: int,
    seed: int,
) -> PathEnsemble:
    """n_paths independent trajectories; X_0 drawn from an independent sub-stream."""
    if init.space.states != kernel.space.states:
        raise KernelError("init must live on the kernel's state space")
    if n_paths < 2:
        raise KernelError("need n_paths >= 2")
    init_ss, path_ss = np.random.SeedSequence(seed).spawn(2)
    init_rng = np.random.default_rng(init_ss)
    path_rng = np.random.default_rng(path_ss)
    table = build_ginv(kernel)
    idx = init_rng.choice(kernel.size, size=n_paths, p=init.mass)
    out = np.empty((n_paths, steps + 1), dtype=np.int32)
    out[:, 0] = idx
    for t in range(steps):
        u = 1.0 - path_rng.random(n_paths)
        idx = table.query_indices(idx, u)
        out[:, t + 1] = idx
    out.flags.writeable = False
    return PathEnsemble(kernel, out, seed)


def _estimates_from_samples(samples: np.ndarray) -> Estimate:
    n = samples.size
    return Estimate(
        float(samples.mean()),
        float(samples.std(ddof=1) / np.sqrt(n)),
        int(n),
    )


def ensemble_supermod_curve(ens: PathEnsemble, h, t_max: int) -> list[Estimate]:
    """Estimates of E h(X_0, X_t) for t = 0..t_max.

    ``h`` is either a callable on state values or a grid-by-grid matrix
    indexed by state indices.
    """
    if t_max > ens.steps:
        raise KernelError(f"ensemble holds {ens.steps} steps, need {t_max}")
    out = []
    if isinstance(h, np.ndarray):
        idx0 = ens.state_indices[:, 0]
        for t in range(t_max + 1):
            out.append(_estimates_from_samples(h[idx0, ens.state_indices[:, t]]))
        return out
    x0 = ens.values(0)
    for t in range(t_max + 1):
        out.append(_estimates_from_samples(_apply_h(h, x0, ens.values(t))))
    return out


def ensemble_covariance_curve(ens: PathEnsemble, f1, f2, t_max: int) -> list[Estimate]:
    """Plug-in covariance estimates of Cov(f1(X_0), f2(X_t)) for t = 0..t_max.

    The reported standard error is that of the centered product terms, the
    standard first-order (delta-method) error for the plug-in covariance.
    """
    if t_max > ens.steps:
        raise KernelError(f"ensemble holds {ens.steps} steps, need {t_max}")
    a = _apply_f(f1, ens.values(0))
    a_centered = a - a.mean()
    out = []
    for t in range(t_max + 1):
        b = _apply_f(f2, ens.values(t))
        prod = a_centered * (b - b.mean())
        n = prod.size
        out.append(Estimate(float(prod.mean()),
                            float(prod.std(ddof=1) / np.sqrt(n)), int(n)))
    return out


def ensemble_difference_curve(ens: PathEnsemble, h, s: int, t_max: int) -> list[Estimate]:
    """Estimates of E h(X_0, X_t - X_{t+s}) for t = 0..t_max."""
    if t_max + s > ens.steps:
        raise KernelError(f"ensemble holds {ens.steps} steps, need {t_max + s}")
    x0 = ens.values(0)
    out = []
    for t in range(t_max + 1):
        diff = ens.values(t) - ens.values(t + s)
        out.append(_estimates_from_samples(_apply_h(h, x0, diff)))
    return out


def _apply_f(f, xs: np.ndarray) -> np.ndarray:
    try:
        arr = np.asarray(f(xs), dtype=float)
        if arr.shape == xs.shape:
            return arr
    except Exception:
        pass
    return np.asarray([float(f(x)) for x in xs], dtype=float)


def _apply_h(h, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    try:
        arr = np.asarray(h(xs, ys), dtype=float)
        if arr.shape == xs.shape:
            return arr
    except Exception:
        pass
    return np.asarray([float(h(x, y)) for x, y in zip(xs, ys)], dtype=float)


def mc_supermod_curve(
    kernel: FiniteKernel,
    init: Distribution,
    h,
    t_max: int,
    n_paths: int,
    seed: int,
) -> list[Estimate]:
    """Monte Carlo counterpart of the exact E h(X_0, X_t) curve."""
    ens = simulate_ensemble(kernel, init, t_max, n_paths, seed)
    return ensemble_supermod_curve(ens, h, t_max)


def mc_covariance_curve(
    kernel: FiniteKernel,
    init: Distribution,
    f1,
    f2,
    t_max: int,
    n_paths: int,
    seed: int,
) -> list[Estimate]:
    """Monte Carlo counterpart of the exact Cov(f1(X_0), f2(X_t)) curve."""
    ens = simulate_ensemble(kernel, init, t_max, n_paths, seed)
    return ensemble_covariance_curve(ens, f1, f2, t_max)


def mc_autocovariance(
    kernel: FiniteKernel,
    init: Distribution,
    t_max: int,
    n_paths: int,
    seed: int,
) -> list[Estimate]:
    """Autocovariance estimates R(t) = Cov(X_0, X_t) with plug-in means."""
    return mc_covariance_curve(kernel, init, lambda x: x, lambda x: x, t_max, n_paths, seed)


def estimates_to_csv(estimates: Sequence[Estimate], header_lines: Sequence[str] = ()) -> str:
    lines = [f"# {h}" for h in header_lines]
    lines.append("t,value,std_error,n")
    for t, e in enumerate(estimates):
        lines.append(f"{t},{float(e.value)!r},{float(e.std_error)!r},{e.n_samples}")
    return "\n".join(lines) + "\n"
