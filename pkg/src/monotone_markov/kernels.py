"""Ordered state spaces, finite Markov kernels and generalized inverses.

Everything downstream (checkers, exact curves, coupled simulation, the model
constructors) consumes the types defined here.  All types are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

__all__ = [
    "OrderedStateSpace",
    "FiniteKernel",
    "GeneralizedInverseTable",
    "KernelSequence",
    "KernelError",
    "build_ginv",
    "ginv_query",
    "compose",
    "n_step",
    "identity_kernel",
    "kernel_to_json",
    "kernel_from_json",
    "integer_space",
    "uniform_space",
]

DEFAULT_ROW_TOL = 1e-12


class KernelError(ValueError):
    """Raised when a kernel, state space or query violates its contract."""


@dataclass(frozen=True)
class OrderedStateSpace:
    """A finite, strictly increasing grid of real states.

    Acts as the common index set for all kernels built on it; continuous
    models enter the library as finite truncations onto such a grid.
    """

    states: tuple[float, ...]
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        states = tuple(float(s) for s in self.states)
        object.__setattr__(self, "states", states)
        arr = np.asarray(states, dtype=float)
        if arr.size == 0:
            raise KernelError("state space must be nonempty")
        if not np.all(np.isfinite(arr)):
            raise KernelError("states must all be finite reals")
        if arr.size > 1 and not np.all(np.diff(arr) > 0):
            raise KernelError("states must be strictly increasing")
        if self.labels is not None:
            labels = tuple(str(x) for x in self.labels)
            if len(labels) != arr.size:
                raise KernelError("labels must match the number of states")
            object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_array", arr)
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(states)})

    @property
    def size(self) -> int:
        return len(self.states)

    def as_array(self) -> np.ndarray:
        """Read-only view of the grid."""
        a = self._array.view()
        a.flags.writeable = False
        return a

    def index_of(self, x: float) -> int:
        """Index of state ``x``; exact match required."""
        try:
            return self._index[float(x)]
        except KeyError:
            raise KernelError(f"state {x!r} is not on the grid") from None

    def __len__(self) -> int:
        return len(self.states)


@dataclass(frozen=True, eq=False)
class FiniteKernel:
    """Row-stochastic transition matrix over an :class:`OrderedStateSpace`.

    Rows off stochastic by at most ``row_tol`` are renormalized at
    construction; anything worse is rejected.  ``meta`` carries free-form
    provenance (model name, predicted verdicts, truncation mass, a
    time-inhomogeneous tag) and takes no part in the kernel's semantics.
    """

    space: OrderedStateSpace
    rows: np.ndarray
    row_tol: float = DEFAULT_ROW_TOL
    meta: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float)
        n = self.space.size
        if rows.shape != (n, n):
            raise KernelError(f"rows must be {n}x{n}, got {rows.shape}")
        if self.row_tol < 0:
            raise KernelError("row_tol must be nonnegative")
        if not np.all(np.isfinite(rows)):
            raise KernelError("kernel entries must be finite")
        if rows.min() < -self.row_tol or rows.max() > 1 + self.row_tol:
            raise KernelError("kernel entries must lie in [0, 1]")
        sums = rows.sum(axis=1)
        bad = np.abs(sums - 1.0) > self.row_tol
        if np.any(bad):
            i = int(np.argmax(np.abs(sums - 1.0)))
            raise KernelError(
                f"row {i} sums to {sums[i]!r}, off by more than row_tol={self.row_tol}"
            )
        rows = np.clip(rows, 0.0, 1.0)
        rows /= rows.sum(axis=1)[:, None]
        rows.flags.writeable = False
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "meta", dict(self.meta))

    @property
    def size(self) -> int:
        return self.space.size

    def with_meta(self, **entries) -> "FiniteKernel":
        """Copy of this kernel with extra meta entries."""
        meta = dict(self.meta)
        meta.update(entries)
        return FiniteKernel(self.space, self.rows, self.row_tol, meta)

    def tails(self) -> np.ndarray:
        """Matrix of tail probabilities p(x, (y, inf)) for grid thresholds y."""
        return 1.0 - np.cumsum(self.rows, axis=1)


@dataclass(frozen=True, eq=False)
class GeneralizedInverseTable:
    """Per-state CDF rows supporting quantile queries and monotone coupling.

    For row x the query G(x, u) returns the smallest grid state y with
    F_x(y) >= u, so G(x, u) <= y holds exactly when u <= F_x(y).
    """

    space: OrderedStateSpace
    cdf_rows: np.ndarray
    row_tol: float = DEFAULT_ROW_TOL

    def __post_init__(self):
        cdf = np.array(self.cdf_rows, dtype=float)
        n = self.space.size
        if cdf.shape != (n, n):
            raise KernelError(f"cdf_rows must be {n}x{n}, got {cdf.shape}")
        if np.any(np.diff(cdf, axis=1) < -self.row_tol):
            raise KernelError("cdf rows must be nondecreasing")
        if np.any(np.abs(cdf[:, -1] - 1.0) > self.row_tol):
            raise KernelError("cdf rows must end at 1")
        # Pin the final entry so u = 1 always resolves on the grid.
        cdf[:, -1] = 1.0
        cdf.flags.writeable = False
        object.__setattr__(self, "cdf_rows", cdf)

    def query_index(self, i: int, u: float) -> int:
        """Index form of :func:`ginv_query`; ``i`` indexes the source state."""
        if not 0.0 < u <= 1.0:
            raise KernelError(f"u must lie in (0, 1], got {u!r}")
        return int(np.searchsorted(self.cdf_rows[i], u, side="left"))

    def query(self, x: float, u: float) -> float:
        return self.space.states[self.query_index(self.space.index_of(x), u)]

    def query_indices(self, idx: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Vectorized query: source state indices ``idx``, uniforms ``u``.

        Groups the batch by source state so each group is a single
        searchsorted over that state's CDF row; exact and much faster than a
        per-element loop for large batches.
        """
        idx = np.asarray(idx)
        u = np.asarray(u, dtype=float)
        if u.size and (u.min() <= 0.0 or u.max() > 1.0):
            raise KernelError("all u must lie in (0, 1]")
        out = np.empty(idx.shape, dtype=np.int64)
        if idx.size == 0:
            return out
        flat_idx = idx.ravel()
        flat_u = u.ravel() if u.shape == idx.shape else np.broadcast_to(u, idx.shape).ravel()
        order = np.argsort(flat_idx, kind="stable")
        sorted_idx = flat_idx[order]
        bounds = np.flatnonzero(np.diff(sorted_idx)) + 1
        flat_out = out.ravel()
        for chunk in np.split(order, bounds):
            row = self.cdf_rows[flat_idx[chunk[0]]]
            flat_out[chunk] = np.searchsorted(row, flat_u[chunk], side="left")
        return out


@dataclass(frozen=True)
class KernelSequence:
    """Ordered list of kernels over one shared state space (time-varying chain)."""

    kernels: tuple[FiniteKernel, ...]

    def __post_init__(self):
        kernels = tuple(self.kernels)
        if not kernels:
            raise KernelError("kernel sequence must be nonempty")
        space = kernels[0].space
        for k in kernels[1:]:
            if k.space.states != space.states:
                raise KernelError("all kernels in a sequence must share one state space")
        object.__setattr__(self, "kernels", kernels)

    @property
    def space(self) -> OrderedStateSpace:
        return self.kernels[0].space

    def __len__(self) -> int:
        return len(self.kernels)

    def __getitem__(self, i) -> FiniteKernel:
        return self.kernels[i]


def build_ginv(kernel: FiniteKernel) -> GeneralizedInverseTable:
    """Generalized-inverse table of ``kernel``: CDF rows are prefix sums."""
    return GeneralizedInverseTable(
        kernel.space, np.cumsum(kernel.rows, axis=1), kernel.row_tol
    )


def ginv_query(table: GeneralizedInverseTable, x: float, u: float) -> float:
    """Smallest grid state y with F_x(y) >= u; left-continuous in u."""
    return table.query(x, u)


def identity_kernel(space: OrderedStateSpace, row_tol: float = DEFAULT_ROW_TOL) -> FiniteKernel:
    return FiniteKernel(space, np.eye(space.size), row_tol)


def compose(k1: FiniteKernel, k2: FiniteKernel) -> FiniteKernel:
    """Two-step kernel: first k1, then k2 (matrix product of the rows)."""
    if k1.space.states != k2.space.states:
        raise KernelError("cannot compose kernels over different state spaces")
    return FiniteKernel(k1.space, k1.rows @ k2.rows, k1.row_tol + k2.row_tol)


def n_step(kernel: FiniteKernel, n: int) -> FiniteKernel:
    """n-fold composition of ``kernel``; n = 0 is the identity."""
    if n < 0 or n != int(n):
        raise KernelError(f"n must be a nonnegative integer, got {n!r}")
    n = int(n)
    if n == 0:
        return identity_kernel(kernel.space, kernel.row_tol)
    rows = np.linalg.matrix_power(kernel.rows, n)
    return FiniteKernel(kernel.space, rows, n * kernel.row_tol)


def kernel_to_json(kernel: FiniteKernel) -> str:
    """Serialize as ``{"states": [...], "rows": [[...]]}``."""
    payload = {"states": list(kernel.space.states), "rows": kernel.rows.tolist()}
    if kernel.space.labels is not None:
        payload["labels"] = list(kernel.space.labels)
    return json.dumps(payload)


def kernel_from_json(text: str, row_tol: float = DEFAULT_ROW_TOL) -> FiniteKernel:
    """Deserialize a kernel, revalidating every invariant."""
    payload = json.loads(text)
    try:
        states = payload["states"]
        rows = payload["rows"]
    except (TypeError, KeyError) as exc:
        raise KernelError(f"kernel JSON must contain 'states' and 'rows': {exc}") from None
    labels = payload.get("labels")
    space = OrderedStateSpace(tuple(states), tuple(labels) if labels else None)
    return FiniteKernel(space, np.asarray(rows, dtype=float), row_tol)


def integer_space(lo: int, hi: int) -> OrderedStateSpace:
    """Grid of consecutive integers lo..hi inclusive."""
    if hi < lo:
        raise KernelError("empty integer range")
    return OrderedStateSpace(tuple(float(i) for i in range(lo, hi + 1)))


def uniform_space(lo: float, hi: float, size: int) -> OrderedStateSpace:
    """Equally spaced grid of ``size`` states from lo to hi inclusive."""
    if size < 1:
        raise KernelError("size must be >= 1")
    if size == 1:
        return OrderedStateSpace((float(lo),))
    return OrderedStateSpace(tuple(np.linspace(lo, hi, size)))
