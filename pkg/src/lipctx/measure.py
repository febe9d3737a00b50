"""Empirical probability measures, couplings, and exact Wasserstein-1 oracles.

An empirical measure is a weighted finite point cloud

    mu = sum_i w_i * delta_{x_i},   w_i >= 0,  sum_i w_i = 1,

the ground object every other module operates on. This module also owns
the package's ground-truth W1 oracles:

  * ``w1_exact``     -- the transportation linear program with Euclidean
                        ground cost, solved to optimality (HiGHS).
  * ``w1_exact_1d``  -- the closed-form 1D value, integral of |F_mu - F_nu|
                        over the merged sorted support.

The two are cross-validated against each other, against an optimal
assignment solve, and against brute-force permutation enumeration in the
test suite, so that the LP can be trusted as the reference everywhere else.

Determinism conventions
-----------------------
Weighted reductions over atoms run as pairwise (tree) sums over a
*canonical* atom order (lexicographic by coordinates, then weight). The
canonical order makes reductions invariant under permutations of the
stored atoms, bit for bit, while storage order is preserved to keep
token identity (duplicate atoms are never merged except inside marginal
comparisons).

All values are immutable after construction and all operations are pure.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog

from .errors import CapExceededError, DimensionMismatchError, InvalidMeasureError

#: Default cap on n_mu * n_nu transportation cells.
W1_CELL_CAP = 4096

#: Absolute slack used by DomainBall.contains.
BALL_ABS_TOL = 1e-9


def tree_sum(values: np.ndarray) -> np.ndarray:
    """Sum ``values`` over axis 0 by pairwise (tree) reduction.

    Adjacent elements are paired at every level, so the result is a
    deterministic function of the element *order* with lower rounding
    error than a running sum. Returns a zero array of the trailing shape
    when ``values`` is empty.
    """
    a = np.asarray(values, dtype=np.float64)
    if a.shape[0] == 0:
        return np.zeros(a.shape[1:], dtype=np.float64)
    while a.shape[0] > 1:
        n = a.shape[0]
        k = n // 2
        paired = a[0 : 2 * k : 2] + a[1 : 2 * k : 2]
        if n % 2:
            a = np.concatenate([paired, a[n - 1 : n]], axis=0)
        else:
            a = paired
    return a[0]


def canonical_atom_order(points: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Permutation sorting atoms lexicographically by coordinates, then weight."""
    keys = tuple(points[:, c] for c in range(points.shape[1] - 1, -1, -1))
    return np.lexsort((weights,) + keys)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Weighted finite point cloud on R^d.

    Weights are nonnegative and renormalized to sum to one at
    construction (file I/O drift is corrected, not rejected). Atoms of
    equal value are kept separate to preserve token identity.
    """

    points: np.ndarray  # (n, d)
    weights: np.ndarray  # (n,)
    _canonical: np.ndarray = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        w = np.asarray(self.weights, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise InvalidMeasureError("measure needs at least one atom")
        if pts.shape[1] < 1:
            raise InvalidMeasureError("atoms must have dimension >= 1")
        if w.shape != (pts.shape[0],):
            raise InvalidMeasureError(
                f"got {pts.shape[0]} atoms but {w.shape} weights"
            )
        if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(w)):
            raise InvalidMeasureError("non-finite entries in points or weights")
        if np.any(w < 0):
            raise InvalidMeasureError("weights must be nonnegative")
        # Normalize by the canonical-order tree sum so the stored weights
        # are identical regardless of atom storage order (the canonical
        # order is scaling-invariant, so it can be computed first).
        order = canonical_atom_order(pts, w)
        total = float(tree_sum(w[order]))
        if total <= 0.0:
            raise InvalidMeasureError("weights must not all be zero")
        w = w / total
        pts = pts.copy()
        pts.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "_canonical", order)

    @property
    def n_atoms(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def canonical(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (points, weights, inverse permutation) in canonical order.

        ``inverse`` scatters canonically-ordered per-atom results back to
        storage order: ``out[storage] = computed[inverse]``.
        """
        order = self._canonical
        inv = np.empty_like(order)
        inv[order] = np.arange(order.size)
        return self.points[order], self.weights[order], inv

    def merged(self) -> tuple[np.ndarray, np.ndarray]:
        """Atoms as a canonical weighted multiset: duplicates merged, sorted."""
        pts, w, _ = self.canonical()
        keep_rows = []
        keep_w = []
        i = 0
        while i < len(w):
            j = i + 1
            acc = w[i]
            while j < len(w) and np.array_equal(pts[j], pts[i]):
                acc += w[j]
                j += 1
            keep_rows.append(pts[i])
            keep_w.append(acc)
            i = j
        return np.array(keep_rows), np.array(keep_w)

    def __repr__(self) -> str:
        return f"EmpiricalMeasure(n={self.n_atoms}, d={self.dim})"


@dataclass(frozen=True, eq=False)
class Coupling:
    """Joint measure over pairs whose marginals are two given measures."""

    left: np.ndarray  # (n, h)
    right: np.ndarray  # (n, h')
    weights: np.ndarray  # (n,)

    def __post_init__(self):
        l = np.atleast_2d(np.asarray(self.left, dtype=np.float64))
        r = np.atleast_2d(np.asarray(self.right, dtype=np.float64))
        w = np.asarray(self.weights, dtype=np.float64)
        if l.shape[0] != r.shape[0] or l.shape[0] != w.shape[0]:
            raise InvalidMeasureError("coupling sides and weights must align")
        if np.any(w < 0):
            raise InvalidMeasureError("coupling weights must be nonnegative")
        total = float(np.sum(w))
        if total <= 0.0:
            raise InvalidMeasureError("coupling weights must not all be zero")
        w = w / total
        for a in (l, r, w):
            a.flags.writeable = False
        object.__setattr__(self, "left", l)
        object.__setattr__(self, "right", r)
        object.__setattr__(self, "weights", w)

    @property
    def n_atoms(self) -> int:
        return self.weights.shape[0]

    def marginals(self) -> tuple[EmpiricalMeasure, EmpiricalMeasure]:
        """The two marginal measures (duplicates kept, storage order)."""
        return (
            EmpiricalMeasure(self.left, self.weights),
            EmpiricalMeasure(self.right, self.weights),
        )

    def as_measure(self) -> EmpiricalMeasure:
        """The coupling as an empirical measure on the product space."""
        return EmpiricalMeasure(np.hstack([self.left, self.right]), self.weights)


@dataclass(frozen=True, eq=False)
class DomainBall:
    """Euclidean ball certifying a compact domain overapproximation."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64).reshape(-1)
        r = float(self.radius)
        if not np.all(np.isfinite(c)) or not np.isfinite(r):
            raise InvalidMeasureError("ball center and radius must be finite")
        if r < 0:
            raise InvalidMeasureError("ball radius must be nonnegative")
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", r)

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def contains(self, x: np.ndarray, rtol: float = 0.0) -> bool:
        """Membership with absolute slack 1e-9 plus ``rtol * radius``."""
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape != self.center.shape:
            raise DimensionMismatchError(
                f"point of dim {x.shape[0]} vs ball of dim {self.dim}"
            )
        return float(np.linalg.norm(x - self.center)) <= (
            self.radius + BALL_ABS_TOL + rtol * self.radius
        )

    def contains_ball(self, other: "DomainBall", tol: float = BALL_ABS_TOL) -> bool:
        """Whether ``other`` is contained in this ball, with absolute slack."""
        gap = float(np.linalg.norm(other.center - self.center)) + other.radius
        return gap <= self.radius + tol

    def __repr__(self) -> str:
        return f"DomainBall(d={self.dim}, radius={self.radius:.6g})"


# ---------------------------------------------------------------------------
# Constructors and pushforward
# ---------------------------------------------------------------------------
def new_empirical(
    points: Sequence[Sequence[float]] | np.ndarray,
    weights: Sequence[float] | np.ndarray | None = None,
) -> EmpiricalMeasure:
    """Build an empirical measure; weights default to uniform 1/n."""
    try:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    except ValueError as exc:
        raise InvalidMeasureError(f"inconsistent point dimensions: {exc}") from exc
    if pts.size == 0:
        raise InvalidMeasureError("empty point list")
    if weights is None:
        weights = np.full(pts.shape[0], 1.0 / pts.shape[0])
    return EmpiricalMeasure(pts, np.asarray(weights, dtype=np.float64))


def pushforward(
    mu: EmpiricalMeasure, f: Callable[[np.ndarray], np.ndarray]
) -> EmpiricalMeasure:
    """Map every atom through ``f``, keeping its weight."""
    images = [np.asarray(f(p), dtype=np.float64).reshape(-1) for p in mu.points]
    dims = {img.shape[0] for img in images}
    if len(dims) != 1:
        raise DimensionMismatchError("map produced images of mixed dimension")
    return EmpiricalMeasure(np.array(images), mu.weights)


def bounding_ball(
    points: Sequence[Sequence[float]] | np.ndarray, margin: float = 0.0
) -> DomainBall:
    """Certified enclosing ball: mean center, max-distance radius.

    The radius is inflated by ``margin`` and a (1 + 1e-9) relative safety
    factor so every input point is contained despite rounding.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.size == 0:
        raise InvalidMeasureError("empty point list")
    if margin < 0:
        raise InvalidMeasureError("margin must be nonnegative")
    center = pts.mean(axis=0)
    max_dist = float(np.max(np.linalg.norm(pts - center, axis=1)))
    return DomainBall(center, (max_dist + margin) * (1.0 + 1e-9))


# ---------------------------------------------------------------------------
# Couplings
# ---------------------------------------------------------------------------
def pair_coupling(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> Coupling:
    """Index-paired coupling when atom counts and weights match; else product.

    Both choices are valid elements of Pi(mu, nu); downstream parallel
    attention results are coupling-agnostic, so the cheap one wins.
    """
    if mu.n_atoms == nu.n_atoms and np.array_equal(mu.weights, nu.weights):
        return Coupling(mu.points, nu.points, mu.weights)
    left = np.repeat(mu.points, nu.n_atoms, axis=0)
    right = np.tile(nu.points, (mu.n_atoms, 1))
    w = np.outer(mu.weights, nu.weights).ravel()
    return Coupling(left, right, w)


# ---------------------------------------------------------------------------
# Exact Wasserstein-1 oracles
# ---------------------------------------------------------------------------
class LipschitzOracleFailure(CapExceededError):
    """The LP oracle failed to solve an in-cap instance."""


def w1_exact_1d(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Exact 1D W1: integral of |F_mu - F_nu| over merged sorted atoms."""
    if mu.dim != 1 or nu.dim != 1:
        raise DimensionMismatchError("w1_exact_1d requires one-dimensional measures")
    pos = np.concatenate([mu.points[:, 0], nu.points[:, 0]])
    sgn = np.concatenate([mu.weights, -nu.weights])
    order = np.argsort(pos, kind="stable")
    pos = pos[order]
    cdf_gap = np.cumsum(sgn[order])
    return float(np.sum(np.abs(cdf_gap[:-1]) * np.diff(pos)))


def w1_exact(
    mu: EmpiricalMeasure, nu: EmpiricalMeasure, cell_cap: int = W1_CELL_CAP
) -> float:
    """Optimal transportation cost with Euclidean ground cost.

    Solves the transportation LP

        min sum_ij gamma_ij ||x_i - y_j||_2
        s.t. row sums = mu weights, column sums = nu weights, gamma >= 0

    to optimality with HiGHS. One marginal constraint is dropped (the
    constraint matrix has rank n + m - 1). Nonnegative, symmetric, and
    agrees with ``w1_exact_1d`` on 1D inputs to well below 1e-9.
    """
    if mu.dim != nu.dim:
        raise DimensionMismatchError(
            f"measures of dimension {mu.dim} and {nu.dim}"
        )
    n, m = mu.n_atoms, nu.n_atoms
    if n * m > cell_cap:
        raise CapExceededError(
            f"transportation instance has {n * m} cells, cap is {cell_cap}"
        )
    cost = np.linalg.norm(
        mu.points[:, None, :] - nu.points[None, :, :], axis=2
    )
    # Row-sum constraints for mu, column-sum constraints for nu (last dropped).
    rows = np.zeros((n, n * m))
    for i in range(n):
        rows[i, i * m : (i + 1) * m] = 1.0
    cols = np.zeros((m - 1, n * m)) if m > 1 else np.zeros((0, n * m))
    for j in range(m - 1):
        cols[j, j::m] = 1.0
    a_eq = np.vstack([rows, cols])
    b_eq = np.concatenate([mu.weights, nu.weights[: m - 1]])
    res = linprog(cost.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:  # pragma: no cover - HiGHS handles these instances
        raise LipschitzOracleFailure(res.message)
    return max(0.0, float(res.fun))
