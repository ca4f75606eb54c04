"""Uniform tensor grids on the 3-torus with midpoint quadrature.

The fundamental cube is (-pi, pi]^3 in ``base`` mode and (-2pi, 2pi]^3 in
``double_cover`` mode.  The double cover exists because half-angle form
factors such as cos(p/2) are only single-valued on the period-4pi torus;
its quadrature weight is rescaled so that any 2pi-periodic integrand keeps
its base-torus value.  All rules are equal-weight (periodic midpoint /
trapezoid), hence spectrally accurate for smooth periodic integrands.

Grids are immutable; every function here is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgumentError, NumericDomainError, UnsupportedModeError

TWO_PI = 2.0 * math.pi
FULL_MEASURE = TWO_PI**3  # total mass of the torus measure


class GridMode(str, Enum):
    BASE = "base"
    DOUBLE_COVER = "double_cover"


@dataclass(frozen=True)
class TorusGrid:
    """Tensor-product node set with a uniform quadrature weight.

    ``axis`` holds the per-axis coordinates; ``nodes`` is the (N, 3) array
    in C order (last axis fastest).  ``weight`` is the per-node quadrature
    weight; it sums to (2pi)^3 in both modes.
    """

    n_per_axis: int
    mode: GridMode
    offset: bool
    axis: np.ndarray = field(repr=False)
    nodes: np.ndarray = field(repr=False)
    weight: float

    @property
    def node_count(self) -> int:
        return self.nodes.shape[0]

    @property
    def period(self) -> float:
        return TWO_PI if self.mode is GridMode.BASE else 2.0 * TWO_PI

    @property
    def spacing(self) -> float:
        return self.period / self.n_per_axis

    def has_axis_value(self, value: float, tol: float = 1e-12) -> bool:
        return bool(np.any(np.abs(self.axis - value) <= tol))

    @property
    def contains_zero_node(self) -> bool:
        return self.has_axis_value(0.0)

    @property
    def contains_pi_node(self) -> bool:
        # pi and -pi are the same torus point
        return self.has_axis_value(math.pi) or self.has_axis_value(-math.pi)

    def scaled(self, factor: int) -> "TorusGrid":
        """Same mode/offset at ``factor`` times the per-axis resolution."""
        return build_grid(self.n_per_axis * factor, self.mode, self.offset)


@lru_cache(maxsize=64)
def _build_grid_cached(n_per_axis: int, mode: GridMode, offset: bool) -> TorusGrid:
    period = TWO_PI if mode is GridMode.BASE else 2.0 * TWO_PI
    h = period / n_per_axis
    shift = 0.5 if offset else 0.0
    axis = -0.5 * period + (np.arange(n_per_axis) + shift) * h
    mesh = np.meshgrid(axis, axis, axis, indexing="ij")
    nodes = np.stack([m.reshape(-1) for m in mesh], axis=-1)
    nodes.setflags(write=False)
    axis.setflags(write=False)
    weight = FULL_MEASURE / nodes.shape[0]
    return TorusGrid(n_per_axis, mode, offset, axis, nodes, weight)


def build_grid(n_per_axis: int, mode: GridMode | str = GridMode.BASE, offset: bool = True) -> TorusGrid:
    """Construct a grid.

    Double-cover mode requires an even ``n_per_axis`` (otherwise the node
    set is not closed under the shift by (2pi, 2pi, 2pi) and the half-angle
    cancellations fail).  Base mode accepts any n >= 2; note that odd base
    grids place a node on either the zero point (offset) or the corner
    point (non-offset).
    """
    mode = GridMode(mode)
    if not isinstance(n_per_axis, (int, np.integer)) or n_per_axis < 2:
        raise InvalidArgumentError(f"n_per_axis must be an integer >= 2, got {n_per_axis!r}")
    if mode is GridMode.DOUBLE_COVER and n_per_axis % 2 != 0:
        raise InvalidArgumentError(
            f"n_per_axis must be even in double_cover mode (shift invariance), got {n_per_axis}"
        )
    return _build_grid_cached(int(n_per_axis), mode, bool(offset))


def integrate(grid: TorusGrid, samples: np.ndarray) -> float:
    """Quadrature of per-node samples: weight * sum(samples).

    Exact (to rounding) for trigonometric polynomials resolved by the grid.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape != (grid.node_count,):
        raise InvalidArgumentError(
            f"expected {grid.node_count} samples, got shape {samples.shape}"
        )
    bad = np.flatnonzero(~np.isfinite(samples))
    if bad.size:
        i = int(bad[0])
        raise NumericDomainError(
            f"non-finite sample {samples[i]!r} at node {i} = {grid.nodes[i]}"
        )
    return float(grid.weight * samples.sum())


def shift_involution_check(grid: TorusGrid) -> tuple[bool, float]:
    """Verify that s -> s + (2pi,2pi,2pi) permutes the double-cover nodes.

    Returns (ok, mismatch) where mismatch is the largest distance between a
    shifted node (wrapped into the fundamental cube) and its image under
    the induced index permutation.  The permutation itself is integer
    arithmetic, so the node *set* is exactly closed; the reported mismatch
    only measures floating-point wrap error.
    """
    if grid.mode is not GridMode.DOUBLE_COVER:
        raise UnsupportedModeError("shift check is defined on the double cover only")
    n = grid.n_per_axis
    perm_axis = (np.arange(n) + n // 2) % n
    shifted = grid.axis + TWO_PI
    shifted = np.where(shifted > TWO_PI, shifted - 2 * TWO_PI, shifted)
    mismatch = float(np.max(np.abs(np.sort(shifted) - np.sort(grid.axis[perm_axis]))))
    ok = mismatch <= 64 * np.finfo(float).eps * grid.period
    return ok, mismatch


def torus_distance(a: np.ndarray, b: np.ndarray, period: float = TWO_PI) -> np.ndarray:
    """Euclidean distance on the torus (coordinates wrapped per axis)."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    d = (d + 0.5 * period) % period - 0.5 * period
    return np.sqrt((d * d).sum(axis=-1))


def shift_permutation(grid: TorusGrid) -> np.ndarray:
    """Node index permutation induced by the shift s -> s + 2pi (per axis)."""
    if grid.mode is not GridMode.DOUBLE_COVER:
        raise UnsupportedModeError("shift permutation is defined on the double cover only")
    n = grid.n_per_axis
    p1 = (np.arange(n) + n // 2) % n
    idx = (p1[:, None, None] * n + p1[None, :, None]) * n + p1[None, None, :]
    return idx.reshape(-1)


# ---------------------------------------------------------------------------
# symmetric two-particle space: weighted pair vectors


@dataclass(frozen=True)
class SymPairIndex:
    """Index data for the isometric embedding of symmetric functions.

    A symmetric table F[i, j] maps to a vector over pairs (i <= j) scaled by
    weight * kappa with kappa = sqrt(2) off the diagonal, so the embedded
    Euclidean norm equals the full double-grid quadrature L2 norm.
    """

    node_count: int
    rows: np.ndarray
    cols: np.ndarray
    kappa: np.ndarray

    @property
    def pair_count(self) -> int:
        return self.rows.shape[0]


@lru_cache(maxsize=32)
def _pair_index_cached(node_count: int) -> SymPairIndex:
    rows, cols = np.triu_indices(node_count)
    kappa = np.where(rows == cols, 1.0, math.sqrt(2.0))
    for arr in (rows, cols, kappa):
        arr.setflags(write=False)
    return SymPairIndex(node_count, rows, cols, kappa)


def pair_index(grid: TorusGrid) -> SymPairIndex:
    return _pair_index_cached(grid.node_count)


def sym_embed(grid: TorusGrid, table: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Embed a symmetric N x N sample table as a weighted pair vector."""
    table = np.asarray(table, dtype=np.float64)
    n = grid.node_count
    if table.shape != (n, n):
        raise InvalidArgumentError(f"expected a ({n}, {n}) table, got {table.shape}")
    asym = np.abs(table - table.T)
    scale = np.max(np.abs(table)) or 1.0
    worst = np.unravel_index(np.argmax(asym), asym.shape)
    if asym[worst] > rtol * scale:
        raise InvalidArgumentError(
            f"input not symmetric: |F[{worst[0]},{worst[1]}] - F[{worst[1]},{worst[0]}]|"
            f" = {asym[worst]:.3e} exceeds {rtol:.1e} * {scale:.3e}"
        )
    pi = pair_index(grid)
    return grid.weight * pi.kappa * table[pi.rows, pi.cols]


def sym_project(grid: TorusGrid, pair_vector: np.ndarray) -> np.ndarray:
    """Inverse of :func:`sym_embed`: recover the symmetric sample table."""
    pi = pair_index(grid)
    pair_vector = np.asarray(pair_vector, dtype=np.float64)
    if pair_vector.shape != (pi.pair_count,):
        raise InvalidArgumentError(
            f"expected {pi.pair_count} pair entries, got shape {pair_vector.shape}"
        )
    table = np.zeros((grid.node_count, grid.node_count))
    vals = pair_vector / (grid.weight * pi.kappa)
    table[pi.rows, pi.cols] = vals
    table[pi.cols, pi.rows] = vals
    return table


# ---------------------------------------------------------------------------
# refinement ladder


@dataclass(frozen=True)
class RefinedValue:
    value: float
    error_estimate: float
    order_estimate: float
    per_level: tuple[float, ...]


def extrapolate_ladder(vals: Sequence[float], rel_tol: float = 1e-12) -> tuple[float, float]:
    """Extrapolate a ladder of quadrature values on grids n, 2n, 4n, ...

    Integrable band-bottom singularities make the midpoint rule first
    order with an asymptotic error expansion in integer powers of h, so
    successive stages eliminate orders 1, 2, 3, ...  Spectrally converged
    ladders (smooth integrands) short-circuit to the finest value.
    Returns (value, error_estimate).
    """
    vals = [float(v) for v in vals]
    if len(vals) == 1:
        return vals[0], math.nan
    scale = max(abs(vals[-1]), 1e-300)
    d_last = vals[-1] - vals[-2]
    if abs(d_last) <= rel_tol * scale:
        return vals[-1], abs(d_last)
    cur = vals
    order = 1.0
    err = abs(d_last)
    while len(cur) > 1:
        q = 2.0**order
        nxt = [(q * cur[i + 1] - cur[i]) / (q - 1.0) for i in range(len(cur) - 1)]
        err = abs(nxt[-1] - cur[-1])
        cur = nxt
        order += 1.0
    return cur[0], err


def refined_quadrature(
    sampler: Callable[[TorusGrid], np.ndarray], grid: TorusGrid, levels: int = 3
) -> RefinedValue:
    """Richardson-extrapolated quadrature over grids n, 2n, 4n, ...

    ``sampler`` maps a grid to per-node integrand samples.
    """
    if levels < 1:
        raise InvalidArgumentError("levels must be >= 1")
    vals = []
    g = grid
    for k in range(levels):
        if k:
            g = g.scaled(2)
        vals.append(integrate(g, sampler(g)))
    if levels == 1:
        return RefinedValue(vals[0], math.nan, math.nan, tuple(vals))
    d_last = vals[-1] - vals[-2]
    order = math.nan
    if levels >= 3:
        d_prev = vals[-2] - vals[-3]
        if d_last and d_prev and d_prev / d_last > 0:
            order = math.log2(abs(d_prev / d_last))
    value, err = extrapolate_ladder(vals)
    return RefinedValue(value, err, order, tuple(vals))
