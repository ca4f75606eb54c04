"""The symmetrized fixed-point operator W(z) and its compactness data.

For real z below the band and away from the essential spectrum, bound
states of the Hamiltonian solve a fixed-point equation W(z) f = f whose
kernels are balanced by square roots of the sign-corrected determinants,
sign(Delta_a) * Delta_a > 0.  This module assembles the nine blocks as
dense matrices in the quadrature geometry, evaluates the sign functions,
runs the fixed-point experiment for several natural identifications of
the eigenvector, and measures Hilbert-Schmidt norms, singular-value decay
and the operator-norm continuity toward the edges of the gap region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import svdvals

from . import friedrichs, kernels
from .errors import (
    ForbiddenRegionError,
    InvalidArgumentError,
    NumericDomainError,
    ResourceLimitError,
    SquareRootDomainError,
)
from .grid import TorusGrid, pair_index, torus_distance
from .model import (
    ModelFunctions,
    QuadraticBounds,
    grid_samples,
    min_max_w2,
    spectral_scale,
    sweep_lattice,
)

W_PAIR_CAP = 4000  # dense pair-sector blocks need P^2 memory


def xi(
    model: ModelFunctions, grid: TorusGrid, z: float, sweep_n: int = 7
) -> tuple[int, int]:
    """Signs of the two determinants at z, verified constant over a p-sweep.

    z may sit exactly on the band bottom (edge evaluations); anything
    above it, or any sign change over the sweep, raises a
    forbidden-region error.
    """
    m, M, _ = min_max_w2(model, grid)
    if z > m + 1e-12 * spectral_scale(m, M):
        raise ForbiddenRegionError(f"z = {z} is not below the band bottom {m}")
    s1, _ = friedrichs.sign_constancy(1, model, grid, z, sweep_n)
    s2, _ = friedrichs.sign_constancy(2, model, grid, z, sweep_n)
    return s1, s2


@dataclass(frozen=True)
class WeinbergOperator:
    z: float
    xi: tuple[int, int]
    grid: TorusGrid
    block_dims: tuple[int, int, int]
    blocks: dict
    d1: np.ndarray  # sqrt(xi1 * Delta_1) at the nodes
    d2: np.ndarray

    @property
    def dim(self) -> int:
        return sum(self.block_dims)

    def matrix(self) -> np.ndarray:
        one, n, p = self.block_dims
        w = np.zeros((1 + n + p, 1 + n + p))
        w[0, 0] = self.blocks["00"]
        w[0, 1 : n + 1] = self.blocks["01"]
        w[1 : n + 1, 0] = self.blocks["10"]
        w[1 : n + 1, 1 : n + 1] = self.blocks["11"]
        w[1 : n + 1, n + 1 :] = self.blocks["12"]
        w[n + 1 :, 0] = self.blocks["20"]
        w[n + 1 :, 1 : n + 1] = self.blocks["21"]
        w[n + 1 :, n + 1 :] = self.blocks["22"]
        # the (0, 2) block is identically zero
        return w


def _delta_at_nodes(
    model: ModelFunctions, grid: TorusGrid, alpha: int, z: float, levels: int
) -> np.ndarray:
    if levels <= 1:
        rows = np.asarray(
            model.w2(grid.nodes[:, None, :], grid.nodes[None, :, :]), dtype=np.float64
        )
        fw = friedrichs._fw(model, grid, alpha)
        b = 1.0 if alpha == 1 else 0.0
        aff = np.asarray(friedrichs._affine(model, alpha, grid.nodes), dtype=np.float64)
        return aff - b * z - kernels.moment_sums(rows, fw, z, 1)
    return np.array(
        [friedrichs.delta_value_fast(alpha, model, grid, p, z, levels) for p in grid.nodes]
    )


def _rsym_matrix(partner_u, v_weights, r_pair, pi, n, half):
    """Dense P x N map  b ->  kappa * R * (v(k) b(l) + v(l) b(k)) (/2)."""
    mat = np.zeros((pi.pair_count, n))
    rows = np.arange(pi.pair_count)
    scale = 0.5 if half else 1.0
    pref = scale * pi.kappa * r_pair
    np.add.at(mat, (rows, pi.cols), pref * partner_u[pi.rows])
    np.add.at(mat, (rows, pi.rows), pref * partner_u[pi.cols])
    return mat


def assemble_W(
    model: ModelFunctions,
    grid: TorusGrid,
    z: float,
    delta_levels: int = 1,
    refine_at_edges: bool = True,
    edge_tol: float = 1e-9,
    sweep_n: int = 7,
    pair_cap: int = W_PAIR_CAP,
) -> WeinbergOperator:
    """Assemble all nine blocks of W(z) as dense matrices.

    Every integral in the kernel definitions becomes a weighted node sum;
    the paired-composition structure of the bottom row (the one-particle
    form factor times the middle-row output, divided by the pair
    resolvent) is built by composing the already-assembled middle-row
    blocks.  Near the band bottom the determinant factors switch to the
    refinement ladder, matching the determinant module.
    """
    pi = pair_index(grid)
    n = grid.node_count
    if pi.pair_count > pair_cap:
        raise ResourceLimitError(
            f"dense W needs {pi.pair_count}^2 pair entries (cap {pair_cap})"
        )
    m, M, _ = min_max_w2(model, grid)
    scale = spectral_scale(m, M)
    xi1, xi2 = xi(model, grid, z, sweep_n=sweep_n)
    levels = delta_levels
    if refine_at_edges and abs(z - m) <= edge_tol * scale and levels < 2:
        levels = 2

    d1sq = xi1 * _delta_at_nodes(model, grid, 1, z, levels)
    d2sq = xi2 * _delta_at_nodes(model, grid, 2, z, levels)
    for alpha, dsq in ((1, d1sq), (2, d2sq)):
        bad = np.flatnonzero(dsq <= 0)
        if bad.size:
            j = int(bad[0])
            raise SquareRootDomainError(
                f"xi_{alpha} * Delta_{alpha} = {dsq[j]:.3e} <= 0 at node {j} = "
                f"{grid.nodes[j]} (z = {z})"
            )
    d1, d2 = np.sqrt(d1sq), np.sqrt(d2sq)

    gs = grid_samples(model, grid)
    sq = math.sqrt(grid.weight)
    nodes = grid.nodes
    w2_tab = np.asarray(model.w2(nodes[:, None, :], nodes[None, :, :]), dtype=np.float64)
    if np.min(w2_tab) - z <= 0:
        raise NumericDomainError(f"z = {z} is not below the sampled pair band")
    r_tab = 1.0 / (w2_tab - z)
    w2p = np.asarray(model.w2(nodes[pi.rows], nodes[pi.cols]), dtype=np.float64)
    r_pair = 1.0 / (w2p - z)

    v0u, v1u, v2u = sq * gs.v0, sq * gs.v1, sq * gs.v2

    w00 = 1.0 + z - model.w0
    w01 = -v0u / d1
    w10 = -xi1 * v0u / d1
    w11 = xi1 * 0.5 * (r_tab * np.outer(v1u / d1, v1u / d1))

    # middle -> pair moment map T2 and the resolvent-weighted contractions
    t2 = _t_matrix_v(gs.v2, sq, pi, n)
    g1 = r_tab * (sq * gs.v1 / d2)[None, :]
    g2 = r_tab * (sq * gs.v2 / d1)[None, :]
    g3 = r_tab * (sq * gs.v2 / d2)[None, :]

    w12 = -xi1 * ((sq * gs.v2 / d1)[:, None] * (g1 @ t2))

    rs1 = _rsym_matrix(v1u, gs.v1, r_pair, pi, n, half=True)
    rs2h = _rsym_matrix(v2u, gs.v2, r_pair, pi, n, half=True)
    rs2f = _rsym_matrix(v2u, gs.v2, r_pair, pi, n, half=False)

    w20 = -rs1 @ w10
    w21 = -xi2 * (rs2h @ ((sq * gs.v1 / d2)[:, None] * (g2))) - rs1 @ w11
    w22 = xi2 * (rs2f @ ((sq * gs.v2 / d2)[:, None] * (g3 @ t2))) - rs1 @ w12

    blocks = {
        "00": w00,
        "01": w01,
        "10": w10,
        "11": w11,
        "12": w12,
        "20": w20,
        "21": w21,
        "22": w22,
    }
    return WeinbergOperator(z, (xi1, xi2), grid, (1, n, pi.pair_count), blocks, d1, d2)


def _t_matrix_v(v, sq, pi, n):
    t = np.zeros((n, pi.pair_count))
    cols = np.arange(pi.pair_count)
    off = pi.rows != pi.cols
    t[pi.rows[off], cols[off]] = sq * v[pi.cols[off]] / pi.kappa[off]
    t[pi.cols[off], cols[off]] += sq * v[pi.rows[off]] / pi.kappa[off]
    diag = ~off
    t[pi.rows[diag], cols[diag]] = sq * v[pi.rows[diag]]
    return t


# ---------------------------------------------------------------------------
# fixed-point experiment


@dataclass(frozen=True)
class FixedPointResult:
    z: float
    residuals: dict
    best_name: str
    best_residual: float


def fixed_point_residual(
    w: WeinbergOperator,
    model: ModelFunctions,
    grid: TorusGrid,
    eigenvector: np.ndarray,
) -> FixedPointResult:
    """Residuals ||W(z) g - g|| / ||g|| over candidate identifications.

    The fixed-point vector of the balanced kernels is not the raw
    eigenvector: the middle component carries a sqrt(xi1 Delta_1) factor
    and the pair component is reconstructed from the balanced moments
    through the pair resolvent.  All three natural identifications (raw,
    middle-rescaled, fully reconstructed) are evaluated; which one
    achieves a small residual is the experiment's outcome, not an input.
    """
    one, n, p = w.block_dims
    if eigenvector.shape != (1 + n + p,):
        raise InvalidArgumentError("eigenvector does not match the operator layout")
    u0, u1, u2 = eigenvector[0], eigenvector[1 : n + 1], eigenvector[n + 1 :]
    gs = grid_samples(model, grid)
    pi = pair_index(grid)
    sq = math.sqrt(grid.weight)
    t2 = _t_matrix_v(gs.v2, sq, pi, n)
    w2p = np.asarray(model.w2(grid.nodes[pi.rows], grid.nodes[pi.cols]), dtype=np.float64)
    r_pair = 1.0 / (w2p - w.z)
    rs1 = _rsym_matrix(sq * gs.v1, gs.v1, r_pair, pi, n, half=True)
    rs2f = _rsym_matrix(sq * gs.v2, gs.v2, r_pair, pi, n, half=False)

    x1 = w.d1 * u1
    x2 = w.d2 * (t2 @ u2)
    u2_recon = rs2f @ x2 - rs1 @ x1

    candidates = {
        "raw": np.concatenate([[u0], u1, u2]),
        "scaled_mid": np.concatenate([[u0], x1, u2]),
        "reconstructed": np.concatenate([[u0], x1, u2_recon]),
    }
    mat = w.matrix()
    residuals = {}
    for name, g in candidates.items():
        nrm = np.linalg.norm(g)
        if nrm == 0:
            residuals[name] = math.inf
            continue
        residuals[name] = float(np.linalg.norm(mat @ g - g) / nrm)
    best = min(residuals, key=residuals.get)
    return FixedPointResult(w.z, residuals, best, residuals[best])


# ---------------------------------------------------------------------------
# norms, singular values, continuity


def hs_norm(w: WeinbergOperator) -> dict:
    """Per-block Hilbert-Schmidt (weighted Frobenius) norms."""
    out = {}
    for key, block in w.blocks.items():
        out[key] = float(np.linalg.norm(np.atleast_1d(block)))
    out["02"] = 0.0
    return out


def singular_decay(w: WeinbergOperator, count: int = 20) -> np.ndarray:
    """Largest ``count`` singular values of the full operator."""
    sv = svdvals(w.matrix())
    return sv[:count]


def block_singular_values(w: WeinbergOperator, key: str, count: int = 5) -> np.ndarray:
    block = np.atleast_2d(np.asarray(w.blocks[key], dtype=np.float64))
    if block.shape[0] == 1 or block.shape[1] == 1:
        return np.array([float(np.linalg.norm(block))])
    sv = svdvals(block)
    return sv[:count]


def operator_norm(mat: np.ndarray, iters: int = 300, tol: float = 1e-12, seed: int = 0) -> float:
    """Largest singular value by power iteration on A'A (deterministic seed)."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(mat.shape[1])
    x /= np.linalg.norm(x)
    last = 0.0
    for _ in range(iters):
        y = mat @ x
        x = mat.T @ y
        nrm = np.linalg.norm(x)
        if nrm == 0:
            return 0.0
        x /= nrm
        s = math.sqrt(nrm)
        if abs(s - last) <= tol * max(s, 1.0):
            return s
        last = s
    return last


def continuity_modulus(
    model: ModelFunctions,
    grid: TorusGrid,
    z_list: Sequence[float],
    delta_levels: int = 1,
) -> dict[tuple[int, int], float]:
    """Table of operator-norm differences ||W(z_i) - W(z_j)||.

    All z must lie below the band (edges included) and outside the
    essential spectrum; assembly enforces it.  Every operator in the table
    is built at the same quadrature level, edge points included, so the
    differences measure z-dependence only.
    """
    mats = [
        assemble_W(model, grid, z, delta_levels=delta_levels, refine_at_edges=False).matrix()
        for z in z_list
    ]
    out: dict[tuple[int, int], float] = {}
    for i in range(len(z_list)):
        for j in range(i + 1, len(z_list)):
            out[(i, j)] = operator_norm(mats[i] - mats[j])
    return out


# ---------------------------------------------------------------------------
# kernel majorant check


@dataclass(frozen=True)
class MajorantCheck:
    window: str
    z: float
    worst_ratio: float
    n_samples: int

    @property
    def ok(self) -> bool:
        return self.worst_ratio <= 1.0


def kernel_majorant_check(
    model: ModelFunctions,
    grid: TorusGrid,
    z: float,
    branch2: friedrichs.BranchData,
    qb: QuadraticBounds,
    delta1_floor: float,
    n_samples: int = 1500,
    seed: int = 5,
) -> MajorantCheck:
    """Verify the explicit singular majorant dominates the pair-pair kernel.

    Which window applies follows from z: at or below the branch bottom the
    determinant zeros there control the kernel; just above the branch top
    its zeros do; approaching the band bottom the pair resolvent's
    quadratic pinch takes over while the determinant factors stay bounded
    below.  The majorant is assembled from fitted vanishing orders,
    off-neighbourhood floors and the quadratic bounds; the worst sampled
    |kernel| / majorant ratio is returned (<= 1 passes).
    """
    m, M, _ = min_max_w2(model, grid)
    if branch2.empty:
        raise NumericDomainError("majorant windows need a nonempty branch")
    e_min, e_max = branch2.E_min, branch2.E_max

    if z <= e_min:
        window, fits, energy = "below_branch", branch2.zeros_min, e_min
    elif e_max <= z <= 0.5 * (m + e_max):
        window, fits, energy = "above_branch_top", branch2.zeros_max, e_max
    elif 0.5 * (m + e_max) <= z <= m:
        window, fits, energy = "near_band_bottom", (), 0.5 * (m + e_max)
    else:
        raise NumericDomainError(f"z = {z} is not in any majorant window for this branch")

    rng = np.random.default_rng(seed)
    pts = rng.uniform(-math.pi, math.pi, size=(4, n_samples, 3))
    # bias a third of each slot toward the singular anchors
    third = n_samples // 3
    anchors = [zf.location for zf in fits] or [model.p0]
    for slot in range(4):
        anchor = anchors[slot % len(anchors)]
        radii = rng.uniform(0.02, 0.5, size=(third, 1))
        dirs = rng.normal(size=(third, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        pts[slot, :third] = anchor + radii * dirs

    p, q, s, t = pts
    # exact kernel, all four terms, with the true determinant factors
    d1 = {k: np.sqrt(np.abs(friedrichs.delta_values_batch(1, model, grid, x, z))) for k, x in (("p", p), ("q", q))}
    d2 = {k: np.sqrt(np.abs(friedrichs.delta_values_batch(2, model, grid, x, z))) for k, x in (("p", p), ("q", q), ("s", s))}
    v1p, v1q, v1s = model.v1(p), model.v1(q), model.v1(s)
    v2p, v2q, v2s, v2t = model.v2(p), model.v2(q), model.v2(s), model.v2(t)
    rpq = 1.0 / (model.w2(p, q) - z)
    rps = 1.0 / (model.w2(p, s) - z)
    rqs = 1.0 / (model.w2(q, s) - z)
    kern = (
        np.abs(v2p * v2q * v2s * v2t * rpq * rps / (d2["p"] * d2["s"]))
        + np.abs(v2p * v2q * v2s * v2t * rpq * rqs / (d2["q"] * d2["s"]))
        + np.abs(0.5 * v1p * v2q * v1s * v2t * rpq * rqs / (d1["q"] * d2["s"]))
        + np.abs(0.5 * v1q * v2p * v1s * v2t * rpq * rps / (d1["p"] * d2["s"]))
    )

    # sampled sup norms suffice for a bound evaluated on the same samples
    flat = pts.reshape(-1, 3)
    v1_sup = float(np.max(np.abs(model.v1(flat)))) * (1 + 1e-12)
    v2_sup = float(np.max(np.abs(model.v2(flat)))) * (1 + 1e-12)

    # off-neighbourhood determinant floor at the window's anchor energy
    sweep = sweep_lattice(7)
    dvals = np.abs(friedrichs.delta_values_batch(2, model, grid, sweep, energy))
    if fits:
        dist = np.min(
            np.stack([torus_distance(sweep, zf.location) for zf in fits]), axis=0
        )
        off = dist > branch2.fit_delta
        floor_off = float(np.min(dvals[off])) if np.any(off) else float(np.min(dvals))
    else:
        floor_off = float(np.min(dvals))

    def d2_bound(x):
        out = np.full(x.shape[0], floor_off)
        for zf in fits:
            r = torus_distance(x, zf.location)
            c_low = 0.8 * min(zf.coefficient, max(zf.hessian_min_eig, 1e-12) / 2)
            near = r <= branch2.fit_delta
            out[near] = np.minimum(out[near], c_low * r[near] ** 2)
        return np.sqrt(np.maximum(out, 1e-300))

    def resolvent_bound(x, y):
        gap = m - z
        if window != "near_band_bottom":
            return np.full(x.shape[0], 1.0 / gap)
        dx = torus_distance(x, model.p0)
        dy = torus_distance(y, model.p0)
        lower = np.full(x.shape[0], qb.C3)
        inside = (dx <= qb.delta) & (dy <= qb.delta)
        lower[inside] = qb.C1 * (dx[inside] ** 2 + dy[inside] ** 2)
        lower = np.maximum(lower, gap)
        return 1.0 / np.maximum(lower, 1e-300)

    d1_floor = math.sqrt(delta1_floor)
    b2p, b2q, b2s = d2_bound(p), d2_bound(q), d2_bound(s)
    bpq, bps, bqs = resolvent_bound(p, q), resolvent_bound(p, s), resolvent_bound(q, s)
    maj = (
        v2_sup**4 * bpq * bps / (b2p * b2s)
        + v2_sup**4 * bpq * bqs / (b2q * b2s)
        + 0.5 * v1_sup**2 * v2_sup**2 * bpq * bqs / (d1_floor * b2s)
        + 0.5 * v1_sup**2 * v2_sup**2 * bpq * bps / (d1_floor * b2s)
    )
    ratio = float(np.max(kern / maj))
    return MajorantCheck(window, z, ratio, n_samples)
