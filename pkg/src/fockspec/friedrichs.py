"""Fredholm determinants of the fiber family and the two-particle branch.

For each total quasi-momentum p the fiber Hamiltonian on C + L2(T^3)
decouples (on shift-closed grids) into two scalar conditions

    Delta_1(p; z) = w1(p) - z - 1/2 * int v1(s)^2 / (w2(p,s) - z) ds,
    Delta_2(p; z) = 1 - int v2(s)^2 / (w2(p,s) - z) ds,

whose real zeros outside the fiber band [m(p), M(p)] are exactly the
discrete fiber eigenvalues.  Both determinants are strictly decreasing in
z below the band, which makes bracketed bisection + Newton polish a
complete root finder.  Sweeping p yields the two-particle branch, its
extremal energies and the zero sets that control eigenvalue accumulation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from . import kernels
from .errors import (
    DecouplingViolatedError,
    InconsistentThresholdError,
    InvalidArgumentError,
    InvariantViolationError,
    NotAnEigenvalueError,
    SpectralBandError,
)
from .grid import GridMode, TorusGrid, extrapolate_ladder
from .model import (
    ModelFunctions,
    Regime,
    RegimeClass,
    grid_samples,
    min_max_w2,
    spectral_scale,
    sweep_lattice,
    w2_rows,
)

ROOT_TOL = 1e-11  # |Delta| <= ROOT_TOL * scale at reported roots
ABOVE_WINDOW = 1e3  # scan window above the band, in units of scale


def _coeff(alpha: int) -> tuple[float, float, float]:
    """(affine constant switch, z coefficient, integral coefficient)."""
    if alpha == 1:
        return math.nan, 1.0, 0.5  # affine part is w1(p), filled per call
    if alpha == 2:
        return 1.0, 0.0, 1.0
    raise InvalidArgumentError(f"alpha must be 1 or 2, got {alpha}")


def _fw(model: ModelFunctions, grid: TorusGrid, alpha: int) -> np.ndarray:
    gs = grid_samples(model, grid)
    field = gs.v1 if alpha == 1 else gs.v2
    c = 0.5 if alpha == 1 else 1.0
    return c * grid.weight * field**2


def _affine(model: ModelFunctions, alpha: int, p: np.ndarray) -> np.ndarray:
    if alpha == 1:
        return np.asarray(model.w1(p), dtype=np.float64)
    return np.ones(np.shape(p)[:-1]) if np.ndim(p) > 1 else np.float64(1.0)


@dataclass(frozen=True)
class FiberBand:
    """Continuum fiber band [m(p), M(p)] and the grid-row extremes."""

    m_p: float
    M_p: float
    row_min: float
    row_max: float


def fiber_band(model: ModelFunctions, grid: TorusGrid, p: np.ndarray) -> FiberBand:
    p = np.asarray(p, dtype=np.float64)
    row = w2_rows(model, grid, p)
    i_min, i_max = int(np.argmin(row)), int(np.argmax(row))

    def polish(q0, sign):
        res = minimize(
            lambda q: sign * float(model.w2(p, q)),
            q0,
            method="Nelder-Mead",
            options={"xatol": 1e-11, "fatol": 1e-13, "maxiter": 2000},
        )
        return sign * res.fun

    m_p = min(polish(grid.nodes[i_min], +1.0), float(row[i_min]))
    M_p = max(polish(grid.nodes[i_max], -1.0), float(row[i_max]))
    return FiberBand(m_p, M_p, float(row[i_min]), float(row[i_max]))


def fiber_bottoms_batch(
    model: ModelFunctions,
    grid: TorusGrid,
    sweep: np.ndarray,
    iters: int = 6,
    step: float = 1e-5,
    q_hint: np.ndarray | None = None,
) -> np.ndarray:
    """min_q w2(p, q) for a batch of p's: grid argmin + batched Newton.

    The polish uses central-difference gradients/Hessians evaluated for
    all rows at once, so the cost stays vectorized.  ``q_hint`` (typically
    the global minimizer of w2) seeds rows where it beats the grid argmin;
    coarse grids can start Newton at a point with singular curvature
    otherwise.  The returned value is the achieved minimum (an upper bound
    within solver accuracy of the true fiber bottom).
    """
    sweep = np.atleast_2d(np.asarray(sweep, dtype=np.float64))
    rows = w2_rows(model, grid, sweep)
    q = grid.nodes[np.argmin(rows, axis=1)].copy()
    if q_hint is None:
        _, _, arg = min_max_w2(model, grid)
        q_hint = arg[1]
    hint_vals = np.asarray(model.w2(sweep, np.broadcast_to(q_hint, sweep.shape)), dtype=np.float64)
    use_hint = hint_vals < rows.min(axis=1)
    q[use_hint] = q_hint
    eye = np.eye(3)
    offsets = []
    for i in range(3):
        offsets += [step * eye[i], -step * eye[i]]
    for i in range(3):
        for j in range(i + 1, 3):
            for si in (1, -1):
                for sj in (1, -1):
                    offsets.append(step * (si * eye[i] + sj * eye[j]))
    offsets = np.array([np.zeros(3)] + offsets)  # (S, 3); center first

    def eval_stencil(qc):
        pts = qc[:, None, :] + offsets[None, :, :]
        return np.asarray(model.w2(sweep[:, None, :], pts), dtype=np.float64)

    for _ in range(iters):
        vals = eval_stencil(q)
        f0 = vals[:, 0]
        grad = np.stack(
            [(vals[:, 1 + 2 * i] - vals[:, 2 + 2 * i]) / (2 * step) for i in range(3)],
            axis=1,
        )
        hess = np.empty((sweep.shape[0], 3, 3))
        for i in range(3):
            hess[:, i, i] = (vals[:, 1 + 2 * i] - 2 * f0 + vals[:, 2 + 2 * i]) / step**2
        base = 7
        k = 0
        for i in range(3):
            for j in range(i + 1, 3):
                pp = vals[:, base + 4 * k]
                pm = vals[:, base + 4 * k + 1]
                mp_ = vals[:, base + 4 * k + 2]
                mm = vals[:, base + 4 * k + 3]
                hess[:, i, j] = hess[:, j, i] = (pp - pm - mp_ + mm) / (4 * step**2)
                k += 1
        # Newton step where the Hessian is safely positive definite
        try:
            steps = np.linalg.solve(hess, grad[..., None])[..., 0]
        except np.linalg.LinAlgError:
            break
        good = np.all(np.linalg.eigvalsh(hess) > 1e-10, axis=1)
        q = q - np.where(good[:, None], steps, 0.0)
    final = np.asarray(model.w2(sweep, q), dtype=np.float64)
    return np.minimum(final, rows.min(axis=1))


@dataclass(frozen=True)
class DeltaEvaluation:
    alpha: int
    p: np.ndarray
    z: float
    value: float
    quad_error: float


def _moment_refined(
    model: ModelFunctions,
    grid: TorusGrid,
    alpha: int,
    p: np.ndarray,
    z: float,
    levels: int,
) -> tuple[float, float]:
    """Integral part of Delta with optional Richardson ladder, plus error."""
    vals = []
    g = grid
    for k in range(max(levels, 1)):
        if k:
            g = g.scaled(2)
        row = w2_rows(model, g, p)
        if np.min(row) - z <= 0:
            j = int(np.argmin(row))
            raise InconsistentThresholdError(
                f"w2(p, s) - z = {row[j] - z:.3e} <= 0 at node {j}; "
                "z is not below the sampled band"
            )
        vals.append(float(kernels.moment_sums(row, _fw(model, g, alpha), z, 1)))
    if levels <= 1:
        n = grid.n_per_axis
        if n % 2 == 0:
            # stride-2 sublattice of the same samples gives a free coarse value
            row = w2_rows(model, grid, p).reshape(n, n, n)[::2, ::2, ::2].reshape(-1)
            fw_c = _fw(model, grid, alpha).reshape(n, n, n)[::2, ::2, ::2].reshape(-1)
            coarse = 8.0 * float(kernels.moment_sums(row, fw_c, z, 1))
            return vals[0], abs(vals[0] - coarse)
        return vals[0], math.nan
    return extrapolate_ladder(vals)


def delta_value_fast(
    alpha: int,
    model: ModelFunctions,
    grid: TorusGrid,
    p: np.ndarray,
    z: float,
    levels: int = 1,
) -> float:
    """Delta without the band guard, for callers that guarantee z <= m(p)
    (for example any z at or below the global band bottom)."""
    p = np.asarray(p, dtype=np.float64)
    integral, _ = _moment_refined(model, grid, alpha, p, z, levels)
    b = 1.0 if alpha == 1 else 0.0
    return float(_affine(model, alpha, p)) - b * z - integral


def delta(
    alpha: int,
    model: ModelFunctions,
    grid: TorusGrid,
    p: np.ndarray,
    z: float,
    levels: int = 1,
    band: FiberBand | None = None,
    band_tol: float = 1e-9,
) -> DeltaEvaluation:
    """Evaluate Delta_alpha(p; z) with a quadrature error estimate.

    z must lie outside the open fiber band (m(p), M(p)); evaluation exactly
    at the band bottom is allowed only with the refinement ladder enabled
    (levels >= 2), since the integrand is then singular-integrable and the
    plain rule carries its full first-order error.
    """
    p = np.asarray(p, dtype=np.float64)
    if band is None:
        band = fiber_band(model, grid, p)
    scale = max(1.0, abs(band.M_p))
    tol = band_tol * scale
    if band.m_p + tol < z < band.M_p - tol:
        raise SpectralBandError(
            f"z = {z} lies inside the fiber band [{band.m_p:.6g}, {band.M_p:.6g}]"
        )
    if abs(z - band.m_p) <= 1e-12 * scale and levels < 2:
        raise InvalidArgumentError(
            "evaluation at the band bottom requires the refinement ladder (levels >= 2)"
        )
    if z <= band.m_p + tol:
        integral, err = _moment_refined(model, grid, alpha, p, z, levels)
        a = float(_affine(model, alpha, p))
        b = 1.0 if alpha == 1 else 0.0
        return DeltaEvaluation(alpha, p, z, a - b * z - integral, err)
    # above the band: only the level-1 grid row makes sense (no singularity)
    row = w2_rows(model, grid, p)
    if np.max(row) - z >= 0:
        raise SpectralBandError(
            f"z = {z} is not above the sampled band top {np.max(row):.6g}"
        )
    fw = _fw(model, grid, alpha)
    val = float(kernels.moment_sums(row, fw, z, 1))
    a = float(_affine(model, alpha, p))
    b = 1.0 if alpha == 1 else 0.0
    return DeltaEvaluation(alpha, p, z, a - b * z - val, math.nan)


def delta_values_batch(
    alpha: int, model: ModelFunctions, grid: TorusGrid, pts: np.ndarray, z: float
) -> np.ndarray:
    """Delta_alpha(p; z) for a batch of p's (level-1 quadrature, no guard).

    Caller guarantees z lies at or below every fiber bottom in the batch,
    which holds in particular for any z <= m.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    rows = w2_rows(model, grid, pts)
    fw = _fw(model, grid, alpha)
    b = 1.0 if alpha == 1 else 0.0
    aff = np.asarray(_affine(model, alpha, pts), dtype=np.float64)
    return aff - b * z - kernels.moment_sums(rows, fw, z, 1)


def delta_derivative_z(
    alpha: int, model: ModelFunctions, grid: TorusGrid, p: np.ndarray, z: float
) -> float:
    """Analytic d/dz of Delta_alpha(p; z) (below-band form)."""
    row = w2_rows(model, grid, p)
    fw = _fw(model, grid, alpha)
    b = 1.0 if alpha == 1 else 0.0
    return -b - float(kernels.moment_sums(row, fw, z, 2))


# ---------------------------------------------------------------------------
# root finding


def _batch_roots_below(
    model: ModelFunctions,
    grid: TorusGrid,
    alpha: int,
    sweep: np.ndarray,
    m_p: np.ndarray,
    scale: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Roots below the fiber bottom for a batch of p's; NaN where absent.

    Returns (roots, threshold_values).  A root exists iff Delta at the
    fiber bottom is negative (strict monotonicity plus the limits
    Delta_2 -> 1 and Delta_1 -> +inf as z -> -inf).
    """
    rows = w2_rows(model, grid, sweep)
    fw = _fw(model, grid, alpha)
    a = np.asarray(_affine(model, alpha, sweep), dtype=np.float64)
    b = 1.0 if alpha == 1 else 0.0
    # keep the threshold denominators strictly positive even if the fiber
    # bottom estimate coincides with a sampled row value
    hi = np.minimum(m_p, rows.min(axis=1) - 1e-12 * scale)
    thr = a - b * hi - kernels.moment_sums(rows, fw, hi, 1)
    active = thr < 0.0
    roots = np.full(sweep.shape[0], np.nan)
    if not np.any(active):
        return roots, thr
    idx = np.flatnonzero(active)
    span = np.full(idx.size, max(1.0, 0.1 * scale))
    lo = hi[idx] - span
    for _ in range(64):
        f_lo = a[idx] - b * lo - kernels.moment_sums(rows[idx], fw, lo, 1)
        need = f_lo <= 0.0
        if not np.any(need):
            break
        span = np.where(need, span * 4.0, span)
        lo = np.where(need, hi[idx] - span, lo)
        if np.max(span) > ABOVE_WINDOW * scale * 4:
            break
    ok = (a[idx] - b * lo - kernels.moment_sums(rows[idx], fw, lo, 1)) > 0.0
    sel = idx[ok]
    if sel.size:
        roots[sel] = kernels.roots_in_bracket(
            rows[sel], fw, a[sel], b, lo[ok], hi[sel]
        )
    return roots, thr


def eigenvalue_below(
    alpha: int, model: ModelFunctions, grid: TorusGrid, p: np.ndarray
) -> tuple[float | None, DeltaEvaluation]:
    """Unique root of Delta_alpha(p; .) below the fiber bottom, if any."""
    p = np.asarray(p, dtype=np.float64)
    band = fiber_band(model, grid, p)
    scale = max(1.0, abs(band.M_p))
    roots, thr = _batch_roots_below(
        model, grid, alpha, p[None, :], np.array([band.m_p]), scale
    )
    ev = DeltaEvaluation(alpha, p, band.m_p, float(thr[0]), math.nan)
    return (None, ev) if math.isnan(roots[0]) else (float(roots[0]), ev)


class RootSide(str, Enum):
    BELOW = "below"
    ABOVE = "above"


@dataclass(frozen=True)
class FiberRoot:
    alpha: int
    z: float
    side: RootSide
    residual: float


def _root_above(
    model: ModelFunctions, grid: TorusGrid, alpha: int, p: np.ndarray, scale: float
) -> float | None:
    """Single root above the band (alpha=1 only; Delta_2 > 1 there)."""
    row = w2_rows(model, grid, p)
    fw = _fw(model, grid, alpha)
    a = float(_affine(model, alpha, p))
    b = 1.0 if alpha == 1 else 0.0
    lo = float(np.max(row)) + 1e-9 * scale
    hi = float(np.max(row)) + ABOVE_WINDOW * scale
    f_lo = a - b * lo - float(kernels.moment_sums(row, fw, lo, 1))
    f_hi = a - b * hi - float(kernels.moment_sums(row, fw, hi, 1))
    if not (f_lo > 0.0 >= f_hi):
        return None
    root = kernels.roots_in_bracket(
        row[None, :], fw, np.array([a]), b, np.array([lo]), np.array([hi])
    )
    return float(root[0])


def roots_full_scan(
    model: ModelFunctions, grid: TorusGrid, p: np.ndarray
) -> list[FiberRoot]:
    """All determinant roots outside the fiber band at this p.

    Structure bounds the count by three: each determinant has at most one
    root below the band (monotone), Delta_2 exceeds one above the band, and
    Delta_1 has at most one root there.
    """
    p = np.asarray(p, dtype=np.float64)
    band = fiber_band(model, grid, p)
    scale = max(1.0, abs(band.M_p))
    out: list[FiberRoot] = []
    for alpha in (1, 2):
        root, _ = eigenvalue_below(alpha, model, grid, p)
        if root is not None:
            res = abs(delta(alpha, model, grid, p, root, band=band).value)
            out.append(FiberRoot(alpha, root, RootSide.BELOW, res))
    up = _root_above(model, grid, 1, p, scale)
    if up is not None:
        res = abs(delta(1, model, grid, p, up, band=band).value)
        out.append(FiberRoot(1, up, RootSide.ABOVE, res))
    # Delta_2 = 1 + positive above the band: verified absent, not searched
    out.sort(key=lambda r: r.z)
    if len(out) > 3:
        raise InvariantViolationError(f"{len(out)} fiber roots found at p = {p}")
    return out


def cross_term(
    model: ModelFunctions, grid: TorusGrid, p: np.ndarray, z: float
) -> float:
    """Quadrature of v1 v2 / (w2(p, .) - z); zero on shift-closed grids."""
    gs = grid_samples(model, grid)
    row = w2_rows(model, grid, p)
    return float(grid.weight * np.sum(gs.v1 * gs.v2 / (row - z)))


def h_spectrum_discrete(
    model: ModelFunctions, grid: TorusGrid, p: np.ndarray, cross_tol: float = 1e-12
) -> list[FiberRoot]:
    """Discrete fiber spectrum as the union of the two determinant root sets.

    Valid only when the cross coupling vanishes, i.e. on double-cover
    grids; the cross term is evaluated and asserted at every root, and the
    full 2x2 determinant condition is re-verified there.
    """
    p = np.asarray(p, dtype=np.float64)
    m, M, _ = min_max_w2(model, grid)
    scale = spectral_scale(m, M)
    roots = roots_full_scan(model, grid, p)
    band = fiber_band(model, grid, p)
    for r in roots:
        kappa = cross_term(model, grid, p, r.z)
        if abs(kappa) > cross_tol * scale:
            raise DecouplingViolatedError(
                f"cross term {kappa:.3e} at z = {r.z:.6g} exceeds {cross_tol:.1e} * scale;"
                " half-angle form factors require a double-cover grid"
            )
        d1 = delta(1, model, grid, p, r.z, band=band).value
        d2 = delta(2, model, grid, p, r.z, band=band).value
        full = d1 * d2 - 0.5 * kappa**2
        if abs(full) > 1e-8 * scale * max(abs(d1), abs(d2), 1.0):
            raise InvariantViolationError(
                f"2x2 determinant condition fails at root z = {r.z:.8g}: {full:.3e}"
            )
    return roots


# ---------------------------------------------------------------------------
# branch sweep


@dataclass(frozen=True)
class ZeroFit:
    location: np.ndarray
    exponent: float
    coefficient: float
    hessian_min_eig: float


@dataclass(frozen=True)
class BranchData:
    alpha: int
    sweep: np.ndarray
    roots_below: np.ndarray
    roots_above: np.ndarray
    threshold_values: np.ndarray
    residuals: np.ndarray
    E_min: float
    E_max: float
    e_max_at_band_bottom: bool
    zeros_min: tuple[ZeroFit, ...]
    zeros_max: tuple[ZeroFit, ...]
    fit_delta: float
    empty: bool
    note: str


def _fit_zero(
    alpha: int,
    model: ModelFunctions,
    grid: TorusGrid,
    p_star: np.ndarray,
    energy: float,
    fit_delta: float,
    n_dirs: int = 16,
    n_radii: int = 9,
) -> ZeroFit:
    """Log-log vanishing order of |Delta(., energy)| around a zero."""
    rng = np.random.default_rng(2)
    dirs = rng.normal(size=(n_dirs, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = np.geomspace(fit_delta / 8, fit_delta, n_radii)
    logs_r, logs_d = [], []
    floor = np.inf
    for r in radii:
        for u in dirs:
            val = abs(delta_value_fast(alpha, model, grid, p_star + r * u, energy))
            if val > 0:
                logs_r.append(math.log(r))
                logs_d.append(math.log(val))
                floor = min(floor, val / r**2)
    slope, _ = np.polyfit(logs_r, logs_d, 1)
    h = 1e-4 * math.pi
    eye = np.eye(3)
    hess = np.zeros((3, 3))

    def dval(q):
        return delta_value_fast(alpha, model, grid, q, energy)

    f0 = dval(p_star)
    for i in range(3):
        for j in range(i, 3):
            if i == j:
                hess[i, i] = (dval(p_star + h * eye[i]) - 2 * f0 + dval(p_star - h * eye[i])) / h**2
            else:
                hess[i, j] = hess[j, i] = (
                    dval(p_star + h * (eye[i] + eye[j]))
                    - dval(p_star + h * (eye[i] - eye[j]))
                    - dval(p_star + h * (eye[j] - eye[i]))
                    + dval(p_star - h * (eye[i] + eye[j]))
                ) / (4 * h**2)
    return ZeroFit(
        location=p_star,
        exponent=float(slope),
        coefficient=float(floor),
        hessian_min_eig=float(np.linalg.eigvalsh(hess).min()),
    )


def _locate_zeros(
    alpha: int,
    model: ModelFunctions,
    grid: TorusGrid,
    sweep: np.ndarray,
    energy: float,
    scale: float,
    n_starts: int = 8,
    merge_radius: float = 1e-3,
) -> list[np.ndarray]:
    vals = np.abs(
        np.array([delta_value_fast(alpha, model, grid, p, energy) for p in sweep])
    )
    starts = sweep[np.argsort(vals)[:n_starts]]
    found: list[np.ndarray] = []
    for p0 in starts:
        res = minimize(
            lambda p: abs(delta_value_fast(alpha, model, grid, p, energy)),
            p0,
            method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-16, "maxiter": 2000},
        )
        if abs(res.fun) > 1e-7 * scale:
            continue
        cand = (res.x + math.pi) % (2 * math.pi) - math.pi
        if all(np.linalg.norm(cand - q) > merge_radius for q in found):
            found.append(cand)
    return found


def two_particle_branch(
    alpha: int,
    model: ModelFunctions,
    grid: TorusGrid,
    sweep_n: int = 9,
    fit_delta: float = 0.5,
    regime: RegimeClass | None = None,
) -> BranchData:
    """Sweep the below-band fiber root over p and extract branch data.

    The branch is the set { root of Delta_alpha(p; .) below m(p) } kept
    where it does not exceed the global band bottom m; its extremes are
    polished by local optimization so they do not inherit the sweep
    resolution.  Zero sets of Delta(., E) at the extremes and their
    vanishing orders feed the accumulation analysis and the kernel
    majorants.
    """
    m, M, _ = min_max_w2(model, grid)
    scale = spectral_scale(m, M)
    sweep = sweep_lattice(sweep_n)
    m_p = fiber_bottoms_batch(model, grid, sweep)
    roots, thr = _batch_roots_below(model, grid, alpha, sweep, m_p, scale)
    above = np.array(
        [
            _root_above(model, grid, alpha, p, scale) or math.nan
            for p in sweep
        ]
        if alpha == 1
        else [math.nan] * sweep.shape[0]
    )
    residuals = np.full(sweep.shape[0], math.nan)
    for i, z in enumerate(roots):
        if not math.isnan(z):
            residuals[i] = abs(
                float(_affine(model, alpha, sweep[i]))
                - (1.0 if alpha == 1 else 0.0) * z
                - float(
                    kernels.moment_sums(
                        w2_rows(model, grid, sweep[i]), _fw(model, grid, alpha), z, 1
                    )
                )
            )

    keep = ~np.isnan(roots) & (roots <= m + 1e-9 * scale)
    if not np.any(keep):
        if regime is not None and regime.kind in (Regime.MIXED, Regime.NEG):
            raise InvariantViolationError(
                f"no below-band roots found although the regime is {regime.kind}"
            )
        return BranchData(
            alpha, sweep, roots, above, thr, residuals,
            math.nan, math.nan, False, (), (), fit_delta, True,
            "branch empty: Delta(., band bottom) is nonnegative",
        )

    def root_at(p):
        p = np.asarray(p, dtype=np.float64)
        r, _ = _batch_roots_below(
            model, grid, alpha, p[None, :],
            fiber_bottoms_batch(model, grid, p[None, :]), scale,
        )
        return float(r[0]) if not math.isnan(r[0]) else math.inf

    i_min = int(np.nanargmin(np.where(keep, roots, np.nan)))
    res = minimize(
        lambda p: root_at(p), sweep[i_min], method="Nelder-Mead",
        options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 2000},
    )
    E_min = float(res.fun)
    all_have_roots = not np.any(np.isnan(roots))
    max_kept = float(np.max(roots[keep]))
    neg_branch = all_have_roots and np.all(roots <= m - 1e-6 * scale)
    if neg_branch:
        i_max = int(np.argmax(roots))
        res = minimize(
            lambda p: -root_at(p), sweep[i_max], method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 2000},
        )
        E_max = float(-res.fun)
        e_max_at_bottom = False
    else:
        # the branch reaches the band bottom: its supremum is m itself,
        # attained on the zero level set of Delta(., m)
        E_max = m
        e_max_at_bottom = True

    zeros_min = [
        _fit_zero(alpha, model, grid, p, E_min, fit_delta)
        for p in _locate_zeros(alpha, model, grid, sweep, E_min, scale)
    ]
    zeros_max = []
    if neg_branch:
        zeros_max = [
            _fit_zero(alpha, model, grid, p, E_max, fit_delta)
            for p in _locate_zeros(alpha, model, grid, sweep, E_max, scale)
        ]
    note = "" if not e_max_at_bottom else "E_max equals the band bottom"
    return BranchData(
        alpha, sweep, roots, above, thr, residuals,
        E_min, E_max, e_max_at_bottom,
        tuple(zeros_min), tuple(zeros_max), fit_delta, False, note,
    )


def branch_to_csv(branch: BranchData, path: str) -> None:
    """Write the sweep as CSV: p, below-root, above-roots, residual."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["p1", "p2", "p3", "z_below", "z_above1", "z_above2", "delta_residual"])
        for i, p in enumerate(branch.sweep):
            wr.writerow(
                [
                    f"{p[0]:.12g}", f"{p[1]:.12g}", f"{p[2]:.12g}",
                    _csv_num(branch.roots_below[i]),
                    _csv_num(branch.roots_above[i]),
                    "",  # second above-band root: provably absent
                    _csv_num(branch.residuals[i]),
                ]
            )


def _csv_num(x: float) -> str:
    return "" if (x is None or (isinstance(x, float) and math.isnan(x))) else f"{x:.12g}"


# ---------------------------------------------------------------------------
# fiber eigenvector reconstruction


class RootSource(str, Enum):
    DELTA1 = "delta1_root"
    DELTA2 = "delta2_root"


@dataclass(frozen=True)
class HpEigenpair:
    p: np.ndarray
    z: float
    f0: float
    f1: np.ndarray
    source: RootSource
    residual: float


def fiber_matrix(model: ModelFunctions, grid: TorusGrid, p: np.ndarray) -> np.ndarray:
    """Dense quadrature discretization of the fiber operator at p."""
    gs = grid_samples(model, grid)
    row = w2_rows(model, grid, p)
    sq = math.sqrt(grid.weight)
    a1 = sq * gs.v1
    b2 = sq * gs.v2
    n = grid.node_count
    h = np.zeros((n + 1, n + 1))
    h[0, 0] = float(model.w1(p))
    h[0, 1:] = a1 / math.sqrt(2.0)
    h[1:, 0] = a1 / math.sqrt(2.0)
    h[1:, 1:] = np.diag(row) - np.outer(b2, b2)
    return h


def reconstruct_h_eigenvector(
    model: ModelFunctions, grid: TorusGrid, p: np.ndarray, z: float
) -> HpEigenpair:
    """Rebuild the fiber eigenvector from the reduced 2x2 null space.

    The reduced system couples the vacuum amplitude f0 and the moment
    C = int v2 f1; its null vector determines f1 pointwise through the
    resolvent formula.  The result is validated against the dense fiber
    matrix; a claimed z at which the 2x2 system is regular is rejected.
    """
    p = np.asarray(p, dtype=np.float64)
    band = fiber_band(model, grid, p)
    scale = max(1.0, abs(band.M_p))
    d1 = delta(1, model, grid, p, z, band=band).value
    d2 = delta(2, model, grid, p, z, band=band).value
    kappa = cross_term(model, grid, p, z)
    mat = np.array([[d1, kappa / math.sqrt(2.0)], [kappa / math.sqrt(2.0), d2]])
    u_, s_, vt = np.linalg.svd(mat)
    if s_[1] > 1e-8 * max(s_[0], 1e-30) and s_[0] > 1e-9 * scale:
        raise NotAnEigenvalueError(
            f"reduced 2x2 system is regular at z = {z:.8g} (singular values {s_})"
        )
    f0, c_mom = vt[1]
    gs = grid_samples(model, grid)
    row = w2_rows(model, grid, p)
    f1 = (c_mom * gs.v2 - f0 * gs.v1 / math.sqrt(2.0)) / (row - z)
    sq = math.sqrt(grid.weight)
    vec = np.concatenate([[f0], sq * f1])
    nrm = np.linalg.norm(vec)
    if nrm == 0:
        raise NotAnEigenvalueError("null vector reconstruction degenerated to zero")
    vec /= nrm
    h = fiber_matrix(model, grid, p)
    residual = float(np.linalg.norm(h @ vec - z * vec))
    source = RootSource.DELTA2 if abs(d2) <= abs(d1) else RootSource.DELTA1
    return HpEigenpair(p, z, float(vec[0]), vec[1:] / sq, source, residual)


def sign_constancy(
    alpha: int,
    model: ModelFunctions,
    grid: TorusGrid,
    z: float,
    sweep_n: int = 7,
) -> tuple[int, float]:
    """Common sign of Delta_alpha(., z) over a p-sweep (z at or below the
    band bottom, where no fiber-band guard is needed).

    Returns (sign, min |Delta|).  Mixed signs raise: z then lies inside
    (or too close to) the essential spectrum.
    """
    from .errors import ForbiddenRegionError

    sweep = sweep_lattice(sweep_n)
    vals = delta_values_batch(alpha, model, grid, sweep, z)
    # exact zeros are admissible at branch-edge energies (the closure of
    # the gap region); only a genuine sign change is forbidden
    if np.all(vals >= 0):
        return 1, float(np.min(np.abs(vals)))
    if np.all(vals <= 0):
        return -1, float(np.min(np.abs(vals)))
    raise ForbiddenRegionError(
        f"Delta_{alpha}(., z) changes sign at z = {z:.8g}: "
        f"range [{vals.min():.3e}, {vals.max():.3e}]"
    )
