"""NumPy implementation of the hot kernels.

Semantics must match ``_kernels`` (the Cython extension) to rounding:
the test suite cross-checks both backends on random data.
"""

import numpy as np


def moment_sums(w2_rows, fw, z, order=1):
    """Row-wise resolvent moments  sum_j fw[j] / (w2_rows[r, j] - z[r])**order.

    ``w2_rows`` is (R, N) or (N,); ``z`` is scalar or (R,).  ``fw`` carries
    the quadrature weight and any coupling coefficient, so the caller gets
    the finished integral approximation.
    """
    rows = np.atleast_2d(np.asarray(w2_rows, dtype=np.float64))
    zz = np.asarray(z, dtype=np.float64).reshape(-1, 1)
    denom = rows - zz
    if order == 1:
        vals = (fw / denom).sum(axis=1)
    elif order == 2:
        vals = (fw / (denom * denom)).sum(axis=1)
    else:
        vals = (fw / denom**order).sum(axis=1)
    if np.ndim(w2_rows) == 1 and np.ndim(z) == 0:
        return float(vals[0])
    return vals


def roots_in_bracket(w2_rows, fw, a, b, lo, hi, n_bisect=30, n_newton=5):
    """Roots of  f(z) = a - b*z - sum_j fw[j]/(w2_rows[:, j] - z)  per row.

    Preconditions (caller's responsibility): f is strictly decreasing on
    [lo, hi] with f(lo) >= 0 >= f(hi) in every row.  Bisection narrows the
    bracket, Newton steps (analytic derivative) polish the result.
    """
    rows = np.atleast_2d(np.asarray(w2_rows, dtype=np.float64))
    a = np.broadcast_to(np.asarray(a, dtype=np.float64), (rows.shape[0],)).copy()
    lo = np.asarray(lo, dtype=np.float64).copy()
    hi = np.asarray(hi, dtype=np.float64).copy()

    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        fm = a - b * mid - moment_sums(rows, fw, mid, 1)
        neg = fm < 0.0
        hi = np.where(neg, mid, hi)
        lo = np.where(neg, lo, mid)

    root = 0.5 * (lo + hi)
    for _ in range(n_newton):
        f = a - b * root - moment_sums(rows, fw, root, 1)
        fp = -b - moment_sums(rows, fw, root, 2)
        step = np.where(fp != 0.0, f / fp, 0.0)
        root = np.clip(root - step, lo, hi)
    return root
