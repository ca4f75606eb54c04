# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: resolvent moment sums and bracketed root scans.

Mirrors ``_kernels_py`` exactly; both backends are cross-checked by the
test suite.  The loops run without the GIL, avoiding the temporaries the
NumPy fallback allocates per bisection step.
"""

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()


cdef double _moment_row(const double[::1] row, const double[::1] fw,
                        double z, int order) nogil:
    cdef Py_ssize_t j, n = row.shape[0]
    cdef double acc = 0.0, d
    if order == 1:
        for j in range(n):
            acc += fw[j] / (row[j] - z)
    elif order == 2:
        for j in range(n):
            d = row[j] - z
            acc += fw[j] / (d * d)
    else:
        for j in range(n):
            acc += fw[j] / (row[j] - z) ** order
    return acc


def moment_sums(w2_rows, fw, z, int order=1):
    """Row-wise resolvent moments; see the NumPy twin for semantics."""
    rows_arr = np.atleast_2d(np.ascontiguousarray(w2_rows, dtype=np.float64))
    cdef const double[:, ::1] rows = rows_arr
    cdef const double[::1] fwv = np.ascontiguousarray(fw, dtype=np.float64)
    cdef Py_ssize_t r = rows.shape[0]
    z_arr = np.broadcast_to(np.asarray(z, dtype=np.float64), (r,)).copy()
    cdef const double[::1] zv = z_arr
    out = np.empty(r, dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t i
    cdef int o = order
    with nogil:
        for i in range(r):
            ov[i] = _moment_row(rows[i], fwv, zv[i], o)
    if np.ndim(w2_rows) == 1 and np.ndim(z) == 0:
        return float(out[0])
    return out


def roots_in_bracket(w2_rows, fw, a, b, lo, hi, int n_bisect=30, int n_newton=5):
    """Monotone root per row of  a - b*z - sum_j fw[j]/(row[j] - z).

    Same contract as the NumPy twin: f decreasing with f(lo) >= 0 >= f(hi).
    """
    rows_arr = np.atleast_2d(np.ascontiguousarray(w2_rows, dtype=np.float64))
    cdef const double[:, ::1] rows = rows_arr
    cdef const double[::1] fwv = np.ascontiguousarray(fw, dtype=np.float64)
    cdef Py_ssize_t r = rows.shape[0]
    a_arr = np.broadcast_to(np.asarray(a, dtype=np.float64), (r,)).copy()
    lo_arr = np.ascontiguousarray(lo, dtype=np.float64).copy()
    hi_arr = np.ascontiguousarray(hi, dtype=np.float64).copy()
    cdef const double[::1] av = a_arr
    cdef double[::1] lov = lo_arr
    cdef double[::1] hiv = hi_arr
    cdef double bb = float(b)
    out = np.empty(r, dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t i
    cdef int k
    cdef double mid, fm, fp, root, step
    cdef int nb = n_bisect, nn = n_newton
    with nogil:
        for i in range(r):
            for k in range(nb):
                mid = 0.5 * (lov[i] + hiv[i])
                fm = av[i] - bb * mid - _moment_row(rows[i], fwv, mid, 1)
                if fm < 0.0:
                    hiv[i] = mid
                else:
                    lov[i] = mid
            root = 0.5 * (lov[i] + hiv[i])
            for k in range(nn):
                fm = av[i] - bb * root - _moment_row(rows[i], fwv, root, 1)
                fp = -bb - _moment_row(rows[i], fwv, root, 2)
                if fp != 0.0:
                    step = fm / fp
                else:
                    step = 0.0
                root = root - step
                if root < lov[i]:
                    root = lov[i]
                elif root > hiv[i]:
                    root = hiv[i]
            ov[i] = root
    return out
