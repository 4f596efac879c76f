"""Compiled inner loops. Each kernel returns a status code instead of raising."""

import numba
import numpy as np

OK = 0
ZERO_PIVOT = 1


@numba.njit(cache=True)
def thomas(lower, diag, upper, rhs, out):
    n = diag.shape[0]
    c = np.empty(n)
    d = np.empty(n)
    piv = diag[0]
    if piv == 0.0:
        return ZERO_PIVOT
    c[0] = upper[0] / piv if n > 1 else 0.0
    d[0] = rhs[0] / piv
    for i in range(1, n):
        piv = diag[i] - lower[i - 1] * c[i - 1]
        if piv == 0.0:
            return ZERO_PIVOT
        c[i] = upper[i] / piv if i < n - 1 else 0.0
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / piv
    out[n - 1] = d[n - 1]
    for i in range(n - 2, -1, -1):
        out[i] = d[i] - c[i] * out[i + 1]
    return OK


@numba.njit(cache=True)
def ilu0(indptr, indices, data, diag_ptr, lu):
    """IKJ incomplete LU on the CSR pattern; lu holds the unit-lower L and U in place."""
    n = indptr.shape[0] - 1
    lu[:] = data
    pos = -np.ones(n, dtype=np.int64)
    for i in range(n):
        start, end = indptr[i], indptr[i + 1]
        for jj in range(start, end):
            pos[indices[jj]] = jj
        for kk in range(start, diag_ptr[i]):
            k = indices[kk]
            piv = lu[diag_ptr[k]]
            if piv == 0.0:
                return ZERO_PIVOT
            lu[kk] /= piv
            lik = lu[kk]
            for kj in range(diag_ptr[k] + 1, indptr[k + 1]):
                p = pos[indices[kj]]
                if p >= 0:
                    lu[p] -= lik * lu[kj]
        if lu[diag_ptr[i]] == 0.0:
            return ZERO_PIVOT
        for jj in range(start, end):
            pos[indices[jj]] = -1
    return OK


@numba.njit(cache=True)
def lu_solve(indptr, indices, lu, diag_ptr, rhs, out):
    n = indptr.shape[0] - 1
    for i in range(n):
        acc = rhs[i]
        for jj in range(indptr[i], diag_ptr[i]):
            acc -= lu[jj] * out[indices[jj]]
        out[i] = acc
    for i in range(n - 1, -1, -1):
        acc = out[i]
        for jj in range(diag_ptr[i] + 1, indptr[i + 1]):
            acc -= lu[jj] * out[indices[jj]]
        out[i] = acc / lu[diag_ptr[i]]


@numba.njit(cache=True)
def csr_matvec(indptr, indices, data, x, out):
    n = indptr.shape[0] - 1
    for i in range(n):
        acc = 0.0
        for jj in range(indptr[i], indptr[i + 1]):
            acc += data[jj] * x[indices[jj]]
        out[i] = acc


@numba.njit(cache=True)
def brennan_schwartz(lower, diag, upper, rhs, obstacle, out):
    """Eliminate the superdiagonal bottom-up, then substitute top-down with projection."""
    n = diag.shape[0]
    d = diag.copy()
    b = rhs.copy()
    for i in range(n - 2, -1, -1):
        piv = d[i + 1]
        if piv == 0.0:
            return ZERO_PIVOT
        f = upper[i] / piv
        d[i] -= f * lower[i]
        b[i] -= f * b[i + 1]
    if d[0] == 0.0:
        return ZERO_PIVOT
    out[0] = max(b[0] / d[0], obstacle[0])
    for i in range(1, n):
        out[i] = max((b[i] - lower[i - 1] * out[i - 1]) / d[i], obstacle[i])
    return OK
