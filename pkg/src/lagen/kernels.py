"""In-place block kernels backing the algorithm interpreter.

Each kernel returns the exact number of scalar multiply / add / divide /
sqrt operations it performed; the counts match the closed forms used by
`worksheet.statement_flops`, which is cross-checked in the test suite.
All triangular and symmetric variants only touch the stored regions.
"""

import math

import numpy as np

from .errors import VerificationError


def gemm_update(out, a, b, sign, upper_target=False):
    """out += sign * a @ b; with upper_target only entries i <= j change."""
    m, p = a.shape
    q = b.shape[1]
    if m == 0 or p == 0 or q == 0:
        return 0
    if not upper_target:
        if sign > 0:
            out += a @ b
        else:
            out -= a @ b
        return 2 * m * p * q
    for j in range(q):
        col = a[: j + 1, :] @ b[:, j]
        if sign > 0:
            out[: j + 1, j] += col
        else:
            out[: j + 1, j] -= col
    return q * (q + 1) * p


def addsub_update(out, v, sign):
    if out.size == 0:
        return 0
    if sign > 0:
        out += v
    else:
        out -= v
    return out.shape[0] * out.shape[1]


def trsm_left(t, w, lower):
    """Solve T X = W in place (W becomes X); T is logically triangular."""
    m = t.shape[0]
    q = w.shape[1]
    rows = range(m) if lower else range(m - 1, -1, -1)
    for i in rows:
        if lower:
            if i:
                w[i, :] -= t[i, :i] @ w[:i, :]
        else:
            if i < m - 1:
                w[i, :] -= t[i, i + 1:] @ w[i + 1:, :]
        w[i, :] /= t[i, i]
    return q * m * m


def trsm_right(w, t, upper):
    """Solve X T = W in place; T is logically triangular."""
    m = w.shape[0]
    q = t.shape[0]
    cols = range(q) if upper else range(q - 1, -1, -1)
    for j in cols:
        if upper:
            if j:
                w[:, j] -= w[:, :j] @ t[:j, j]
        else:
            if j < q - 1:
                w[:, j] -= w[:, j + 1:] @ t[j + 1:, j]
        w[:, j] /= t[j, j]
    return m * q * q


def chol_leaf(w):
    """In-place upper Cholesky: scalar sqrt, row scaling, rank-1 update.

    Only the upper triangle of `w` is read or written.
    """
    m = w.shape[0]
    flops = 0
    for i in range(m):
        if w[i, i] <= 0.0:
            raise VerificationError(f"non-positive pivot at index {i}")
        w[i, i] = math.sqrt(w[i, i])
        flops += 1
        if i + 1 < m:
            w[i, i + 1:] /= w[i, i]
            flops += m - 1 - i
        for r in range(i + 1, m):
            w[r, r:] -= w[i, r] * w[i, r:]
            flops += 2 * (m - r)
    return flops


def sylv_solve(l, u, w):
    """Solve L X + X U = W in place; L logically lower, U logically upper."""
    m, q = w.shape
    for j in range(q):
        if j:
            w[:, j] -= w[:, :j] @ u[:j, j]
        for i in range(m):
            if i:
                w[i, j] -= l[i, :i] @ w[:i, j]
            w[i, j] /= l[i, i] + u[j, j]
    return m * q * (m + q)


def lyap_solve(l, w):
    """Solve L X + X L^T = W for symmetric X in place.

    Only the upper triangle of W is consumed; both triangles of the block
    are written so the block stays exactly symmetric.
    """
    m = w.shape[0]
    for j in range(m):
        for i in range(j + 1):
            acc = w[i, j]
            if i:
                acc -= l[i, :i] @ w[:i, j]
            if j:
                acc -= w[i, :j] @ l[j, :j]
            acc /= l[i, i] + l[j, j]
            w[i, j] = acc
            w[j, i] = acc
    return m * m * (m + 1)


def mirror_lower(x):
    """Copy the strict upper triangle onto the strict lower one."""
    m = x.shape[0]
    idx = np.triu_indices(m, 1)
    x[(idx[1], idx[0])] = x[idx]
    return 0


def copy_region(dst, src, region):
    """region: 'full' | 'upper' | 'lower' (triangles include the diagonal)."""
    if region == "full":
        dst[...] = src
    else:
        idx = (np.triu_indices(dst.shape[0]) if region == "upper"
               else np.tril_indices(dst.shape[0]))
        dst[idx] = src[idx]
    return 0
