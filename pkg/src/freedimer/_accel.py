"""
Hot kernels in two flavours: numba ``@njit`` loops and a fallback.

The fallback is vectorised numpy where the algorithm allows it (Pfaffian
elimination, walk batches) and plain Python otherwise (backtracking
enumeration, Metropolis sweeps).  Set ``FREEDIMER_NO_NUMBA=1`` to force the
fallbacks; :func:`use_numba` is read at call time so tests can toggle it.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    _HAVE_NUMBA = False


def use_numba() -> bool:
    """Whether the numba kernels are selected."""
    flag = os.environ.get("FREEDIMER_NO_NUMBA", "").strip().lower()
    return _HAVE_NUMBA and flag not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit(cache=True)`` when numba is importable, identity otherwise."""
    kwargs.setdefault("cache", True)

    def wrap(func):
        if not _HAVE_NUMBA:
            return func
        return numba.njit(**kwargs)(func)

    if args and callable(args[0]):
        return wrap(args[0])
    return wrap


# --------------------------------------------------------------------------
# Pfaffian: skew-symmetric elimination with partial pivoting (Parlett-Reid)
# --------------------------------------------------------------------------

@njit
def _pfaffian_nb(a):
    n = a.shape[0]
    pf = 1.0 + 0.0j
    tau = np.empty(n, dtype=a.dtype)
    for k in range(0, n - 1, 2):
        kp = k + 1
        best = abs(a[k + 1, k])
        for i in range(k + 2, n):
            if abs(a[i, k]) > best:
                best = abs(a[i, k])
                kp = i
        if kp != k + 1:
            for j in range(n):
                t = a[k + 1, j]
                a[k + 1, j] = a[kp, j]
                a[kp, j] = t
            for i in range(n):
                t = a[i, k + 1]
                a[i, k + 1] = a[i, kp]
                a[i, kp] = t
            pf = -pf
        if a[k + 1, k] == 0:
            return 0.0 + 0.0j
        piv = -a[k + 1, k]
        pf *= piv
        for i in range(k + 2, n):
            tau[i] = a[k, i] / piv
        for i in range(k + 2, n):
            ti = tau[i]
            ci = a[i, k + 1]
            for j in range(k + 2, n):
                a[i, j] += ti * a[j, k + 1] - ci * tau[j]
    return pf


def _pfaffian_np(a):
    n = a.shape[0]
    pf = 1.0 + 0.0j
    for k in range(0, n - 1, 2):
        kp = k + 1 + int(np.argmax(np.abs(a[k + 1:, k])))
        if kp != k + 1:
            a[[k + 1, kp], :] = a[[kp, k + 1], :]
            a[:, [k + 1, kp]] = a[:, [kp, k + 1]]
            pf = -pf
        if a[k + 1, k] == 0:
            return 0.0 + 0.0j
        piv = -a[k + 1, k]
        pf *= piv
        if k + 2 < n:
            tau = a[k, k + 2:] / piv
            col = a[k + 2:, k + 1].copy()
            a[k + 2:, k + 2:] += np.outer(tau, col) - np.outer(col, tau)
    return pf


def pfaffian_kernel(a: np.ndarray) -> complex:
    """Pfaffian of a dense complex skew matrix (the input is not modified).

    The input is projected onto its antisymmetric part first, so inverses
    that are skew only up to roundoff are handled consistently.
    """
    work = np.array(a, dtype=np.complex128, copy=True)
    work = 0.5 * (work - work.T)
    if work.shape[0] == 0:
        return 1.0 + 0.0j
    if use_numba():
        return complex(_pfaffian_nb(work))
    return complex(_pfaffian_np(work))


# --------------------------------------------------------------------------
# Perfect-matching enumeration (lowest unmatched vertex first)
# --------------------------------------------------------------------------

@njit
def _enumerate_nb(indptr, nbr, eid, n, out, fill):
    half = n // 2
    if n == 0:
        return 1
    matched = np.zeros(n, dtype=np.bool_)
    vs = np.empty(half, dtype=np.int64)
    ptr = np.empty(half, dtype=np.int64)
    partner = np.empty(half, dtype=np.int64)
    chosen = np.empty(half, dtype=np.int64)
    count = 0
    depth = 0
    vs[0] = 0
    ptr[0] = indptr[0]
    while depth >= 0:
        v = vs[depth]
        p = ptr[depth]
        found = -1
        while p < indptr[v + 1]:
            if not matched[nbr[p]]:
                found = p
                break
            p += 1
        if found < 0:
            depth -= 1
            if depth >= 0:
                matched[vs[depth]] = False
                matched[partner[depth]] = False
                ptr[depth] += 1
            continue
        ptr[depth] = found
        w = nbr[found]
        matched[v] = True
        matched[w] = True
        partner[depth] = w
        chosen[depth] = eid[found]
        if depth == half - 1:
            if fill:
                for i in range(half):
                    out[count, i] = chosen[i]
            count += 1
            matched[v] = False
            matched[w] = False
            ptr[depth] += 1
            continue
        u = v + 1
        while matched[u]:
            u += 1
        depth += 1
        vs[depth] = u
        ptr[depth] = indptr[u]
    return count


def _enumerate_py(indptr, nbr, eid, n):
    matched = [False] * n
    chosen: list[int] = []
    out: list[list[int]] = []

    def rec(start):
        v = start
        while v < n and matched[v]:
            v += 1
        if v == n:
            out.append(list(chosen))
            return
        matched[v] = True
        for p in range(indptr[v], indptr[v + 1]):
            w = nbr[p]
            if not matched[w]:
                matched[w] = True
                chosen.append(eid[p])
                rec(v + 1)
                chosen.pop()
                matched[w] = False
        matched[v] = False

    rec(0)
    return np.asarray(out, dtype=np.int64).reshape(len(out), n // 2)


def enumerate_matchings_kernel(n: int, edges: np.ndarray) -> np.ndarray:
    """All perfect matchings of a graph as rows of edge ids.

    Parameters
    ----------
    n : int
        Number of vertices.
    edges : ndarray of shape (m, 2)

    Returns
    -------
    ndarray of shape (count, n // 2)
    """
    if n % 2:
        return np.zeros((0, n // 2), dtype=np.int64)
    m = len(edges)
    a = np.concatenate([edges[:, 0], edges[:, 1]]).astype(np.int64)
    b = np.concatenate([edges[:, 1], edges[:, 0]]).astype(np.int64)
    ids = np.concatenate([np.arange(m), np.arange(m)]).astype(np.int64)
    order = np.lexsort((b, a))
    a, b, ids = a[order], b[order], ids[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, a + 1, 1)
    indptr = np.cumsum(indptr)
    if not use_numba():
        return _enumerate_py(indptr, b, ids, n)
    dummy = np.zeros((1, max(n // 2, 1)), dtype=np.int64)
    count = _enumerate_nb(indptr, b, ids, n, dummy, False)
    out = np.zeros((count, n // 2), dtype=np.int64)
    if count and n:
        _enumerate_nb(indptr, b, ids, n, out, True)
    return out


# --------------------------------------------------------------------------
# height moments: signed sum of truncated correlations over edge tuples
# --------------------------------------------------------------------------

@njit
def _moment_nb(m, wv, bv, coef, starts, lens):
    k = len(starts)
    total = 0.0 + 0.0j
    idx = np.zeros(k, dtype=np.int64)
    verts = np.empty(2 * k, dtype=np.int64)
    work = np.empty((2 * k, 2 * k), dtype=np.complex128)
    while True:
        c = 1.0 + 0.0j
        for p in range(k):
            e = starts[p] + idx[p]
            c *= coef[e]
            verts[2 * p] = wv[e]
            verts[2 * p + 1] = bv[e]
        for r in range(2 * k):
            for s in range(2 * k):
                work[r, s] = m[verts[r], verts[s]]
        for p in range(k):
            work[2 * p, 2 * p + 1] = 0.0
            work[2 * p + 1, 2 * p] = 0.0
        total += c * _pfaffian_nb(work)
        p = k - 1
        while p >= 0:
            idx[p] += 1
            if idx[p] < lens[p]:
                break
            idx[p] = 0
            p -= 1
        if p < 0:
            break
    return total


def _moment_np(m, wv, bv, coef, starts, lens):
    k = len(starts)
    paths = [np.arange(s, s + n) for s, n in zip(starts, lens)]
    if k == 2:
        e, f = np.meshgrid(paths[0], paths[1], indexing="ij")
        w1, b1, w2, b2 = wv[e], bv[e], wv[f], bv[f]
        pf = -m[w1, w2] * m[b1, b2] + m[w1, b2] * m[b1, w2]
        return complex(np.sum(coef[e] * coef[f] * pf))
    total = 0.0 + 0.0j
    for tup in np.stack(np.meshgrid(*paths, indexing="ij"), axis=-1).reshape(-1, k):
        verts = np.empty(2 * k, dtype=np.int64)
        verts[0::2], verts[1::2] = wv[tup], bv[tup]
        work = m[np.ix_(verts, verts)].copy()
        for p in range(k):
            work[2 * p, 2 * p + 1] = work[2 * p + 1, 2 * p] = 0.0
        total += np.prod(coef[tup]) * _pfaffian_np(work)
    return total


def moment_kernel(m: np.ndarray, wv, bv, coef, starts, lens) -> complex:
    """``sum over tuples (one edge per path) of prod(coef) * Pf(truncated block)``.

    Parameters
    ----------
    m : ndarray
        Antisymmetric coupling matrix on the path vertices.
    wv, bv : int arrays
        Positions in ``m`` of each edge's two endpoints.
    coef : complex array
        Per-edge factor (sign times ``K(b, w)``).
    starts, lens : int arrays
        Edge ranges of the paths.
    """
    m = np.ascontiguousarray(0.5 * (m - m.T), dtype=np.complex128)
    args = (np.asarray(wv, np.int64), np.asarray(bv, np.int64),
            np.asarray(coef, np.complex128), np.asarray(starts, np.int64),
            np.asarray(lens, np.int64))
    if len(args[3]) == 0 or (args[4] == 0).any():
        return 1.0 + 0.0j if len(args[3]) == 0 else 0.0 + 0.0j
    if use_numba():
        return complex(_moment_nb(m, *args))
    return complex(_moment_np(m, *args))
