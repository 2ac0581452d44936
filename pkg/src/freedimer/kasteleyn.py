"""
Kasteleyn orientation, gauged Kasteleyn matrix, Pfaffians and Pfaffian
correlation formulas for augmented domains.

Orientation: vertical edges and triangle legs point down; horizontal edges
point left to right in odd rows (the apex row ``y = -1`` included) and right
to left in even rows.  The gauge multiplies ``K~(x, y)`` by
``i ** ([x in even row] + [y in even row])``, which makes ``D = K* K`` real
and, away from a few boundary defects, block diagonal between odd and
even rows.

Correlations use ``K^{-1}`` with the convention that the single-edge
probability is ``K(w, b) K^{-1}(b, w)``.  For a list of edges
``(w_1, b_1), ..., (w_k, b_k)`` the joint probability is
``a_E * Pf(K^{-1}[S, S])`` with ``S = (w_1, b_1, ..., w_k, b_k)`` and
``a_E = prod K(b_i, w_i)``.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import _accel
from .lattice import AugmentedDomain, LatticePoint

DENSE_LIMIT = 2000
FACE_CHECK_LIMIT = 20000


class KasteleynError(AssertionError):
    """Internal-consistency failure of the Kasteleyn construction."""


class NoDimerCover(ValueError):
    """Raised when the Kasteleyn matrix is singular."""


@dataclass(frozen=True, eq=False)
class SkewMatrix:
    """Complex antisymmetric matrix over a frozen vertex order.

    Attributes
    ----------
    order : ndarray of shape (n, 2)
        Integer vertex labels in matrix order.
    entries : ndarray or scipy.sparse matrix
    """

    order: np.ndarray
    entries: object

    def __post_init__(self):
        a = self.entries
        if sp.issparse(a):
            resid = (a + a.T)
            if resid.count_nonzero() and np.abs(resid.data).max() != 0:
                raise KasteleynError("matrix is not exactly antisymmetric")
        else:
            a = np.asarray(a)
            if a.ndim != 2 or a.shape[0] != a.shape[1]:
                raise ValueError("skew matrix must be square")
            if np.any(a + a.T != 0):
                raise KasteleynError("matrix is not exactly antisymmetric")

    @property
    def shape(self):
        return self.entries.shape

    def dense(self) -> np.ndarray:
        a = self.entries
        return a.toarray() if sp.issparse(a) else np.asarray(a)


@dataclass(frozen=True, eq=False)
class Orientation:
    """Directed edges ``tail -> head`` with their weights."""

    tails: np.ndarray
    heads: np.ndarray
    weights: np.ndarray


def _row_is_even(y: np.ndarray) -> np.ndarray:
    return (y % 2 == 0) & (y >= 0)


def orient(aug: AugmentedDomain, check: bool | None = None) -> Orientation:
    """Kasteleyn orientation of an augmented domain.

    Parameters
    ----------
    aug : AugmentedDomain
    check : bool, optional
        Verify the odd-face condition on every bounded face.  Defaults to
        on for graphs below ``FACE_CHECK_LIMIT`` vertices.

    Returns
    -------
    Orientation
    """
    a, b = aug.edges[:, 0], aug.edges[:, 1]
    pa, pb = aug.positions[a], aug.positions[b]
    dy = pb.imag - pa.imag
    dx = pb.real - pa.real
    y = np.minimum(aug.xy[a, 1], aug.xy[b, 1])
    # b follows a in (y, x) order, so dy >= 0 and dx > 0 when dy == 0
    forward = np.where(dy != 0, False, np.where(_row_is_even(y), dx < 0, dx > 0))
    tails = np.where(forward, a, b)
    heads = np.where(forward, b, a)
    ori = Orientation(tails=tails, heads=heads, weights=aug.weights.copy())
    if check is None:
        check = len(aug) <= FACE_CHECK_LIMIT
    if check:
        bad = kasteleyn_face_violations(aug, ori)
        if bad:
            raise KasteleynError(f"{len(bad)} faces violate the Kasteleyn condition")
    return ori


def bounded_faces(aug: AugmentedDomain) -> list[list[int]]:
    """Bounded faces of the planar embedding as counterclockwise vertex cycles."""
    pos = aug.positions
    nbrs = aug.neighbours
    order = []
    for v, ns in enumerate(nbrs):
        ang = [math.atan2((pos[w] - pos[v]).imag, (pos[w] - pos[v]).real) for w in ns]
        order.append([w for _, w in sorted(zip(ang, ns))])
    where = [{w: i for i, w in enumerate(ns)} for ns in order]
    seen = set()
    faces = []
    for u in range(len(nbrs)):
        for v in order[u]:
            if (u, v) in seen:
                continue
            cyc = []
            a, b = u, v
            while (a, b) not in seen:
                seen.add((a, b))
                cyc.append(a)
                ns = order[b]
                c = ns[(where[b][a] - 1) % len(ns)]
                a, b = b, c
            pts = pos[cyc]
            area = 0.5 * np.sum(pts.real * np.roll(pts.imag, -1) - np.roll(pts.real, -1) * pts.imag)
            if area > 1e-9:
                faces.append(cyc)
    return faces


def kasteleyn_face_violations(aug: AugmentedDomain, ori: Orientation) -> list[list[int]]:
    """Bounded faces with an even number of clockwise-oriented edges."""
    directed = set(zip(ori.tails.tolist(), ori.heads.tolist()))
    bad = []
    for cyc in bounded_faces(aug):
        clockwise = sum((b, a) in directed for a, b in zip(cyc, cyc[1:] + cyc[:1]))
        if clockwise % 2 == 0:
            bad.append(cyc)
    return bad


def kasteleyn_matrix(aug: AugmentedDomain, sparse: bool | None = None,
                     orientation: Orientation | None = None) -> SkewMatrix:
    """Gauged Kasteleyn matrix ``K(x, y) = K~(x, y) i^(1[x even] + 1[y even])``.

    Parameters
    ----------
    aug : AugmentedDomain
    sparse : bool, optional
        Return CSR entries; defaults to sparse above ``DENSE_LIMIT`` vertices.

    Returns
    -------
    SkewMatrix
    """
    ori = orientation if orientation is not None else orient(aug)
    n = len(aug)
    even = _row_is_even(aug.xy[:, 1])
    gauge = (1j) ** (even[ori.tails].astype(int) + even[ori.heads].astype(int))
    vals = ori.weights * gauge
    rows = np.concatenate([ori.tails, ori.heads])
    cols = np.concatenate([ori.heads, ori.tails])
    data = np.concatenate([vals, -vals])
    k = sp.csr_matrix((data, (rows, cols)), shape=(n, n), dtype=np.complex128)
    if sparse is None:
        sparse = n > DENSE_LIMIT
    return SkewMatrix(order=aug.xy, entries=k if sparse else k.toarray())


def pfaffian(m) -> complex:
    """Pfaffian by skew-symmetric elimination with partial pivoting.

    Parameters
    ----------
    m : SkewMatrix or array_like
        Even-dimensional antisymmetric matrix.

    Returns
    -------
    complex
        ``Pf(m)``; exactly 0 when elimination meets a zero pivot column.
    """
    a = m.dense() if isinstance(m, SkewMatrix) else np.asarray(m)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("pfaffian needs a square matrix")
    if a.shape[0] % 2:
        raise ValueError(f"pfaffian of odd dimension {a.shape[0]} is undefined")
    return _accel.pfaffian_kernel(a)


def pfaffian_of_kasteleyn(aug: AugmentedDomain) -> complex:
    """Signed ``Pf(K)`` under the frozen vertex order (phase recorded, not asserted)."""
    return pfaffian(kasteleyn_matrix(aug, sparse=False))


def partition_function(aug: AugmentedDomain) -> float:
    """``|Pf(K)|``, the weighted count of monomer-dimer covers."""
    return abs(pfaffian_of_kasteleyn(aug))


def d_matrix(aug: AugmentedDomain, k: SkewMatrix | None = None) -> sp.csr_matrix:
    """Hermitian ``D = K* K`` as a sparse complex matrix.

    Entries inside the odd-row and even-row blocks are real.  Entries
    coupling the two blocks vanish wherever a diagonal pair of vertices has
    two common neighbours; see :func:`parity_defects` for the exceptions.
    """
    k = k if k is not None else kasteleyn_matrix(aug, sparse=True)
    ks = k.entries if sp.issparse(k.entries) else sp.csr_matrix(k.entries)
    d = (ks.conj().T @ ks).tocsr()
    d.sum_duplicates()
    d.data[np.abs(d.data) < 1e-14] = 0
    d.eliminate_zeros()
    odd = aug.odd_rows
    coo = d.tocoo()
    same = odd[coo.row] == odd[coo.col]
    if same.any() and np.abs(coo.data[same].imag).max() > 1e-12 * max(1.0, np.abs(coo.data).max()):
        raise KasteleynError("K*K has a non-real entry inside a parity block")
    return d


def parity_defects(aug: AugmentedDomain, d: sp.csr_matrix | None = None) -> list[tuple]:
    """Pairs ``(u, v)``, ``u`` in an odd row and ``v`` in an even row, with ``D(u, v) != 0``.

    These occur at concave boundary corners, at the ends of the triangle
    row, and at triangles whose two legs carry different weights.
    """
    d = d if d is not None else d_matrix(aug)
    odd = aug.odd_rows
    coo = d.tocoo()
    sel = odd[coo.row] & ~odd[coo.col] & (np.abs(coo.data) > 1e-12)
    verts = aug.vertices
    return sorted((verts[i], verts[j]) for i, j in zip(coo.row[sel], coo.col[sel]))


def parity_block(d: sp.csr_matrix, aug: AugmentedDomain, odd: bool) -> tuple[np.ndarray, sp.csr_matrix]:
    """Indices and real sub-matrix of ``D`` on the odd-row or even-row vertices."""
    idx = np.flatnonzero(aug.odd_rows == odd)
    sub = d[idx][:, idx]
    return idx, sp.csr_matrix((sub.data.real, sub.indices, sub.indptr), shape=sub.shape)


class KasteleynSystem:
    """Kasteleyn matrix of an augmented domain with cached inverse data.

    Small graphs use a dense inverse.  Large graphs factor ``K`` once
    (sparse LU) and produce rows of ``K^{-1}`` on demand; since ``K^{-1}`` is
    antisymmetric, row ``u`` is minus the solution of ``K x = e_u``.
    """

    def __init__(self, aug: AugmentedDomain, dense: bool | None = None):
        self.aug = aug
        n = len(aug)
        self.dense = n <= DENSE_LIMIT if dense is None else dense
        self.K = kasteleyn_matrix(aug, sparse=True)
        self.Ks = self.K.entries
        self._rows: dict[int, np.ndarray] = {}

    def index(self, v) -> int:
        return int(v) if isinstance(v, (int, np.integer)) else self.aug.index(v)

    @cached_property
    def D(self) -> sp.csr_matrix:
        return d_matrix(self.aug, self.K)

    @cached_property
    def _lu(self):
        return splu(self.Ks.tocsc())

    @cached_property
    def kinv(self) -> np.ndarray:
        """Dense ``K^{-1}`` (small graphs only)."""
        if not self.dense:
            raise ValueError("dense inverse disabled for this graph size")
        kd = self.Ks.toarray()
        try:
            inv = np.linalg.inv(kd)
        except np.linalg.LinAlgError as exc:
            raise NoDimerCover("Kasteleyn matrix is singular") from exc
        resid = np.abs(kd @ inv - np.eye(len(kd))).max()
        if not np.isfinite(resid) or resid > 1e-8:
            raise NoDimerCover(f"Kasteleyn matrix is numerically singular (residual {resid:.2e})")
        return inv

    def d_inverse(self) -> np.ndarray:
        """Dense ``D^{-1}`` of the full Hermitian ``D`` (small graphs)."""
        return np.linalg.inv(self.D.toarray())

    def kinv_row(self, u) -> np.ndarray:
        """Row ``K^{-1}(u, .)``."""
        u = self.index(u)
        if self.dense:
            return self.kinv[u]
        row = self._rows.get(u)
        if row is None:
            rhs = np.zeros(len(self.aug), dtype=complex)
            rhs[u] = 1.0
            row = -self._lu.solve(rhs)
            self._rows[u] = row
        return row

    def kinv_rows(self, rows: Sequence) -> np.ndarray:
        """Rows of ``K^{-1}`` stacked, solved in one batch when sparse."""
        idx = [self.index(u) for u in rows]
        if self.dense:
            return self.kinv[idx]
        todo = [u for u in dict.fromkeys(idx) if u not in self._rows]
        if todo:
            rhs = np.zeros((len(self.aug), len(todo)), dtype=complex)
            rhs[todo, np.arange(len(todo))] = 1.0
            sol = -self._lu.solve(rhs)
            for j, u in enumerate(todo):
                self._rows[u] = sol[:, j]
        return np.array([self._rows[u] for u in idx])

    def kinv_entry(self, u, v) -> complex:
        return complex(self.kinv_row(u)[self.index(v)])

    def kinv_block(self, vertices: Sequence) -> np.ndarray:
        """``K^{-1}[S, S]`` for an ordered vertex list ``S``."""
        idx = [self.index(v) for v in vertices]
        if self.dense:
            return self.kinv[np.ix_(idx, idx)]
        return self.kinv_rows(idx)[:, idx]

    def k_entry(self, u, v) -> complex:
        return complex(self.Ks[self.index(u), self.index(v)])

    def cross_check(self) -> float:
        """Max deviation between ``K^{-1}`` and ``D^{-1} K*`` (dense graphs)."""
        alt = self.d_inverse() @ self.Ks.conj().T.toarray()
        return float(np.abs(alt - self.kinv).max())


def _system(obj) -> KasteleynSystem:
    return obj if isinstance(obj, KasteleynSystem) else KasteleynSystem(obj)


def inverse_kasteleyn(aug: AugmentedDomain) -> np.ndarray:
    """Dense ``K^{-1}``, computed directly and checked against ``D^{-1} K*``.

    Raises
    ------
    NoDimerCover
        If ``K`` is singular.
    """
    sys = KasteleynSystem(aug, dense=True)
    inv = sys.kinv
    kd = sys.Ks.toarray()
    if np.abs(kd @ inv - np.eye(len(kd))).max() > 1e-10 * max(1.0, np.abs(inv).max()):
        raise KasteleynError("K K^{-1} deviates from the identity")
    diff = sys.cross_check()
    if diff > 1e-10 * max(1.0, np.abs(inv).max()):
        raise KasteleynError(f"K^{{-1}} and D^{{-1}} K* disagree by {diff:.2e}")
    return inv


def edge_probabilities(obj) -> np.ndarray:
    """Probability of every edge of the augmented graph (edge order of ``aug``)."""
    sys = _system(obj)
    a, b = sys.aug.edges[:, 0], sys.aug.edges[:, 1]
    kab = np.asarray(sys.Ks[a, b]).ravel()
    if sys.dense:
        kinv_ba = sys.kinv[b, a]
    else:
        rows = sys.kinv_rows(b)
        kinv_ba = rows[np.arange(len(a)), a]
    p = kab * kinv_ba
    if np.abs(p.imag).max(initial=0) > 1e-9:
        raise KasteleynError("edge probability with non-negligible imaginary part")
    return p.real


def edge_probability(obj, u, v) -> float:
    """``P(uv in M) = K(u, v) K^{-1}(v, u)``."""
    sys = _system(obj)
    p = sys.k_entry(u, v) * sys.kinv_entry(v, u)
    if abs(p.imag) > 1e-9:
        raise KasteleynError("edge probability with non-negligible imaginary part")
    return p.real


def _edge_setup(sys: KasteleynSystem, edges):
    order = []
    for e in edges:
        if len(e) != 2:
            raise ValueError("each edge is a (w, b) pair")
        order.extend(sys.index(v) for v in e)
    if len(set(order)) != len(order):
        raise ValueError("edges must be vertex-disjoint")
    a_e = 1.0 + 0.0j
    for w, b in zip(order[0::2], order[1::2]):
        kbw = sys.k_entry(b, w)
        if kbw == 0:
            v1, v2 = sys.aug.vertices[w], sys.aug.vertices[b]
            raise ValueError(f"{v1} and {v2} are not adjacent")
        a_e *= kbw
    return order, a_e


def joint_dimer_probability(obj, edges) -> float:
    """Probability that all listed edges belong to the random matching.

    Parameters
    ----------
    obj : AugmentedDomain or KasteleynSystem
    edges : sequence of (w, b)
        Vertex-disjoint edges given as LatticePoint pairs or indices.

    Returns
    -------
    float
    """
    sys = _system(obj)
    order, a_e = _edge_setup(sys, edges)
    if not order:
        return 1.0
    val = a_e * pfaffian(sys.kinv_block(order))
    if abs(val.imag) > 1e-9:
        raise KasteleynError(f"joint probability has imaginary part {val.imag:.2e}")
    return val.real


def truncated_correlation(obj, edges) -> float:
    """``E[prod (1_{e_i} - P(e_i))]`` as a sum over restricted matchings.

    The restricted matchings avoid every pair ``(w_i, b_i)``; their signed sum
    is the Pfaffian of the coupling block with those entries zeroed.
    """
    sys = _system(obj)
    order, a_e = _edge_setup(sys, edges)
    if not order:
        return 1.0
    block = np.array(sys.kinv_block(order), dtype=complex)
    for i in range(0, len(order), 2):
        block[i, i + 1] = 0.0
        block[i + 1, i] = 0.0
    val = a_e * pfaffian(block)
    if abs(val.imag) > 1e-9:
        raise KasteleynError(f"truncated correlation has imaginary part {val.imag:.2e}")
    return val.real


def cyclic_cancellation(points: Sequence[complex]) -> complex:
    """Sum over cyclic permutations of ``prod 1 / (x_i - x_sigma(i))``.

    Vanishes for every even ``k > 2``; for ``k = 2`` it equals
    ``-1 / (x_1 - x_2)**2``.
    """
    xs = [complex(p) for p in points]
    k = len(xs)
    if k < 2:
        raise ValueError("need at least two points")
    if len(set(xs)) != k:
        raise ValueError("points must be pairwise distinct")
    total = 0j
    for perm in itertools.permutations(range(1, k)):
        cycle = (0,) + perm
        term = 1 + 0j
        for i in range(k):
            a, b = cycle[i], cycle[(i + 1) % k]
            term /= xs[a] - xs[b]
        total += term
    return total


def dump_matrix_csv(path, aug: AugmentedDomain, matrix, tol: float = 0.0) -> int:
    """Write a matrix as ``row_x,row_y,col_x,col_y,re,im`` rows; returns the row count.

    Apex abscissae are written at their half-integer positions.
    """
    pos = aug.positions
    if sp.issparse(matrix):
        coo = matrix.tocoo()
        rows, cols, vals = coo.row, coo.col, coo.data
    else:
        m = np.asarray(matrix)
        rows, cols = np.nonzero(np.abs(m) > tol)
        vals = m[rows, cols]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row_x", "row_y", "col_x", "col_y", "re", "im"])
        for r, c, v in zip(rows, cols, vals):
            v = complex(v)
            w.writerow([f"{pos[r].real:g}", f"{pos[r].imag:g}", f"{pos[c].real:g}",
                        f"{pos[c].imag:g}", repr(v.real), repr(v.imag)])
    return len(rows)
