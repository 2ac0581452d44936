"""
Effective random walks behind ``D = K* K``.

The auxiliary walk on the apex row jumps by one with probability
``1/2 - p`` and by two with probability ``p`` on each side, where
``p = 1 / (2 + 2 z**2)``.  Its potential kernel has the closed form

    alpha_k = |k| / (1 + 6p) - B + B gamma**|k|,

and second differences of ``alpha`` give the infinite-volume jump law
``q_k`` of the effective odd walk along the first row.  On a finite graph
the same jumps come from the Schur complement of the apex block of the
odd part of ``D``; the even part of ``D`` is the Laplacian of a reflected
walk after a sign flip ``(-1)**Re(x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order
from scipy.sparse.linalg import splu

from .kasteleyn import KasteleynSystem, d_matrix, kasteleyn_matrix
from .lattice import FINITE, AugmentedDomain, Domain, LatticePoint, augment

N_CAP = 2 ** 14
ROW_TOL = 1e-13


class NeedLargerN(ValueError):
    """The finite-N odd walk has a negative transition weight or row sum >= 1.

    Attributes
    ----------
    n_side : int
    entry : tuple
        ``(u, v, value)`` of the offending weight, or ``(u, None, sum)`` for
        a row-sum violation.
    """

    def __init__(self, message: str, n_side: int, entry: tuple):
        super().__init__(message)
        self.n_side = n_side
        self.entry = entry


class DivergentGreen(ValueError):
    """No absorption is reachable, so the Green's function is infinite."""


# --------------------------------------------------------------------------
# auxiliary walk on Z
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AuxWalkParams:
    """Parameters of the auxiliary walk with jumps ``+-1`` and ``+-2``.

    Attributes
    ----------
    z : float
    p : float
        Probability of each ``+-2`` jump.
    gamma : float
        The root of the characteristic equation in ``(-1, 0)``.
    B : float
        Coefficient of ``gamma**|k|`` in the potential kernel (non-positive).
    sigma2 : float
        Jump variance ``1 + 6p``.
    """

    z: float
    p: float
    gamma: float
    B: float
    sigma2: float

    def characteristic_residual(self, g: float | None = None) -> float:
        """``(1/2 - p)(g + 1/g) + p(g**2 + g**-2) - 1`` at ``g`` (default ``gamma``)."""
        g = self.gamma if g is None else g
        p = self.p
        return (0.5 - p) * (g + 1 / g) + p * (g * g + 1 / (g * g)) - 1.0

    def first_passage_q(self) -> float:
        """Probability that the first strictly positive position is 1.

        Root in ``(0, 1)`` of ``p q**2 + (1/2 - p)(q - 1) = 0``, solved
        independently of ``gamma``.
        """
        p = self.p
        a, b, c = p, 0.5 - p, -(0.5 - p)
        return (-b + math.sqrt(b * b - 4 * a * c)) / (2 * a)

    def alpha1_recursion(self) -> float:
        """``alpha_1`` from the first-step recursion, ``1 / ((1 + 2p(q - 1))(2 - q))``."""
        q = self.first_passage_q()
        return 1.0 / ((1 + 2 * self.p * (q - 1)) * (2 - q))


def aux_params(z: float) -> AuxWalkParams:
    """Closed-form parameters of the auxiliary walk at leg weight ``z``.

    Examples
    --------
    >>> pr = aux_params(1.0)
    >>> round(pr.p, 12), round(pr.gamma, 7), round(pr.B, 7)
    (0.25, -0.381966, -0.3577709)
    """
    z = float(z)
    if not (z > 0 and math.isfinite(z)):
        raise ValueError(f"z must be positive and finite, got {z!r}")
    p = 1.0 / (2.0 + 2.0 * z * z)
    c = 0.5 + 1.0 / (4.0 * p)
    gamma = -1.0 / (c + math.sqrt(c * c - 1.0))  # sqrt(c**2 - 1) - c without cancellation
    B = 4 * p / ((gamma - 1) * (6 * p + 1) * (2 * p * gamma + 1))
    return AuxWalkParams(z=z, p=p, gamma=gamma, B=B, sigma2=1 + 6 * p)


def potential_kernel_1d(k, params: AuxWalkParams):
    """Potential kernel ``alpha_k`` of the auxiliary walk (vectorised in ``k``)."""
    k = np.abs(np.asarray(k))
    out = k / params.sigma2 - params.B + params.B * params.gamma ** k
    out = np.where(k == 0, 0.0, out)
    return float(out) if out.ndim == 0 else out


def kmax_for(params: AuxWalkParams, tol: float = 1e-14) -> int:
    """One past the smallest ``k`` with ``|gamma|**k < tol`` (a guard term)."""
    return int(math.ceil(math.log(tol) / math.log(abs(params.gamma)))) + 1


def effective_jump_weights(z: float, k_max: int | None = None) -> np.ndarray:
    """Infinite-volume jump law ``q_0, ..., q_kmax`` along the first row.

    ``q_k = (-1)**(k+1) (1/2 - p)(2 alpha_k - alpha_{k+1} - alpha_{k-1})``;
    by default ``k_max`` is the first index with ``|gamma|**k < 1e-14``.
    """
    pr = aux_params(z)
    if k_max is None:
        k_max = kmax_for(pr)
    k = np.arange(k_max + 1)
    # The linear part of alpha drops out of the second difference, leaving
    # a pure geometric law; evaluating it directly avoids the cancellation.
    g = pr.gamma
    q = -(0.5 - pr.p) * pr.B * (2 - g - 1 / g) * np.abs(g) ** k
    q[0] = (1 - 2 * pr.p) * potential_kernel_1d(1, pr)
    return q


def jump_weights_from_kernel(z: float, k_max: int) -> np.ndarray:
    """``q_k`` evaluated literally as a second difference of ``alpha``.

    Loses relative accuracy in the tail at large ``z``; kept as an
    independent route for :func:`effective_jump_weights`.
    """
    pr = aux_params(z)
    k = np.arange(k_max + 1)
    lap = 2 * potential_kernel_1d(k, pr) - potential_kernel_1d(k + 1, pr) - potential_kernel_1d(k - 1, pr)
    return (-1.0) ** (k + 1) * (0.5 - pr.p) * lap


def total_jump_mass(q: np.ndarray) -> float:
    """``q_0 + 2 sum_{k >= 1} q_k``."""
    return float(q[0] + 2 * q[1:].sum())


def reflected_row_green(n: int, z: float) -> np.ndarray:
    """Green's function of the auxiliary walk on ``-n..n``.

    The walk is reflected at ``+-n`` (jumps towards the centre with doubled
    weights) and killed on reaching ``+-(n + 1)``.  Entry ``[u + n, v + n]``
    is the expected number of visits to ``v`` from ``u``, the starting time
    included.
    """
    pr = aux_params(z)
    m = 2 * n + 1
    rows, cols, vals = [], [], []
    for i in range(m):
        u = i - n
        if abs(u) == n and n > 0:
            s = -1 if u > 0 else 1
            moves = {s: 2 * (0.5 - pr.p), 2 * s: 2 * pr.p}
        else:
            moves = {1: 0.5 - pr.p, -1: 0.5 - pr.p, 2: pr.p, -2: pr.p}
        for d, w in moves.items():
            if abs(u + d) <= n:
                rows.append(i)
                cols.append(u + d + n)
                vals.append(w)
    P = sp.csc_matrix((vals, (rows, cols)), shape=(m, m))
    return splu((sp.identity(m, format="csc") - P).tocsc()).solve(np.eye(m))


def row_green_pk_error(n: int, z: float, radius: int = 5) -> float:
    """``max |g(u, v) - g(u', v) + alpha(u - v) - alpha(u' - v)|`` over ``|u|, |u'|, |v| <= radius``."""
    g = reflected_row_green(n, z)
    pr = aux_params(z)
    r = np.arange(-radius, radius + 1)
    sub = g[np.ix_(r + n, r + n)]
    al = potential_kernel_1d(r[:, None] - r[None, :], pr)
    h = sub + al
    return float(np.abs(h[:, None, :] - h[None, :, :]).max())


# --------------------------------------------------------------------------
# walk kernels
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class WalkKernel:
    """Substochastic transition matrix on a vertex set plus a cemetery.

    Attributes
    ----------
    states : tuple of LatticePoint
    matrix : scipy.sparse.csr_matrix
        ``R(u, v)`` for ``u, v`` in ``states``; the row deficit goes to the
        cemetery.
    normalizer : ndarray
        ``D(v, v)`` for each state.
    """

    states: tuple
    matrix: sp.csr_matrix
    normalizer: np.ndarray
    index: dict = field(repr=False)

    @staticmethod
    def build(states: Sequence[LatticePoint], matrix, normalizer) -> "WalkKernel":
        states = tuple(states)
        m = sp.csr_matrix(matrix)
        m.eliminate_zeros()
        if m.nnz and m.data.min() < -ROW_TOL:
            raise ValueError("walk kernel has a negative transition weight")
        deficit = 1.0 - np.asarray(m.sum(axis=1)).ravel()
        if deficit.min(initial=0) < -1e-12:
            raise ValueError("walk kernel has a row sum above 1")
        return WalkKernel(states=states, matrix=m, normalizer=np.asarray(normalizer, float),
                          index={s: i for i, s in enumerate(states)})

    def __len__(self) -> int:
        return len(self.states)

    @cached_property
    def cemetery(self) -> np.ndarray:
        """Absorption probability from each state in one step."""
        return np.clip(1.0 - np.asarray(self.matrix.sum(axis=1)).ravel(), 0.0, None)

    @property
    def transition(self) -> dict:
        """``state -> [(state, probability), ...]`` with the cemetery as ``None``."""
        out = {}
        m = self.matrix
        for i, s in enumerate(self.states):
            lo, hi = m.indptr[i], m.indptr[i + 1]
            row = [(self.states[j], float(w)) for j, w in zip(m.indices[lo:hi], m.data[lo:hi])]
            if self.cemetery[i] > ROW_TOL:
                row.append((None, float(self.cemetery[i])))
            out[s] = row
        return out

    def locate(self, v) -> int:
        if isinstance(v, (int, np.integer)):
            return int(v)
        v = v if isinstance(v, LatticePoint) else LatticePoint(*v)
        try:
            return self.index[v]
        except KeyError:
            raise KeyError(f"{v} is not a state of this walk") from None

    def absorbing_reach(self) -> np.ndarray:
        """Mask of states from which the cemetery is reachable."""
        killing = self.cemetery > ROW_TOL
        rev = self.matrix.T.tocsr()
        reach = killing.copy()
        for s in np.flatnonzero(killing):
            if reach.all():
                break
            order = breadth_first_order(rev, s, directed=True, return_predecessors=False)
            reach[order] = True
        return reach

    @cached_property
    def _lu(self):
        n = len(self.states)
        if not self.absorbing_reach().all():
            raise DivergentGreen("some states cannot reach the cemetery")
        return splu((sp.identity(n, format="csc") - self.matrix).tocsc())


def green(kernel: WalkKernel, u, v) -> float:
    """Normalised Green's function ``E_u[visits to v] / D(v, v)``.

    Visits are counted from time 0, so ``green(k, v, v) * D(v, v) >= 1``.
    """
    j = kernel.locate(v)
    return float(green_columns(kernel, [j])[kernel.locate(u), 0])


def green_columns(kernel: WalkKernel, targets: Sequence) -> np.ndarray:
    """Columns ``G(., v)`` for the listed targets, stacked as an array."""
    idx = [kernel.locate(v) for v in targets]
    rhs = np.zeros((len(kernel), len(idx)))
    rhs[idx, np.arange(len(idx))] = 1.0
    return kernel._lu.solve(rhs) / kernel.normalizer[idx][None, :]


def green_matrix(kernel: WalkKernel, states: Sequence | None = None) -> np.ndarray:
    """``G(u, v)`` for ``u, v`` in ``states`` (default all states)."""
    idx = list(range(len(kernel))) if states is None else [kernel.locate(s) for s in states]
    return green_columns(kernel, idx)[idx]


# --------------------------------------------------------------------------
# pieces of D on an augmented domain
# --------------------------------------------------------------------------

def _d(aug: AugmentedDomain) -> np.ndarray:
    return d_matrix(aug, kasteleyn_matrix(aug, sparse=True))


def _odd_states(aug: AugmentedDomain) -> np.ndarray:
    return np.flatnonzero(aug.in_base & aug.odd_rows)


def _even_states(aug: AugmentedDomain) -> np.ndarray:
    return np.flatnonzero(~aug.odd_rows)


def first_row(aug: AugmentedDomain) -> np.ndarray:
    """Indices of the ``y = 1`` vertices of the base domain, left to right."""
    return np.flatnonzero(aug.in_base & (aug.xy[:, 1] == 1))


@dataclass(frozen=True, eq=False)
class BoundaryRowGreen:
    """Green's function ``g^N`` of the walk on the apex row.

    Transition weights are ``|D(x, y)| / D(x, x)`` between apexes; mass
    that ``D`` sends to the first row is lost, which kills the walk at the
    row ends.

    Attributes
    ----------
    labels : ndarray
        Integer apex labels, left to right.
    matrix : ndarray
        ``g[i, j]`` = expected visits to apex ``j`` from apex ``i``.
    diag : ndarray
        ``A(v, v)``.
    """

    labels: np.ndarray
    matrix: np.ndarray
    diag: np.ndarray
    position: dict

    def __call__(self, u, v) -> float:
        return float(self.matrix[self._pos(u), self._pos(v)])

    def _pos(self, v) -> int:
        lab = v.x if isinstance(v, LatticePoint) else int(v)
        try:
            return self.position[lab]
        except KeyError:
            raise KeyError(f"apex label {lab} is not on the row") from None

    def get(self, u_label: int, v_label: int) -> float:
        """``g`` with 0 for labels outside the row."""
        i, j = self.position.get(u_label), self.position.get(v_label)
        return 0.0 if i is None or j is None else float(self.matrix[i, j])


def boundary_row_green(aug: AugmentedDomain, d=None) -> BoundaryRowGreen:
    """Green's function of the apex-row walk of an augmented domain."""
    d = d if d is not None else _d(aug)
    ap = aug.apexes
    A = d[ap][:, ap].toarray().real
    diag = np.diag(A).copy()
    P = np.abs(A) / diag[:, None]
    np.fill_diagonal(P, 0.0)
    if (P.sum(axis=1) > 1 + 1e-12).any():
        raise AssertionError("apex-row walk has a row sum above 1")
    g = np.linalg.solve(np.eye(len(ap)) - P, np.eye(len(ap)))
    labels = aug.xy[ap, 0].copy()
    return BoundaryRowGreen(labels=labels, matrix=g, diag=diag,
                            position={int(l): i for i, l in enumerate(labels)})


def schur_complement(m: np.ndarray, block: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """``C - B^T A^{-1} B`` after eliminating the index set ``block``.

    Returns
    -------
    schur : ndarray
    rest : ndarray
        Indices of ``m`` that index ``schur``.
    """
    m = np.asarray(m)
    block = np.asarray(block, dtype=int)
    rest = np.setdiff1d(np.arange(m.shape[0]), block)
    A = m[np.ix_(block, block)]
    Bm = m[np.ix_(block, rest)]
    Bt = m[np.ix_(rest, block)]
    C = m[np.ix_(rest, rest)]
    if len(block) == 0:
        return C.copy(), rest
    try:
        lu = np.linalg.solve(A, Bm)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("eliminated block is singular") from exc
    return C - Bt @ lu, rest


def odd_block(aug: AugmentedDomain, d=None) -> tuple[np.ndarray, np.ndarray, int]:
    """Dense real ``D`` on the apex row and the odd rows of the base domain.

    Returns ``(matrix, vertex_indices, n_apex)`` with the apexes first.
    """
    d = d if d is not None else _d(aug)
    idx = np.concatenate([aug.apexes, _odd_states(aug)])
    return d[idx][:, idx].toarray().real, idx, len(aug.apexes)


def schur_identity_residual(aug: AugmentedDomain, d=None) -> float:
    """``max |(D_odd / A)^{-1} - D_odd^{-1} restricted to the non-apex rows|``."""
    m, _, na = odd_block(aug, d)
    s, rest = schur_complement(m, np.arange(na))
    direct = np.linalg.inv(m)[np.ix_(rest, rest)]
    return float(np.abs(np.linalg.inv(s) - direct).max())


def finite_jump_matrix(aug: AugmentedDomain, d=None) -> tuple[np.ndarray, np.ndarray]:
    """``q^N = B^T A^{-1} B`` on the first row, computed by elimination.

    Returns ``(q, first_row_indices)``.
    """
    d = d if d is not None else _d(aug)
    ap, v1 = aug.apexes, first_row(aug)
    A = d[ap][:, ap].toarray().real
    B = d[ap][:, v1].toarray().real
    return B.T @ np.linalg.solve(A, B), v1


def finite_jump_weights(aug: AugmentedDomain, u, v, g: BoundaryRowGreen | None = None) -> float:
    """``q^N_{u,v}`` from second differences of the apex-row Green's function.

    ``z**2 / (2 + 2 z**2) (-1)**Re(v-u) (g(u+, v+) - g(u+, v-) - g(u-, v+) + g(u-, v-))``
    with ``x-``, ``x+`` the apexes left and right below ``x``.
    """
    for w in (u, v):
        w = w if isinstance(w, LatticePoint) else LatticePoint(*w)
        if w.y != 1 or w not in aug.base:
            raise ValueError(f"{w} is not on the first row of the base domain")
    u = u if isinstance(u, LatticePoint) else LatticePoint(*u)
    v = v if isinstance(v, LatticePoint) else LatticePoint(*v)
    g = g if g is not None else boundary_row_green(aug)
    z = aug.z
    val = (g.get(u.x + 1, v.x + 1) - g.get(u.x + 1, v.x)
           - g.get(u.x, v.x + 1) + g.get(u.x, v.x))
    return z * z / (2 + 2 * z * z) * (-1) ** ((v.x - u.x) % 2) * val


def _kernel_from_operator(states, op: np.ndarray) -> WalkKernel:
    """Walk with ``op = diag(d) (I - R)``: ``R = I - op / d``."""
    dg = np.diag(op).copy()
    R = -op / dg[:, None]
    np.fill_diagonal(R, 0.0)
    R[np.abs(R) < 1e-15] = 0.0
    return WalkKernel.build(states, R, dg)


def odd_jumps(aug: AugmentedDomain, d=None) -> np.ndarray:
    """Jump weights on the first row used by :func:`odd_walk_kernel`.

    Finite-N graphs use their own ``q^N``; explicit-z' graphs use the
    infinite-volume law ``q_{|u - v|}``.
    """
    if aug.corner_weight_mode == FINITE:
        return finite_jump_matrix(aug, d)[0]
    v1 = first_row(aug)
    x = aug.xy[v1, 0]
    q = effective_jump_weights(aug.z)
    dist = np.abs(x[:, None] - x[None, :])
    return np.where(dist < len(q), q[np.minimum(dist, len(q) - 1)], 0.0)


def odd_walk_kernel(aug: AugmentedDomain, d=None) -> WalkKernel:
    """Effective odd walk ``R = I - (C - q 1_{V1}) / C(u, u)`` on the odd rows of the base.

    Raises
    ------
    NeedLargerN
        If a transition weight is negative or a first-row jump mass reaches 1.
    """
    d = d if d is not None else _d(aug)
    states = _odd_states(aug)
    C = d[states][:, states].toarray().real
    q = odd_jumps(aug, d)
    v1 = first_row(aug)
    pos = {int(s): i for i, s in enumerate(states)}
    loc = np.array([pos[int(s)] for s in v1])
    verts = [aug.vertices[i] for i in states]
    off = q - np.diag(np.diag(q))
    if (q < -ROW_TOL).any():
        i, j = np.unravel_index(np.argmin(q), q.shape)
        raise NeedLargerN(f"negative first-row jump weight {q[i, j]:.3e}", aug.n_side,
                          (verts[loc[i]], verts[loc[j]], float(q[i, j])))
    rs = q.sum(axis=1)
    if (rs >= 1).any():
        i = int(np.argmax(rs))
        raise NeedLargerN(f"first-row jump mass {rs[i]:.6f} >= 1", aug.n_side,
                          (verts[loc[i]], None, float(rs[i])))
    op = C.copy()
    op[np.ix_(loc, loc)] -= off
    dg = np.diag(C).copy()
    R = -op / dg[:, None]
    np.fill_diagonal(R, 0.0)
    R[loc, loc] = np.diag(q) / dg[loc]
    R[np.abs(R) < 1e-15] = 0.0
    if (R < -ROW_TOL).any():
        i, j = np.unravel_index(np.argmin(R), R.shape)
        raise NeedLargerN(f"negative transition weight {R[i, j]:.3e}", aug.n_side,
                          (verts[i], verts[j], float(R[i, j])))
    return WalkKernel.build(verts, np.clip(R, 0.0, None), dg)


def even_walk_kernel(aug: AugmentedDomain, d=None) -> WalkKernel:
    """Even walk ``R~(x, y) = |D(x, y)| / D(x, x)`` on every even-row vertex."""
    d = d if d is not None else _d(aug)
    states = _even_states(aug)
    E = d[states][:, states].toarray().real
    x = aug.xy[states, 0]
    sgn = np.where(x % 2 == 0, 1.0, -1.0)
    flipped = sgn[:, None] * E * sgn[None, :]
    offd = flipped - np.diag(np.diag(flipped))
    if (offd > 1e-12).any():
        raise AssertionError("sign-flipped even block has a positive off-diagonal entry")
    verts = [aug.vertices[i] for i in states]
    return _kernel_from_operator(verts, offd + np.diag(np.diag(E)))


# --------------------------------------------------------------------------
# adaptive N and the random-walk representation
# --------------------------------------------------------------------------

def adaptive_n(domain: Domain, z: float, start: int | None = None, cap: int = N_CAP):
    """Smallest ``N = start * 2**j`` whose first-row jumps are positive with mass below 1.

    Returns
    -------
    n : int
    aug : AugmentedDomain
        The finite-N graph at that ``N``.
    """
    if start is None:
        start = 4 * int(np.sum(domain.xy[:, 1] == 0))
    n = max(1, int(start))
    while n <= cap:
        aug = augment(domain, z, n_side=n)
        q, _ = finite_jump_matrix(aug)
        if (q > 0).all() and (q.sum(axis=1) < 1).all():
            return n, aug
        n *= 2
    raise NeedLargerN(f"no admissible N up to {cap}", cap, (None, None, float("nan")))


@dataclass
class RWReport:
    """Residuals of the random-walk representation on the base vertices.

    ``mixed``, ``odd`` and ``even`` compare the full ``D^{-1}`` with the
    table (``0``, ``G_odd``, signed ``G_even``).  ``odd_block`` and
    ``even_block`` compare the inverses of the odd and even blocks of ``D``
    with the same tables.  ``defects`` counts nonzero entries of ``D``
    between odd and even rows.
    """

    mode: str
    n_side: int
    mixed: float
    odd: float
    even: float
    odd_block: float
    even_block: float
    schur: float
    defects: int
    convergence: dict = field(default_factory=dict)

    def passed(self, mixed_tol: float = 1e-12, tol: float = 1e-8) -> bool:
        return self.mixed <= mixed_tol and self.odd <= tol and self.even <= tol

    def rows(self) -> list[tuple[str, float]]:
        out = [("mixed", self.mixed), ("odd", self.odd), ("even", self.even),
               ("odd_block", self.odd_block), ("even_block", self.even_block),
               ("schur", self.schur), ("defects", float(self.defects))]
        out += [(f"convergence_{k}", v) for k, v in self.convergence.items()]
        return out


def walk_tables(aug: AugmentedDomain, even_source: AugmentedDomain | None = None):
    """Walk predictions for ``D^{-1}`` on the base vertices.

    Returns ``(base_indices, table, odd_mask)`` where ``table[i, j]`` is
    ``G_odd``, ``(-1)**Re(u - v) G_even`` or 0.
    """
    src = even_source if even_source is not None else aug
    ok = odd_walk_kernel(aug)
    ek = even_walk_kernel(src)
    base = np.flatnonzero(aug.in_base)
    verts = [aug.vertices[i] for i in base]
    odd = aug.odd_rows[base]
    table = np.zeros((len(base), len(base)))
    oi = np.flatnonzero(odd)
    ei = np.flatnonzero(~odd)
    table[np.ix_(oi, oi)] = green_matrix(ok, [verts[i] for i in oi])
    ge = green_matrix(ek, [verts[i] for i in ei])
    x = aug.xy[base[ei], 0]
    table[np.ix_(ei, ei)] = ge * (-1.0) ** ((x[:, None] - x[None, :]) % 2)
    return base, table, odd


def _block_inverse(d, aug: AugmentedDomain, base: np.ndarray) -> np.ndarray:
    """Inverse of the odd block and the even block of ``D``, read on ``base``."""
    out = np.zeros((len(base), len(base)))
    for odd in (True, False):
        idx = np.flatnonzero(aug.odd_rows == odd)
        inv = np.linalg.inv(d[idx][:, idx].toarray().real)
        pos = {int(v): i for i, v in enumerate(idx)}
        sel = np.flatnonzero(aug.odd_rows[base] == odd)
        loc = np.array([pos[int(base[i])] for i in sel])
        out[np.ix_(sel, sel)] = inv[np.ix_(loc, loc)]
    return out


def verify_rw_representation(aug: AugmentedDomain, n_ref: int | None = None,
                             convergence_ns: Sequence[int] = ()) -> RWReport:
    """Compare ``D^{-1}`` with the effective-walk Green's functions.

    In explicit-z' mode ``D = K'* K'`` on the graph without side triangles;
    the odd table uses the infinite-volume first-row jumps and the even
    table is read from the finite-N even walk at ``n_ref`` (default: the
    adaptive threshold), a stand-in for infinitely many side triangles.

    Parameters
    ----------
    aug : AugmentedDomain
    n_ref : int, optional
    convergence_ns : sequence of int
        Side sizes at which ``D_N^{-1}`` restricted to the base is recorded;
        the report stores successive max differences.
    """
    d = _d(aug)
    even_src = None
    if aug.corner_weight_mode != FINITE:
        if n_ref is None:
            n_ref, even_src = adaptive_n(aug.base, aug.z)
        else:
            even_src = augment(aug.base, aug.z, n_side=n_ref)
    base, table, odd = walk_tables(aug, even_src)
    sysk = KasteleynSystem(aug, dense=True)
    full = sysk.d_inverse()[np.ix_(base, base)]
    mixed_mask = odd[:, None] != odd[None, :]
    oo = odd[:, None] & odd[None, :]
    ee = ~odd[:, None] & ~odd[None, :]
    blk = _block_inverse(d, aug, base)
    defects = d.tocoo()
    nd = int(np.sum((aug.odd_rows[defects.row] & ~aug.odd_rows[defects.col])
                    & (np.abs(defects.data) > 1e-12)))
    rep = RWReport(
        mode=aug.corner_weight_mode, n_side=aug.n_side,
        mixed=float(np.abs(full[mixed_mask]).max(initial=0)),
        odd=float(np.abs(full - table)[oo].max(initial=0)),
        even=float(np.abs(full - table)[ee].max(initial=0)),
        odd_block=float(np.abs(blk - table)[oo].max(initial=0)),
        even_block=float(np.abs(blk - table)[ee].max(initial=0)),
        schur=schur_identity_residual(aug, d) if aug.corner_weight_mode == FINITE else float("nan"),
        defects=nd,
    )
    prev_full = prev_blk = None
    for n in convergence_ns:
        a_n = augment(aug.base, aug.z, n_side=n)
        d_n = _d(a_n)
        b_n = np.flatnonzero(a_n.in_base)
        f_n = np.linalg.inv(d_n.toarray())[np.ix_(b_n, b_n)]
        k_n = _block_inverse(d_n, a_n, b_n)
        if prev_full is not None:
            rep.convergence[f"full_{n}"] = float(np.abs(f_n - prev_full).max())
            rep.convergence[f"block_{n}"] = float(np.abs(k_n - prev_blk).max())
        prev_full, prev_blk = f_n, k_n
    return rep


def qn_convergence(domain: Domain, z: float, ns: Sequence[int]) -> list[float]:
    """``max |q^N_{u,v} - q_{|u - v|}|`` over the first row for each ``N``."""
    q_inf = effective_jump_weights(z)
    out = []
    for n in ns:
        aug = augment(domain, z, n_side=n)
        q, v1 = finite_jump_matrix(aug)
        x = aug.xy[v1, 0]
        dist = np.abs(x[:, None] - x[None, :])
        out.append(float(np.abs(q - q_inf[dist]).max()))
    return out
