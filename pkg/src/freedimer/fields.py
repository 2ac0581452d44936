"""
Height function, exact height moments, and Neumann free field predictions.

Faces are named by their lower-left corner ``(x, y)``.  A cover is read as
the flow ``omega_M(w, b) = 1`` on its dimers; the reference flow is the
expected flow ``omega_0(w, b) = P(wb in M)``.  Crossing a primal edge along
a dual step ``d`` picks up ``omega(w, b)`` when ``d`` is the
counterclockwise rotation of ``b - w`` and ``-omega(w, b)`` otherwise, so

    h(a) - h(b) = sum over the dual path from a to b of sign * (1_e - P(e)).

The k-point moment of such differences is therefore a signed sum, over one
edge per path, of truncated edge correlations, each a Pfaffian of the
coupling matrix with the edges' own entries removed.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

from ._accel import moment_kernel
from .kasteleyn import KasteleynSystem, edge_probabilities
from .lattice import WHITE, AugmentedDomain, LatticePoint, MdCover

Face = tuple[int, int]
STEPS = (1, -1, 1j, -1j)


class DualPathError(ValueError):
    """A dual path leaves the domain or no dual path exists."""


# --------------------------------------------------------------------------
# faces and dual steps
# --------------------------------------------------------------------------

def domain_faces(aug: AugmentedDomain) -> set[Face]:
    """Unit squares of the base domain whose four corners are all present."""
    base = {(int(x), int(y)) for (x, y), b in zip(aug.xy, aug.in_base) if b}
    return {(x, y) for x, y in base
            if (x + 1, y) in base and (x, y + 1) in base and (x + 1, y + 1) in base}


def crossed_edge(face: Face, d: complex) -> tuple[LatticePoint, LatticePoint]:
    """Primal edge crossed by the dual step ``d`` out of ``face``."""
    x, y = face
    if d == 1:
        return LatticePoint(x + 1, y), LatticePoint(x + 1, y + 1)
    if d == -1:
        return LatticePoint(x, y), LatticePoint(x, y + 1)
    if d == 1j:
        return LatticePoint(x, y + 1), LatticePoint(x + 1, y + 1)
    if d == -1j:
        return LatticePoint(x, y), LatticePoint(x + 1, y)
    raise ValueError(f"not a unit dual step: {d!r}")


def white_black(p: LatticePoint, q: LatticePoint) -> tuple[LatticePoint, LatticePoint]:
    """The edge's endpoints ordered as ``(white, black)``."""
    return (p, q) if p.colour == WHITE else (q, p)


def step_sign(face: Face, d: complex) -> int:
    """``+1`` if the step runs along the rotated ``w -> b`` direction, else ``-1``."""
    w, b = white_black(*crossed_edge(face, d))
    rot = 1j * complex(b.x - w.x, b.y - w.y)
    return 1 if rot == d else -1


def _move(face: Face, d: complex) -> Face:
    return face[0] + int(d.real), face[1] + int(d.imag)


def l_path(a: Face, b: Face) -> list[tuple[Face, complex]]:
    """Horizontal-then-vertical dual path from ``a`` to ``b`` as ``(face, step)`` pairs."""
    out = []
    f = a
    dx = 1 if b[0] > a[0] else -1
    while f[0] != b[0]:
        out.append((f, dx))
        f = _move(f, dx)
    dy = 1j if b[1] > a[1] else -1j
    while f[1] != b[1]:
        out.append((f, dy))
        f = _move(f, dy)
    return out


def path_faces(path: Sequence[tuple[Face, complex]], end: Face | None = None) -> list[Face]:
    faces = [f for f, _ in path]
    if path:
        faces.append(_move(*path[-1]))
    elif end is not None:
        faces.append(end)
    return faces


def dual_path(faces: set[Face], a: Face, b: Face) -> list[tuple[Face, complex]]:
    """The L-shaped path if it stays in ``faces``, else a shortest dual path.

    Raises
    ------
    DualPathError
        If ``a`` or ``b`` is not a face or they are not dual-connected.
    """
    for f in (a, b):
        if f not in faces:
            raise DualPathError(f"{f} is not a bounded face of the domain")
    path = l_path(a, b)
    if all(f in faces for f in path_faces(path, a)):
        return path
    prev: dict[Face, tuple[Face, complex] | None] = {a: None}
    queue = deque([a])
    while queue:
        f = queue.popleft()
        if f == b:
            break
        for d in STEPS:
            g = _move(f, d)
            if g in faces and g not in prev:
                prev[g] = (f, d)
                queue.append(g)
    if b not in prev:
        raise DualPathError(f"faces {a} and {b} are not connected in the dual graph")
    out = []
    f = b
    while prev[f] is not None:
        g, d = prev[f]
        out.append((g, d))
        f = g
    return out[::-1]


# --------------------------------------------------------------------------
# reference flow and height function
# --------------------------------------------------------------------------

class ReferenceFlow:
    """Expected flow ``omega_0(w, b) = P(wb in M)`` on the base edges.

    Small graphs compute every edge probability at once; large ones compute
    them on demand from rows of ``K^{-1}``.
    """

    def __init__(self, aug: AugmentedDomain, system: KasteleynSystem | None = None):
        self.aug = aug
        self.system = system if system is not None else KasteleynSystem(aug)
        self._p: dict[int, float] = {}
        if self.system.dense:
            for e, p in enumerate(edge_probabilities(self.system)):
                self._p[e] = float(p)

    def probability(self, u, v) -> float:
        e = self.aug.edge_id(u, v)
        if e not in self._p:
            iu, iv = self.aug.index(u), self.aug.index(v)
            p = self.system.k_entry(iu, iv) * self.system.kinv_row(iv)[iu]
            self._p[e] = float(p.real)
        return self._p[e]

    def flow(self, u, v) -> float:
        """Antisymmetric flow from ``u`` to ``v``."""
        u, v = _pt(u), _pt(v)
        p = self.probability(u, v)
        return p if u.colour == WHITE else -p

    def outflow(self, v) -> float:
        """Total flow out of ``v`` along base edges."""
        v = _pt(v)
        i = self.aug.index(v)
        total = 0.0
        for j in self.aug.neighbours[i]:
            if self.aug.in_base[j]:
                total += self.flow(v, self.aug.vertices[j])
        return total


def _pt(v) -> LatticePoint:
    return v if isinstance(v, LatticePoint) else LatticePoint(int(v[0]), int(v[1]))


def reference_flow(aug: AugmentedDomain, system: KasteleynSystem | None = None) -> ReferenceFlow:
    """Reference flow of the free boundary dimer measure on ``aug``."""
    return ReferenceFlow(aug, system)


def _edge_key(p: LatticePoint, q: LatticePoint) -> tuple:
    return (p, q) if p < q else (q, p)


def _dimer_set(cover: MdCover) -> set:
    return {_edge_key(u, v) for u, v in cover.dimers}


def height_difference(cover: MdCover, a: Face, b: Face, ref: ReferenceFlow,
                      faces: set[Face] | None = None) -> float:
    """``h(a) - h(b)`` for one cover.

    Raises
    ------
    DualPathError
    """
    faces = faces if faces is not None else domain_faces(ref.aug)
    if a == b:
        if a not in faces:
            raise DualPathError(f"{a} is not a bounded face of the domain")
        return 0.0
    dimers = _dimer_set(cover)
    total = 0.0
    for f, d in dual_path(faces, a, b):
        p, q = crossed_edge(f, d)
        s = step_sign(f, d)
        occ = 1.0 if _edge_key(p, q) in dimers else 0.0
        total += s * (occ - ref.probability(p, q))
    return total


@dataclass
class HeightField:
    """Heights of one cover relative to a base face."""

    faces: list[Face]
    values: np.ndarray
    base: Face
    reference: ReferenceFlow = field(repr=False)

    @cached_property
    def index(self) -> dict[Face, int]:
        return {f: i for i, f in enumerate(self.faces)}

    def __getitem__(self, face: Face) -> float:
        return float(self.values[self.index[face]])


def height_field(cover: MdCover, ref: ReferenceFlow, base: Face | None = None,
                 faces: Sequence[Face] | None = None) -> HeightField:
    """Heights of every face, by breadth-first search over the dual graph.

    ``h(base) = 0``; the order of ``faces`` (default: sorted) fixes the value order.
    """
    all_faces = domain_faces(ref.aug)
    order = sorted(all_faces) if faces is None else list(faces)
    if not order:
        raise DualPathError("the domain has no bounded face")
    base = order[0] if base is None else base
    if base not in all_faces:
        raise DualPathError(f"{base} is not a bounded face of the domain")
    dimers = _dimer_set(cover)
    h = {base: 0.0}
    queue = deque([base])
    while queue:
        f = queue.popleft()
        for d in STEPS:
            g = _move(f, d)
            if g in all_faces and g not in h:
                p, q = crossed_edge(f, d)
                occ = 1.0 if _edge_key(p, q) in dimers else 0.0
                # h(g) - h(f) = -(increment along f -> g)
                h[g] = h[f] - step_sign(f, d) * (occ - ref.probability(p, q))
                queue.append(g)
    missing = [f for f in order if f not in h]
    if missing:
        raise DualPathError(f"faces {missing[:3]} are not dual-connected to {base}")
    return HeightField(order, np.array([h[f] for f in order]), base, ref)


def face_cycle_residuals(cover: MdCover, ref: ReferenceFlow) -> np.ndarray:
    """Increment sums around every interior vertex (elementary dual cycles)."""
    faces = domain_faces(ref.aug)
    dimers = _dimer_set(cover)
    out = []
    for x, y in sorted(faces):
        # cycle around the vertex (x + 1, y + 1): four faces sharing it
        f0 = (x, y)
        cyc = [(f0, 1), ((x + 1, y), 1j), ((x + 1, y + 1), -1), ((x, y + 1), -1j)]
        if not all(_move(f, d) in faces for f, d in cyc):
            continue
        total = 0.0
        for f, d in cyc:
            p, q = crossed_edge(f, d)
            occ = 1.0 if _edge_key(p, q) in dimers else 0.0
            total += step_sign(f, d) * (occ - ref.probability(p, q))
        out.append(total)
    return np.array(out)


# --------------------------------------------------------------------------
# exact moments
# --------------------------------------------------------------------------

@dataclass
class MomentRequest:
    """Pairs of faces ``(a_i, b_i)`` with their dual paths.

    Faces are in the coordinates of the graph the moment is evaluated on.
    """

    pairs: list[tuple[Face, Face]]
    paths: list[list[tuple[Face, complex]]]

    @classmethod
    def l_shaped(cls, pairs: Sequence[tuple[Face, Face]], min_separation: int = 0) -> "MomentRequest":
        """L-shaped paths, checked pairwise disjoint and at least ``min_separation`` apart."""
        pairs = [(tuple(a), tuple(b)) for a, b in pairs]
        paths = [l_path(a, b) for a, b in pairs]
        req = cls(pairs, paths)
        req.check(min_separation)
        return req

    def face_sets(self) -> list[list[Face]]:
        return [path_faces(p, a) for p, (a, _) in zip(self.paths, self.pairs)]

    def check(self, min_separation: int = 0) -> None:
        sets = self.face_sets()
        for i in range(len(sets)):
            for j in range(i + 1, len(sets)):
                fi, fj = np.array(sets[i]), np.array(sets[j])
                dist = np.abs(fi[:, None, :] - fj[None, :, :]).max(axis=2).min()
                if dist == 0:
                    raise DualPathError(f"paths {i} and {j} share a face")
                if dist < min_separation:
                    raise DualPathError(f"paths {i} and {j} are {dist} steps apart, "
                                        f"fewer than {min_separation}")


def exact_height_moment(req: MomentRequest, system: KasteleynSystem,
                        faces: set[Face] | None = None) -> float:
    """``E[prod_i (h(a_i) - h(b_i))]`` exactly, on the graph of ``system``.

    Raises
    ------
    DualPathError
        If a path leaves the domain.
    """
    aug = system.aug
    faces = faces if faces is not None else domain_faces(aug)
    k = len(req.pairs)
    if k == 0:
        return 1.0
    verts: dict[int, int] = {}
    wv, bv, coef, starts, lens = [], [], [], [], []
    for path, (a, _) in zip(req.paths, req.pairs):
        for f in path_faces(path, a):
            if f not in faces:
                raise DualPathError(f"path face {f} is outside the domain")
        starts.append(len(wv))
        lens.append(len(path))
        for f, d in path:
            w, b = white_black(*crossed_edge(f, d))
            iw, ib = aug.index(w), aug.index(b)
            wv.append(verts.setdefault(iw, len(verts)))
            bv.append(verts.setdefault(ib, len(verts)))
            coef.append(step_sign(f, d) * system.k_entry(ib, iw))
    if any(n == 0 for n in lens):
        return 0.0
    ids = np.fromiter(verts.keys(), dtype=np.int64)
    if system.dense:
        m = system.kinv[np.ix_(ids, ids)]
    else:
        m = system.kinv_rows(ids)[:, ids]
    val = moment_kernel(m, wv, bv, coef, starts, lens)
    if abs(val.imag) > 1e-8 * max(1.0, abs(val.real)):
        raise ArithmeticError(f"height moment has imaginary part {val.imag:.3e}")
    return float(val.real)


# --------------------------------------------------------------------------
# free field predictions
# --------------------------------------------------------------------------

def neumann_green(x: complex, y: complex) -> float:
    """``-log|x - y| - log|x - conj(y)|``."""
    if x == y:
        raise ValueError("coincident points")
    return -math.log(abs(x - y)) - math.log(abs(x - y.conjugate()))


def perfect_matchings(items: Sequence[int]) -> Iterator[list[tuple[int, int]]]:
    """All perfect matchings of ``items`` (none when the count is odd)."""
    items = list(items)
    if not items:
        yield []
        return
    if len(items) % 2:
        return
    first = items[0]
    for j in range(1, len(items)):
        rest = items[1:j] + items[j + 1:]
        for m in perfect_matchings(rest):
            yield [(first, items[j])] + m


def pair_covariance(a1: complex, b1: complex, a2: complex, b2: complex) -> float:
    """Limit of ``E[(h(a1) - h(b1)) (h(a2) - h(b2))]``."""
    num = (a1 - a2) * (b1 - b2) * (a1.conjugate() - a2) * (b1.conjugate() - b2)
    den = (a1 - b2) * (b1 - a2) * (a1.conjugate() - b2) * (b1.conjugate() - a2)
    if num == 0 or den == 0:
        raise ValueError("coincident points")
    return -1.0 / (2 * math.pi ** 2) * math.log(abs(num / den))


def gff_prediction(pairs: Sequence[tuple[complex, complex]]) -> float:
    """Matching sum of pair covariances: the Gaussian moment of the height differences."""
    pts = [p for pair in pairs for p in pair]
    if any(p.imag <= 0 for p in pts):
        raise ValueError("points must lie in the open upper half-plane")
    if len(set(pts)) != len(pts):
        raise ValueError("coincident points")
    total = 0.0
    for m in perfect_matchings(range(len(pairs))):
        term = 1.0
        for i, j in m:
            term *= pair_covariance(pairs[i][0], pairs[i][1], pairs[j][0], pairs[j][1])
        total += term
    return total


# --------------------------------------------------------------------------
# test functions
# --------------------------------------------------------------------------

def _unit_square_mean_log() -> float:
    """``E[log |X - Y|]`` for independent uniform points of the unit square."""
    from scipy.integrate import dblquad

    val, _ = dblquad(lambda t, s: 0.5 * math.log(s * s + t * t) * 4 * (1 - s) * (1 - t),
                     0.0, 1.0, 0.0, 1.0, epsabs=1e-12, epsrel=1e-12)
    return val


def _check_mean_zero(f: np.ndarray) -> None:
    if not np.all(np.isfinite(f)):
        raise ValueError("test function has non-finite values")
    if abs(f.sum()) > 1e-12 * max(1.0, np.abs(f).sum()):
        raise ValueError(f"test function is not mean-zero (sum {f.sum():.3e})")


def pair_with_test_function(source, f: np.ndarray, delta: float) -> np.ndarray:
    """``(h, f) = delta**2 sum_a f(a) h(a)`` for each height sample.

    Parameters
    ----------
    source : HeightField, sequence of HeightField, or ndarray (samples, faces)
        Heights on a face list matching ``f``.
    f : ndarray
        Mean-zero values on the same faces.
    delta : float

    Returns
    -------
    ndarray of shape (samples,)
    """
    f = np.asarray(f, dtype=float)
    _check_mean_zero(f)
    if isinstance(source, HeightField):
        h = source.values[None, :]
    elif isinstance(source, np.ndarray):
        h = np.atleast_2d(source)
    else:
        h = np.array([s.values for s in source])
    if h.shape[1] != f.size:
        raise ValueError("heights and test function live on different face lists")
    return delta * delta * (h @ f)


def test_function_variance_prediction(f: np.ndarray, positions: np.ndarray, delta: float) -> float:
    """``(1 / 2 pi^2) sum_a sum_b f(a) f(b) G(a, b) delta**4`` with ``G`` the Neumann Green's function.

    Diagonal terms use the cell average of ``-log|x - y|``.
    """
    f = np.asarray(f, dtype=float)
    _check_mean_zero(f)
    z = np.asarray(positions, dtype=complex)
    diff = np.abs(z[:, None] - z[None, :])
    np.fill_diagonal(diff, 1.0)
    g = -np.log(diff) - np.log(np.abs(z[:, None] - z[None, :].conj()))
    np.fill_diagonal(g, -(math.log(delta) + _unit_square_mean_log()) - np.log(2 * z.imag))
    return float(f @ g @ f) * delta ** 4 / (2 * math.pi ** 2)


def pairing_coefficients(aug: AugmentedDomain, face_list: Sequence[Face], f: np.ndarray, delta: float,
                         base: Face | None = None) -> tuple[list[tuple[LatticePoint, LatticePoint]], np.ndarray]:
    """Write ``(h, f)`` as ``sum_e c_e (1_e - P(e))`` over primal edges.

    Each face ``a`` contributes ``delta**2 f(a)`` times the step signs of a
    dual path from ``a`` to ``base`` (default: the first face of the list).

    Returns
    -------
    edges : list of (white, black)
    coeffs : ndarray
    """
    f = np.asarray(f, dtype=float)
    _check_mean_zero(f)
    faces = domain_faces(aug)
    base = tuple(face_list[0]) if base is None else tuple(base)
    acc: dict[tuple, float] = {}
    for a, fa in zip(face_list, f):
        if fa == 0:
            continue
        for g, d in dual_path(faces, tuple(a), base):
            e = white_black(*crossed_edge(g, d))
            acc[e] = acc.get(e, 0.0) + delta * delta * fa * step_sign(g, d)
    edges = [e for e, c in acc.items() if c != 0]
    return edges, np.array([acc[e] for e in edges])


def exact_pairing_variance(system: KasteleynSystem, face_list: Sequence[Face], f: np.ndarray,
                           delta: float) -> float:
    """``Var (h, f)`` from the pairwise edge covariances of the Pfaffian process.

    ``Cov(1_e, 1_e') = a_e a_e' (C(b, w') C(w, b') - C(w, w') C(b, b'))`` with
    ``C = K^{-1}`` and ``a_e = K(b, w)``, plus ``P(e)`` on the diagonal.
    """
    edges, c = pairing_coefficients(system.aug, face_list, f, delta)
    if not edges:
        return 0.0
    w = np.array([system.aug.index(e[0]) for e in edges])
    b = np.array([system.aug.index(e[1]) for e in edges])
    ids, inv = np.unique(np.concatenate([w, b]), return_inverse=True)
    m = system.kinv_block(ids)
    iw, ib = inv[:len(w)], inv[len(w):]
    a = np.array([system.k_entry(j, i) for i, j in zip(w, b)])
    cov = np.outer(a, a) * (m[np.ix_(ib, iw)] * m[np.ix_(iw, ib)] - m[np.ix_(iw, iw)] * m[np.ix_(ib, ib)])
    p = a * m[iw, ib]
    cov[np.diag_indices_from(cov)] += p
    val = c @ cov @ c
    if abs(val.imag) > 1e-8 * max(1.0, abs(val.real)):
        raise ArithmeticError(f"pairing variance has imaginary part {val.imag:.3e}")
    return float(val.real)


# --------------------------------------------------------------------------
# half-plane moments on box truncations
# --------------------------------------------------------------------------

MARGIN = 4


def macro_face(point: complex, delta: float) -> Face:
    """Relative face whose centre is nearest to a macroscopic point."""
    return int(math.floor(point.real / delta)), int(math.floor(point.imag / delta))


def face_centre(face: Face, delta: float) -> complex:
    return complex(delta * (face[0] + 0.5), delta * (face[1] + 0.5))


@dataclass
class MomentComparison:
    k: int
    delta: float
    z: float
    radius: int
    measured: float
    predicted: float
    snapped: list[tuple[complex, complex]]

    @property
    def rel_err(self) -> float:
        return abs(self.measured - self.predicted) / abs(self.predicted) if self.predicted else math.inf


def box_radius_for(points: Sequence[complex], delta: float, margin: float = MARGIN) -> int:
    """Even radius giving the box a margin of ``margin`` configuration diameters."""
    pts = np.asarray(points, dtype=complex)
    diam = float(np.abs(pts[:, None] - pts[None, :]).max())
    extent = max(np.abs(pts.real).max(), pts.imag.max())
    r = int(math.ceil((extent + margin * diam) / delta))
    return r + (r % 2)


def half_plane_moment(pairs: Sequence[tuple[complex, complex]], delta: float, z: float = 1.0,
                      rho: float = 0.5, margin: float = MARGIN, radius: int | None = None) -> MomentComparison:
    """Exact height moment on a box truncation against :func:`gff_prediction`.

    Macroscopic points are snapped to faces; the prediction uses the snapped
    face centres.
    """
    from .potential import Box

    pts = [p for pair in pairs for p in pair]
    if min(p.imag for p in pts) < rho:
        raise ValueError(f"points must have imaginary part >= rho = {rho}")
    r = radius if radius is not None else box_radius_for(pts, delta, margin)
    box = Box(r, z)
    rel = [(macro_face(a, delta), macro_face(b, delta)) for a, b in pairs]
    absolute = [((a[0] + r, a[1]), (b[0] + r, b[1])) for a, b in rel]
    req = MomentRequest.l_shaped(absolute, min_separation=int(math.ceil(rho / (2 * delta))))
    measured = exact_height_moment(req, box.system)
    snapped = [(face_centre(a, delta), face_centre(b, delta)) for a, b in rel]
    return MomentComparison(len(pairs), delta, z, r, measured, gff_prediction(snapped), snapped)
