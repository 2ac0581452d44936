"""
Potential kernel of the effective walks and the coupling function.

Everything here is measured on box truncations: the odd rectangle of
width ``2R + 1`` and height ``R + 1`` with the right half of its top row
removed, augmented with a triangle row and explicit ``z'`` corners.  Its
bottom centre ``(R, 0)`` is the origin of the relative coordinates used
throughout.  Fixed lattice points are read on a schedule of radii and the
box effect is removed by an Aitken extrapolation over the last three radii.

Potential-kernel differences come from box Green's functions of the walks:
``G_R(x, y) - G_R(x', y) -> -(a(x, y) - a(x', y))``, with ``G_R`` counting
visits from time 0.  The odd walk's Green's function is the inverse of the
odd-row block of ``D`` (apex row included) and the even walk's is the
inverse of the even-row block after the sign flip ``(-1)**x``.

The coupling function is reported in the sign convention of the scaling
formulas, ``C(u, v) = K^{-1}(v, u)``; see :func:`coupling_function`.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .kasteleyn import KasteleynSystem, d_matrix, parity_block
from .lattice import AugmentedDomain, LatticePoint, augment, build_rectangle_domain
from .walks import aux_params, even_walk_kernel

DEFAULT_SCHEDULE = (64, 128, 256)
RADIUS_FACTORS = (4, 8, 16)

# vertex types of the coupling tables: black/white crossed with even/odd row
WHITE_ODD, WHITE_EVEN, BLACK_EVEN, BLACK_ODD = "WO", "WE", "BE", "BO"
VERTEX_TYPES = (WHITE_ODD, WHITE_EVEN, BLACK_EVEN, BLACK_ODD)


class InadmissiblePair(ValueError):
    """The pair ``(x, x')`` does not define a potential-kernel increment."""


def _pt(v) -> LatticePoint:
    return v if isinstance(v, LatticePoint) else LatticePoint(int(v[0]), int(v[1]))


# --------------------------------------------------------------------------
# extrapolation over radii
# --------------------------------------------------------------------------

def _aitken_real(v: np.ndarray) -> float:
    d1, d2 = v[-2] - v[-3], v[-1] - v[-2]
    den = d2 - d1
    if den == 0 or abs(d2) >= abs(d1) or abs(den) < 1e-15 * max(abs(v[-1]), 1e-300):
        return float(v[-1])
    return float(v[-1] - d2 * d2 / den)


def extrapolate(values: Sequence[complex]) -> tuple[complex, float]:
    """Limit of a radius sequence and an error bar.

    With three or more values the real and imaginary parts are
    Aitken-extrapolated over the last three; sequences that do not contract
    are left at their last value.  The error bar covers both the last
    increment and the extrapolation step.

    Returns
    -------
    limit : complex
    error : float
    """
    v = np.asarray(values, dtype=np.complex128)
    if v.size == 0:
        raise ValueError("nothing to extrapolate")
    if v.size == 1:
        return complex(v[0]), float("inf")
    if v.size == 2:
        return complex(v[-1]), float(abs(v[-1] - v[-2]))
    lim = complex(_aitken_real(v.real), _aitken_real(v.imag))
    err = max(abs(lim - v[-1]), abs(v[-1] - v[-2]))
    return lim, float(err)


# --------------------------------------------------------------------------
# box truncations
# --------------------------------------------------------------------------

class Box:
    """Box truncation of radius ``R`` with lazily factored solvers.

    Parameters
    ----------
    radius : int
        Even radius; the base rectangle is ``(2R + 1) x (R + 1)``.
    z : float
        Monomer weight.
    """

    def __init__(self, radius: int, z: float = 1.0):
        radius = int(radius)
        if radius < 2 or radius % 2:
            raise ValueError(f"box radius must be even and >= 2, got {radius}")
        self.radius = radius
        self.z = float(z)
        self.aug: AugmentedDomain = augment(build_rectangle_domain(2 * radius + 1, radius + 1), self.z)
        self._blocks: dict[bool, tuple] = {}

    def vertex(self, rel) -> int:
        """Index of the vertex at relative coordinates ``(x - R, y)``."""
        p = _pt(rel)
        return self.aug.index((p.x + self.radius, p.y))

    @cached_property
    def system(self) -> KasteleynSystem:
        return KasteleynSystem(self.aug, dense=False)

    @cached_property
    def D(self) -> sp.csr_matrix:
        return d_matrix(self.aug, self.system.K)

    def block(self, odd: bool):
        """``(indices, position map, LU)`` of the odd or even block of ``D``."""
        if odd not in self._blocks:
            idx, sub = parity_block(self.D, self.aug, odd)
            pos = np.full(len(self.aug), -1, dtype=np.int64)
            pos[idx] = np.arange(len(idx))
            self._blocks[odd] = (idx, pos, splu(sub.tocsc()))
        return self._blocks[odd]

    def block_inverse_row(self, u: int) -> tuple[np.ndarray, np.ndarray]:
        """Row ``u`` of the inverse of ``u``'s parity block, as ``(indices, values)``.

        The blocks are real symmetric, so rows and columns coincide.
        """
        odd = bool(self.aug.odd_rows[u])
        idx, pos, lu = self.block(odd)
        e = np.zeros(len(idx))
        e[pos[u]] = 1.0
        return idx, lu.solve(e)

    def walk_green_column(self, y: int) -> np.ndarray:
        """Visit counts ``E_x[visits to y]`` of the parity walk of ``y``, indexed by vertex.

        Vertices outside the walk's rows hold 0.
        """
        idx, col = self.block_inverse_row(y)
        out = np.zeros(len(self.aug))
        dyy = float(self.D[y, y].real)
        vals = col * dyy
        if not self.aug.odd_rows[y]:
            sgn = np.where(self.aug.xy[idx, 0] % 2 == 0, 1.0, -1.0)
            vals = vals * sgn * sgn[np.searchsorted(idx, y)]
        out[idx] = vals
        return out


def _map_radii(radii: Sequence[int], func, workers: int = 1) -> list:
    """``[func(R) for R in radii]``, optionally on a thread pool, in radius order."""
    radii = list(radii)
    if workers <= 1 or len(radii) <= 1:
        return [func(r) for r in radii]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, radii))


# --------------------------------------------------------------------------
# potential kernel
# --------------------------------------------------------------------------

@dataclass
class PotentialKernelEstimate:
    """Extrapolated ``a(x, y) - a(x', y)`` for one walk.

    Points are in relative coordinates (column offset from the box centre,
    row).  ``values`` holds the box estimates in schedule order.
    """

    x: LatticePoint
    x_prime: LatticePoint
    y: LatticePoint
    walk: str
    value: float
    box_radius_schedule: list[int]
    values: list[float] = field(default_factory=list)
    extrapolation_error: float = 0.0


def walk_parity(*points) -> str:
    """``"odd"`` or ``"even"``: the walk whose rows hold all the points."""
    par = {_pt(p).y % 2 for p in points}
    if len(par) != 1:
        raise InadmissiblePair("points lie on rows of different parity")
    return "odd" if par.pop() else "even"


def check_admissible(x, x_prime) -> None:
    """Raise :class:`InadmissiblePair` unless ``x'`` is a valid neighbour of ``x``.

    Valid: same class at distance 2 along an axis, or distance 1 along the
    boundary row of the walk (row 1 for the odd walk, row 0 for the even one).
    """
    x, xp = _pt(x), _pt(x_prime)
    if x == xp:
        return
    walk_parity(x, xp)
    dx, dy = xp.x - x.x, xp.y - x.y
    if (abs(dx), abs(dy)) in ((2, 0), (0, 2)) and min(x.y, xp.y) >= 0:
        return
    boundary_row = 1 if x.y % 2 else 0
    if abs(dx) == 1 and dy == 0 and x.y == boundary_row:
        return
    raise InadmissiblePair(f"{x} and {xp} are not admissible neighbours")


def potential_kernel_2d(x, x_prime, y, z_weight: float = 1.0,
                        schedule: Sequence[int] = DEFAULT_SCHEDULE,
                        workers: int = 1) -> PotentialKernelEstimate:
    """Box estimate of ``a(x, y) - a(x', y)`` for the effective walk of the points' rows.

    Parameters
    ----------
    x, x_prime, y : LatticePoint or (int, int)
        Relative coordinates; all three on rows of one parity.
    z_weight : float
    schedule : sequence of int
        Even box radii, increasing.
    workers : int
        Radii solved concurrently.

    Returns
    -------
    PotentialKernelEstimate

    Raises
    ------
    InadmissiblePair
    """
    x, xp, y = _pt(x), _pt(x_prime), _pt(y)
    check_admissible(x, xp)
    walk = walk_parity(x, xp, y)
    radii = sorted(int(r) for r in schedule)
    if x == xp:
        return PotentialKernelEstimate(x, xp, y, walk, 0.0, radii, [0.0] * len(radii), 0.0)

    def one(r):
        box = Box(r, z_weight)
        col = box.walk_green_column(box.vertex(y))
        return -(col[box.vertex(x)] - col[box.vertex(xp)])

    vals = _map_radii(radii, one, workers)
    lim, err = extrapolate(vals)
    return PotentialKernelEstimate(x, xp, y, walk, lim.real, radii, [float(v) for v in vals], err)


def pk_prediction(x: complex, x_prime: complex, y: complex, same_class: bool) -> float:
    """Scaling form of ``a(x', y) - a(x, y)`` for the reflected non-lazy walk."""
    if min(x.imag, y.imag) <= 0:
        raise ValueError("points must lie in the open upper half-plane")
    h = x_prime - x
    if same_class:
        if x == y:
            raise ValueError("coincident points")
        return 2 / math.pi * (h / (x - y)).real
    return 2 / math.pi * (h / (x - y.conjugate())).real


@dataclass
class PKScalingRow:
    delta: float
    x: LatticePoint
    x_prime: LatticePoint
    y: LatticePoint
    measured: float
    predicted: float
    extrapolation_error: float

    @property
    def abs_err(self) -> float:
        return abs(self.measured - self.predicted)

    @property
    def rel_err(self) -> float:
        return self.abs_err / abs(self.predicted) if self.predicted != 0 else math.inf


@dataclass
class PKScalingReport:
    rows: list[PKScalingRow]

    @property
    def ratios(self) -> list[float]:
        """Error ratio between consecutive ``delta`` values (finer over coarser)."""
        return [b.abs_err / a.abs_err for a, b in zip(self.rows, self.rows[1:])]


def snap(point: complex, delta: float, walk: str, column_parity: int | None = None) -> LatticePoint:
    """Lattice point (relative coordinates) nearest to a macroscopic position.

    The even walk's boundary row 0 sits on the real line, the odd walk's
    row 1.  ``column_parity`` forces the colour by moving one column right.
    """
    off = 1 if walk == "odd" else 0
    row = off + 2 * int(round(point.imag / (2 * delta)))
    col = int(round(point.real / delta))
    if column_parity is not None and (col + row) % 2 != column_parity:
        col += 1
    return LatticePoint(col, row)


def macro(p: LatticePoint, delta: float, walk: str) -> complex:
    """Macroscopic position of a relative lattice point."""
    off = 1 if walk == "odd" else 0
    return complex(delta * p.x, delta * (p.y - off))


def pk_scaling_check(x: complex, y: complex, step: complex = 1, same_class: bool = True,
                     walk: str = "even", deltas: Sequence[float] = (1 / 16, 1 / 32),
                     z: float = 1.0, rho: float = 0.5,
                     radius_factors: Sequence[int] = RADIUS_FACTORS,
                     workers: int = 1) -> PKScalingReport:
    """Compare measured ``a(x', y) - a(x, y)`` with its scaling form over ``deltas``.

    Parameters
    ----------
    x, y : complex
        Macroscopic points with imaginary part at least ``rho``.
    step : complex
        Unit direction of ``x' - x``; the lattice step is ``2 delta step``.
    same_class : bool
        Class relation between ``x`` and ``y``.
    walk : {"even", "odd"}
    deltas : sequence of float
    radius_factors : sequence of int
        Box radii ``f / delta`` (rounded to even integers).

    Returns
    -------
    PKScalingReport
    """
    if min(x.imag, y.imag) < rho:
        raise ValueError(f"points must have imaginary part >= rho = {rho}")
    if step not in (1, -1, 1j, -1j):
        raise ValueError("step must be a unit lattice direction")
    rows = []
    for delta in deltas:
        lx = snap(x, delta, walk)
        ly = snap(y, delta, walk, column_parity=(lx.x + lx.y) % 2 ^ (0 if same_class else 1))
        lxp = LatticePoint(lx.x + 2 * int(step.real), lx.y + 2 * int(step.imag))
        radii = [2 * max(1, int(round(f / delta / 2))) for f in radius_factors]
        est = potential_kernel_2d(lx, lxp, ly, z, radii, workers)
        pred = pk_prediction(macro(lx, delta, walk), macro(lxp, delta, walk),
                             macro(ly, delta, walk), same_class)
        rows.append(PKScalingRow(delta, lx, lxp, ly, -est.value, pred, est.extrapolation_error))
    return PKScalingReport(rows)


# --------------------------------------------------------------------------
# coupling function
# --------------------------------------------------------------------------

def vertex_type(v) -> str:
    """Table type of a base vertex: colour crossed with row parity."""
    v = _pt(v)
    black = (v.x + v.y) % 2 == 0
    if v.y % 2:
        return BLACK_ODD if black else WHITE_ODD
    return BLACK_EVEN if black else WHITE_EVEN


# (derivative direction, factor, block) per (type of v1, type of v2)
_TABLE_WHITE = {
    WHITE_ODD: {WHITE_ODD: ("x", 1, "odd"), WHITE_EVEN: ("y", 1j, "odd"),
                BLACK_EVEN: ("y", 1j, "odd"), BLACK_ODD: ("x", 1, "odd")},
    WHITE_EVEN: {WHITE_ODD: ("y", 1j, "even"), WHITE_EVEN: ("x", 1, "even"),
                 BLACK_EVEN: ("x", 1, "even"), BLACK_ODD: ("y", 1j, "even")},
}
_TABLE_BLACK = {
    BLACK_ODD: {WHITE_ODD: ("x", 1, "odd"), WHITE_EVEN: ("y", 1j, "odd"),
                BLACK_EVEN: ("y", 1j, "odd"), BLACK_ODD: ("x", 1, "odd")},
    BLACK_EVEN: {WHITE_ODD: ("y", 1j, "even"), WHITE_EVEN: ("x", 1, "even"),
                 BLACK_EVEN: ("x", 1, "even"), BLACK_ODD: ("y", 1j, "even")},
}
COUPLING_TABLE = {**_TABLE_WHITE, **_TABLE_BLACK}


def coupling_rule(t1: str, t2: str) -> tuple[str, complex, str]:
    """Table entry for ``C(v1, v2)``: ``(derivative, factor, block)``."""
    return COUPLING_TABLE[t1][t2]


def _row_sign(t: str) -> int:
    return -1 if t in (WHITE_ODD, BLACK_ODD) else 1


def master_rule(s1: int, s2: int) -> dict:
    """Expansion of the master formula into ``{(derivative, block): coefficient}``.

    ``C = 1/4 [(1 + s1 s2) d/dx2 + (1 - s1 s2) i d/dy2] [(1 - s1) A_odd + (1 + s1) A_even]``,
    with zero coefficients dropped.
    """
    out = {}
    for der, c1 in (("x", (1 + s1 * s2) / 4), ("y", 1j * (1 - s1 * s2) / 4)):
        for blk, c2 in (("odd", 1 - s1), ("even", 1 + s1)):
            c = c1 * c2
            if c != 0:
                out[(der, blk)] = c
    return out


def table_master_mismatches() -> list[tuple[str, str]]:
    """Type pairs where the table and the master formula disagree (expected empty)."""
    bad = []
    for t1 in VERTEX_TYPES:
        for t2 in VERTEX_TYPES:
            der, fac, blk = coupling_rule(t1, t2)
            if master_rule(_row_sign(t1), _row_sign(t2)) != {(der, blk): fac}:
                bad.append((t1, t2))
    return bad


@dataclass
class CouplingFunctionValue:
    u: LatticePoint
    v: LatticePoint
    value: complex
    class_pair: str
    row_signs: tuple[int, int]


def _value(u: LatticePoint, v: LatticePoint, val: complex) -> CouplingFunctionValue:
    cls = "same" if (u.x + u.y) % 2 == (v.x + v.y) % 2 else "different"
    return CouplingFunctionValue(u, v, complex(val), cls, (u.row_sign, v.row_sign))


def coupling_function(box: Box, u, v, route: str = "direct") -> CouplingFunctionValue:
    """Coupling function ``C(u, v)`` on a box, in relative coordinates.

    ``route="direct"`` reads ``K^{-1}(v, u)``.  ``route="walk"`` assembles the
    table's discrete derivative of the block Green's functions: with ``B``
    the inverse of the parity block of ``D`` containing ``u``,
    ``C(u, v) = -sum_c B(u, c) conj(K(v, c))`` over the two neighbours ``c``
    of ``v`` selected by the table.  Both converge to the infinite-volume
    coupling function as the radius grows.

    The sign convention is that of the scaling formulas; it is the negative
    of ``K^{-1}(u, v)`` for our orientation.
    """
    u, v = _pt(u), _pt(v)
    if u == v:
        raise ValueError("C(u, u) is not defined")
    iu, iv = box.vertex(u), box.vertex(v)
    if route == "direct":
        return _value(u, v, box.system.kinv_row(iv)[iu])
    if route != "walk":
        raise ValueError(f"unknown route {route!r}")
    der, _, blk = coupling_rule(vertex_type(u), vertex_type(v))
    idx, row = box.block_inverse_row(iu)
    pos = box.block(blk == "odd")[1]
    e = (1, 0) if der == "x" else (0, 1)
    total = 0.0j
    for sgn in (1, -1):
        c = (v.x + box.radius + sgn * e[0], v.y + sgn * e[1])
        try:
            ic = box.aug.index(c)
        except KeyError:
            continue
        total += row[pos[ic]] * np.conj(box.system.Ks[iv, ic])
    return _value(u, v, -total)


def scaling_prediction(z_pt: complex, w_pt: complex, same_class: bool,
                       row_signs: tuple[int, int], delta: float = 1.0) -> complex:
    """Scaling form of ``C(z, w)`` at mesh ``delta``.

    Different class: ``-(delta / 2 pi) (s(z) s(w) / (z - w) + 1 / (conj z - conj w))``.
    Same class: ``(delta / 2 pi) (s(z) / (z - conj w) + s(w) / (conj z - w))``.
    """
    if z_pt == w_pt:
        raise ValueError("coincident points")
    if min(z_pt.imag, w_pt.imag) <= 0:
        raise ValueError("points must lie in the open upper half-plane")
    sz, sw = row_signs
    zc, wc = z_pt.conjugate(), w_pt.conjugate()
    if same_class:
        return delta / (2 * math.pi) * (sz / (z_pt - wc) + sw / (zc - w_pt))
    return -delta / (2 * math.pi) * (sz * sw / (z_pt - w_pt) + 1 / (zc - wc))


@dataclass
class CouplingScalingRow:
    delta: float
    u: LatticePoint
    v: LatticePoint
    measured: complex
    predicted: complex
    extrapolation_error: float
    class_pair: str

    @property
    def abs_err(self) -> float:
        return abs(self.measured - self.predicted)

    @property
    def rel_err(self) -> float:
        return self.abs_err / abs(self.predicted) if self.predicted != 0 else math.inf


def measure_coupling(pairs: Sequence[tuple], radii: Sequence[int], z: float = 1.0,
                     workers: int = 1) -> list[tuple[complex, float]]:
    """Extrapolated direct ``C(u, v)`` for relative lattice pairs over box radii.

    Returns
    -------
    list of (limit, error)
    """
    pairs = [(_pt(a), _pt(b)) for a, b in pairs]
    targets = sorted({b for _, b in pairs})

    def one(r):
        box = Box(r, z)
        rows = box.system.kinv_rows([box.vertex(b) for b in targets])
        where = {b: i for i, b in enumerate(targets)}
        return np.array([rows[where[b]][box.vertex(a)] for a, b in pairs])

    vals = np.array(_map_radii(sorted(radii), one, workers))
    return [extrapolate(vals[:, j]) for j in range(len(pairs))]


def coupling_scaling_study(points: Sequence[tuple[complex, complex]],
                           deltas: Sequence[float] = (1 / 16, 1 / 32),
                           z: float = 1.0, rho: float = 0.5,
                           radius_factors: Sequence[int] = RADIUS_FACTORS,
                           offsets: Iterable[tuple[int, int]] = ((0, 0), (1, 0), (0, 1), (1, 1)),
                           workers: int = 1) -> list[CouplingScalingRow]:
    """Measured coupling function against :func:`scaling_prediction` over ``deltas``.

    Each macroscopic pair ``(z, w)`` is snapped to the lattice and ``w`` is
    shifted by every offset, so all class and row-sign combinations occur.
    """
    out = []
    for delta in deltas:
        m = 1.0 / delta
        lattice = []
        for zp, wp in points:
            if min(zp.imag, wp.imag) < rho:
                raise ValueError(f"points must have imaginary part >= rho = {rho}")
            a = LatticePoint(int(round(zp.real * m)), int(round(zp.imag * m)))
            for dx, dy in offsets:
                lattice.append((a, LatticePoint(int(round(wp.real * m)) + dx, int(round(wp.imag * m)) + dy)))
        radii = [2 * max(1, int(round(f / delta / 2))) for f in radius_factors]
        est = measure_coupling(lattice, radii, z, workers)
        for (a, b), (val, err) in zip(lattice, est):
            same = (a.x + a.y) % 2 == (b.x + b.y) % 2
            pred = scaling_prediction(delta * complex(a.x, a.y), delta * complex(b.x, b.y),
                                      same, (a.row_sign, b.row_sign), delta)
            out.append(CouplingScalingRow(delta, a, b, val, pred, err, "same" if same else "different"))
    return out


# --------------------------------------------------------------------------
# isoradial weight
# --------------------------------------------------------------------------

@dataclass
class IsoradialReport:
    z: float
    z2: float
    p: float
    v0_weights: list[float]
    expected: tuple[float, float]
    min_weight: float
    max_row_sum: float


def isoradial_sanity(z: float | None = None, width: int = 9, height: int = 5) -> IsoradialReport:
    """Even-walk transition weights out of a central real-line vertex.

    The default ``z`` is ``sqrt(tan(pi / 8))``.
    """
    if z is None:
        z = math.sqrt(math.tan(math.pi / 8))
    aug = augment(build_rectangle_domain(width, height), z)
    ker = even_walk_kernel(aug)
    centre = LatticePoint(width // 2, 0)
    row = ker.matrix[ker.locate(centre)].toarray().ravel()
    w = sorted(float(x) for x in row[row > 0])
    z2 = z * z
    return IsoradialReport(z, z2, aux_params(z).p, w, (z2 / (3 + 2 * z2), 1 / (3 + 2 * z2)),
                           float(ker.matrix.min()), float(ker.matrix.sum(axis=1).max()))
