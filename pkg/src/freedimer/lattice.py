"""
Half-plane domains, their triangle-row augmentations and the
dimer <-> boundary monomer-dimer bijection.

A domain is a finite set of integer points of the closed upper half-plane
whose intersection with the real line (the free boundary) is an interval.
Monomers live on the free boundary only.  Augmenting a domain glues a row
of triangles below the free boundary: the apex row sits at ``y = -1`` and
each free-boundary vertex reaches its one or two apexes through *legs* of
weight ``z``.  Perfect matchings of the augmented graph are then in
weight-preserving bijection with monomer-dimer covers of the domain.

Apex vertices sit at half-integer abscissae.  They are stored with an
integer label ``x`` meaning abscissa ``x - 1/2``, so every vertex of an
augmented graph is a pair of integers.  All matrix modules index vertices
in the lexicographic ``(y, x)`` order fixed here.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from functools import cached_property, total_ordering
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import connected_components, maximum_bipartite_matching

EXPLICIT = "explicit-z'"
FINITE = "finite-N"
_MODE_ALIASES = {
    "explicit-z'": EXPLICIT,
    "explicit-z′": EXPLICIT,
    "explicit-zprime": EXPLICIT,
    "explicit": EXPLICIT,
    "finite-N": FINITE,
    "finite-n": FINITE,
    "finite": FINITE,
}

# edge kinds of an augmented graph
LATTICE, SIDE, APEX_ROW, LEG = 0, 1, 2, 3
BLACK, WHITE = 0, 1


class DomainError(ValueError):
    """Raised when a vertex set violates the domain invariants."""

    def __init__(self, message: str, problems: Sequence[str] = ()):
        self.problems = list(problems)
        if self.problems:
            message = message + ":\n  " + "\n  ".join(self.problems)
        super().__init__(message)


class NoCover(ValueError):
    """Raised when a graph or triangle row admits no dimer cover."""


class InvalidCover(ValueError):
    """Raised for a configuration that is not a valid cover.

    Attributes
    ----------
    vertices : list of LatticePoint
        Vertices at which the configuration fails.
    """

    def __init__(self, message: str, vertices: Iterable = ()):
        self.vertices = sorted(set(vertices))
        if self.vertices:
            listed = ", ".join(f"({v.x},{v.y})" for v in self.vertices[:20])
            more = "" if len(self.vertices) <= 20 else ", ..."
            message = f"{message}; offending vertices: {listed}{more}"
        super().__init__(message)


@total_ordering
@dataclass(frozen=True)
class LatticePoint:
    """Integer vertex; row ``y = -1`` holds apexes at abscissa ``x - 1/2``."""

    x: int
    y: int

    def __lt__(self, other: "LatticePoint") -> bool:
        return (self.y, self.x) < (other.y, other.x)

    @property
    def is_apex(self) -> bool:
        return self.y < 0

    @property
    def colour(self) -> int:
        """``BLACK`` (0) or ``WHITE`` (1); the origin is black."""
        if self.y < 0:
            raise ValueError("apex vertices carry no bipartite class")
        return (self.x + self.y) % 2

    @property
    def row_sign(self) -> int:
        """Signed row parity ``(-1)**y``."""
        return -1 if self.y % 2 else 1

    @property
    def position(self) -> complex:
        """Planar embedding as a complex number."""
        if self.y < 0:
            return complex(self.x - 0.5, self.y)
        return complex(self.x, self.y)

    def __repr__(self) -> str:
        return f"LatticePoint({self.x}, {self.y})"


def _sorted_xy(points) -> np.ndarray:
    xy = np.asarray(points, dtype=np.int64).reshape(-1, 2)
    order = np.lexsort((xy[:, 0], xy[:, 1]))
    return np.ascontiguousarray(xy[order])


class _Grid:
    """Dense coordinate -> index lookup for a sorted point array."""

    def __init__(self, xy: np.ndarray):
        self.xmin = int(xy[:, 0].min())
        self.ymin = int(xy[:, 1].min())
        w = int(xy[:, 0].max()) - self.xmin + 1
        h = int(xy[:, 1].max()) - self.ymin + 1
        self.table = np.full((h, w), -1, dtype=np.int64)
        self.table[xy[:, 1] - self.ymin, xy[:, 0] - self.xmin] = np.arange(len(xy))

    def lookup(self, x, y):
        """Vectorised index lookup; -1 where absent."""
        x = np.asarray(x) - self.xmin
        y = np.asarray(y) - self.ymin
        h, w = self.table.shape
        ok = (x >= 0) & (x < w) & (y >= 0) & (y < h)
        out = np.full(np.shape(x), -1, dtype=np.int64)
        out[ok] = self.table[y[ok], x[ok]]
        return out


def _neighbour_edges(xy: np.ndarray, grid: _Grid) -> np.ndarray:
    """Nearest-neighbour pairs ``(i, j)`` with ``i < j`` in vertex order."""
    idx = np.arange(len(xy))
    right = grid.lookup(xy[:, 0] + 1, xy[:, 1])
    up = grid.lookup(xy[:, 0], xy[:, 1] + 1)
    pairs = [np.stack([idx[right >= 0], right[right >= 0]], axis=1),
             np.stack([idx[up >= 0], up[up >= 0]], axis=1)]
    edges = np.concatenate(pairs).astype(np.int64)
    edges.sort(axis=1)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return edges[order]


def _outer_face_vertices(xy: np.ndarray) -> np.ndarray:
    """Boolean mask of vertices incident to the unbounded face.

    Unit cells of the bounding box (padded by one) are joined when the
    lattice edge separating them is absent; the component of the padding
    is the outer face.
    """
    xmin, ymin = xy.min(axis=0)
    px = xy[:, 0] - xmin + 1
    py = xy[:, 1] - ymin + 1
    h = int(py.max()) + 2
    w = int(px.max()) + 2
    present = np.zeros((h, w), dtype=bool)
    present[py, px] = True
    ch, cw = h - 1, w - 1
    filled = present[:-1, :-1] & present[:-1, 1:] & present[1:, :-1] & present[1:, 1:]
    cell_id = np.arange(ch * cw).reshape(ch, cw)
    # horizontal neighbours (i, j) -- (i, j+1) split by the vertical edge at x = j+1
    hblock = present[:-1, 1:-1] & present[1:, 1:-1]
    hopen = ~hblock & ~filled[:, :-1] & ~filled[:, 1:]
    # vertical neighbours (i, j) -- (i+1, j) split by the horizontal edge at y = i+1
    vblock = present[1:-1, :-1] & present[1:-1, 1:]
    vopen = ~vblock & ~filled[:-1, :] & ~filled[1:, :]
    rows = np.concatenate([cell_id[:, :-1][hopen], cell_id[:-1, :][vopen]])
    cols = np.concatenate([cell_id[:, 1:][hopen], cell_id[1:, :][vopen]])
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(ch * cw, ch * cw))
    _, labels = connected_components(adj, directed=False)
    outer = (labels == labels[0]) & ~filled.ravel()
    outer = outer.reshape(ch, cw)
    touch = (outer[py - 1, px - 1] | outer[py - 1, px]
             | outer[py, px - 1] | outer[py, px])
    return touch


@dataclass(frozen=True, eq=False)
class Domain:
    """A validated half-plane domain.

    Parameters
    ----------
    xy : ndarray of shape (n, 2)
        Vertex coordinates sorted in ``(y, x)`` order.
    edges : ndarray of shape (m, 2)
        Nearest-neighbour pairs as index pairs ``i < j``.
    free_boundary : ndarray
        Indices of the vertices with ``y = 0``, left to right.
    monomer_corners : tuple of LatticePoint
        Leftmost and rightmost free-boundary vertices.
    dimer_corners : tuple of LatticePoint
        Outer-face vertices of degree 2 or 4 other than the monomer corners.
    """

    xy: np.ndarray
    edges: np.ndarray
    free_boundary: np.ndarray
    monomer_corners: tuple
    dimer_corners: tuple
    strict: bool = True

    @classmethod
    def from_points(cls, points, strict: bool = True) -> "Domain":
        """Build and validate a domain from integer points.

        ``strict=False`` waives only the dimer-corner colour requirement,
        which is useful for degenerate test graphs such as a single row.
        """
        raw = np.asarray(list(points) if not isinstance(points, np.ndarray) else points)
        if raw.size == 0:
            raise DomainError("empty vertex set")
        if raw.ndim != 2 or raw.shape[1] != 2:
            raise DomainError("vertices must be (x, y) pairs")
        if not np.all(np.equal(np.mod(raw, 1), 0)):
            raise DomainError("vertex coordinates must be integers")
        xy = _sorted_xy(raw)
        problems = []
        dup = np.all(xy[1:] == xy[:-1], axis=1)
        if dup.any():
            for x, y in xy[1:][dup][:10]:
                problems.append(f"duplicate vertex ({x}, {y})")
        if (xy[:, 1] < 0).any():
            problems.append("vertices below the real line")
        if problems:
            raise DomainError("invalid domain", problems)

        grid = _Grid(xy)
        edges = _neighbour_edges(xy, grid)
        n = len(xy)
        fb = np.flatnonzero(xy[:, 1] == 0)
        if len(fb) == 0:
            problems.append("free boundary (y = 0) is empty")
        elif xy[fb[-1], 0] - xy[fb[0], 0] != len(fb) - 1:
            problems.append("free boundary is not a connected interval")
        adj = coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
        ncomp, _ = connected_components(adj, directed=False)
        if ncomp != 1:
            problems.append(f"graph has {ncomp} connected components")
        colour = (xy[:, 0] + xy[:, 1]) % 2
        nb, nw = int((colour == 0).sum()), int((colour == 1).sum())
        if nb != nw:
            problems.append(f"unbalanced colours: {nb} black vs {nw} white")
        elif not _has_perfect_matching(xy, edges):
            problems.append("no dimer cover exists")

        corners, dcorners = (), ()
        if len(fb):
            corners = (LatticePoint(int(xy[fb[0], 0]), 0), LatticePoint(int(xy[fb[-1], 0]), 0))
            deg = np.bincount(edges.ravel(), minlength=n)
            outer = _outer_face_vertices(xy)
            cand = outer & ((deg == 2) | (deg == 4))
            cand[[fb[0], fb[-1]]] = False
            dcorners = tuple(LatticePoint(int(x), int(y)) for x, y in xy[cand])
            if strict:
                cols = {c.colour for c in dcorners}
                if BLACK not in cols:
                    problems.append("no black dimer-corner")
                if WHITE not in cols:
                    problems.append("no white dimer-corner")
        if problems:
            raise DomainError("invalid domain", problems)
        return cls(xy=xy, edges=edges, free_boundary=fb, monomer_corners=corners,
                   dimer_corners=dcorners, strict=strict)

    def __len__(self) -> int:
        return len(self.xy)

    @cached_property
    def vertices(self) -> tuple:
        return tuple(LatticePoint(int(x), int(y)) for x, y in self.xy)

    @cached_property
    def _grid(self) -> _Grid:
        return _Grid(self.xy)

    def index(self, v) -> int:
        x, y = (v.x, v.y) if isinstance(v, LatticePoint) else v
        i = int(self._grid.lookup(np.array([x]), np.array([y]))[0])
        if i < 0:
            raise KeyError(f"({x}, {y}) is not a vertex of the domain")
        return i

    def __contains__(self, v) -> bool:
        try:
            self.index(v)
        except KeyError:
            return False
        return True

    @property
    def width(self) -> int:
        """Number of free-boundary vertices."""
        return len(self.free_boundary)

    @cached_property
    def colours(self) -> np.ndarray:
        return (self.xy[:, 0] + self.xy[:, 1]) % 2


def _has_perfect_matching(xy: np.ndarray, edges: np.ndarray) -> bool:
    colour = (xy[:, 0] + xy[:, 1]) % 2
    black = np.flatnonzero(colour == 0)
    white = np.flatnonzero(colour == 1)
    pos_b = np.full(len(xy), -1)
    pos_b[black] = np.arange(len(black))
    pos_w = np.full(len(xy), -1)
    pos_w[white] = np.arange(len(white))
    a, b = edges[:, 0], edges[:, 1]
    bi = np.where(colour[a] == 0, pos_b[a], pos_b[b])
    wi = np.where(colour[a] == 0, pos_w[b], pos_w[a])
    bip = csr_matrix((np.ones(len(edges)), (bi, wi)), shape=(len(black), len(white)))
    match = maximum_bipartite_matching(bip, perm_type="column")
    return bool((match >= 0).all())


def build_rectangle_domain(width: int, height: int) -> Domain:
    """Odd rectangle with the right part of its top row removed.

    The ``r`` rightmost top-row vertices are deleted, ``r`` being the odd
    member of ``{floor(width/2), ceil(width/2)}``; this is the choice that
    balances the colours.

    Parameters
    ----------
    width, height : int
        Odd side lengths, at least 3.

    Returns
    -------
    Domain
    """
    for name, val in (("width", width), ("height", height)):
        if int(val) != val:
            raise DomainError(f"{name} must be an integer")
        if val < 3:
            raise DomainError(f"{name} must be at least 3, got {val}")
        if val % 2 == 0:
            raise DomainError(f"{name} must be odd, got {val}")
    width, height = int(width), int(height)
    r = width // 2 if (width // 2) % 2 == 1 else width // 2 + 1
    xs, ys = np.meshgrid(np.arange(width), np.arange(height))
    keep = ~((ys == height - 1) & (xs >= width - r))
    pts = np.stack([xs[keep], ys[keep]], axis=1)
    return Domain.from_points(pts)


def parse_domain_spec(spec) -> Domain:
    """Domain from a ``rect:WxH`` string, a JSON mapping or a JSON file path."""
    if isinstance(spec, Domain):
        return spec
    if isinstance(spec, dict):
        return _domain_from_mapping(spec, source="<mapping>")
    text = str(spec)
    m = re.fullmatch(r"rect(?:angle)?:(\d+)x(\d+)", text.strip())
    if m:
        return build_rectangle_domain(int(m.group(1)), int(m.group(2)))
    path = Path(text)
    if not path.exists():
        raise DomainError(f"unrecognised domain spec {text!r} (use rect:WxH or a JSON file)")
    return load_domain(path)


def load_domain(path) -> Domain:
    """Read a domain JSON file.

    Accepted shapes are ``{"type": "rectangle", "width": W, "height": H}``
    and ``{"type": "explicit", "vertices": [[x, y], ...]}``.
    """
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DomainError(f"{path}:{exc.lineno}:{exc.colno}: malformed JSON ({exc.msg})") from exc
    return _domain_from_mapping(data, source=str(path), text=text)


def _line_of(text: str | None, needle: str) -> str:
    if not text:
        return ""
    for lineno, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return f":{lineno}"
    return ""


def _domain_from_mapping(data, source: str, text: str | None = None) -> Domain:
    if not isinstance(data, dict) or "type" not in data:
        raise DomainError(f"{source}: expected an object with a 'type' field")
    kind = data["type"]
    if kind == "rectangle":
        try:
            return build_rectangle_domain(data["width"], data["height"])
        except KeyError as exc:
            raise DomainError(f"{source}: rectangle needs field {exc.args[0]!r}") from exc
        except DomainError as exc:
            raise DomainError(f"{source}{_line_of(text, 'width')}: {exc}") from exc
    if kind == "explicit":
        verts = data.get("vertices")
        if not isinstance(verts, list) or not verts:
            raise DomainError(f"{source}: 'vertices' must be a non-empty list")
        problems = []
        for i, v in enumerate(verts):
            if (not isinstance(v, (list, tuple)) or len(v) != 2
                    or not all(isinstance(c, int) and not isinstance(c, bool) for c in v)):
                problems.append(f"{source}{_line_of(text, json.dumps(v))}: vertices[{i}] = {v!r} is not an integer pair")
            elif v[1] < 0:
                problems.append(f"{source}{_line_of(text, json.dumps(v))}: vertices[{i}] = {v!r} lies below the real line")
        if problems:
            raise DomainError("invalid domain file", problems)
        try:
            return Domain.from_points(verts)
        except DomainError as exc:
            raise DomainError(f"{source}: {exc}") from exc
    raise DomainError(f"{source}: unknown domain type {kind!r}")


def corner_weight(z: float) -> float:
    """Corner monomer weight ``z' = z/2 + sqrt(1 + z**2/4)``."""
    if not z > 0:
        raise ValueError(f"z must be positive, got {z}")
    return z / 2 + math.sqrt(1 + z * z / 4)


def segment_partition_function(n_edges: int, z: float) -> float:
    """Monomer-dimer partition function of a path of ``n_edges`` sites.

    Satisfies ``Z_0 = 1``, ``Z_1 = z`` and ``Z_{n+1} = z Z_n + Z_{n-1}``, so
    that ``Z_{n+1} / Z_n`` tends to :func:`corner_weight`.
    """
    if n_edges < 0:
        raise ValueError("n_edges must be non-negative")
    prev, cur = 1.0, z
    if n_edges == 0:
        return prev
    for _ in range(n_edges - 1):
        prev, cur = cur, z * cur + prev
    return cur


def triangle_count(width: int) -> int:
    """Triangle count ``k`` for a free boundary of ``width`` vertices.

    Of the candidates ``2w - 1`` and ``2w - 2`` exactly one yields an even
    number ``k - floor(k/2) + 1`` of apexes.
    """
    for k in (2 * width - 1, 2 * width - 2):
        if k >= 0 and (k - k // 2 + 1) % 2 == 0:
            return k
    raise NoCover(f"no admissible triangle row for width {width}")


def _zigzag(k: int) -> list[tuple[str, int]]:
    """Vertices of the triangle row ``T_k`` left to right as (kind, index)."""
    seq, t, b = [], 0, 0
    top = k % 2 == 0
    for _ in range(k + 2):
        if top:
            seq.append(("t", t))
            t += 1
        else:
            seq.append(("b", b))
            b += 1
        top = not top
    return seq


def triangle_row_edges(k: int) -> list[tuple[int, int]]:
    """Edges of ``T_k`` (legs and bottom horizontals) on zigzag positions."""
    seq = _zigzag(k)
    edges = [(i, i + 1) for i in range(k + 1)]
    bottoms = [i for i, (kind, _) in enumerate(seq) if kind == "b"]
    edges += [(a, b) for a, b in zip(bottoms, bottoms[1:])]
    return sorted(edges)


def complete_triangle_row(k: int, removed: Iterable[int]) -> list[tuple[int, int]]:
    """Unique dimer cover of ``T_k`` minus a set of top vertices.

    Parameters
    ----------
    k : int
        Number of triangles; the leftmost one points down when ``k`` is even.
    removed : iterable of int
        Indices (left to right, from 0) of removed top vertices.

    Returns
    -------
    list of (int, int)
        Matched pairs as zigzag positions ``0 .. k+1``.

    Raises
    ------
    NoCover
        If ``len(removed)`` and ``k`` have different parity.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    seq = _zigzag(k)
    ntop = k // 2 + 1
    removed = set(int(r) for r in removed)
    if any(r < 0 or r >= ntop for r in removed):
        raise ValueError(f"removed top indices must lie in [0, {ntop})")
    if (len(removed) - k) % 2:
        raise NoCover(f"T_{k} minus {len(removed)} top vertices has odd size")
    dead = {i for i, (kind, j) in enumerate(seq) if kind == "t" and j in removed}
    matched: set[int] = set()
    cover = []
    n = len(seq)
    for i in range(n):
        if i in dead or i in matched:
            continue
        if seq[i][0] == "t":
            partner = i + 1
        else:
            partner = i + 1 if (i + 1 < n and i + 1 not in dead) else i + 2
        if partner >= n or partner in matched or partner in dead:
            raise NoCover(f"forced completion of T_{k} gets stuck at position {i}")
        matched.update((i, partner))
        cover.append((i, partner))
    return cover


@dataclass(frozen=True, eq=False)
class AugmentedDomain:
    """Domain plus triangle row and ``2 * n_side`` side triangles per side.

    Attributes
    ----------
    base : Domain
    z : float
        Leg weight (boundary monomer weight).
    n_side : int
        Extra top vertices (and apexes) appended on each side.
    corner_weight_mode : str
        ``"explicit-z'"`` puts weight ``z'`` on the corner legs (only for
        ``n_side == 0``); ``"finite-N"`` keeps ``z`` everywhere.
    xy : ndarray of shape (n, 2)
        All vertices in ``(y, x)`` order; apexes first.
    edges : ndarray of shape (m, 2)
        Index pairs ``i < j``.
    weights : ndarray of shape (m,)
    kinds : ndarray of shape (m,)
        ``LATTICE``, ``SIDE``, ``APEX_ROW`` or ``LEG``.
    """

    base: Domain
    z: float
    n_side: int
    corner_weight_mode: str
    xy: np.ndarray
    edges: np.ndarray
    weights: np.ndarray
    kinds: np.ndarray
    k: int

    def __len__(self) -> int:
        return len(self.xy)

    @cached_property
    def vertices(self) -> tuple:
        return tuple(LatticePoint(int(x), int(y)) for x, y in self.xy)

    @cached_property
    def _grid(self) -> _Grid:
        return _Grid(self.xy)

    def index(self, v) -> int:
        x, y = (v.x, v.y) if isinstance(v, LatticePoint) else v
        i = int(self._grid.lookup(np.array([x]), np.array([y]))[0])
        if i < 0:
            raise KeyError(f"({x}, {y}) is not a vertex of the augmented graph")
        return i

    def indices(self, points) -> np.ndarray:
        pts = np.asarray([(p.x, p.y) if isinstance(p, LatticePoint) else p for p in points],
                         dtype=np.int64).reshape(-1, 2)
        out = self._grid.lookup(pts[:, 0], pts[:, 1])
        if (out < 0).any():
            bad = pts[out < 0][0]
            raise KeyError(f"({bad[0]}, {bad[1]}) is not a vertex of the augmented graph")
        return out

    @cached_property
    def positions(self) -> np.ndarray:
        pos = self.xy[:, 0].astype(float) + 1j * self.xy[:, 1]
        return np.where(self.xy[:, 1] < 0, pos - 0.5, pos)

    @cached_property
    def is_apex(self) -> np.ndarray:
        return self.xy[:, 1] < 0

    @cached_property
    def in_base(self) -> np.ndarray:
        """Mask of vertices belonging to the base domain."""
        idx = self.base._grid.lookup(self.xy[:, 0], self.xy[:, 1])
        return (idx >= 0) & (self.xy[:, 1] >= 0)

    @cached_property
    def odd_rows(self) -> np.ndarray:
        """Mask of vertices in odd rows, the apex row included."""
        return self.xy[:, 1] % 2 == 1

    @cached_property
    def edge_lookup(self) -> dict:
        return {(int(a), int(b)): e for e, (a, b) in enumerate(self.edges)}

    def edge_id(self, u, v) -> int:
        i, j = self.index(u), self.index(v)
        key = (min(i, j), max(i, j))
        try:
            return self.edge_lookup[key]
        except KeyError:
            raise KeyError(f"{u} and {v} are not adjacent") from None

    @cached_property
    def neighbours(self) -> list:
        nbrs = [[] for _ in range(len(self.xy))]
        for a, b in self.edges:
            nbrs[a].append(int(b))
            nbrs[b].append(int(a))
        return nbrs

    @cached_property
    def row_zero(self) -> np.ndarray:
        """Indices of all ``y = 0`` vertices, left to right."""
        return np.flatnonzero(self.xy[:, 1] == 0)

    @cached_property
    def apexes(self) -> np.ndarray:
        return np.flatnonzero(self.xy[:, 1] == -1)

    @cached_property
    def monomer_weights(self) -> dict:
        """Map row-zero vertex index -> weight of a monomer there."""
        out = {}
        legs = self.kinds == LEG
        for (a, b), w in zip(self.edges[legs], self.weights[legs]):
            top = a if self.xy[a, 1] == 0 else b
            out[int(top)] = float(w)
        return out

    def zigzag(self) -> list[int]:
        """Triangle-row vertices (row 0 and apexes) sorted by abscissa."""
        idx = np.concatenate([self.row_zero, self.apexes])
        pos = self.positions[idx].real
        return [int(i) for i in idx[np.argsort(pos, kind="stable")]]


def _normalise_mode(mode: str | None, n_side: int) -> str:
    if mode is None:
        return EXPLICIT if n_side == 0 else FINITE
    try:
        mode = _MODE_ALIASES[mode]
    except KeyError:
        raise ValueError(f"unknown corner_weight_mode {mode!r}") from None
    if mode == EXPLICIT and n_side != 0:
        raise ValueError("explicit-z' mode requires n_side = 0")
    return mode


def augment(domain: Domain, z: float, n_side: int = 0,
            corner_weight_mode: str | None = None) -> AugmentedDomain:
    """Glue the triangle row (and side triangles) below a domain.

    Parameters
    ----------
    domain : Domain
    z : float
        Positive leg weight.
    n_side : int, optional
        Number of extra top vertices per side; each side gains ``2 * n_side``
        triangles.
    corner_weight_mode : str, optional
        Defaults to explicit ``z'`` corners when ``n_side == 0`` and to
        plain ``z`` legs otherwise.

    Returns
    -------
    AugmentedDomain
    """
    if not (isinstance(z, (int, float, np.floating)) and z > 0 and math.isfinite(z)):
        raise ValueError(f"z must be a positive finite number, got {z!r}")
    if int(n_side) != n_side or n_side < 0:
        raise ValueError(f"n_side must be a non-negative integer, got {n_side!r}")
    n_side = int(n_side)
    mode = _normalise_mode(corner_weight_mode, n_side)
    z = float(z)
    fb = domain.xy[domain.free_boundary]
    a, b = int(fb[0, 0]), int(fb[-1, 0])
    width = b - a + 1
    k = triangle_count(width)
    first_apex = a if k % 2 else a + 1
    tops = np.arange(a - n_side, b + n_side + 1)
    apex_labels = np.arange(first_apex - n_side, b + 2 + n_side)
    side_tops = tops[(tops < a) | (tops > b)]
    pts = np.concatenate([
        domain.xy,
        np.stack([side_tops, np.zeros_like(side_tops)], axis=1),
        np.stack([apex_labels, -np.ones_like(apex_labels)], axis=1),
    ])
    xy = _sorted_xy(pts)
    grid = _Grid(xy)

    base_idx = grid.lookup(domain.xy[:, 0], domain.xy[:, 1])
    e_lat = base_idx[domain.edges]
    t_idx = grid.lookup(tops, np.zeros_like(tops))
    e_side = np.stack([t_idx[:-1], t_idx[1:]], axis=1)
    in_g = (tops[:-1] >= a) & (tops[1:] <= b)
    e_side = e_side[~in_g]
    a_idx = grid.lookup(apex_labels, -np.ones_like(apex_labels))
    e_apex = np.stack([a_idx[:-1], a_idx[1:]], axis=1)
    legs, leg_w = [], []
    zp = corner_weight(z)
    for x, ti in zip(tops, t_idx):
        corner = mode == EXPLICIT and x in (a, b)
        for lab in (x, x + 1):
            ai = grid.lookup(np.array([lab]), np.array([-1]))[0]
            if ai >= 0:
                legs.append((ai, ti))
                leg_w.append(zp if corner else z)
    e_leg = np.asarray(legs, dtype=np.int64).reshape(-1, 2)
    edges = np.concatenate([e_lat, e_side, e_apex, e_leg]).astype(np.int64)
    kinds = np.concatenate([np.full(len(e_lat), LATTICE), np.full(len(e_side), SIDE),
                            np.full(len(e_apex), APEX_ROW), np.full(len(e_leg), LEG)])
    weights = np.concatenate([np.ones(len(e_lat) + len(e_side) + len(e_apex)),
                              np.asarray(leg_w, dtype=float)])
    edges.sort(axis=1)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    n_apex = len(apex_labels)
    if (n_apex - (k - k // 2 + 1) - 2 * n_side) != 0:
        raise AssertionError("apex count inconsistent with triangle count")
    return AugmentedDomain(base=domain, z=z, n_side=n_side, corner_weight_mode=mode, xy=xy,
                           edges=edges[order], weights=weights[order], kinds=kinds[order], k=k)


@dataclass(frozen=True)
class MdCover:
    """Boundary monomer-dimer configuration.

    Attributes
    ----------
    dimers : frozenset of (LatticePoint, LatticePoint)
        Each pair ordered by vertex order.
    monomers : frozenset of LatticePoint
        Uncovered row-zero vertices.
    """

    dimers: frozenset
    monomers: frozenset

    def weight(self, aug: AugmentedDomain) -> float:
        """Product of dimer weights and monomer weights."""
        w = 1.0
        for u, v in self.dimers:
            w *= aug.weights[aug.edge_id(u, v)]
        mw = aug.monomer_weights
        for m in self.monomers:
            w *= mw[aug.index(m)]
        return w

    def validate(self, aug: AugmentedDomain) -> None:
        """Raise :class:`InvalidCover` unless this is a valid cover of ``aug``."""
        count: dict = {}
        bad = []
        for u, v in self.dimers:
            try:
                e = aug.edge_id(u, v)
            except KeyError:
                bad += [u, v]
                continue
            if aug.kinds[e] in (LEG, APEX_ROW):
                bad += [u, v]
            for w in (u, v):
                count[w] = count.get(w, 0) + 1
        mw = aug.monomer_weights
        for m in self.monomers:
            if m.y != 0 or m not in _md_vertex_set(aug) or aug.index(m) not in mw:
                bad.append(m)
            count[m] = count.get(m, 0) + 1
        for v in _md_vertex_set(aug):
            if count.get(v, 0) != 1:
                bad.append(v)
        bad += [v for v in count if v not in _md_vertex_set(aug)]
        if bad:
            raise InvalidCover("not a monomer-dimer cover", bad)


def _md_vertex_set(aug: AugmentedDomain) -> frozenset:
    cached = aug.__dict__.get("_md_vertices")
    if cached is None:
        cached = frozenset(v for v in aug.vertices if not v.is_apex)
        aug.__dict__["_md_vertices"] = cached
    return cached


def _pair(u: LatticePoint, v: LatticePoint) -> tuple:
    return (u, v) if u < v else (v, u)


def matching_weight(aug: AugmentedDomain, matching) -> float:
    """Product of edge weights of a perfect matching given as point pairs."""
    w = 1.0
    for u, v in matching:
        w *= aug.weights[aug.edge_id(u, v)]
    return w


def validate_matching(aug: AugmentedDomain, matching) -> None:
    """Raise :class:`InvalidCover` unless ``matching`` is a perfect matching."""
    count: dict = {}
    bad = []
    for u, v in matching:
        try:
            aug.edge_id(u, v)
        except KeyError:
            bad += [u, v]
        for w in (u, v):
            count[w] = count.get(w, 0) + 1
    for v in aug.vertices:
        if count.get(v, 0) != 1:
            bad.append(v)
    if bad:
        raise InvalidCover("not a perfect matching of the augmented graph", bad)


def cover_bijection(aug: AugmentedDomain, matching) -> MdCover:
    """Monomer-dimer cover corresponding to a perfect matching of ``aug``.

    Dimers off the triangle row are kept; a row-zero vertex matched to an
    apex becomes a monomer.  Weights are preserved because a monomer's
    weight is the weight of its leg.
    """
    validate_matching(aug, matching)
    dimers, monomers = set(), set()
    for u, v in matching:
        if u.is_apex and v.is_apex:
            continue
        if u.is_apex or v.is_apex:
            monomers.add(v if u.is_apex else u)
        else:
            dimers.add(_pair(u, v))
    return MdCover(frozenset(dimers), frozenset(monomers))


def inverse_cover_bijection(aug: AugmentedDomain, cover: MdCover) -> frozenset:
    """Perfect matching of ``aug`` corresponding to a monomer-dimer cover.

    The triangle row is completed by :func:`complete_triangle_row` with the
    dimer-covered row-zero vertices removed.
    """
    cover.validate(aug)
    zig = aug.zigzag()
    k_total = len(zig) - 2
    tops = [i for i in zig if not aug.is_apex[i]]
    mon = {aug.index(m) for m in cover.monomers}
    removed = [j for j, i in enumerate(tops) if i not in mon]
    row = complete_triangle_row(k_total, removed)
    verts = aug.vertices
    pairs = set(cover.dimers)
    for p, q in row:
        pairs.add(_pair(verts[zig[p]], verts[zig[q]]))
    return frozenset(pairs)
