"""
Enumeration oracle, exact and Metropolis samplers, and walk experiments.

Randomness always flows from an :class:`RngStream`.  Fixed-size kernels
(sequential sampling, Metropolis sweeps, single paths) consume uniforms
drawn up front, so the numba and fallback paths see identical inputs.
Variable-length experiments (killed walks, coloured walks, couplings) seed
an in-kernel Mersenne Twister per trial from the stream; numba implements
the same generator as numpy's legacy one, so both paths agree bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
import scipy.sparse as sp
from scipy import stats
from scipy.optimize import minimize_scalar
from scipy.sparse.csgraph import maximum_bipartite_matching

from . import _accel
from .kasteleyn import KasteleynSystem
from .lattice import (APEX_ROW, BLACK, LEG, WHITE, AugmentedDomain, Domain, LatticePoint,
                      MdCover, cover_bijection)
from .walks import WalkKernel, effective_jump_weights

ENUMERATION_CAP = 24
PROB_TOL = 1e-9
JUMP_TOL = 1e-14
CHUNK = 1 << 20


class SizeCapExceeded(ValueError):
    """Domain too large for brute-force enumeration."""


class SamplerBreakdown(ArithmeticError):
    """A conditional probability left ``[-tol, 1 + tol]`` during sampling.

    Attributes
    ----------
    sample, step, vertex : int
    probabilities : ndarray
        The conditional law that was being sampled.
    """

    def __init__(self, message: str, sample: int, step: int, vertex: int, probabilities):
        self.sample, self.step, self.vertex = sample, step, vertex
        self.probabilities = np.asarray(probabilities)
        super().__init__(f"{message} (sample {sample}, step {step}, vertex {vertex}, "
                         f"conditional law {np.round(self.probabilities, 12).tolist()})")


# --------------------------------------------------------------------------
# random streams
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by ``(seed, stream_id)``.

    Every call to :meth:`generator` restarts the stream, so identical keys
    reproduce identical draws.  :meth:`substream` derives independent
    streams for parallel workers.
    """

    seed: int
    stream_id: int = 0
    path: tuple = ()

    def __post_init__(self):
        if int(self.seed) != self.seed or not 0 <= self.seed < 2 ** 64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        if int(self.stream_id) != self.stream_id or self.stream_id < 0:
            raise ValueError(f"stream_id must be a non-negative integer, got {self.stream_id!r}")

    def generator(self) -> np.random.Generator:
        # fixed-width words plus the path length: SeedSequence ignores trailing zeros
        seed = int(self.seed)
        key = [seed & 0xFFFFFFFF, seed >> 32, int(self.stream_id), len(self.path), *map(int, self.path)]
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))

    def substream(self, j: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id, self.path + (int(j),))

    def seeds(self, n: int) -> np.ndarray:
        """``n`` 32-bit seeds for in-kernel generators."""
        return self.generator().integers(0, 2 ** 32 - 1, size=n, dtype=np.int64)


def as_stream(rng) -> RngStream:
    """Accept an :class:`RngStream` or an integer seed."""
    if isinstance(rng, RngStream):
        return rng
    return RngStream(int(rng))


# --------------------------------------------------------------------------
# monomer-dimer state space
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MdGraph:
    """Monomer-dimer view of an augmented graph.

    ``mate`` arrays are indexed by augmented vertex; entries are the partner
    index, ``-1`` for a monomer and ``-2`` on apexes.
    """

    aug: AugmentedDomain
    md: np.ndarray
    edges: np.ndarray
    row0: np.ndarray
    row0_weights: np.ndarray
    faces: np.ndarray

    @staticmethod
    def of(aug: AugmentedDomain) -> "MdGraph":
        cached = aug.__dict__.get("_mdgraph")
        if cached is not None:
            return cached
        md = np.flatnonzero(~aug.is_apex)
        keep = (aug.kinds != LEG) & (aug.kinds != APEX_ROW)
        edges = aug.edges[keep]
        row0 = aug.row_zero
        mw = aug.monomer_weights
        weights = np.array([mw[int(i)] for i in row0])
        es = {(int(a), int(b)) for a, b in edges}
        faces = []
        for i in md:
            x, y = aug.xy[i]
            try:
                b, c, d = aug.indices([(x + 1, y), (x + 1, y + 1), (x, y + 1)])
            except KeyError:
                continue
            a = int(i)
            sides = [(a, b), (b, c), (d, c), (a, d)]
            if all((min(p, q), max(p, q)) in es for p, q in sides):
                faces.append((a, b, c, d))
        out = MdGraph(aug=aug, md=md, edges=edges, row0=row0, row0_weights=weights,
                      faces=np.asarray(faces, dtype=np.int64).reshape(-1, 4))
        aug.__dict__["_mdgraph"] = out
        return out

    def empty_mate(self) -> np.ndarray:
        mate = np.full(len(self.aug), -2, dtype=np.int64)
        mate[self.md] = -1
        return mate

    def mate_of(self, cover: MdCover) -> np.ndarray:
        mate = self.empty_mate()
        for u, v in cover.dimers:
            i, j = self.aug.index(u), self.aug.index(v)
            mate[i], mate[j] = j, i
        return mate

    def cover_of(self, mate: np.ndarray) -> MdCover:
        verts = self.aug.vertices
        dimers, monomers = set(), set()
        for i in self.md:
            j = int(mate[i])
            if j == -1:
                monomers.add(verts[i])
            elif i < j:
                dimers.add((verts[i], verts[j]))
        return MdCover(frozenset(dimers), frozenset(monomers))

    def key(self, mate: np.ndarray) -> tuple:
        return tuple(int(v) for v in mate[self.md])

    def keys(self, mates: np.ndarray) -> list:
        sub = np.asarray(mates)[:, self.md]
        return [tuple(r) for r in sub.tolist()]

    def from_partners(self, partners: np.ndarray) -> np.ndarray:
        """Convert augmented perfect matchings into mate arrays (batched)."""
        partners = np.atleast_2d(partners)
        mates = np.where(self.aug.is_apex[partners], -1, partners)
        mates[:, self.aug.is_apex] = -2
        return mates

    def weight(self, mate: np.ndarray) -> float:
        w = 1.0
        for i, wi in zip(self.row0, self.row0_weights):
            if mate[i] == -1:
                w *= wi
        return w

    def monomer_count(self, mates: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(mates)[:, self.row0] == -1).sum(axis=1)

    def initial_mate(self) -> np.ndarray:
        """A cover built from a maximum matching, unmatched row-zero vertices as monomers."""
        aug = self.aug
        colour = (aug.xy[:, 0] + aug.xy[:, 1]) % 2
        blacks = self.md[colour[self.md] == BLACK]
        whites = self.md[colour[self.md] == WHITE]
        bpos = {int(v): i for i, v in enumerate(blacks)}
        wpos = {int(v): i for i, v in enumerate(whites)}
        rows, cols = [], []
        for a, b in self.edges:
            a, b = int(a), int(b)
            if a in wpos:
                a, b = b, a
            rows.append(bpos[a])
            cols.append(wpos[b])
        graph = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(blacks), len(whites)))
        match = maximum_bipartite_matching(graph, perm_type="column")
        mate = self.empty_mate()
        for i, j in enumerate(match):
            if j >= 0:
                mate[blacks[i]], mate[whites[j]] = whites[j], blacks[i]
        loose = self.md[mate[self.md] == -1]
        if (aug.xy[loose, 1] != 0).any():
            raise ValueError("no monomer-dimer cover: an interior vertex cannot be matched")
        return mate


# --------------------------------------------------------------------------
# enumeration oracle
# --------------------------------------------------------------------------

def _matchings(n: int, edges: np.ndarray) -> np.ndarray:
    return _accel.enumerate_matchings_kernel(n, np.asarray(edges, dtype=np.int64).reshape(-1, 2))


def enumerate_covers(aug, cap: int = ENUMERATION_CAP, pure_dimer: bool = False) -> list:
    """All boundary monomer-dimer covers with their weights.

    Parameters
    ----------
    aug : AugmentedDomain or Domain
        A plain :class:`Domain` implies ``pure_dimer``.
    cap : int
        Maximum number of monomer-dimer vertices.
    pure_dimer : bool
        Enumerate the perfect matchings of the base domain only (the
        ``z -> 0`` limit), each with weight 1.

    Returns
    -------
    list of (MdCover, float)
    """
    if isinstance(aug, Domain):
        pure_dimer, base = True, aug
    else:
        base = aug.base
    if pure_dimer:
        if len(base) > cap:
            raise SizeCapExceeded(f"{len(base)} vertices exceed the enumeration cap {cap}")
        verts = base.vertices
        out = []
        for row in _matchings(len(base), base.edges):
            dimers = frozenset((verts[a], verts[b]) for a, b in base.edges[row])
            out.append((MdCover(dimers, frozenset()), 1.0))
        return out
    n_md = int((~aug.is_apex).sum())
    if n_md > cap:
        raise SizeCapExceeded(f"{n_md} vertices exceed the enumeration cap {cap}")
    verts = aug.vertices
    out = []
    for row in _matchings(len(aug), aug.edges):
        matching = [(verts[a], verts[b]) for a, b in aug.edges[row]]
        w = float(np.prod(aug.weights[row]))
        out.append((cover_bijection(aug, matching), w))
    return out


def cover_law(aug: AugmentedDomain, cap: int = ENUMERATION_CAP) -> dict:
    """``mate key -> probability`` from enumeration."""
    g = MdGraph.of(aug)
    covers = enumerate_covers(aug, cap=cap)
    total = sum(w for _, w in covers)
    return {g.key(g.mate_of(c)): w / total for c, w in covers}


def goodness_of_fit(keys: Sequence, law: dict, min_expected: float = 5.0) -> tuple[float, float]:
    """Chi-square test of observed keys against an exact law.

    Bins with expected count below ``min_expected`` are pooled.  A key
    outside the support gives p = 0.

    Returns
    -------
    (statistic, p_value)
    """
    n = len(keys)
    counts: dict = {}
    for k in keys:
        counts[k] = counts.get(k, 0) + 1
    if any(k not in law for k in counts):
        return math.inf, 0.0
    support = list(law)
    exp = np.array([law[k] * n for k in support])
    obs = np.array([counts.get(k, 0) for k in support], dtype=float)
    small = exp < min_expected
    if small.any():
        exp = np.append(exp[~small], exp[small].sum())
        obs = np.append(obs[~small], obs[small].sum())
    if len(exp) < 2:
        return 0.0, 1.0
    res = stats.chisquare(obs, exp * obs.sum() / exp.sum())
    return float(res.statistic), float(res.pvalue)


# --------------------------------------------------------------------------
# exact sampler: sequential conditioning on the inverse Kasteleyn matrix
# --------------------------------------------------------------------------

@_accel.njit
def _sequential_nb(m0, kmat, indptr, nbr, unif, out, diag):
    n = m0.shape[0]
    m = np.empty_like(m0)
    alive = np.empty(n, dtype=np.bool_)
    probs = np.empty(n, dtype=np.float64)
    cand = np.empty(n, dtype=np.int64)
    for s in range(unif.shape[0]):
        m[:, :] = m0
        alive[:] = True
        v = 0
        for step in range(n // 2):
            while not alive[v]:
                v += 1
            cnt = 0
            total = 0.0
            bad = False
            for p in range(indptr[v], indptr[v + 1]):
                u = nbr[p]
                if alive[u]:
                    pr = (kmat[v, u] * m[u, v]).real
                    if pr < -1e-9 or pr > 1.0 + 1e-9:
                        bad = True
                    probs[cnt] = pr
                    cand[cnt] = u
                    cnt += 1
                    total += pr
            if bad or abs(total - 1.0) > 1e-6:
                diag[0], diag[1], diag[2] = s, step, v
                for c in range(cnt):
                    diag[3 + c] = probs[c]
                return cnt
            r = unif[s, step] * total
            pick = cnt - 1
            acc = 0.0
            for c in range(cnt):
                acc += max(probs[c], 0.0)
                if r < acc:
                    pick = c
                    break
            u = cand[pick]
            out[s, v] = u
            out[s, u] = v
            alive[v] = False
            alive[u] = False
            mvu = m[v, u]
            for i in range(n):
                if alive[i]:
                    a = m[i, v]
                    b = m[i, u]
                    for j in range(n):
                        if alive[j]:
                            m[i, j] += (a * m[u, j] - b * m[v, j]) / mvu
    return -1


def _sequential_np(m0, kmat, indptr, nbr, unif, out, diag):
    n = m0.shape[0]
    for s in range(unif.shape[0]):
        m = m0.copy()
        alive = np.ones(n, dtype=bool)
        v = 0
        for step in range(n // 2):
            while not alive[v]:
                v += 1
            cand = nbr[indptr[v]:indptr[v + 1]]
            cand = cand[alive[cand]]
            probs = (kmat[v, cand] * m[cand, v]).real
            total = probs.sum()
            if (probs < -1e-9).any() or (probs > 1 + 1e-9).any() or abs(total - 1.0) > 1e-6:
                diag[:3] = s, step, v
                diag[3:3 + len(probs)] = probs
                return len(probs)
            acc = np.cumsum(np.maximum(probs, 0.0))
            pick = int(np.searchsorted(acc, unif[s, step] * total, side="right"))
            u = cand[min(pick, len(cand) - 1)]
            out[s, v], out[s, u] = u, v
            alive[v] = alive[u] = False
            idx = np.flatnonzero(alive)
            a, b = m[idx, v], m[idx, u]
            mvu = m[v, u]
            m[np.ix_(idx, idx)] += (np.outer(a, m[u, idx]) - np.outer(b, m[v, idx])) / mvu
    return -1


def _csr_neighbours(aug: AugmentedDomain):
    n = len(aug)
    e = aug.edges
    a = np.concatenate([e[:, 0], e[:, 1]])
    b = np.concatenate([e[:, 1], e[:, 0]])
    order = np.lexsort((b, a))
    a, b = a[order], b[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, a + 1, 1)
    return np.cumsum(indptr), b.astype(np.int64)


def sample_exact_batch(aug: AugmentedDomain, n_samples: int, rng) -> np.ndarray:
    """Exact samples as mate arrays of shape ``(n_samples, len(aug))``.

    The lowest unmatched vertex ``v`` is paired with an unmatched
    neighbour ``u`` with probability ``K(v, u) M(u, v)``, ``M`` being the
    inverse Kasteleyn matrix of the remaining graph; ``M`` is then updated
    by the rank-two Schur formula.  Raises :class:`SamplerBreakdown` when a
    conditional falls outside ``[-1e-9, 1 + 1e-9]``.
    """
    sysk = KasteleynSystem(aug, dense=True)
    m0 = np.ascontiguousarray(sysk.kinv, dtype=np.complex128)
    kmat = np.ascontiguousarray(sysk.K.dense(), dtype=np.complex128)
    indptr, nbr = _csr_neighbours(aug)
    n = len(aug)
    unif = as_stream(rng).generator().random((int(n_samples), n // 2))
    partners = np.full((int(n_samples), n), -1, dtype=np.int64)
    diag = np.zeros(3 + n, dtype=np.float64)
    kern = _sequential_nb if _accel.use_numba() else _sequential_np
    status = kern(m0, kmat, indptr, nbr, unif, partners, diag)
    if status >= 0:
        raise SamplerBreakdown("conditional probability out of range", int(diag[0]),
                               int(diag[1]), int(diag[2]), diag[3:3 + status])
    return MdGraph.of(aug).from_partners(partners)


def sample_exact(aug: AugmentedDomain, rng) -> MdCover:
    """One exact sample (see :func:`sample_exact_batch`)."""
    return MdGraph.of(aug).cover_of(sample_exact_batch(aug, 1, rng)[0])


def edge_frequencies(aug: AugmentedDomain, mates: np.ndarray) -> np.ndarray:
    """Empirical occupation frequency of every edge of ``aug`` (legs count monomers)."""
    mates = np.atleast_2d(mates)
    out = np.zeros(len(aug.edges))
    is_leg = aug.kinds == LEG
    for e, (a, b) in enumerate(aug.edges):
        if aug.kinds[e] == APEX_ROW:
            out[e] = np.nan
        elif is_leg[e]:
            out[e] = np.nan
        else:
            out[e] = np.mean(mates[:, a] == b)
    return out


# --------------------------------------------------------------------------
# Metropolis chain
# --------------------------------------------------------------------------

def _mcmc_py(mate, faces, row0, mw, unif, mon_trace, samples, thin, accepted):
    nf = faces.shape[0]
    nr = row0.shape[0]
    nmon = 0
    for i in range(nr):
        if mate[row0[i]] == -1:
            nmon += 1
    for t in range(unif.shape[0]):
        u0 = unif[t, 0]
        u1 = unif[t, 1]
        u2 = unif[t, 2]
        if nf > 0 and (u0 < 0.5 or nr < 2):
            f = min(int(u1 * nf), nf - 1)
            a = faces[f, 0]
            b = faces[f, 1]
            c = faces[f, 2]
            d = faces[f, 3]
            if mate[a] == b and mate[d] == c:
                mate[a] = d
                mate[d] = a
                mate[b] = c
                mate[c] = b
                accepted[0] += 1
            elif mate[a] == d and mate[b] == c:
                mate[a] = b
                mate[b] = a
                mate[d] = c
                mate[c] = d
                accepted[0] += 1
        elif nr >= 2:
            j = min(int(u1 * 2 * nr), 2 * nr - 1)
            i = j >> 1
            s = 1 if (j & 1) else -1
            i1 = i + s
            if 0 <= i1 < nr:
                x = row0[i]
                y = row0[i1]
                if mate[x] == -1 and mate[y] == -1:
                    if u2 * mw[i] * mw[i1] < 1.0:
                        mate[x] = y
                        mate[y] = x
                        nmon -= 2
                        accepted[1] += 1
                elif mate[x] == y:
                    if u2 < mw[i] * mw[i1]:
                        mate[x] = -1
                        mate[y] = -1
                        nmon += 2
                        accepted[2] += 1
                elif mate[x] == -1:
                    i2 = i1 + s
                    if 0 <= i2 < nr and mate[y] == row0[i2]:
                        w = row0[i2]
                        if u2 * mw[i] < mw[i2]:
                            mate[x] = y
                            mate[y] = x
                            mate[w] = -1
                            accepted[3] += 1
        mon_trace[t] = nmon
        if (t + 1) % thin == 0:
            samples[(t + 1) // thin - 1, :] = mate


_mcmc_nb = _accel.njit(_mcmc_py)


@dataclass
class McmcRun:
    """Output of :func:`run_mcmc`.

    Attributes
    ----------
    samples : ndarray of shape (steps // thin, len(aug))
        Mate arrays recorded every ``thin`` steps.
    monomer_counts : ndarray of shape (steps,)
    accepted : dict
        Accepted face rotations, pair annihilations, creations and slides.
    final : ndarray
        Mate array after the last step.
    """

    graph: MdGraph
    samples: np.ndarray
    monomer_counts: np.ndarray
    accepted: dict
    final: np.ndarray

    def covers(self) -> Iterator[MdCover]:
        for mate in self.samples:
            yield self.graph.cover_of(mate)


def run_mcmc(aug: AugmentedDomain, steps: int, rng, thin: int = 1,
             start: MdCover | np.ndarray | None = None) -> McmcRun:
    """Reversible Metropolis chain on boundary monomer-dimer covers.

    Each step picks, with probability 1/2 each, a face rotation on a
    uniform lattice face, or a boundary proposal ``(x, s)`` with ``x`` a
    uniform row-zero vertex and ``s = +-1``; with ``y = x + s`` and
    ``w = x + 2s`` the proposal is pair annihilation (``x, y`` monomers),
    pair creation (dimer ``xy``), or a slide (monomer ``x`` and dimer
    ``yw`` become dimer ``xy`` and monomer ``w``).  Proposals are
    symmetric and accepted with the Metropolis ratio of monomer weights.

    Parameters
    ----------
    aug : AugmentedDomain
    steps : int
    rng : RngStream or int
    thin : int
        Record the state every ``thin`` steps.
    start : MdCover or mate array, optional
        Defaults to a maximum matching of the lattice part.
    """
    if steps < 0 or thin < 1:
        raise ValueError("steps must be >= 0 and thin >= 1")
    g = MdGraph.of(aug)
    if start is None:
        mate = g.initial_mate()
    elif isinstance(start, MdCover):
        start.validate(aug)
        mate = g.mate_of(start)
    else:
        mate = np.array(start, dtype=np.int64)
    steps = int(steps)
    samples = np.empty((steps // thin, len(aug)), dtype=np.int64)
    trace = np.empty(steps, dtype=np.int64)
    acc = np.zeros(4, dtype=np.int64)
    kern = _mcmc_nb if _accel.use_numba() else _mcmc_py
    gen = as_stream(rng).generator()
    done = 0
    while done < steps:
        chunk = min(CHUNK - CHUNK % thin, steps - done) if thin <= CHUNK else steps - done
        unif = gen.random((chunk, 3))
        out = np.empty((chunk // thin, len(aug)), dtype=np.int64)
        kern(mate, g.faces, g.row0, g.row0_weights, unif, trace[done:done + chunk], out, thin, acc)
        samples[done // thin:done // thin + len(out)] = out
        done += chunk
    names = ("rotation", "annihilation", "creation", "slide")
    return McmcRun(graph=g, samples=samples, monomer_counts=trace,
                   accepted=dict(zip(names, map(int, acc))), final=mate)


def mcmc_sampler(aug: AugmentedDomain, steps: int, rng, thin: int = 1,
                 start: MdCover | None = None) -> Iterator[MdCover]:
    """Stream of covers visited by :func:`run_mcmc`, one per ``thin`` steps."""
    yield from run_mcmc(aug, steps, rng, thin=thin, start=start).covers()


def acceptance_ratio(aug: AugmentedDomain, kind: str, i: int, s: int = 1) -> float:
    """Metropolis ratio of a boundary proposal at row-zero position ``i``.

    ``kind`` is ``"create"``, ``"annihilate"`` or ``"slide"``.
    """
    w = MdGraph.of(aug).row0_weights
    if kind == "create":
        return float(w[i] * w[i + s])
    if kind == "annihilate":
        return float(1.0 / (w[i] * w[i + s]))
    if kind == "slide":
        return float(w[i + 2 * s] / w[i])
    raise ValueError(f"unknown proposal kind {kind!r}")


def autocorrelation(series: np.ndarray, max_lag: int | None = None) -> np.ndarray:
    """Normalised autocorrelation via FFT; constant series give all ones."""
    x = np.asarray(series, dtype=float)
    x = x - x.mean()
    n = len(x)
    max_lag = n - 1 if max_lag is None else min(max_lag, n - 1)
    var = float(x @ x)
    if var == 0.0:
        return np.ones(max_lag + 1)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acf = np.fft.irfft(f * np.conj(f), size)[:max_lag + 1]
    return acf / var


def decorrelation_lag(series: np.ndarray, level: float = 0.1) -> int:
    """First lag at which the autocorrelation drops below ``level`` (-1 if never)."""
    acf = autocorrelation(series)
    below = np.flatnonzero(acf < level)
    return int(below[0]) if len(below) else -1


# --------------------------------------------------------------------------
# effective walk on the symmetrised graph
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class JumpLaw:
    """Symmetric jump law ``q_|k|`` on ``-kmax..kmax`` with a Vose alias table."""

    z: float
    q: np.ndarray
    offsets: np.ndarray
    probs: np.ndarray
    alias_prob: np.ndarray
    alias_index: np.ndarray

    @property
    def parity_change(self) -> float:
        """``1/4`` of the total jump mass on odd offsets."""
        return 0.25 * float(self.probs[self.offsets % 2 == 1].sum())


def _vose(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = len(p)
    scaled = p * n
    prob = np.ones(n)
    alias = np.arange(n)
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s, g = small.pop(), large.pop()
        prob[s], alias[s] = scaled[s], g
        scaled[g] = scaled[g] + scaled[s] - 1.0
        (small if scaled[g] < 1.0 else large).append(g)
    return prob, alias.astype(np.int64)


def jump_law(z: float, tol: float = JUMP_TOL) -> JumpLaw:
    """Boundary jump law of the effective walk, truncated where ``|gamma|**k < tol``."""
    if not z > 0:
        raise ValueError(f"z must be positive, got {z!r}")
    q = np.clip(effective_jump_weights(z), 0.0, None)
    kmax = len(q) - 1
    offsets = np.arange(-kmax, kmax + 1)
    probs = q[np.abs(offsets)]
    probs = probs / probs.sum()
    ap, ai = _vose(probs)
    return JumpLaw(z=float(z), q=q, offsets=offsets, probs=probs, alias_prob=ap, alias_index=ai)




def sample_jumps(law: JumpLaw, n: int, rng) -> np.ndarray:
    """``n`` independent draws from the boundary jump law via its alias table."""
    gen = as_stream(rng).generator()
    m = len(law.offsets)
    col = np.minimum((gen.random(n) * m).astype(np.int64), m - 1)
    keep = gen.random(n) < law.alias_prob[col]
    return np.where(keep, law.offsets[col], law.offsets[law.alias_index[col]])


def real_line_step_law(law: JumpLaw) -> np.ndarray:
    """Law of ``|du|`` for a horizontal step taken from the real line.

    Horizontal steps from the real line are ``+-2`` with probability 1/4
    each or a boundary jump with probability 1/4, so conditioning on a
    horizontal step divides by 3/4.
    """
    kmax = int(law.offsets.max())
    out = np.zeros(max(kmax, 2) + 1)
    np.add.at(out, np.abs(law.offsets), law.probs / 4)
    out[2] += 0.5
    return out / 0.75


def _build_walk_kernels(jit):
    """Compile the walk kernels with ``jit`` (numba ``njit`` or the identity).

    Helpers are captured as closure constants, which numba inlines at
    compile time; the same source therefore runs in both modes.
    """

    @jit
    def draw_jump(offsets, ap, ai, r1, r2):
        n = offsets.shape[0]
        c = min(int(r1 * n), n - 1)
        if r2 < ap[c]:
            return offsets[c]
        return offsets[ai[c]]

    @jit
    def hmove(v, r1, r2, offsets, ap, ai):
        # horizontal move conditional on the horizontal coordinate moving
        if v != 0:
            return -2 if r1 < 0.5 else 2
        if r1 < 1.0 / 3.0:
            return -2
        if r1 < 2.0 / 3.0:
            return 2
        return draw_jump(offsets, ap, ai, (r1 - 2.0 / 3.0) * 3.0, r2)

    @jit
    def pvert(v):
        # probability that a move is vertical
        return 0.25 if v == 0 else 0.5

    @jit
    def step(u, v, lazy, offsets, ap, ai):
        if lazy and np.random.random() < 0.5:
            return 0, 0
        rc = np.random.random()
        r1 = np.random.random()
        r2 = np.random.random()
        if rc < pvert(v):
            return 0, (2 if r1 < 0.5 else -2)
        return hmove(v, r1, r2, offsets, ap, ai), 0

    @jit
    def path(seed, u0, v0, steps, lazy, offsets, ap, ai, out):
        np.random.seed(seed)
        u, v = u0, v0
        out[0, 0] = u
        out[0, 1] = v
        for t in range(steps):
            du, dv = step(u, v, lazy, offsets, ap, ai)
            u += du
            v += dv
            out[t + 1, 0] = u
            out[t + 1, 1] = v

    @jit
    def occupation(seeds, u0, v0, umin, umax, vmax, lazy, offsets, ap, ai, counts, sq, max_steps):
        w = umax - umin + 1
        local = np.zeros(counts.shape[0], dtype=np.float64)
        touched = np.empty(counts.shape[0], dtype=np.int64)
        truncated = 0
        for trial in range(seeds.shape[0]):
            np.random.seed(seeds[trial])
            u, v = u0, v0
            nt = 0
            steps = 0
            while umin <= u <= umax and -vmax <= v <= vmax:
                cell = (v + vmax) // 2 * w + (u - umin)
                if local[cell] == 0:
                    touched[nt] = cell
                    nt += 1
                local[cell] += 1
                if steps == max_steps:
                    truncated += 1
                    break
                du, dv = step(u, v, lazy, offsets, ap, ai)
                u += du
                v += dv
                steps += 1
            for k in range(nt):
                c = touched[k]
                counts[c] += local[c]
                sq[c] += local[c] * local[c]
                local[c] = 0.0
        return truncated

    @jit
    def chain_visits(seeds, start, indptr, indices, cum, counts, sq, max_steps):
        n = counts.shape[0]
        local = np.zeros(n, dtype=np.float64)
        touched = np.empty(n, dtype=np.int64)
        truncated = 0
        for trial in range(seeds.shape[0]):
            np.random.seed(seeds[trial])
            s = start
            nt = 0
            steps = 0
            while s >= 0:
                if local[s] == 0:
                    touched[nt] = s
                    nt += 1
                local[s] += 1
                if steps == max_steps:
                    truncated += 1
                    break
                r = np.random.random()
                nxt = -1
                for p in range(indptr[s], indptr[s + 1]):
                    if r < cum[p]:
                        nxt = indices[p]
                        break
                s = nxt
                steps += 1
            for k in range(nt):
                c = touched[k]
                counts[c] += local[c]
                sq[c] += local[c] * local[c]
                local[c] = 0.0
        return truncated

    @jit
    def coloured(seeds, u0, v0, colour0, p, target, lazy, max_steps, visits, same, record):
        truncated = 0
        for trial in range(seeds.shape[0]):
            np.random.seed(seeds[trial])
            u, v, c = u0, v0, colour0
            n = 0
            steps = 0
            while True:
                if v == 0:
                    n += 1
                    if np.random.random() < p:
                        c = 1 - c
                if record.shape[0] > 0:
                    record[steps, 0] = u
                    record[steps, 1] = v
                    record[steps, 2] = c
                if v == target or steps == max_steps:
                    break
                if not (lazy and np.random.random() < 0.5):
                    r = np.random.random()
                    if r < 0.25:
                        v += 2
                    elif r < 0.5:
                        v -= 2
                    elif r < 0.75:
                        u -= 2
                    else:
                        u += 2
                steps += 1
            if v != target:
                truncated += 1
                visits[trial] = -1
            else:
                visits[trial] = n
            same[trial] = c == colour0
        return truncated

    @jit
    def couple(seeds, x0, x1, t_max, r, check, offsets, ap, ai, out):
        # out columns: coupling time (-1 if none by t_max), failure flag
        # (real line hit in the last stage), final stage, stage-1 breaches,
        # post-coupling divergences
        for trial in range(seeds.shape[0]):
            np.random.seed(seeds[trial])
            u, v = x0[0], x0[1]
            u2, v2 = x1[0], x1[1]
            stage = 1 if v != v2 else 2
            if stage == 2 and u == u2:
                stage = 5
            t_c = 0 if stage == 5 else -1
            failed = 0
            breach = 0
            diverge = 0
            t = 0
            extra = 0
            while True:
                if stage == 2 and u != u2 and (u - u2) % 4 == 0:
                    stage = 3
                if stage == 3 and abs(v) >= r:
                    stage = 4
                if stage == 5:
                    if extra >= check:
                        break
                elif t >= t_max or failed:
                    break
                rc = np.random.random()
                rl = np.random.random()
                a1 = np.random.random()
                a2 = np.random.random()
                b1 = np.random.random()
                b2 = np.random.random()
                moving = rl < 0.5
                if stage == 1:
                    vert1 = rc < pvert(v)
                    vert2 = rc < pvert(v2)
                    if vert1 and vert2:
                        if (v - v2) % 4 != 0:
                            if moving:
                                v += 2 if a1 < 0.5 else -2
                            else:
                                v2 += 2 if b1 < 0.5 else -2
                        elif moving:
                            d = 2 if a1 < 0.5 else -2
                            v += d
                            v2 -= d
                    elif moving:
                        if vert1:
                            v += 2 if a1 < 0.5 else -2
                        else:
                            u += hmove(v, a1, a2, offsets, ap, ai)
                        if vert2:
                            v2 += 2 if b1 < 0.5 else -2
                        else:
                            u2 += hmove(v2, b1, b2, offsets, ap, ai)
                    if v == v2:
                        stage = 5 if u == u2 else 2
                        if stage == 5:
                            t_c = t + 1
                elif stage == 2:
                    if rc < pvert(v):
                        if moving:
                            d = 2 if a1 < 0.5 else -2
                            v += d
                            v2 += d
                    elif (u - u2) % 2 != 0 and v != 0:
                        if moving:
                            d = 2 if a1 < 0.5 else -2
                            u += d
                            u2 += d
                    elif moving:
                        u += hmove(v, a1, a2, offsets, ap, ai)
                    else:
                        u2 += hmove(v2, b1, b2, offsets, ap, ai)
                    if u == u2:
                        stage = 5
                        t_c = t + 1
                elif stage == 3:
                    if moving:
                        if rc < pvert(v):
                            d = 2 if a1 < 0.5 else -2
                            v += d
                            v2 += d
                        else:
                            d = hmove(v, a1, a2, offsets, ap, ai)
                            u += d
                            u2 += d
                elif stage == 4:
                    if moving:
                        if rc < pvert(v):
                            d = 2 if a1 < 0.5 else -2
                            v += d
                            v2 += d
                            if v == 0:
                                failed = 1
                        else:
                            d = 2 if a1 < 0.5 else -2
                            u += d
                            u2 -= d
                            if u == u2:
                                stage = 5
                                t_c = t + 1
                else:
                    # coupled: both walks read the same draws
                    if moving:
                        if rc < pvert(v):
                            v += 2 if a1 < 0.5 else -2
                        else:
                            u += hmove(v, a1, a2, offsets, ap, ai)
                        if rc < pvert(v2):
                            v2 += 2 if a1 < 0.5 else -2
                        else:
                            u2 += hmove(v2, a1, a2, offsets, ap, ai)
                    if u != u2 or v != v2:
                        diverge += 1
                    extra += 1
                if stage >= 2 and v != v2:
                    breach += 1
                if stage != 5:
                    t += 1
            out[trial, 0] = t_c if (t_c >= 0 and t_c <= t_max) else -1
            out[trial, 1] = failed
            out[trial, 2] = stage
            out[trial, 3] = breach
            out[trial, 4] = diverge

    return {"step": step, "path": path, "occupation": occupation, "chain_visits": chain_visits,
            "coloured": coloured, "couple": couple}


_KERNELS: dict = {}


def _kernels() -> dict:
    """Walk kernels for the active backend, compiled on first use."""
    mode = "numba" if _accel.use_numba() else "python"
    if mode not in _KERNELS:
        if mode == "numba":
            import numba
            _KERNELS[mode] = _build_walk_kernels(numba.njit)
        else:
            _KERNELS[mode] = _build_walk_kernels(lambda f: f)
    return _KERNELS[mode]


def _call(name: str, *args):
    """Run a seeded kernel; the Python path restores numpy's global state."""
    kern = _kernels()[name]
    if _accel.use_numba():
        return kern(*args)
    state = np.random.get_state()
    try:
        return kern(*args)
    finally:
        np.random.set_state(state)


def _as_gamma_point(p) -> tuple[int, int]:
    u, v = (p.x, p.y) if isinstance(p, LatticePoint) else (int(p[0]), int(p[1]))
    if v % 2:
        raise ValueError(f"({u}, {v}) is not a vertex of the walk graph (ordinate must be even)")
    return int(u), int(v)


@dataclass
class EffectiveWalkPath:
    """Path of the effective walk; ``positions[t] = (u, v)`` with the real line at ``v = 0``."""

    z: float
    positions: np.ndarray
    lazy: bool

    @property
    def classes(self) -> np.ndarray:
        return self.positions[:, 0] % 2

    @property
    def real_line_visits(self) -> int:
        return int((self.positions[:, 1] == 0).sum())

    def jumps_on_real_line(self) -> np.ndarray:
        """Horizontal increments of the steps taken from the real line."""
        pos = self.positions
        on = pos[:-1, 1] == 0
        du = np.diff(pos[:, 0])
        dv = np.diff(pos[:, 1])
        return du[on & (dv == 0)]


def simulate_effective_walk(z: float, start, steps: int, rng, lazy: bool = False,
                            law: JumpLaw | None = None) -> EffectiveWalkPath:
    """Path of the odd effective walk on the symmetrised graph.

    Off the real line the walk steps ``+-2`` horizontally or vertically with
    probability 1/4 each.  On the real line it steps ``+-2`` vertically with
    probability 1/8 each, ``+-2`` horizontally with probability 1/4 each,
    and jumps by ``k`` with probability ``q_|k| / 4``.

    Parameters
    ----------
    z : float
    start : (u, v) with ``v`` even
    steps : int
    rng : RngStream or int
    lazy : bool
        Stay put with probability 1/2 at every step.
    """
    law = law or jump_law(z)
    u0, v0 = _as_gamma_point(start)
    out = np.empty((int(steps) + 1, 2), dtype=np.int64)
    seed = int(as_stream(rng).seeds(1)[0])
    _call("path", seed, u0, v0, int(steps), bool(lazy), law.offsets, law.alias_prob,
          law.alias_index, out)
    return EffectiveWalkPath(z=float(z), positions=out, lazy=bool(lazy))


@dataclass(frozen=True)
class GammaBox:
    """Rectangle ``umin <= u <= umax``, ``|v| <= vmax`` of the symmetrised walk graph."""

    umin: int
    umax: int
    vmax: int

    def __post_init__(self):
        if self.umax < self.umin or self.vmax < 0 or self.vmax % 2:
            raise ValueError("need umin <= umax and an even vmax >= 0")

    @property
    def states(self) -> list:
        return [LatticePoint(u, v) for v in range(-self.vmax, self.vmax + 1, 2)
                for u in range(self.umin, self.umax + 1)]

    def cell(self, u: int, v: int) -> int:
        return (v + self.vmax) // 2 * (self.umax - self.umin + 1) + (u - self.umin)


def gamma_box_kernel(z: float, box: GammaBox, law: JumpLaw | None = None) -> WalkKernel:
    """Transition kernel of the effective walk killed on leaving ``box``.

    Normaliser 1, so ``walks.green`` returns expected visit counts.
    """
    law = law or jump_law(z)
    states = box.states
    rows, cols, vals = [], [], []
    for s in states:
        i = box.cell(s.x, s.y)
        moves: dict = {}
        vert = 0.125 if s.y == 0 else 0.25
        for du, dv, w in ((0, 2, vert), (0, -2, vert), (2, 0, 0.25), (-2, 0, 0.25)):
            moves[(du, dv)] = moves.get((du, dv), 0.0) + w
        if s.y == 0:
            for k, w in zip(law.offsets, law.probs):
                moves[(int(k), 0)] = moves.get((int(k), 0), 0.0) + 0.25 * w
        for (du, dv), w in moves.items():
            u, v = s.x + du, s.y + dv
            if box.umin <= u <= box.umax and abs(v) <= box.vmax:
                rows.append(i)
                cols.append(box.cell(u, v))
                vals.append(w)
    n = len(states)
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return WalkKernel.build(states, mat, np.ones(n))


@dataclass
class Occupation:
    """Monte Carlo visit counts (from time 0) with standard errors."""

    states: list
    mean: np.ndarray
    sem: np.ndarray
    trials: int
    truncated: int

    def at(self, v) -> tuple[float, float]:
        i = self.states.index(v if isinstance(v, LatticePoint) else LatticePoint(*v))
        return float(self.mean[i]), float(self.sem[i])


def _occupation_result(states, counts, sq, trials, truncated) -> Occupation:
    mean = counts / trials
    var = np.maximum(sq / trials - mean ** 2, 0.0)
    return Occupation(states=list(states), mean=mean, sem=np.sqrt(var / trials),
                      trials=int(trials), truncated=int(truncated))


def effective_walk_occupation(z: float, start, box: GammaBox, trials: int, rng,
                              lazy: bool = False, max_steps: int = 10 ** 7) -> Occupation:
    """Mean visit counts of the effective walk killed on leaving ``box``."""
    law = jump_law(z)
    u0, v0 = _as_gamma_point(start)
    n = len(box.states)
    counts, sq = np.zeros(n), np.zeros(n)
    seeds = as_stream(rng).seeds(int(trials))
    trunc = _call("occupation", seeds, u0, v0, box.umin, box.umax, box.vmax, bool(lazy),
                  law.offsets, law.alias_prob, law.alias_index, counts, sq, int(max_steps))
    return _occupation_result(box.states, counts, sq, trials, trunc)


def kernel_visit_counts(kernel: WalkKernel, start, trials: int, rng,
                        max_steps: int = 10 ** 7) -> Occupation:
    """Mean visit counts of the chain ``kernel`` started at ``start``.

    ``walks.green(kernel, start, v) * D(v, v)`` is the exact value.
    """
    m = kernel.matrix.tocsr()
    m.sort_indices()
    cum = np.empty(len(m.data))
    for i in range(len(kernel)):
        lo, hi = m.indptr[i], m.indptr[i + 1]
        cum[lo:hi] = np.cumsum(m.data[lo:hi])
    counts, sq = np.zeros(len(kernel)), np.zeros(len(kernel))
    seeds = as_stream(rng).seeds(int(trials))
    trunc = _call("chain_visits", seeds, int(kernel.locate(start)), m.indptr.astype(np.int64),
                  m.indices.astype(np.int64), cum, counts, sq, int(max_steps))
    return _occupation_result(kernel.states, counts, sq, trials, trunc)


# --------------------------------------------------------------------------
# coloured walk
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ColouredWalkState:
    """Position on ``(2Z)^2``, current colour and flip probability."""

    position: LatticePoint
    colour: int
    flip_probability: float

    def __post_init__(self):
        if self.colour not in (BLACK, WHITE):
            raise ValueError("colour must be BLACK or WHITE")
        if not 0.0 < self.flip_probability < 1.0:
            raise ValueError("flip probability must lie in (0, 1)")


def parity_change_probability(z: float) -> float:
    """Probability that the effective walk makes an odd jump at a real-line visit."""
    return jump_law(z).parity_change


def simulate_coloured_walk(p: float, start, steps: int, rng, colour: int = BLACK,
                           lazy: bool = True) -> list[ColouredWalkState]:
    """Coloured simple random walk on ``(2Z)^2`` for ``steps`` steps.

    The colour flips with probability ``p`` at every time the walk sits on
    the real line.
    """
    u0, v0 = _as_gamma_point(start)
    rec = np.zeros((int(steps) + 1, 3), dtype=np.int64)
    seeds = as_stream(rng).seeds(1)
    _call("coloured", seeds, u0, v0, int(colour), float(p), 1 << 62, bool(lazy), int(steps),
          np.zeros(1, np.int64), np.zeros(1, np.bool_), rec)
    return [ColouredWalkState(LatticePoint(int(a), int(b)), int(c), float(p)) for a, b, c in rec]


@dataclass
class ColouredWalkReport:
    """Colour statistics at the hitting time of the reflected target line.

    Attributes
    ----------
    p, lam : float
        Flip probability and ``1 - 2 p``.
    visits : ndarray
        Real-line visit count per trajectory (truncated ones removed).
    same : ndarray of bool
        Whether the colour at the target equals the starting colour.
    fitted_base, fitted_stderr : float
        Maximum-likelihood ``lambda`` in ``P(same | n) = 1/2 + lambda**n / 2``.
    """

    p: float
    lam: float
    visits: np.ndarray
    same: np.ndarray
    truncated: int
    fitted_base: float
    fitted_stderr: float

    def table(self, min_count: int = 1) -> list[tuple[int, int, float, float]]:
        """Rows ``(n, count, measured bias, predicted bias)`` with bias ``|P(same) - 1/2|``."""
        rows = []
        for n in np.unique(self.visits):
            mask = self.visits == n
            cnt = int(mask.sum())
            if cnt >= min_count:
                rows.append((int(n), cnt, abs(float(self.same[mask].mean()) - 0.5),
                             0.5 * abs(self.lam) ** int(n)))
        return rows


def _fit_base(n: np.ndarray, same: np.ndarray) -> tuple[float, float]:
    sign = np.where(same, 1.0, -1.0)

    def nll(lam):
        return -np.sum(np.log(np.clip(0.5 + 0.5 * sign * lam ** n, 1e-300, None)))

    res = minimize_scalar(nll, bounds=(-1 + 1e-9, 1 - 1e-9), method="bounded",
                          options={"xatol": 1e-10})
    lam = float(res.x)
    h = 1e-5
    curv = (nll(lam + h) - 2 * nll(lam) + nll(lam - h)) / h ** 2 if abs(lam) < 1 - 2 * h else 0
    return lam, (1.0 / math.sqrt(curv) if curv > 0 else math.inf)


def coloured_walk_experiment(p: float, start, target_line_distance: int, trials: int, rng,
                             lazy: bool = True, max_steps: int = 10 ** 5,
                             colour: int = BLACK) -> ColouredWalkReport:
    """Colour at the hitting time of the line reflected below the real line.

    The walk starts at ``start`` (``v >= 0``) and runs until it reaches
    ``v = -2 * target_line_distance``; each real-line visit flips the colour
    with probability ``p``.  Given ``n`` visits, ``P(same colour)`` is
    ``1/2 + lambda**n / 2`` with ``lambda = 1 - 2 p``.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if target_line_distance < 1:
        raise ValueError("target_line_distance must be at least 1")
    u0, v0 = _as_gamma_point(start)
    if v0 < 0:
        raise ValueError("start must lie in the closed upper half-plane")
    visits = np.zeros(int(trials), dtype=np.int64)
    same = np.zeros(int(trials), dtype=np.bool_)
    seeds = as_stream(rng).seeds(int(trials))
    trunc = _call("coloured", seeds, u0, v0, int(colour), float(p), -2 * int(target_line_distance),
                  bool(lazy), int(max_steps), visits, same, np.zeros((0, 3), np.int64))
    keep = visits >= 0
    lam_hat, err = _fit_base(visits[keep], same[keep])
    return ColouredWalkReport(p=float(p), lam=1.0 - 2.0 * p, visits=visits[keep],
                              same=same[keep], truncated=int(trunc), fitted_base=lam_hat,
                              fitted_stderr=err)


# --------------------------------------------------------------------------
# coordinatewise mirror coupling
# --------------------------------------------------------------------------

def burn_in_radius(t: float, b: float = 2.0) -> float:
    """``r = sqrt(t) / (log t)**b``."""
    return math.sqrt(t) / math.log(t) ** b


@dataclass
class CouplingRow:
    """Failure frequency ``P(T > t)`` at one horizon."""

    t: int
    r: float
    trials: int
    failures: int
    real_line_failures: int
    ci_low: float
    ci_high: float
    breaches: int
    divergences: int

    @property
    def probability(self) -> float:
        return self.failures / self.trials


@dataclass
class CouplingReport:
    rows: list
    slope: float
    slope_stderr: float

    @property
    def breaches(self) -> int:
        return sum(r.breaches for r in self.rows)

    @property
    def divergences(self) -> int:
        return sum(r.divergences for r in self.rows)


def _wilson(k: int, n: int) -> tuple[float, float]:
    ci = stats.binomtest(k, n).proportion_ci(confidence_level=0.95, method="wilson")
    return float(ci.low), float(ci.high)


def coupling_failures(x, x_prime, t: int, trials: int, rng, z: float = 1.0, b: float = 2.0,
                      check: int = 32) -> CouplingRow:
    """Run the four-stage mirror coupling of two lazy effective walks up to time ``t``.

    Stage 1 matches the vertical coordinates by mirrored vertical moves
    after a parity fix; stage 2 matches class and periodicity using
    one-sided moves; stage 3 moves both walks in parallel until they are at
    distance ``r`` from the real line; stage 4 mirrors the horizontal
    moves until the walks meet, and fails if the real line is hit first.
    Coins: ``C`` picks the coordinate (shared uniform, so walks at
    different heights agree whenever both laws allow), ``L`` decides
    laziness, and each walk has its own direction or jump draw.

    After coupling, both walks keep reading the same draws for ``check``
    steps and any divergence is counted; so are breaches of the vertical
    match after stage 1.
    """
    (u0, v0), (u1, v1) = _as_gamma_point(x), _as_gamma_point(x_prime)
    if (u0 - u1) % 2:
        raise ValueError("x and x' must be of the same class")
    law = jump_law(z)
    r = burn_in_radius(t, b)
    out = np.zeros((int(trials), 5), dtype=np.int64)
    seeds = as_stream(rng).seeds(int(trials))
    _call("couple", seeds, np.array([u0, v0]), np.array([u1, v1]), int(t), float(r), int(check),
          law.offsets, law.alias_prob, law.alias_index, out)
    fails = int((out[:, 0] < 0).sum())
    lo, hi = _wilson(fails, int(trials))
    return CouplingRow(t=int(t), r=r, trials=int(trials), failures=fails,
                       real_line_failures=int(out[:, 1].sum()), ci_low=lo, ci_high=hi,
                       breaches=int(out[:, 3].sum()), divergences=int(out[:, 4].sum()))


def coupling_experiment(x, x_prime, t, trials: int, rng, z: float = 1.0,
                        b: float = 2.0) -> CouplingReport:
    """``P(T > t)`` over the horizons ``t`` with a log-log slope fit.

    ``T`` depends on ``t`` through the burn-in radius, so every horizon is
    a separate experiment on its own substream.
    """
    ts = [int(t)] if np.ndim(t) == 0 else [int(s) for s in t]
    stream = as_stream(rng)
    rows = [coupling_failures(x, x_prime, s, trials, stream.substream(s), z=z, b=b) for s in ts]
    slope, err = math.nan, math.nan
    good = [r for r in rows if r.failures > 0]
    if len(good) >= 2:
        fit = stats.linregress(np.log([r.t for r in good]), np.log([r.probability for r in good]))
        slope, err = float(fit.slope), float(fit.stderr)
    return CouplingReport(rows=rows, slope=slope, slope_stderr=err)
