import itertools
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from freedimer import mc
from freedimer.fields import (
    DualPathError, MomentRequest, domain_faces, dual_path, exact_height_moment,
    exact_pairing_variance, face_centre, face_cycle_residuals, gff_prediction, height_difference,
    height_field, l_path, neumann_green, pair_covariance, pair_with_test_function,
    pairing_coefficients, reference_flow,
)
from freedimer.fields import test_function_variance_prediction as variance_prediction
from freedimer.kasteleyn import KasteleynSystem
from freedimer.lattice import Domain, LatticePoint as P, augment, build_rectangle_domain
from freedimer.potential import Box

upper = st.complex_numbers(min_magnitude=0.1, max_magnitude=4).filter(lambda c: c.imag > 0.05)


@pytest.fixture(scope="module")
def grid6():
    """Full 6x4 rectangle: symmetric, small enough to enumerate."""
    aug = augment(Domain.from_points([(x, y) for x in range(6) for y in range(4)]), 1.0)
    sysk = KasteleynSystem(aug, dense=True)
    ref = reference_flow(aug, sysk)
    covers = mc.enumerate_covers(aug)
    w = np.array([c[1] for c in covers])
    return aug, sysk, ref, [c[0] for c in covers], w / w.sum()


def oracle_moment(grid, pairs):
    aug, _, ref, covers, w = grid
    faces = domain_faces(aug)
    vals = np.ones(len(covers))
    for a, b in pairs:
        vals *= [height_difference(c, a, b, ref, faces) for c in covers]
    return float(vals @ w)


class TestReferenceFlow:
    def test_bulk_outflow(self, grid6):
        aug, _, ref, _, _ = grid6
        for v in (P(2, 1), P(3, 2), P(1, 2)):
            assert abs(ref.outflow(v)) == pytest.approx(1.0, abs=1e-12)

    def test_boundary_outflow(self, grid6):
        aug, _, ref, covers, w = grid6
        for x in range(6):
            v = P(x, 0)
            p_mono = float(sum(wi for c, wi in zip(covers, w) if v in c.monomers))
            assert abs(ref.outflow(v)) == pytest.approx(1 - p_mono, abs=1e-12)

    def test_antisymmetric(self, grid6):
        _, _, ref, _, _ = grid6
        assert ref.flow(P(1, 1), P(2, 1)) == -ref.flow(P(2, 1), P(1, 1))

    def test_mirror_symmetry(self, grid6):
        _, _, ref, _, _ = grid6
        for (a, b), (c, d) in [((P(0, 1), P(1, 1)), (P(5, 1), P(4, 1))),
                               ((P(1, 0), P(1, 1)), (P(4, 0), P(4, 1))),
                               ((P(2, 2), P(2, 3)), (P(3, 2), P(3, 3)))]:
            assert ref.probability(a, b) == pytest.approx(ref.probability(c, d), abs=1e-12)


class TestHeights:
    def test_same_face(self, grid6):
        aug, _, ref, covers, _ = grid6
        assert height_difference(covers[0], (1, 1), (1, 1), ref) == 0.0

    def test_path_independence(self, grid6):
        aug, _, ref, covers, _ = grid6
        faces = domain_faces(aug)
        a, b = (0, 0), (4, 2)
        other = [((x, 0), 1) for x in range(0, 4)] + [((4, y), 1j) for y in range(0, 2)]
        alt = [((0, y), 1j) for y in range(0, 2)] + [((x, 2), 1) for x in range(0, 4)]
        for c in covers[:200]:
            h1 = height_difference(c, a, b, ref, faces)
            assert h1 == pytest.approx(sum_path(c, ref, other), abs=1e-12)
            assert h1 == pytest.approx(sum_path(c, ref, alt), abs=1e-12)

    def test_closedness_on_samples(self):
        aug = augment(build_rectangle_domain(7, 5), 1.0)
        sysk = KasteleynSystem(aug, dense=True)
        ref = reference_flow(aug, sysk)
        mates = mc.sample_exact_batch(aug, 100, mc.RngStream(5, 0))
        g = mc.MdGraph.of(aug)
        for m in mates:
            res = face_cycle_residuals(g.cover_of(m), ref)
            assert len(res) and np.abs(res).max() < 1e-12

    def test_field_consistent_with_differences(self, grid6):
        aug, _, ref, covers, _ = grid6
        hf = height_field(covers[7], ref, base=(0, 0))
        for face in [(4, 2), (2, 1), (0, 2)]:
            assert hf[face] == pytest.approx(height_difference(covers[7], face, (0, 0), ref), abs=1e-12)

    def test_centred_under_sampling(self):
        aug = augment(build_rectangle_domain(7, 5), 1.0)
        ref = reference_flow(aug)
        mates = mc.sample_exact_batch(aug, 4000, mc.RngStream(6, 0))
        g = mc.MdGraph.of(aug)
        h = np.array([height_difference(g.cover_of(m), (0, 0), (4, 2), ref) for m in mates])
        assert abs(h.mean()) <= 3 * h.std() / math.sqrt(len(h))

    def test_errors(self, grid6):
        aug, _, ref, covers, _ = grid6
        with pytest.raises(DualPathError):
            height_difference(covers[0], (0, 0), (9, 9), ref)
        with pytest.raises(DualPathError):
            dual_path({(0, 0), (5, 5)}, (0, 0), (5, 5))


def sum_path(cover, ref, path):
    from freedimer.fields import crossed_edge, step_sign

    dimers = {(min(u, v), max(u, v)) for u, v in cover.dimers}
    total = 0.0
    for f, d in path:
        p, q = crossed_edge(f, d)
        occ = 1.0 if (min(p, q), max(p, q)) in dimers else 0.0
        total += step_sign(f, d) * (occ - ref.probability(p, q))
    return total


class TestExactMoments:
    def test_k1_is_zero(self, grid6):
        _, sysk, _, _, _ = grid6
        req = MomentRequest.l_shaped([((0, 0), (4, 2))])
        assert abs(exact_height_moment(req, sysk)) < 1e-12

    def test_k2_oracle(self, grid6):
        pairs = [((0, 0), (0, 2)), ((3, 0), (4, 2))]
        req = MomentRequest.l_shaped(pairs)
        assert exact_height_moment(req, grid6[1]) == pytest.approx(oracle_moment(grid6, pairs), abs=1e-10)

    def test_k3_oracle(self, grid6):
        pairs = [((0, 0), (0, 2)), ((2, 0), (2, 2)), ((4, 0), (4, 2))]
        req = MomentRequest.l_shaped(pairs)
        assert exact_height_moment(req, grid6[1]) == pytest.approx(oracle_moment(grid6, pairs), abs=1e-10)

    def test_backends_agree(self, grid6, monkeypatch):
        pairs = [((0, 0), (0, 2)), ((2, 0), (2, 2)), ((4, 0), (4, 2))]
        req = MomentRequest.l_shaped(pairs)
        fast = exact_height_moment(req, grid6[1])
        monkeypatch.setenv("FREEDIMER_NO_NUMBA", "1")
        assert exact_height_moment(req, grid6[1]) == pytest.approx(fast, abs=1e-13)

    def test_exchange_symmetry(self, grid6):
        sysk = grid6[1]
        pairs = [((0, 0), (0, 2)), ((3, 0), (4, 2))]
        base = exact_height_moment(MomentRequest.l_shaped(pairs), sysk)
        perm = exact_height_moment(MomentRequest.l_shaped(pairs[::-1]), sysk)
        swap = exact_height_moment(MomentRequest.l_shaped([pairs[0][::-1], pairs[1]]), sysk)
        assert perm == pytest.approx(base, abs=1e-12)
        assert swap == pytest.approx(-base, abs=1e-12)

    def test_mirror(self, grid6):
        sysk = grid6[1]
        pairs = [((0, 0), (0, 2)), ((3, 0), (4, 2))]
        mirrored = [((4 - a[0], a[1]), (4 - b[0], b[1])) for a, b in pairs]
        assert exact_height_moment(MomentRequest.l_shaped(mirrored), sysk) == pytest.approx(
            exact_height_moment(MomentRequest.l_shaped(pairs), sysk), abs=1e-12)

    def test_overlap_rejected(self):
        with pytest.raises(DualPathError):
            MomentRequest.l_shaped([((0, 0), (2, 0)), ((1, 0), (1, 2))])
        with pytest.raises(DualPathError):
            MomentRequest.l_shaped([((0, 0), (0, 2)), ((2, 0), (2, 2))], min_separation=3)

    def test_path_outside(self, grid6):
        req = MomentRequest([((0, 0), (9, 0))], [l_path((0, 0), (9, 0))])
        with pytest.raises(DualPathError):
            exact_height_moment(req, grid6[1])


class TestPrediction:
    def test_odd_k(self):
        assert gff_prediction([(1j, 1 + 1j)]) == 0.0
        assert gff_prediction([(1j, 1 + 1j), (2j, 1 + 2j), (3j, 2 + 3j)]) == 0.0

    @given(upper, upper, upper, upper)
    def test_k2_neumann_form(self, a1, b1, a2, b2):
        pts = [a1, b1, a2, b2]
        assume(min(abs(p - q) for p, q in itertools.combinations(pts, 2)) > 1e-2)
        g = neumann_green
        expect = (g(a1, a2) - g(a1, b2) - g(b1, a2) + g(b1, b2)) / (2 * math.pi ** 2)
        assert gff_prediction([(a1, b1), (a2, b2)]) == pytest.approx(expect, abs=1e-9)

    def test_k4_wick(self):
        pairs = [(0.5j, 0.5 + 1j), (1 + 0.5j, 1.5 + 0.7j), (-1 + 1j, -0.5 + 2j), (2j, 0.3 + 2.5j)]
        c = lambda i, j: pair_covariance(*pairs[i], *pairs[j])
        expect = c(0, 1) * c(2, 3) + c(0, 2) * c(1, 3) + c(0, 3) * c(1, 2)
        assert gff_prediction(pairs) == pytest.approx(expect, rel=1e-12)

    def test_rejects(self):
        with pytest.raises(ValueError):
            gff_prediction([(1j, 1j), (2j, 3j)])
        with pytest.raises(ValueError):
            gff_prediction([(-1j, 1j), (2j, 3j)])

    def test_half_plane_k2_converges(self):
        from freedimer.fields import half_plane_moment

        pairs = [(0.5j, 0.5 + 1.0j), (1.0 + 0.5j, 1.5 + 1.0j)]
        errs = [half_plane_moment(pairs, d).rel_err for d in (1 / 8, 1 / 16)]
        assert errs[1] < errs[0]


def two_blocks(delta, r):
    n = int(0.25 / delta)
    rel, f = [], []
    for sgn, x0 in ((1, -0.5), (-1, 0.25)):
        for i in range(n):
            for j in range(n):
                rel.append((int(round(x0 / delta)) + i, int(round(0.5 / delta)) + j))
                f.append(sgn)
    return rel, [(a + r, b) for a, b in rel], np.array(f, float)


class TestPairing:
    def test_zero(self, grid6):
        aug, _, ref, covers, _ = grid6
        faces = sorted(domain_faces(aug))
        hf = height_field(covers[0], ref, faces=faces)
        assert pair_with_test_function(hf, np.zeros(len(faces)), 0.1)[0] == 0.0

    def test_mean_zero_required(self):
        with pytest.raises(ValueError):
            pair_with_test_function(np.zeros((1, 3)), np.array([1.0, 0.0, 0.0]), 0.1)

    def test_coefficients_reproduce_pairing(self, grid6):
        aug, _, ref, covers, _ = grid6
        fl = [(0, 0), (1, 1), (4, 2), (3, 0)]
        f = np.array([1.0, -2.0, 0.5, 0.5])
        edges, c = pairing_coefficients(aug, fl, f, 0.25)
        for cover in covers[:50]:
            dimers = {(min(u, v), max(u, v)) for u, v in cover.dimers}
            occ = np.array([1.0 if (min(w, b), max(w, b)) in dimers else 0.0 for w, b in edges])
            p = np.array([ref.probability(w, b) for w, b in edges])
            hf = height_field(cover, ref, faces=fl)
            assert c @ (occ - p) == pytest.approx(pair_with_test_function(hf, f, 0.25)[0], abs=1e-12)

    def test_exact_variance_matches_sampling(self):
        box = Box(6)
        sysk = KasteleynSystem(box.aug, dense=True)
        ref = reference_flow(box.aug, sysk)
        fl = [(4, 1), (4, 2), (5, 1), (5, 2), (7, 1), (7, 2), (8, 1), (8, 2)]
        f = np.array([1, 1, 1, 1, -1, -1, -1, -1.0])
        exact = exact_pairing_variance(sysk, fl, f, 1.0)
        mates = mc.sample_exact_batch(box.aug, 10000, mc.RngStream(11, 0))
        g = mc.MdGraph.of(box.aug)
        faces = domain_faces(box.aug)
        vals = []
        for m in mates:
            cover = g.cover_of(m)
            h = np.array([height_difference(cover, a, fl[0], ref, faces) for a in fl])
            vals.append(f @ h)
        vals = np.array(vals)
        var = vals.var()
        sigma = math.sqrt((np.mean((vals - vals.mean()) ** 4) - var ** 2) / len(vals))
        assert abs(var - exact) <= 3 * sigma

    def test_variance_prediction_diagonal(self):
        pos = np.array([0.5j, 1 + 0.5j, 0.5 + 1.5j])
        f = np.array([1.0, -0.5, -0.5])
        d = 0.1
        g = np.array([[neumann_green(a, b) if a != b else 0.0 for b in pos] for a in pos])
        off = f @ g @ f * d ** 4 / (2 * math.pi ** 2)
        # cell-average of log|x - y| by a staggered midpoint grid
        t = (np.arange(60) + 0.5) / 60
        xs = (t[:, None] + 1j * t[None, :]).ravel()
        s = xs + 0.5 / 60 * (1 + 1j)
        mean_log = float(np.mean(np.log(np.abs(xs[:, None] - s[None, :]))))
        g0 = -(math.log(d) + mean_log) - np.log(2 * pos.imag)
        expect = off + np.sum(f ** 2 * g0) * d ** 4 / (2 * math.pi ** 2)
        assert variance_prediction(f, pos, d) == pytest.approx(expect, rel=1e-3)

    def test_variance_vs_prediction(self):
        delta, r = 1 / 16, 64
        box = Box(r)
        rel, fl, f = two_blocks(delta, r)
        exact = exact_pairing_variance(box.system, fl, f, delta)
        pos = np.array([face_centre(x, delta) for x in rel])
        pred = variance_prediction(f, pos, delta)
        assert abs(exact / pred - 1) <= 0.10
