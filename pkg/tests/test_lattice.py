import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from freedimer._accel import enumerate_matchings_kernel
from freedimer.lattice import (
    BLACK, LEG, WHITE, Domain, DomainError, InvalidCover, LatticePoint, MdCover, NoCover,
    augment, build_rectangle_domain, complete_triangle_row, corner_weight, cover_bijection,
    inverse_cover_bijection, load_domain, matching_weight, parse_domain_spec,
    segment_partition_function, triangle_count, triangle_row_edges,
)
from freedimer.mc import enumerate_covers


def colour_counts(d):
    c = (d.xy[:, 0] + d.xy[:, 1]) % 2
    return int((c == BLACK).sum()), int((c == WHITE).sum())


def brute_row_covers(k, removed):
    """All matchings of ``T_k`` with the listed top vertices deleted."""
    n = k + 2
    tops = [i for i in range(n) if (i % 2 == 0) == (k % 2 == 0)]
    dead = {tops[r] for r in removed}
    alive = [i for i in range(n) if i not in dead]
    pos = {v: j for j, v in enumerate(alive)}
    edges = [(pos[a], pos[b]) for a, b in triangle_row_edges(k) if a in pos and b in pos]
    arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    found = enumerate_matchings_kernel(len(alive), arr)
    return [sorted((alive[arr[e, 0]], alive[arr[e, 1]]) for e in row) for row in found]


class TestLatticePoint:
    def test_origin_is_black(self):
        assert LatticePoint(0, 0).colour == BLACK
        assert LatticePoint(1, 0).colour == WHITE

    @given(st.integers(-50, 50), st.integers(0, 50))
    def test_row_sign(self, x, y):
        assert LatticePoint(x, y).row_sign == (-1) ** y


class TestRectangle:
    def test_3x3(self):
        d = build_rectangle_domain(3, 3)
        assert len(d.xy) == 8
        assert colour_counts(d) == (4, 4)
        assert len(d.free_boundary) == 3

    def test_5x5_balanced(self):
        # Removing an odd run of top-row vertices is what balances the colours.
        d = build_rectangle_domain(5, 5)
        assert len(d.xy) == 22
        assert colour_counts(d) == (11, 11)
        assert len(d.free_boundary) == 5
        top = d.xy[d.xy[:, 1] == 4, 0]
        assert sorted(top) == [0, 1]

    @pytest.mark.parametrize("w,h", [(2, 5), (5, 2), (4, 4), (1, 3), (3, 1)])
    def test_rejects(self, w, h):
        with pytest.raises(DomainError):
            build_rectangle_domain(w, h)

    @pytest.mark.parametrize("w,h", [(3, 3), (3, 5), (5, 3), (7, 5), (9, 9)])
    def test_invariants(self, w, h):
        d = build_rectangle_domain(w, h)
        b, wh = colour_counts(d)
        assert b == wh
        fb = d.xy[d.free_boundary]
        assert (fb[:, 1] == 0).all()
        assert np.array_equal(np.diff(fb[:, 0]), np.ones(len(fb) - 1))
        colours = {p.colour for p in d.dimer_corners}
        assert colours == {BLACK, WHITE}


def test_small_domains_are_dimerable(small_domain):
    assert len(enumerate_covers(small_domain)) > 0


class TestDomainInput:
    def test_spec_string(self):
        assert len(parse_domain_spec("rect:3x3").xy) == 8

    def test_explicit_file(self, tmp_path):
        p = tmp_path / "d.json"
        p.write_text(json.dumps({"type": "explicit", "vertices": [[x, y] for x in range(4) for y in range(2)]}))
        assert len(load_domain(p).xy) == 8

    def test_bad_vertex_reports_line(self, tmp_path):
        p = tmp_path / "d.json"
        p.write_text('{"type": "explicit",\n "vertices": [[0, 0],\n [1, -1]]}')
        with pytest.raises(DomainError) as info:
            load_domain(p)
        assert ":3" in str(info.value)

    def test_unbalanced(self):
        pts = [(x, 0) for x in range(5)] + [(x, 1) for x in range(4)] + [(x, 2) for x in range(3)]
        with pytest.raises(DomainError, match="unbalanced"):
            Domain.from_points(pts)

    def test_unknown_spec(self):
        with pytest.raises(DomainError):
            parse_domain_spec("hexagon:3")


class TestAugment:
    def test_triangle_count_five(self):
        d = build_rectangle_domain(5, 5)
        aug = augment(d, 1.0)
        assert aug.k == 9
        assert len(aug.zigzag()) == 9 + 2

    def test_side_triangles(self):
        d = build_rectangle_domain(5, 5)
        aug = augment(d, 1.0, n_side=2)
        # two extra top vertices per side, each bringing two triangles
        assert len(aug.zigzag()) - 2 == 9 + 2 * 2 * 2
        assert len(aug.row_zero) == 5 + 4

    @pytest.mark.parametrize("z", [0.0, -1.0, float("inf"), float("nan")])
    def test_rejects_bad_z(self, rect3, z):
        with pytest.raises(ValueError):
            augment(rect3, z)

    def test_weights(self, rect3):
        aug = augment(rect3, 0.7, n_side=3)
        legs = aug.kinds == LEG
        assert np.allclose(aug.weights[legs], 0.7)
        assert np.allclose(aug.weights[~legs], 1.0)

    def test_explicit_corners(self, rect3):
        aug = augment(rect3, 1.0)
        zp = corner_weight(1.0)
        mw = aug.monomer_weights
        xs = {int(aug.xy[i, 0]): w for i, w in mw.items()}
        assert xs[0] == pytest.approx(zp) and xs[2] == pytest.approx(zp)
        assert xs[1] == pytest.approx(1.0)

    @given(st.integers(1, 40))
    def test_apex_parity(self, width):
        k = triangle_count(width)
        assert (k - k // 2 + 1) % 2 == 0
        assert k in (2 * width - 1, 2 * width - 2)


class TestCornerWeight:
    def test_values(self):
        assert corner_weight(1.0) == pytest.approx((1 + math.sqrt(5)) / 2, abs=1e-15)
        assert corner_weight(2.0) == pytest.approx(1 + math.sqrt(2), abs=1e-15)
        assert corner_weight(1e-12) == pytest.approx(1.0, abs=1e-11)

    def test_rejects(self):
        with pytest.raises(ValueError):
            corner_weight(0.0)


class TestSegment:
    def test_empty(self):
        assert segment_partition_function(0, 0.3) == 1.0

    def test_fibonacci(self):
        fib = [1, 1, 2, 3, 5, 8, 13, 21]
        assert [segment_partition_function(n, 1.0) for n in range(8)] == fib

    def test_ratio_z2(self):
        r = segment_partition_function(41, 2.0) / segment_partition_function(40, 2.0)
        assert abs(r - (1 + math.sqrt(2))) < 1e-12

    @settings(max_examples=50)
    @given(st.floats(0.2, 20.0))
    def test_ratio_converges_geometrically(self, z):
        zp = corner_weight(z)
        rate = abs(z - zp) / zp  # ratio of the two roots of t**2 = z t + 1
        n = 4
        err = lambda m: abs(segment_partition_function(m + 1, z) / segment_partition_function(m, z) - zp)
        while err(n + 1) > 1e-9 and rate ** n > 1e-4:
            n += 1
        if err(n + 1) > 1e-9:
            assert err(n + 1) / err(n) == pytest.approx(rate, rel=1e-3)

    def test_negative(self):
        with pytest.raises(ValueError):
            segment_partition_function(-1, 1.0)


class TestTriangleRow:
    def test_k0(self):
        assert complete_triangle_row(0, []) == [(0, 1)]

    def test_parity(self):
        with pytest.raises(NoCover):
            complete_triangle_row(0, [0])
        with pytest.raises(NoCover):
            complete_triangle_row(4, [0, 1, 2])

    def test_k4_two_removed(self):
        cover = complete_triangle_row(4, [0, 2])
        assert brute_row_covers(4, [0, 2]) == [sorted(cover)]

    def test_exhaustive_uniqueness(self):
        for k in range(9):
            ntop = k // 2 + 1
            for r in range(ntop + 1):
                for removed in itertools.combinations(range(ntop), r):
                    found = brute_row_covers(k, removed)
                    if (r - k) % 2:
                        assert found == []
                        with pytest.raises(NoCover):
                            complete_triangle_row(k, removed)
                    else:
                        assert found == [sorted(complete_triangle_row(k, removed))]


def augmented_matchings(aug):
    rows = enumerate_matchings_kernel(len(aug.xy), aug.edges)
    v = aug.vertices
    return [frozenset((v[aug.edges[e, 0]], v[aug.edges[e, 1]]) for e in row) for row in rows]


class TestBijection:
    def test_counts_and_weights(self, small_domain):
        aug = augment(small_domain, 0.8)
        matchings = augmented_matchings(aug)
        covers = [cover_bijection(aug, m) for m in matchings]
        assert len(set(covers)) == len(matchings)
        for m, c in zip(matchings, covers):
            assert c.weight(aug) == pytest.approx(matching_weight(aug, m), rel=1e-14)
            assert inverse_cover_bijection(aug, c) == m
        assert len(enumerate_covers(aug)) == len(matchings)

    def test_no_monomers(self, rect3):
        aug = augment(rect3, 1.0)
        covers = [c for c, _ in enumerate_covers(aug) if not c.monomers]
        assert covers
        m = inverse_cover_bijection(aug, covers[0])
        assert cover_bijection(aug, m) == covers[0]

    def test_all_monomers_where_parity_allows(self, rect3):
        aug = augment(rect3, 1.0)
        covers = [c for c, _ in enumerate_covers(aug)]
        fb = {LatticePoint(int(x), 0) for x in rect3.xy[rect3.free_boundary, 0]}
        # three boundary vertices cannot all be monomers (odd count)
        assert all(c.monomers != fb for c in covers)
        assert max(len(c.monomers) for c in covers) == 2

    def test_invalid_cover(self, aug3):
        bad = MdCover(frozenset(), frozenset())
        with pytest.raises(InvalidCover) as info:
            bad.validate(aug3)
        assert info.value.args

    def test_invalid_matching(self, aug3):
        with pytest.raises(InvalidCover):
            cover_bijection(aug3, [(LatticePoint(0, 0), LatticePoint(1, 0))])
