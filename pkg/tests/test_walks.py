import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from freedimer.lattice import LatticePoint, augment, build_rectangle_domain
from freedimer.walks import (
    DivergentGreen, NeedLargerN, WalkKernel, adaptive_n, aux_params, boundary_row_green,
    effective_jump_weights, even_walk_kernel, finite_jump_matrix, finite_jump_weights, first_row,
    green, green_matrix, jump_weights_from_kernel, kmax_for, odd_block, odd_walk_kernel, potential_kernel_1d, qn_convergence,
    reflected_row_green, row_green_pk_error, schur_complement, schur_identity_residual,
    total_jump_mass, verify_rw_representation,
)

Z_GRID = [0.1, 0.5, 1.0, 2.0, 10.0]


def g_ratio(z):
    return abs(aux_params(z).gamma)
P = LatticePoint


class TestAuxParams:
    def test_z1(self):
        pr = aux_params(1.0)
        assert pr.p == 0.25
        assert pr.gamma == pytest.approx(-0.3819660, abs=5e-8)
        assert pr.B == pytest.approx(-0.3577709, abs=5e-8)
        assert pr.sigma2 == 2.5

    def test_large_z(self):
        assert aux_params(1e4).p < 1e-8

    @pytest.mark.parametrize("z", [0.0, -2.0, float("nan")])
    def test_rejects(self, z):
        with pytest.raises(ValueError):
            aux_params(z)

    @settings(max_examples=100)
    @given(st.floats(0.01, 100.0))
    def test_invariants(self, z):
        pr = aux_params(z)
        assert 0 < pr.p < 0.5
        assert -1 < pr.gamma < 0
        assert pr.B <= 0
        g = pr.gamma
        scale = (0.5 - pr.p) * abs(g + 1 / g) + pr.p * (g * g + g ** -2)
        assert abs(pr.characteristic_residual()) < 1e-14 * scale
        assert pr.first_passage_q() == pytest.approx(pr.gamma + 1, abs=1e-12)


class TestPotentialKernel1d:
    def test_zero(self):
        assert potential_kernel_1d(0, aux_params(0.3)) == 0.0

    def test_alpha1(self):
        pr = aux_params(1.0)
        a1 = potential_kernel_1d(1, pr)
        assert a1 == pytest.approx(0.8944272, abs=5e-8)
        assert a1 == pytest.approx(1 / ((1 + 2 * pr.p * pr.gamma) * (1 - pr.gamma)), abs=1e-12)

    @settings(max_examples=50)
    @given(st.floats(0.05, 20.0))
    def test_two_routes_for_alpha1(self, z):
        pr = aux_params(z)
        assert potential_kernel_1d(1, pr) == pytest.approx(pr.alpha1_recursion(), abs=1e-12)

    @settings(max_examples=50)
    @given(st.floats(0.05, 20.0))
    def test_harmonic_off_zero(self, z):
        pr = aux_params(z)
        k = np.arange(3, 31)
        a = lambda j: potential_kernel_1d(j, pr)
        rhs = (0.5 - pr.p) * (a(k - 1) + a(k + 1)) + pr.p * (a(k - 2) + a(k + 2))
        assert np.abs(a(k) - rhs).max() < 1e-12

    def test_symmetric(self):
        pr = aux_params(2.0)
        k = np.arange(-10, 11)
        assert np.array_equal(potential_kernel_1d(k, pr), potential_kernel_1d(-k, pr))


class TestJumpWeights:
    def test_z1_values(self):
        q = effective_jump_weights(1.0)
        assert q[0] == pytest.approx(0.4472136, abs=5e-8)
        assert q[1] == pytest.approx(0.1708204, abs=5e-8)
        assert total_jump_mass(q) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("z", Z_GRID)
    def test_law(self, z):
        q = effective_jump_weights(z, k_max=200)
        assert (q[:51] >= -1e-14).all()
        assert abs(total_jump_mass(effective_jump_weights(z)) - 1) < 1e-12
        tail = 2 * q[-1] * g_ratio(z) / (1 - g_ratio(z))
        assert abs(total_jump_mass(q) + tail - 1) < 1e-12
        g = abs(aux_params(z).gamma)
        assert q[5] / q[4] == pytest.approx(g, abs=1e-10)

    @pytest.mark.parametrize("z", Z_GRID)
    def test_two_routes(self, z):
        q = effective_jump_weights(z, k_max=60)
        assert np.abs(q - jump_weights_from_kernel(z, 60)).max() < 1e-12

    def test_default_truncation(self):
        pr = aux_params(1.0)
        k = kmax_for(pr)
        assert abs(pr.gamma) ** (k - 1) < 1e-14 <= abs(pr.gamma) ** (k - 2)
        assert len(effective_jump_weights(1.0)) == k + 1


class TestRowGreen:
    def test_prop_converges(self):
        errs = [row_green_pk_error(n, 1.0) for n in (10, 20, 40, 80)]
        assert all(b < a for a, b in zip(errs, errs[1:]))
        # the error halves with N: the bilinear term decays like 1/N
        assert errs[-1] / errs[-2] == pytest.approx(0.5, abs=0.1)

    def test_symmetric(self):
        g = reflected_row_green(12, 0.8)
        assert np.allclose(g, g[::-1, ::-1])
        assert (np.diag(g) >= 1).all()


class TestWalkKernel:
    def test_geometric(self):
        # stay w.p. 1/2 on state 0, else die; state 1 moves to 0
        k = WalkKernel.build([P(0, 1), P(2, 1), P(4, 1)], [[0.5, 0, 0], [1.0, 0, 0], [0, 0, 0]], [1, 2, 1])
        assert green(k, P(0, 1), P(0, 1)) == pytest.approx(2.0)
        assert green(k, P(2, 1), P(0, 1)) == pytest.approx(2.0)
        assert green(k, P(0, 1), P(2, 1)) == 0.0
        assert green(k, P(2, 1), P(2, 1)) == pytest.approx(0.5)

    def test_divergent(self):
        k = WalkKernel.build([P(0, 1), P(2, 1)], [[0, 1.0], [1.0, 0]], [1, 1])
        with pytest.raises(DivergentGreen):
            green(k, P(0, 1), P(0, 1))

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            WalkKernel.build([P(0, 1), P(2, 1)], [[0, -0.5], [0.5, 0]], [1, 1])

    def test_rejects_row_sum(self):
        with pytest.raises(ValueError):
            WalkKernel.build([P(0, 1), P(2, 1)], [[0.6, 0.6], [0.5, 0]], [1, 1])

    def test_transition_has_cemetery(self):
        k = WalkKernel.build([P(0, 1), P(2, 1)], [[0, 0.5], [0.5, 0]], [1, 1])
        assert k.transition[P(0, 1)] == [(P(2, 1), 0.5), (None, 0.5)]


@pytest.fixture(scope="module")
def big():
    return augment(build_rectangle_domain(9, 9), 0.7, n_side=40)


class TestBoundaryRow:
    def test_weights(self, big):
        g = boundary_row_green(big)
        z = big.z
        mid = len(g.diag) // 2
        assert g.diag[mid] == pytest.approx(2 + 2 * z * z)
        assert np.allclose(g.matrix, g.matrix[::-1, ::-1], atol=1e-12)

    def test_two_routes_for_qn(self):
        aug = augment(build_rectangle_domain(5, 5), 1.0, n_side=30)
        q, v1 = finite_jump_matrix(aug)
        g = boundary_row_green(aug)
        verts = [aug.vertices[i] for i in v1]
        for i, u in enumerate(verts):
            for j, v in enumerate(verts):
                qn = finite_jump_weights(aug, u, v, g)
                assert qn == pytest.approx(q[i, j], abs=1e-12)
                assert qn == pytest.approx(finite_jump_weights(aug, v, u, g), abs=1e-12)

    def test_rejects_off_row(self):
        aug = augment(build_rectangle_domain(5, 5), 1.0, n_side=4)
        with pytest.raises(ValueError):
            finite_jump_weights(aug, P(0, 2), P(0, 1))

    def test_large_n_positive(self):
        n, aug = adaptive_n(build_rectangle_domain(5, 5), 1.0)
        q, _ = finite_jump_matrix(aug)
        assert (q > 0).all() and (q.sum(axis=1) < 1).all()

    def test_converges_like_one_over_n(self):
        errs = qn_convergence(build_rectangle_domain(5, 5), 1.0, [10, 20, 40, 80])
        assert all(b < a for a, b in zip(errs, errs[1:]))
        assert 0.4 < errs[-1] / errs[-2] < 0.65


class TestSchur:
    def test_textbook(self):
        m = np.array([[2.0, 1.0], [3.0, 5.0]])
        s, rest = schur_complement(m, [0])
        assert rest.tolist() == [1]
        assert s[0, 0] == pytest.approx(5 - 3 * 1 / 2)

    def test_identity(self, small_domain):
        for n in (2, 10):
            aug = augment(small_domain, 1.0, n_side=n)
            assert schur_identity_residual(aug) <= 1e-10

    def test_diagonal_form(self):
        n, aug = adaptive_n(build_rectangle_domain(5, 5), 1.0)
        m, idx, na = odd_block(aug)
        s, rest = schur_complement(m, np.arange(na))
        q, v1 = finite_jump_matrix(aug)
        loc = [list(idx[rest]).index(v) for v in v1]
        c = m[np.ix_(rest, rest)]
        for i, j in enumerate(loc):
            assert s[j, j] == pytest.approx(c[j, j] - q[i, i], abs=1e-12)

    def test_singular(self):
        with pytest.raises(np.linalg.LinAlgError):
            schur_complement(np.zeros((3, 3)), [0])


class TestOddWalk:
    def test_bulk_and_first_row(self, big):
        tr = odd_walk_kernel(big).transition
        assert sorted(tr[P(4, 3)]) == sorted([(P(4, 1), 0.25), (P(2, 3), 0.25), (P(6, 3), 0.25), (P(4, 5), 0.25)])
        row = dict(tr[P(4, 1)])
        assert row[P(4, 3)] == pytest.approx(0.25)
        assert sum(w for s, w in tr[P(4, 1)] if s is not None) < 1

    def test_neumann_corner(self, big):
        k = odd_walk_kernel(big)
        assert k.normalizer[k.locate(P(0, 1))] == pytest.approx(3.0)

    def test_small_n_raises(self):
        with pytest.raises(NeedLargerN) as info:
            odd_walk_kernel(augment(build_rectangle_domain(7, 3), 1.0, n_side=1))
        assert info.value.n_side == 1


class TestEvenWalk:
    def test_weights(self, big):
        z2 = big.z ** 2
        k = even_walk_kernel(big)
        tr = k.transition
        assert k.normalizer[k.locate(P(4, 0))] == pytest.approx(3 + 2 * z2)
        row = dict(tr[P(4, 0)])
        assert row[P(3, 0)] == pytest.approx(z2 / (3 + 2 * z2))
        assert row[P(2, 0)] == pytest.approx(1 / (3 + 2 * z2))
        assert row[P(4, 2)] == pytest.approx(1 / (3 + 2 * z2))
        assert k.normalizer[k.locate(P(-3, 0))] == pytest.approx(2 + 2 * z2)
        assert sorted(tr[P(4, 4)]) == sorted([(P(4, 2), 0.25), (P(2, 4), 0.25), (P(6, 4), 0.25), (P(4, 6), 0.25)])

    def test_rows_and_deficits(self, big):
        k = even_walk_kernel(big)
        dead = k.cemetery > 1e-12
        assert dead.any()
        assert np.allclose(np.asarray(k.matrix.sum(axis=1)).ravel()[~dead], 1.0)

    def test_green_diagonal(self, big):
        k = even_walk_kernel(big)
        g = green_matrix(k)
        assert (np.diag(g) * k.normalizer >= 1 - 1e-12).all()


class TestRepresentation:
    def test_blocks(self, small_domain):
        n, aug = adaptive_n(small_domain, 1.0)
        rep = verify_rw_representation(aug)
        assert rep.odd_block <= 1e-10
        assert rep.even_block <= 1e-10
        assert rep.schur <= 1e-10

    def test_defects_are_reported(self, rect3):
        n, aug = adaptive_n(rect3, 1.0)
        rep = verify_rw_representation(aug)
        assert rep.defects > 0
        assert rep.mixed > 1e-12
        assert not rep.passed()

    def test_even_sign(self):
        n, aug = adaptive_n(build_rectangle_domain(5, 5), 1.0)
        from freedimer.walks import walk_tables
        base, table, odd = walk_tables(aug)
        ev = np.flatnonzero(~odd)
        x = aug.xy[base[ev], 0]
        sub = table[np.ix_(ev, ev)]
        sign = (-1.0) ** ((x[:, None] - x[None, :]) % 2)
        assert (sub * sign > 0).all()

    def test_explicit_mode_runs(self, rect3):
        rep = verify_rw_representation(augment(rect3, 1.0), n_ref=24)
        assert math.isnan(rep.schur)
        assert rep.mode == "explicit-z'"
