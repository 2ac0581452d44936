"""Acceptance criteria 1-10, each printing one PASS/FAIL line.

Criteria are evaluated literally; see the project decision notes for the
analysis behind the ones that fail.
"""

import itertools
import math
import os
import time

import numpy as np
import pytest

from conftest import CORPUS, CORPUS_IDS, oracle_marginals
from freedimer import mc
from freedimer.fields import half_plane_moment
from freedimer.kasteleyn import (
    KasteleynSystem, edge_probabilities, joint_dimer_probability, partition_function,
)
from freedimer.lattice import augment, build_rectangle_domain
from freedimer.potential import coupling_scaling_study
from freedimer.walks import (
    adaptive_n, aux_params, effective_jump_weights, potential_kernel_1d, qn_convergence,
    schur_identity_residual, verify_rw_representation,
)

Z_GRID = (0.1, 0.5, 1.0, 2.0, 10.0)
WORKERS = os.cpu_count() or 1


@pytest.fixture
def verdict(capsys):
    def report(n, ok, detail, elapsed, budget):
        ok = ok and elapsed <= budget
        with capsys.disabled():
            print(f"\nCRITERION {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}  [{elapsed:.1f}s / {budget}s]")
        assert ok, detail
    return report


def white_black(aug, e):
    a, b = aug.edges[e]
    return (a, b) if (aug.xy[a, 0] + aug.xy[a, 1]) % 2 == 1 else (b, a)


def test_criterion_01_jump_law(verdict):
    t0 = time.perf_counter()
    worst_neg, worst_sum, worst_ratio = 0.0, 0.0, 0.0
    for z in Z_GRID:
        g = abs(aux_params(z).gamma)
        q = effective_jump_weights(z, 200)
        worst_neg = min(worst_neg, q[:51].min())
        worst_sum = max(worst_sum, abs(q[0] + 2 * q[1:201].sum() - 1))
        worst_ratio = max(worst_ratio, np.abs(q[2:51] / q[1:50] - g).max())
    ok = worst_neg >= -1e-14 and worst_sum <= 1e-12 and worst_ratio <= 1e-10
    verdict(1, ok, f"min q {worst_neg:.1e}, |sum-1| {worst_sum:.1e}, ratio err {worst_ratio:.1e}",
            time.perf_counter() - t0, 1)


def test_criterion_02_closed_forms(verdict):
    t0 = time.perf_counter()
    quartic = alpha = harm = 0.0
    for z in Z_GRID:
        pr = aux_params(z)
        quartic = max(quartic, abs(pr.characteristic_residual()))
        alpha = max(alpha, abs(potential_kernel_1d(1, pr) - pr.alpha1_recursion()))
        k = np.arange(3, 31)
        a = lambda j: potential_kernel_1d(j, pr)
        rhs = (0.5 - pr.p) * (a(k - 1) + a(k + 1)) + pr.p * (a(k - 2) + a(k + 2))
        harm = max(harm, np.abs(a(k) - rhs).max())
    ok = quartic <= 1e-12 and alpha <= 1e-12 and harm <= 1e-12
    verdict(2, ok, f"quartic {quartic:.1e}, alpha1 routes {alpha:.1e}, harmonic {harm:.1e}",
            time.perf_counter() - t0, 1)


def test_criterion_03_kasteleyn_suite(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for name, dom in CORPUS:
        for z in (0.5, 1.0, 2.0):
            aug = augment(dom, z)
            zo, single, pair, _, _ = oracle_marginals(aug)
            sysk = KasteleynSystem(aug)
            worst = max(worst, abs(partition_function(aug) - zo) / zo)
            p = edge_probabilities(sysk)
            nz = single > 0
            worst = max(worst, (np.abs(p - single)[nz] / single[nz]).max(), np.abs(p[~nz]).max(initial=0))
            for e, f in itertools.combinations(range(len(aug.edges)), 2):
                if len(set(aug.edges[e]) | set(aug.edges[f])) < 4:
                    continue
                got = joint_dimer_probability(sysk, [white_black(aug, e), white_black(aug, f)])
                ref = pair[e, f]
                worst = max(worst, abs(got - ref) / ref if ref > 0 else abs(got))
    verdict(3, worst <= 1e-9, f"max relative error {worst:.1e} over {len(CORPUS)} domains x 3 z",
            time.perf_counter() - t0, 30)


def test_criterion_04_schur_identity(verdict):
    t0 = time.perf_counter()
    cases = [((5, 5), 40), ((9, 9), 200), ((15, 11), 400), ((7, 3), 300)]
    res, sizes = [], []
    for (w, h), n in cases:
        for z in (0.5, 1.0, 2.0):
            aug = augment(build_rectangle_domain(w, h), z, n_side=n)
            sizes.append(len(aug))
            res.append(schur_identity_residual(aug))
    worst = max(res)
    verdict(4, worst <= 1e-10, f"max residual {worst:.1e}, graphs up to {max(sizes)} vertices",
            time.perf_counter() - t0, 60)


def test_criterion_05_rw_representation(verdict):
    t0 = time.perf_counter()
    lines, ok = [], True
    for name, dom in [("rect5x5", build_rectangle_domain(5, 5)), ("rect7x3", build_rectangle_domain(7, 3))]:
        n, aug = adaptive_n(dom, 1.0)
        rep = verify_rw_representation(aug, convergence_ns=(30, 60, 120))
        mono = rep.convergence["full_120"] < rep.convergence["full_60"]
        ok &= rep.mixed <= 1e-12 and rep.odd <= 1e-8 and rep.even <= 1e-8 and mono
        lines.append(f"{name} N={n}: mixed {rep.mixed:.1e} odd {rep.odd:.1e} even {rep.even:.1e} "
                     f"(blocks {rep.odd_block:.0e}/{rep.even_block:.0e}) monotone {mono}")
    verdict(5, ok, "; ".join(lines), time.perf_counter() - t0, 120)


def test_criterion_06_qn_convergence(verdict):
    t0 = time.perf_counter()
    ns = (50, 100, 200, 400)
    errs = qn_convergence(build_rectangle_domain(5, 5), 1.0, ns)
    ratios = [b / a for a, b in zip(errs, errs[1:])]
    geometric = all(r < 1 for r in ratios) and errs[-1] <= 1e-8
    verdict(6, geometric, "errors " + ", ".join(f"{e:.2e}" for e in errs)
            + " ratios " + ", ".join(f"{r:.2f}" for r in ratios), time.perf_counter() - t0, 10)


PK_PAIRS = [(0.5j, 0.5 + 1.0j), (-0.25 + 0.75j, 0.35 + 0.5j), (0.5j, 0.5 + 0.5j),
            (1j, 0.5 + 0.5j), (0.75j, -0.5 + 1.25j)]


def test_criterion_07_coupling_scaling(verdict):
    t0 = time.perf_counter()
    rows = coupling_scaling_study(PK_PAIRS, deltas=(1 / 16, 1 / 32), workers=WORKERS)
    e16 = max(r.rel_err for r in rows if r.delta == 1 / 16)
    e32 = max(r.rel_err for r in rows if r.delta == 1 / 32)
    same = max(r.rel_err for r in rows if r.delta == 1 / 32 and r.class_pair == "same")
    diff = max(r.rel_err for r in rows if r.delta == 1 / 32 and r.class_pair == "different")
    ratio = e32 / e16
    verdict(7, e32 <= 0.05 and ratio <= 0.6,
            f"max rel err at 1/32 {e32:.3f} (same class {same:.3f}, different {diff:.3f}), ratio {ratio:.2f}",
            time.perf_counter() - t0, 600)


HEIGHT_CONFIGS = {
    "A": [(-0.75 + 0.5j, -0.75 + 1.5j), (0.75 + 0.5j, 0.75 + 1.5j)],
    "B": [(-0.5 + 0.5j, 0.5 + 0.5j), (-0.5 + 1.5j, 0.5 + 1.5j)],
    "C": [(-1 + 0.75j, -0.25 + 0.75j), (0.25 + 0.75j, 1 + 0.75j)],
}


def test_criterion_08_height_moments(verdict):
    t0 = time.perf_counter()
    ok, parts = True, []
    for name, pairs in HEIGHT_CONFIGS.items():
        res = {z: half_plane_moment(pairs, 1 / 32, z, margin=8) for z in (0.5, 1.0, 2.0)}
        vals = [r.measured for r in res.values()]
        spread = (max(vals) - min(vals)) / abs(np.mean(vals))
        worst = max(r.rel_err for r in res.values())
        ok &= worst <= 0.05 and spread <= 0.03
        parts.append(f"{name}: err {worst:.3f} z-spread {spread:.3f}")
    verdict(8, ok, "; ".join(parts), time.perf_counter() - t0, 900)


def test_criterion_09_samplers(verdict):
    t0 = time.perf_counter()
    n = 100000
    worst_p = 1.0
    for i, (name, dom) in enumerate(CORPUS):
        aug = augment(dom, 1.0)
        law = mc.cover_law(aug)
        g = mc.MdGraph.of(aug)
        ex = mc.sample_exact_batch(aug, n, mc.RngStream(900, i))
        ch = mc.run_mcmc(aug, n * 150, mc.RngStream(901, i), thin=150).samples
        worst_p = min(worst_p, mc.goodness_of_fit(g.keys(ex), law)[1],
                      mc.goodness_of_fit(g.keys(ch), law)[1])
    aug = augment(build_rectangle_domain(5, 5), 1.0)
    sysk = KasteleynSystem(aug)
    p = edge_probabilities(sysk)
    zs = []
    for mates in (mc.sample_exact_batch(aug, n, mc.RngStream(902, 0)),
                  mc.run_mcmc(aug, n * 1000, mc.RngStream(903, 0), thin=1000).samples):
        freq = mc.edge_frequencies(aug, mates)
        ok = ~np.isnan(freq)
        zs.append(np.max(np.abs(freq[ok] - p[ok]) / np.sqrt(p[ok] * (1 - p[ok]) / n + 1e-300)))
    verdict(9, worst_p > 1e-3 and max(zs) <= 3,
            f"min chi2 p {worst_p:.3f}; 5x5 edge max |z| exact {zs[0]:.2f}, mcmc {zs[1]:.2f}",
            time.perf_counter() - t0, 300)


def test_criterion_10_coupling_and_colour(verdict):
    t0 = time.perf_counter()
    rep = mc.coupling_experiment((0, 1024), (0, 1026), [2 ** k for k in range(8, 15)], 20000,
                                 mc.RngStream(1000, 0))
    p = mc.parity_change_probability(1.0)
    col = mc.coloured_walk_experiment(p, (0, 2), 1, 100000, mc.RngStream(1001, 0), max_steps=10 ** 4)
    ok = (abs(rep.slope + 0.5) <= 0.15 and abs(col.fitted_base - (1 - 2 * p)) <= 0.05
          and rep.breaches == 0 and rep.divergences == 0)
    verdict(10, ok, f"slope {rep.slope:.3f} +- {rep.slope_stderr:.3f}; colour base "
            f"{col.fitted_base:.4f} vs {1 - 2 * p:.4f}", time.perf_counter() - t0, 300)
