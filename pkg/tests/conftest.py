import numpy as np
import pytest

from freedimer.lattice import Domain, augment, build_rectangle_domain

# Every domain with at most 20 vertices used by the exhaustive checks.
RECTANGLES = [(3, 3), (3, 5), (5, 3), (3, 7), (7, 3)]
EXPLICIT = {
    "full4x2": [(x, y) for x in range(4) for y in range(2)],
    "full4x3": [(x, y) for x in range(4) for y in range(3)],
    "tee": [(x, y) for x in range(4) for y in range(2)] + [(1, 2), (2, 2), (1, 3), (2, 3)],
}


def corpus():
    """``(name, Domain)`` pairs of the small-domain corpus."""
    out = [(f"rect{w}x{h}", build_rectangle_domain(w, h)) for w, h in RECTANGLES]
    out += [(name, Domain.from_points(pts)) for name, pts in EXPLICIT.items()]
    return out


CORPUS = corpus()
CORPUS_IDS = [name for name, _ in CORPUS]


@pytest.fixture(params=CORPUS, ids=CORPUS_IDS)
def small_domain(request):
    return request.param[1]


@pytest.fixture(scope="session")
def rect3():
    return build_rectangle_domain(3, 3)


@pytest.fixture(scope="session")
def aug3(rect3):
    return augment(rect3, 1.0)


@pytest.fixture(scope="session")
def rect5():
    return build_rectangle_domain(5, 5)


@pytest.fixture(params=["numba", "numpy"])
def backend(request, monkeypatch):
    """Run a test under both kernel backends."""
    if request.param == "numpy":
        monkeypatch.setenv("FREEDIMER_NO_NUMBA", "1")
    else:
        monkeypatch.delenv("FREEDIMER_NO_NUMBA", raising=False)
    return request.param


def rel_err(a, b):
    a, b = np.asarray(a, dtype=complex), np.asarray(b, dtype=complex)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


def matching_oracle(aug):
    """Edge-id rows of every perfect matching of ``aug`` and their weights."""
    from freedimer._accel import enumerate_matchings_kernel

    rows = enumerate_matchings_kernel(len(aug.xy), aug.edges)
    weights = np.prod(aug.weights[rows], axis=1)
    return rows, weights


def oracle_marginals(aug):
    """Partition function, single-edge and pair probabilities by enumeration."""
    rows, w = matching_oracle(aug)
    z = w.sum()
    ind = np.zeros((len(rows), len(aug.edges)))
    np.put_along_axis(ind, rows, 1.0, axis=1)
    single = w @ ind / z
    pair = (ind * w[:, None]).T @ ind / z
    return z, single, pair, ind, w
