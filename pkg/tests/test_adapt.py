import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixhho.adapt import AdaptConfig, adaptive_loop, dorfler_mark, fit_rate
from mixhho.cases import builtin_case
from mixhho.errors import MarkingError


def brute_force_mark(eta, theta):
    e2 = np.asarray(eta, float) ** 2
    total = e2.sum()
    for size in range(1, len(e2) + 1):
        best = None
        for subset in itertools.combinations(range(len(e2)), size):
            mass = e2[list(subset)].sum()
            if mass >= theta * total * (1 - 1e-12) and (best is None or mass > best[0]):
                best = (mass, subset)
        if best is not None:
            return size, best[0]
    return len(e2), total


def test_small_example():
    assert list(dorfler_mark([4.0, 3.0, 2.0, 1.0], 0.5)) == [0]
    assert list(dorfler_mark([4.0, 3.0, 2.0, 1.0], 0.6)) == [0, 1]
    assert list(dorfler_mark([1.0, 3.0, 2.0, 4.0], 0.6)) == [1, 3]


def test_theta_one_and_ties():
    assert list(dorfler_mark([1.0, 0.0, 2.0], 1.0)) == [0, 2]
    assert list(dorfler_mark([1.0, 1.0, 1.0, 1.0], 0.5)) == [0, 1]
    assert list(dorfler_mark([0.0, 10.0, 1e-3], 0.3)) == [1]


def test_scale_invariance():
    rng = np.random.default_rng(1)
    eta = rng.random(50)
    assert np.array_equal(dorfler_mark(eta, 0.4), dorfler_mark(1e8 * eta, 0.4))


def test_marking_errors():
    with pytest.raises(MarkingError):
        dorfler_mark(np.zeros(4), 0.5)
    for bad in ([1.0, -1.0], [np.nan, 1.0]):
        with pytest.raises(ValueError):
            dorfler_mark(bad, 0.5)
    for theta in (0.0, 1.5):
        with pytest.raises(ValueError):
            dorfler_mark([1.0], theta)
    with pytest.raises(ValueError):
        AdaptConfig(1, 0.0)
    with pytest.raises(ValueError):
        AdaptConfig(1, 0.5, marker_quantity="bogus")


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=10), st.floats(0.05, 1.0))
def test_matches_brute_force(eta, theta):
    eta = np.array(eta)
    if not np.sum(eta ** 2) > 0:   # squares can underflow for subnormal inputs
        return
    marked = dorfler_mark(eta, theta)
    size, mass = brute_force_mark(eta, theta)
    assert len(marked) == size
    assert np.sum(eta[marked] ** 2) == pytest.approx(mass, rel=1e-12)


def test_max_iters_zero_and_loop_progress():
    prob, mesh = builtin_case("ex2")
    hist = adaptive_loop(mesh, prob, AdaptConfig(1, 0.4, max_iters=0))
    assert len(hist) == 1 and hist.records[0].iter == 0
    hist = adaptive_loop(mesh, prob, AdaptConfig(1, 0.4, max_iters=3))
    cells = hist.column("cells")
    assert len(hist) == 4 and np.all(np.diff(cells) > 0)
    assert np.all(np.diff(hist.column("energy_error")) < 0)
    seen = []
    adaptive_loop(mesh, prob, AdaptConfig(0, 0.4, max_dofs=300), callback=seen.append)
    assert seen[-1].dofs >= 300 and all(r.dofs < 300 for r in seen[:-1])


def test_fit_rate():
    n = np.array([100.0, 400.0, 1600.0, 6400.0])
    assert fit_rate(n, 3.0 * n ** -0.75) == pytest.approx(-0.75)
    assert fit_rate(n, np.r_[1.0, 3.0 * n[1:] ** -1.0], window=3) == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        fit_rate([1.0], [1.0])
    with pytest.raises(ValueError):
        fit_rate([1.0, 2.0], [0.0, 1.0])
