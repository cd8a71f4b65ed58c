import numpy as np
import pytest
from hypothesis import given, strategies as st

from gemsmpc.engine import OperatingLimits, normalize_state
from gemsmpc.smpc import cantelli_kappa, chance_penalty_input, chance_penalty_state, tightened_violation

LIM = OperatingLimits.from_boxes()


def test_kappa_values():
    assert cantelli_kappa(0.5) == 1.0
    assert cantelli_kappa(0.95) == pytest.approx(0.229416, abs=1e-6)
    assert cantelli_kappa(0.05) == pytest.approx(np.sqrt(19), abs=1e-12)
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            cantelli_kappa(bad)


def test_ca50_upper_row_example():
    # ca50 mean 12 with standard deviation 2 degrees against the bound 13, in normalized units
    half = 5.5
    mean = normalize_state(np.array([12.0, 3.0, 2.5]))
    L = np.diag([2.0 / half, 0.0, 0.0])
    v = chance_penalty_state(mean, L, LIM, 0.5)
    assert v[0] == pytest.approx(1.0 / half)
    assert np.count_nonzero(v) == 1


@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_zero_spread_is_deterministic_check(m):
    m = np.array(m)
    v = chance_penalty_state(m, np.zeros((3, 3)), LIM, 0.2)
    assert np.allclose(v, np.maximum(0.0, LIM.Gx @ m - LIM.gx))
    vu = chance_penalty_input(m, np.zeros((3, 3)), LIM, 0.2)
    assert np.allclose(vu, np.maximum(0.0, LIM.Gu @ m - LIM.gu))


@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_tightening_monotone_in_eps(e1, e2):
    m, L = np.zeros(3), np.eye(3) * 0.8
    lo, hi = sorted((e1, e2))
    assert np.all(chance_penalty_state(m, L, LIM, lo) >= chance_penalty_state(m, L, LIM, hi) - 1e-15)


def test_batched_broadcast(rng):
    M = rng.normal(size=(4, 3))
    L = np.tril(rng.normal(size=(4, 3, 3)))
    V = tightened_violation(LIM.Gx, LIM.gx, M, L, 0.3)
    for b in range(4):
        assert np.allclose(V[b], tightened_violation(LIM.Gx, LIM.gx, M[b], L[b], 0.3))


@pytest.mark.parametrize("eps", [0.05, 0.5])
def test_cantelli_bound_holds_for_gaussian(eps, rng):
    # one-step linear-Gaussian system x+ = A x + B u + w with the tightened row active
    A = np.array([[0.8, 0.1], [0.0, 0.9]])
    B = np.array([[1.0], [0.5]])
    Lw = np.array([[0.3, 0.0], [0.1, 0.2]])
    G, g = np.array([[1.0, 0.0]]), np.array([1.0])
    x = np.array([0.2, -0.1])
    std = np.linalg.norm(G @ Lw)
    # choose u so that G mean + kappa * std = g exactly
    u = (g[0] - cantelli_kappa(eps) * std - (G @ A @ x)[0]) / (G @ B)[0, 0]
    mean = A @ x + B[:, 0] * u
    assert tightened_violation(G, g, mean, Lw, eps)[0] == pytest.approx(0.0, abs=1e-12)
    draws = mean + rng.standard_normal((10**6, 2)) @ Lw.T
    assert np.mean(draws @ G[0] > g[0]) <= eps
