import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gemsmpc.pce import (STEP0_CONFIG, STEPI_CONFIG, PceConfig, PceProjection, build_projection,
                         build_projection_woodbury, eval_basis, hermite_orthonormal, multi_index_set,
                         pce_covariance, pce_mean, project_samples)


def exact_config(n, weights, seed=0):
    """Regularization off, identity sample weights."""
    return PceConfig(n_samples=n, scale=1.0, degree_weights=weights, seed=seed, weighting="uniform")


@given(st.integers(1, 6), st.integers(0, 4))
def test_count_law(n, p):
    s = multi_index_set(n, p)
    assert len(s) == math.comb(n + p, p)
    assert s.indices[0] == (0,) * n
    assert np.all(np.diff(s.total_degrees) >= 0)
    assert len(set(s.indices)) == len(s)


def test_published_term_counts():
    assert len(multi_index_set(2, 3)) == 10
    assert len(multi_index_set(5, 2)) == 21
    assert len(multi_index_set(3, 0)) == 1


def test_graded_lex_order():
    assert multi_index_set(2, 2).indices == ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))


def test_bad_arguments_rejected():
    with pytest.raises(ValueError):
        multi_index_set(0, 2)
    with pytest.raises(ValueError):
        hermite_orthonormal(-1, 0.0)


def test_hermite_values():
    assert hermite_orthonormal(0, 3.7) == 1.0
    assert hermite_orthonormal(1, 2.0) == pytest.approx(2.0)
    assert hermite_orthonormal(2, 0.0) == pytest.approx(-1 / math.sqrt(2))
    t = 0.3
    assert hermite_orthonormal(3, t) == pytest.approx((t**3 - 3 * t) / math.sqrt(6))


def test_basis_entries():
    s = multi_index_set(2, 3)
    phi = eval_basis(s, np.zeros(2))
    assert phi[0] == 1.0
    assert phi[s.indices.index((2, 0))] == pytest.approx(-1 / math.sqrt(2))
    with pytest.raises(ValueError):
        eval_basis(s, np.zeros(3))


def test_basis_orthonormal_monte_carlo(rng):
    for dim in (1, 2):
        s = multi_index_set(dim, 3)
        Phi = eval_basis(s, rng.standard_normal((10**6, dim)))
        G = Phi.T @ Phi / Phi.shape[0]
        assert np.abs(G - np.eye(len(s))).max() <= 0.02


def test_exact_linear_recovery():
    s = multi_index_set(1, 2)
    proj = build_projection(s, exact_config(8, (0.0, 0.0, 0.0)))
    w = proj.points[:, 0]
    c = project_samples(proj, 2.0 + 3.0 * w)
    assert np.allclose(c, [2.0, 3.0, 0.0], atol=1e-8)


@given(st.integers(0, 2**31 - 1))
def test_exact_polynomial_recovery(seed):
    s = multi_index_set(2, 3)
    rng = np.random.default_rng(seed)
    coef = rng.normal(size=len(s))
    proj = build_projection(s, exact_config(2 * len(s), (0.0,) * 4, seed=seed % 1000))
    c = project_samples(proj, eval_basis(s, proj.points) @ coef)
    assert np.allclose(c, coef, atol=1e-8)


def test_projector_on_basis_column():
    s = multi_index_set(2, 2)
    proj = build_projection(s, exact_config(15, (0.0, 0.0, 0.0)))
    C = project_samples(proj, proj.Phi)
    assert np.allclose(C, np.eye(len(s)), atol=1e-8)


def test_singular_normal_matrix_rejected():
    s = multi_index_set(2, 3)
    with pytest.raises(np.linalg.LinAlgError, match="singular"):
        build_projection(s, exact_config(5, (0.0,) * 4))


def test_heavy_regularization_and_zero_data():
    s = multi_index_set(2, 2)
    proj = build_projection(s, PceConfig(20, 1.0, (1e8, 1e8, 1e8)))
    assert np.allclose(project_samples(proj, np.zeros(20)), 0.0)
    assert np.abs(proj.A).max() < 1e-6


def test_published_operator_shapes():
    p0 = build_projection(multi_index_set(2, 3), STEP0_CONFIG)
    p = build_projection_woodbury(multi_index_set(5, 2), STEPI_CONFIG)
    assert p0.A.shape == (10, 20) and p.A.shape == (21, 45)
    assert p.A1.shape == (45,)


@pytest.mark.parametrize("n", [10, 45])
def test_woodbury_matches_direct(n):
    s = multi_index_set(5, 2)
    cfg = PceConfig(n, 2000.0, (1.0, 0.3, 0.1), seed=5)
    assert np.abs(build_projection_woodbury(s, cfg).A - build_projection(s, cfg).A).max() <= 1e-8


def test_woodbury_needs_positive_weights():
    with pytest.raises(ValueError):
        build_projection_woodbury(multi_index_set(2, 2), PceConfig(10, 1.0, (1.0, 0.0, 1.0)))


def test_project_row_mismatch():
    proj = build_projection(multi_index_set(2, 3), STEP0_CONFIG)
    with pytest.raises(ValueError):
        project_samples(proj, np.zeros((19, 2)))


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_projection_linear(a, b, seed):
    proj = build_projection(multi_index_set(2, 3), STEP0_CONFIG)
    rng = np.random.default_rng(seed)
    Y1, Y2 = rng.normal(size=(20, 2)), rng.normal(size=(20, 2))
    lhs = project_samples(proj, a * Y1 + b * Y2)
    rhs = a * project_samples(proj, Y1) + b * project_samples(proj, Y2)
    assert np.allclose(lhs, rhs, atol=1e-12 * (1 + np.abs(lhs).max()), rtol=0)


def test_moment_examples():
    assert pce_mean(np.array([3.0, 0.5, 0.1])) == 3.0
    assert pce_covariance(np.array([0.0, 1.0]))[0, 0] == 1.0
    s = multi_index_set(1, 2)
    proj = build_projection(s, exact_config(10, (0.0, 0.0, 0.0)))
    c = project_samples(proj, proj.points[:, 0] ** 2)
    assert pce_mean(c) == pytest.approx(1.0, abs=1e-8)
    assert pce_covariance(c)[0, 0] == pytest.approx(2.0, abs=1e-8)


@given(st.integers(0, 10**6))
def test_covariance_symmetric_psd(seed):
    C = np.random.default_rng(seed).normal(size=(21, 3))
    S = pce_covariance(C)
    assert np.allclose(S, S.T)
    assert np.linalg.eigvalsh(S).min() >= -1e-10


def test_save_load_round_trip(tmp_path):
    p = build_projection(multi_index_set(2, 3), STEP0_CONFIG)
    p.save(tmp_path / "p.json")
    q = PceProjection.load(tmp_path / "p.json")
    assert np.array_equal(p.A, q.A) and np.array_equal(p.points, q.points)
    assert q.mis == p.mis and q.config == p.config


def test_draws_are_frozen_per_seed():
    a = build_projection(multi_index_set(2, 3), STEP0_CONFIG)
    b = build_projection(multi_index_set(2, 3), STEP0_CONFIG)
    assert np.array_equal(a.A, b.A)
