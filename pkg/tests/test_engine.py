import numpy as np
import pytest
from hypothesis import given, strategies as st

from gemsmpc.engine import (INPUT_BOX, STATE_BOX, ControlInput, Dataset, EngineState, OperatingLimits,
                            ResidualCoefficients, denormalize_input, denormalize_state, drift, equilibrium,
                            generate_dataset, normalize_input, normalize_state, plant_step, reference_profile,
                            residual_scales, true_residual, true_residual_sample)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_normalization_examples():
    assert normalize_state(np.array([2.0, 3.0, 2.5]))[0] == pytest.approx(-1.0)
    assert normalize_state(np.array([7.5, 3.0, 2.5]))[0] == pytest.approx(0.0)
    s = EngineState(7.0, 3.0, 2.5)
    back = denormalize_state(normalize_state(s))
    assert np.allclose(back.as_array(), s.as_array(), atol=1e-12, rtol=0)


@given(st.tuples(finite, finite, finite))
def test_state_normalization_is_bijective(v):
    x = np.array(v)
    assert np.allclose(denormalize_state(normalize_state(x), as_state=False), x, atol=1e-12 * (1 + abs(x).max()))


@given(st.tuples(finite, finite, finite))
def test_input_normalization_round_trip(v):
    u = np.array(v)
    assert np.allclose(normalize_input(denormalize_input(u, as_input=False)), u, atol=1e-9 * (1 + abs(u).max()))


def test_box_corners_map_to_unit_cube():
    assert np.allclose(normalize_state(STATE_BOX[:, 0]), -1) and np.allclose(normalize_state(STATE_BOX[:, 1]), 1)
    assert np.allclose(normalize_input(INPUT_BOX[:, 0]), -1) and np.allclose(normalize_input(INPUT_BOX[:, 1]), 1)


def test_limit_rows_have_unit_infinity_norm():
    lim = OperatingLimits.from_boxes()
    for G in (lim.Gx, lim.Gu):
        assert np.allclose(np.abs(G).max(axis=1), 1.0)
        assert np.all((G != 0).sum(axis=1) == 1)
    assert np.allclose(lim.gx, 1.0) and np.allclose(lim.gu, 1.0)


def test_clamping_to_hard_box():
    u = ControlInput(300.0, 0.1, -1.0).clamped()
    assert (u.nvo, u.fuel, u.eth) == (232.0, 0.5, 0.0)


@given(st.tuples(*[st.floats(-5, 5)] * 3), st.floats(-20, 40), st.floats(-5, 10))
def test_pre_residual_drift_bounded(un, ca, im):
    d = drift(np.array([ca, im, 1.0]), np.array(un))
    assert 1.0 <= d[0] <= 13.0
    assert 2.0 <= d[1] <= 4.5


@given(st.floats(-1, 0.99), st.floats(2, 13))
def test_more_ethanol_delays_combustion(e, ca):
    x = np.array([ca, 3.0, 2.0])
    lo = drift(x, np.array([0.0, 0.0, e]))
    hi = drift(x, np.array([0.0, 0.0, e + 0.01]))
    assert hi[0] > lo[0]


def test_equilibrium_is_fixed_point_inside_box():
    for imep in (2.2, 2.8, 3.2, 3.9):
        x, u = equilibrium(7.0, imep)
        nxt = plant_step(EngineState.from_array(x), denormalize_input(u), None, residual=False)
        assert np.allclose(nxt.as_array(), x, atol=1e-7)
        assert np.all(x >= STATE_BOX[:, 0]) and np.all(x <= STATE_BOX[:, 1])
        assert np.all(np.abs(u) <= 1.0 + 1e-12)


def test_plant_step_deterministic_and_rejects_nan():
    x = EngineState(7.0, 2.8, 2.3)
    u = ControlInput(200.0, 0.7, 0.2)
    a = plant_step(x, u, np.random.Generator(np.random.Philox(key=3)))
    b = plant_step(x, u, np.random.Generator(np.random.Philox(key=3)))
    assert a == b
    with pytest.raises(ValueError, match="non-finite"):
        plant_step(EngineState(np.nan, 2.8, 2.3), u, None)


def test_dpmax_follows_post_residual_state():
    x = plant_step(EngineState(7.0, 2.8, 2.3), ControlInput(200.0, 0.7, 0.2), np.random.default_rng(0))
    assert x.dpmax == pytest.approx(max(0.0, 2.5 + 0.8 * (x.imep - 3.25) - 0.25 * (x.ca50 - 7.0)))


def test_residual_at_zero_draw():
    x = np.array([9.0, 2.8, 2.0])
    s1, gam, s2 = residual_scales(x)
    assert np.allclose(true_residual(x, np.zeros(2)), [-s1 * gam, 0.0])


def test_residual_shape_statistics(rng):
    stable = np.array([7.0, 3.0, 2.5])
    r = true_residual_sample(np.broadcast_to(stable, (100000, 3)), rng)
    assert np.corrcoef(r.T)[0, 1] < 0
    late = true_residual_sample(np.broadcast_to([12.0, 3.0, 2.5], (100000, 3)), rng)
    assert late[:, 0].std() > r[:, 0].std()


def test_residual_mean_matches_formula(rng):
    x = np.array([11.0, 2.5, 1.5])
    n = 10**6
    r = true_residual_sample(np.broadcast_to(x, (n, 3)), rng)
    # E[w1^2 - 1] = 0 and E[w] = 0, so the analytic mean is zero
    se = r.std(axis=0) / np.sqrt(n)
    assert np.all(np.abs(r.mean(axis=0)) <= 3 * se)


def test_residual_rejects_non_finite(rng):
    with pytest.raises(ValueError):
        true_residual_sample(np.array([np.inf, 3.0, 2.0]), rng)


def test_reference_profile():
    assert reference_profile(0) == (7.0, 2.8)
    assert reference_profile(30) == (7.0, 2.2)
    assert reference_profile(60) == (7.0, 3.2)
    assert reference_profile(119) == (7.0, 3.9)
    assert reference_profile(500) == (7.0, 3.9)
    with pytest.raises(ValueError):
        reference_profile(-1)


def test_dataset_generation(tmp_path):
    assert len(generate_dataset(0, seed=1)) == 0
    a = generate_dataset(2000, seed=4)
    b = generate_dataset(2000, seed=4)
    assert len(a) == 2000
    pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
    a.save(pa)
    b.save(pb)
    assert pa.read_bytes() == pb.read_bytes()
    back = Dataset.load(pa)
    assert np.allclose(back.states, a.states, rtol=1e-8, atol=1e-12)
    assert pa.read_text().splitlines()[0] == "ca50_n,imep_n,dpmax_n,r_ca50_n,r_imep_n"
    assert np.all(np.isfinite(a.residuals))


def test_excitation_covers_input_box():
    d = generate_dataset(20000, seed=2)
    span = np.array(d.meta["input_max"]) - np.array(d.meta["input_min"])
    assert np.all(span >= 0.95 * 2.0)


def test_residual_coefficients_are_configurable(rng):
    quiet = ResidualCoefficients(s1_base=0.0, s1_ca_gain=0.0, s1_imep_gain=0.0, s2_base=0.0, s2_ca_gain=0.0)
    assert np.allclose(true_residual_sample(np.array([7.0, 3.0, 2.0]), rng, quiet), 0.0)
