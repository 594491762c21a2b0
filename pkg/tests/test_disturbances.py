import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asvtrack.config import ConfigError
from asvtrack.disturbances import (
    KNOT,
    CurrentModel,
    Disturbances,
    WaveModel,
    WindModel,
    current_step,
    current_wrench,
    default_scenario,
    scenario_from_config,
    total_env_wrench,
    wave_step,
    wind_wrench,
)
from asvtrack.dynamics import ModelParameters

PARAMS = ModelParameters()


def batch_mean_se(samples, n_batches=50):
    """Mean and standard error from non-overlapping batch means (handles autocorrelation)."""
    batches = np.array_split(np.asarray(samples), n_batches)
    means = np.array([b.mean() for b in batches])
    return float(np.mean(samples)), float(means.std(ddof=1) / math.sqrt(n_batches))


def test_default_wind_speed_is_four_knots():
    assert WindModel().speed == pytest.approx(2.058, abs=1e-3)
    assert 4 * KNOT == pytest.approx(2.057776)


def test_wind_zero_case():
    model = WindModel(speed=0.0)
    np.testing.assert_array_equal(wind_wrench(model, [0, 0, 0.3, 0, 0, 0]), np.zeros(3))


def test_head_wind_pushes_backwards():
    # wind blowing toward -x, vessel heading +x at rest
    model = WindModel(speed=2.0, direction=math.pi)
    tau = wind_wrench(model, [0, 0, 0.0, 0, 0, 0])
    assert tau[0] < 0
    assert tau[1] == pytest.approx(0.0, abs=1e-12)
    assert tau[2] == pytest.approx(0.0, abs=1e-12)
    # vessel moving into still air feels the same kind of load
    still = wind_wrench(WindModel(speed=0.0), [0, 0, 0.0, 2.0, 0, 0])
    np.testing.assert_allclose(still, tau, atol=1e-12)


def test_wind_magnitude_hand_value():
    model = WindModel(speed=2.0, direction=math.pi)
    # 0.5 * 1.225 * 4 * 0.7 * 0.045
    assert wind_wrench(model, [0, 0, 0, 0, 0, 0])[0] == pytest.approx(-0.5 * 1.225 * 4 * 0.7 * 0.045)


@given(st.floats(0.1, 5), st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi))
def test_wind_quadratic_scaling(speed, direction, psi):
    a = wind_wrench(WindModel(speed=speed, direction=direction), [0, 0, psi, 0, 0, 0])
    b = wind_wrench(WindModel(speed=2 * speed, direction=direction), [0, 0, psi, 0, 0, 0])
    np.testing.assert_allclose(b, 4 * a, rtol=1e-12, atol=1e-14)


@given(st.floats(0, 5), st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi),
       st.floats(-1, 1), st.floats(-1, 1), st.floats(-3, 3))
def test_wind_rotation_invariance(speed, direction, psi, u, v, shift):
    a = wind_wrench(WindModel(speed=speed, direction=direction), [0, 0, psi, u, v, 0])
    b = wind_wrench(WindModel(speed=speed, direction=direction + shift), [0, 0, psi + shift, u, v, 0])
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_wind_validation():
    with pytest.raises(ConfigError):
        WindModel(speed=-1.0)
    with pytest.raises(ConfigError):
        WindModel(frontal_area=0.0)


def test_wave_unforced_stays_zero():
    model = WaveModel(gain=0.0, moment_gain=0.0, drift_sigma=0.0)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        model, tau = wave_step(model, [0, 0, 0.4, 0, 0, 0], 0.1, rng)
        assert not np.any(tau)


def test_wave_oscillation_zero_mean():
    model = WaveModel(drift_sigma=0.0, force_cap=1e9, moment_cap=1e9)
    rng = np.random.default_rng(11)
    samples = np.empty(100_000)
    for k in range(samples.size):
        model, _ = wave_step(model, [0, 0, 0, 0, 0, 0], 0.1, rng)
        samples[k] = model.oscillatory_force
    mean, se = batch_mean_se(samples)
    assert abs(mean) < 3 * se
    assert samples.std() > 0


def test_wave_force_cap():
    model = WaveModel(gain=5.0, drift_sigma=0.5, force_cap=1.0, moment_cap=0.3)
    rng = np.random.default_rng(2)
    hit = False
    for k in range(5000):
        model, tau = wave_step(model, [0, 0, 0.01 * k, 0, 0, 0], 0.1, rng)
        assert math.hypot(tau[0], tau[1]) <= 1.0 + 1e-12
        assert abs(tau[2]) <= 0.3 + 1e-12
        hit |= math.hypot(tau[0], tau[1]) > 0.999
    assert hit


def test_wave_default_cap_binds_rarely():
    model = WaveModel()
    rng = np.random.default_rng(5)
    clipped = 0
    for _ in range(3000):
        model, tau = wave_step(model, [0, 0, 0, 0, 0, 0], 0.1, rng)
        clipped += math.hypot(tau[0], tau[1]) >= 1.0
    assert clipped / 3000 < 0.05


def test_wave_validation():
    with pytest.raises(ConfigError):
        WaveModel(lambda_w=0.0)
    with pytest.raises(ValueError):
        wave_step(WaveModel(), [0] * 6, 0.0, np.random.default_rng(0))


def test_current_analytic_decay():
    model = CurrentModel(mu=0.1, sigma=0.0, speed=0.2)
    rng = np.random.default_rng(0)
    dt = 0.01
    for k in range(1, 2001):
        model, _ = current_step(model, dt, rng)
        if k % 500 == 0:
            exact = 0.2 * math.exp(-0.1 * k * dt)
            # Euler relative error grows like t * mu^2 * dt / 2
            assert model.speed == pytest.approx(exact, rel=k * dt * 0.1**2 * dt)
            assert model.speed == pytest.approx(0.2 * (1 - 0.1 * dt) ** k, rel=1e-12)


def test_current_cap_and_floor():
    model = CurrentModel(mu=0.01, sigma=0.5, speed=0.1, cap=0.2)
    rng = np.random.default_rng(1)
    for _ in range(20_000):
        model, v_c = current_step(model, 0.1, rng)
        assert 0.0 <= model.speed <= 0.2
        assert math.hypot(v_c[0], v_c[1]) <= 0.2 + 1e-15


def test_current_unclamped_stationary_std():
    mu, sigma = 0.5, 0.03
    model = CurrentModel(mu=mu, sigma=sigma, speed=0.0, cap=None)
    rng = np.random.default_rng(7)
    n = 1_000_000
    speeds = np.empty(n)
    for k in range(n):
        model, _ = current_step(model, 0.1, rng)
        speeds[k] = model.speed
    expected = sigma / math.sqrt(2 * mu)
    assert speeds[1000:].std() == pytest.approx(expected, rel=0.10)


def test_current_body_frame_projection():
    model = CurrentModel(sigma=0.0, speed=0.1, direction=0.5, mu=1e-9)
    _, v_c = current_step(model, 0.1, np.random.default_rng(0), psi=0.5)
    np.testing.assert_allclose(v_c, [0.1, 0.0, 0.0], atol=1e-9)


def test_current_only_surge_load():
    tau = current_wrench(PARAMS, [0.1, 0.0, 0.0])
    np.testing.assert_allclose(tau, [0.6, 0.0, 0.0], atol=1e-15)


def test_total_wrench_disabled_is_zero():
    scenario = Disturbances()
    assert not scenario.active
    _, tau = total_env_wrench(scenario.wind, scenario.wave, scenario.current, PARAMS, [0] * 6, 0.1, scenario.rngs)
    np.testing.assert_array_equal(tau, np.zeros(3))


def test_total_wrench_current_only():
    scenario = Disturbances(current=CurrentModel(sigma=0.0, mu=1e-12, speed=0.1, direction=0.0))
    tau = scenario.step(PARAMS, [0] * 6, 0.1)
    np.testing.assert_allclose(tau, [0.6, 0.0, 0.0], atol=1e-9)


def test_superposition():
    state = [0, 0, 0.3, 0.2, -0.05, 0.1]
    both = Disturbances(wind=WindModel(direction=1.0), wave=WaveModel(direction=2.0), seed=4)
    wind_only = Disturbances(wind=WindModel(direction=1.0), seed=4)
    wave_only = Disturbances(wave=WaveModel(direction=2.0), seed=4)
    for _ in range(50):
        total = both.step(PARAMS, state, 0.1)
        parts = wind_only.step(PARAMS, state, 0.1) + wave_only.step(PARAMS, state, 0.1)
        np.testing.assert_allclose(total, parts, atol=1e-12)


def _trace(seed):
    scenario = default_scenario(seed)
    return np.array([scenario.step(PARAMS, [0, 0, 0.1 * k, 0.2, 0, 0], 0.1) for k in range(200)])


def test_seed_reproducibility():
    assert np.array_equal(_trace(3), _trace(3))
    assert not np.array_equal(_trace(3), _trace(4))


def test_scenario_from_config():
    flat = {"wind.speed_knots": 2.0, "wind.direction_deg": 90.0, "current.cap_mps": 0.1,
            "current.initial_mps": 0.5, "seed": 9}
    scenario = scenario_from_config(flat)
    assert scenario.wind.enabled and scenario.current.enabled and not scenario.wave.enabled
    assert scenario.wind.speed == pytest.approx(2 * KNOT)
    assert scenario.wind.direction == pytest.approx(math.pi / 2)
    assert scenario.current.speed == pytest.approx(0.1)
    assert scenario.seed == 9


@settings(max_examples=25)
@given(st.integers(0, 2**31 - 1))
def test_current_clamp_invariant_any_seed(seed):
    model = CurrentModel()
    rng = np.random.default_rng(seed)
    for _ in range(300):
        model, _ = current_step(model, 0.1, rng)
        assert 0.0 <= model.speed <= model.cap
