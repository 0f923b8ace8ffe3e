import math

import numpy as np
import pytest

from bsde_qmle.drivers import builtin_driver
from bsde_qmle.errors import ConfigError, DimError, SimulationBlowup
from bsde_qmle.sde_sim import (
    ObservationRecord,
    ScenarioSpec,
    constant_vol_scenario,
    derive_seed,
    euler_y,
    heston_2d_scenario,
    make_rng,
    read_observation_csv,
    simulate_cir_full_truncation,
    simulate_scenario,
    simulate_vasicek_exact,
    vasicek_1d_scenario,
    write_observation_csv,
)


def test_vasicek_at_mean_without_noise_is_constant():
    path = simulate_vasicek_exact(2.0, 0.3, 0.0, 0.3, 5, 0.1, make_rng(1))
    assert path.shape == (6,)
    np.testing.assert_allclose(path, 0.3, rtol=0, atol=1e-15)


def test_vasicek_halving():
    path = simulate_vasicek_exact(1.0, 0.0, 0.0, 1.0, 1, math.log(2.0), make_rng(1))
    assert path[0] == 1.0
    assert path[1] == pytest.approx(0.5, rel=1e-14)


def test_vasicek_seed_determinism():
    a = simulate_vasicek_exact(2.0, 0.3, 0.025, 0.3, 1000, 0.01, make_rng(7))
    b = simulate_vasicek_exact(2.0, 0.3, 0.025, 0.3, 1000, 0.01, make_rng(7))
    assert np.array_equal(a, b)


@pytest.mark.parametrize("a,h", [(0.0, 0.1), (-1.0, 0.1), (1.0, 0.0)])
def test_vasicek_rejects_bad_params(a, h):
    with pytest.raises(ConfigError):
        simulate_vasicek_exact(a, 0.0, 1.0, 0.0, 3, h, make_rng(0))


def test_vasicek_exact_moments_match_analytic():
    """Exact transitions: mean and variance at t = 1 within 3 standard errors."""
    a, b, sigma, x0 = 2.0, 0.3, 0.5, 1.0
    reps = 10_000
    finals = np.array([simulate_vasicek_exact(a, b, sigma, x0, 10, 0.1, make_rng(s))[-1] for s in range(reps)])
    mean = b + (x0 - b) * math.exp(-a)
    var = sigma**2 * (1 - math.exp(-2 * a)) / (2 * a)
    assert abs(finals.mean() - mean) <= 3 * math.sqrt(var / reps)
    # SE of the sample variance for Gaussian data is var * sqrt(2 / (reps - 1))
    assert abs(finals.var(ddof=1) - var) <= 3 * var * math.sqrt(2 / (reps - 1))


def test_vasicek_exact_and_fine_euler_share_moments():
    """Both samplers hit the analytic t = 1 mean and variance within 3 standard errors."""
    a, b, sigma, x0 = 2.0, 0.3, 0.5, 1.0
    reps, steps = 10_000, 200
    rng = make_rng(3)
    euler = np.full(reps, x0)
    dt = 1.0 / steps
    for _ in range(steps):
        euler = euler + a * (b - euler) * dt + sigma * math.sqrt(dt) * rng.standard_normal(reps)
    exact = np.array([simulate_vasicek_exact(a, b, sigma, x0, 4, 0.25, make_rng(10_000 + s))[-1]
                      for s in range(reps)])
    mean = b + (x0 - b) * math.exp(-a)
    var = sigma**2 * (1 - math.exp(-2 * a)) / (2 * a)
    for sample in (exact, euler):
        assert abs(sample.mean() - mean) <= 3 * math.sqrt(var / reps)
        assert abs(sample.var(ddof=1) - var) <= 3 * var * math.sqrt(2 / (reps - 1))


def test_cir_constant_at_level():
    path = simulate_cir_full_truncation(1.0, 1.5, 0.0, 1.5, 50, 0.01, make_rng(0))
    np.testing.assert_allclose(path, 1.5, rtol=0, atol=1e-14)


def test_cir_single_step_from_zero():
    path = simulate_cir_full_truncation(1.0, 1.5, 0.0, 0.0, 1, 0.5, make_rng(0))
    assert path[1] == pytest.approx(0.75, rel=1e-15)


def test_cir_paper_parameters_stay_nonnegative():
    path = simulate_cir_full_truncation(1.0, 1.5, 0.5, 1.5, 100_000, 1e-3, make_rng(11))
    assert path.shape == (100_001,)
    assert path.min() >= 0.0
    assert np.isfinite(path[-1])


def test_cir_rejects_negative_start():
    with pytest.raises(ConfigError):
        simulate_cir_full_truncation(1.0, 1.5, 0.5, -0.1, 10, 0.1, make_rng(0))


def test_single_euler_step_by_hand():
    drv = builtin_driver("vasicek_sqrt")
    x = np.full((2, 1), 0.3)
    v = np.sqrt(0.4) * np.ones((2, 1, 1))
    path = euler_y(drv, [1.0], x, v, [1.0], np.zeros((1, 1)), 0.01)
    assert path[1, 0] - path[0, 0] == pytest.approx(math.sqrt(0.4) * 0.01, rel=1e-12)
    assert path[1, 0] - path[0, 0] == pytest.approx(0.006324555, abs=1e-9)


def test_euler_y_dependent_loop_matches_closed_form():
    # dY = mu Y dt with zero noise compounds as (1 + mu dt)^k
    drv = builtin_driver("heston_price", {"mu": -0.5})
    steps = 20
    x = np.zeros((steps + 1, 1))
    v = np.broadcast_to(np.eye(2), (steps + 1, 2, 2))
    path = euler_y(drv, [0.0, 0.0], x, v, [1.0, 2.0], np.zeros((steps, 2)), 0.1)
    np.testing.assert_allclose(path[-1], np.array([1.0, 2.0]) * 0.95**steps, rtol=1e-13)


def test_euler_blowup_reports_step():
    drv = builtin_driver("heston_price", {"mu": 1e308})
    x = np.ones((4, 1))
    v = np.broadcast_to(np.eye(2), (4, 2, 2))
    with pytest.raises(SimulationBlowup) as info:
        euler_y(drv, [0.0, 0.0], x, v, [1e10, 1e10], np.zeros((3, 2)), 1.0)
    assert info.value.step is not None


def test_zero_driver_is_pure_martingale():
    spec = constant_vol_scenario(np.eye(2))
    n, h = 20_000, 0.01
    obs = simulate_scenario(spec, n, h, 5)
    inc = np.diff(obs.y_path, axis=0) / math.sqrt(h)
    assert np.all(np.abs(inc.mean(axis=0)) <= 4 / math.sqrt(n))
    assert obs.x_path.shape == (n + 1, 0)


def test_scenario_determinism_and_shape():
    spec = heston_2d_scenario()
    a = simulate_scenario(spec, 2000, 1e-3, 42)
    b = simulate_scenario(spec, 2000, 1e-3, 42)
    assert np.array_equal(a.x_path, b.x_path) and np.array_equal(a.y_path, b.y_path)
    assert a.y_path.shape == (2001, 2) and a.x_path.shape == (2001, 1)
    assert a.seed == 42 and a.scenario_name == "heston_2d"
    c = simulate_scenario(spec, 2000, 1e-3, 43)
    assert not np.array_equal(a.y_path, c.y_path)


def test_substeps_record_every_substep():
    spec = vasicek_1d_scenario(substeps=4)
    obs = simulate_scenario(spec, 100, 0.01, 1)
    assert obs.y_path.shape == (101, 1)
    assert obs.y_path[0, 0] == 1.0 and obs.x_path[0, 0] == 0.3


def test_shared_noise_reuses_factor_normals():
    spec = vasicek_1d_scenario(shared_noise=True, sigma=0.0)
    obs = simulate_scenario(spec, 50, 0.01, 3)
    xi = make_rng(3).standard_normal(50)
    dy = np.diff(obs.y_path[:, 0])
    expected = np.sqrt(0.4) * 0.01 + np.sqrt(0.4) * xi * 0.1
    np.testing.assert_allclose(dy, expected, rtol=1e-10, atol=1e-14)


def test_quadratic_variation_recovers_vv():
    vol = np.array([[0.4, 0.0], [0.4, 0.4]])
    target = vol @ vol.T
    n, h = 20_000, 1e-3
    for seed in range(5):
        obs = simulate_scenario(constant_vol_scenario(vol), n, h, seed)
        dy = np.diff(obs.y_path, axis=0)
        qv = dy.T @ dy / (n * h)
        assert np.linalg.norm(qv - target) <= 5 / math.sqrt(n)


def test_scenario_dimension_checks():
    with pytest.raises(DimError):
        ScenarioSpec("heston_2d", builtin_driver("vasicek_sqrt"), [1.0], [1.0],
                     {"L": 1, "beta": 1.5, "sigma": 0.5, "nu0": 1.5})
    with pytest.raises(ConfigError):
        ScenarioSpec("nope", builtin_driver("vasicek_sqrt"), [1.0], [1.0])


def test_observation_record_validation():
    with pytest.raises(DimError):
        ObservationRecord(n=3, h=0.1, x_path=np.zeros((3, 1)), y_path=np.zeros((4, 1)))
    with pytest.raises(ConfigError):
        ObservationRecord(n=1, h=0.1, x_path=np.zeros((2, 0)), y_path=np.array([0.0, np.nan]))


def test_csv_round_trip(tmp_path):
    obs = simulate_scenario(heston_2d_scenario(), 50, 1e-3, 9)
    path = tmp_path / "obs.csv"
    write_observation_csv(obs, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "k,t,x_1,y_1,y_2"
    assert len(lines) == 52
    back = read_observation_csv(path, h=1e-3)
    assert np.array_equal(back.y_path, obs.y_path)
    assert np.array_equal(back.x_path, obs.x_path)
    assert back.n == obs.n


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    assert len({derive_seed(0, 100000, 13, 4, r) for r in range(100)}) == 100
    assert 0 <= derive_seed(-1, 5) < 2**64
