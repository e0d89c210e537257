import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone

from leoedge import oracles
from leoedge.compute import (
    PLATFORMS,
    DomainError,
    ExecTimeModel,
    FitError,
    GammaExecTimeModel,
    InfeasibleLoadError,
    PlatformSpec,
    WorkloadSpec,
    batch_exec_distribution,
    default_exec_model,
    fit_exec_model,
    load_exec_logs,
    max_fps,
    mean_exec_time,
    moment_matched_batch,
    optimal_frequency,
    power_at,
    save_exec_logs,
    synthetic_exec_logs,
)

W = WorkloadSpec()


@pytest.mark.parametrize("pid, fps", [("cloud_cpu", 62.377), ("sat_cpu", 5.398), ("nano", 17.231), ("agx", 32.45)])
def test_max_fps_reference(pid, fps):
    assert max_fps(PLATFORMS[pid], W) == pytest.approx(fps, rel=1e-3)


def test_mean_time_formula():
    p = PLATFORMS["agx"]
    assert mean_exec_time(p, p.f_max, W) == pytest.approx(1.122 * 79.1e9 / (4096 * 1.3e9) + 14.14e-3)


def test_frequency_domain():
    p = PLATFORMS["nano"]
    for bad in (0.0, -1.0, p.f_max * 1.01):
        with pytest.raises(DomainError):
            mean_exec_time(p, bad, W)
    assert power_at(p, p.f_max) == pytest.approx(p.p_max)
    assert power_at(p, p.f_max / 2) == pytest.approx(p.p_max / 8)


@settings(max_examples=200)
@given(st.sampled_from(sorted(PLATFORMS)), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_power_monotone_time_antitone(pid, a, b):
    p = PLATFORMS[pid]
    lo, hi = sorted((a * p.f_max, b * p.f_max))
    assert power_at(p, lo) <= power_at(p, hi)
    assert mean_exec_time(p, lo, W) >= mean_exec_time(p, hi, W)


@settings(max_examples=200)
@given(st.sampled_from(sorted(PLATFORMS)), st.floats(0.05, 0.95), st.sampled_from([5.0, 10.0, 20.0]))
def test_optimal_frequency_meets_the_slot_exactly(pid, frac, t):
    p = PLATFORMS[pid]
    n = frac * t * max_fps(p, W)
    f = optimal_frequency(p, W, n, t)
    assert 0 < f <= p.f_max
    assert n * mean_exec_time(p, f, W) == pytest.approx(t, rel=1e-9)


def test_optimal_frequency_infeasible():
    p = PLATFORMS["nano"]
    with pytest.raises(InfeasibleLoadError):
        optimal_frequency(p, W, 1.01 * 10 * max_fps(p, W), 10.0)
    with pytest.raises(InfeasibleLoadError):
        optimal_frequency(p, W, 10.0 / p.mu_sync, 10.0)
    with pytest.raises(ValueError):
        optimal_frequency(p, W, 0, 10.0)


def test_spec_validation():
    with pytest.raises(ValueError):
        WorkloadSpec(rho=0.5)
    with pytest.raises(ValueError):
        PlatformSpec("x", 0, 1e9, 1.0, 1, 1.0)
    assert W.semantic_bits_per_image == pytest.approx(788_513.0 / 2346.0)


def test_fit_recovers_generating_law():
    p = PLATFORMS["agx"]
    model = default_exec_model(p, W, seed=1)
    fs = np.linspace(0.3 * p.f_max, p.f_max, 7)
    # a cubic in f cannot follow a 1/f mean exactly; the misfit stays below 5 %
    assert np.allclose(model.mean(fs), mean_exec_time(p, fs, W), rtol=0.05)
    assert np.all(model.alpha(fs) > 0) and np.all(model.theta(fs) > 0)


def test_model_json_roundtrip():
    m = default_exec_model(PLATFORMS["nano"], W, seed=2, n_per_freq=500)
    back = ExecTimeModel.from_json(m.to_json())
    assert back.alpha_coef == m.alpha_coef and back.theta_coef == m.theta_coef


def test_fit_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(FitError):
        fit_exec_model([1e9] * 100, rng.gamma(5, 1, 100))
    f, t = synthetic_exec_logs(PLATFORMS["agx"], W, [4e8, 6e8, 8e8, 1e9], 10, rng)
    with pytest.raises(FitError):
        fit_exec_model(f, t)


def test_estimator_api(tmp_path):
    p = PLATFORMS["agx"]
    f, t = synthetic_exec_logs(p, W, np.linspace(0.3, 1, 6) * p.f_max, 2000, np.random.default_rng(4))
    path = tmp_path / "logs.csv"
    save_exec_logs(path, f, t)
    f2, t2 = load_exec_logs(path)
    assert np.array_equal(f, f2) and np.array_equal(t, t2)
    est = clone(GammaExecTimeModel(min_samples=50)).fit(f2.reshape(-1, 1), t2)
    pred = est.predict([[p.f_max]])
    assert pred[0] == pytest.approx(mean_exec_time(p, p.f_max, W), rel=0.05)
    assert est.get_params()["min_samples"] == 50
    d = est.predict_distribution(p.f_max, 10)
    assert d.mean == pytest.approx(10 * pred[0], rel=1e-9)


@pytest.mark.parametrize("alpha, theta, n", [(3.0, 0.2, 5), (50.0, 0.001, 40), (0.8, 1.5, 12)])
def test_batch_quantiles_against_monte_carlo(alpha, theta, n):
    m = ExecTimeModel((alpha,), (theta,), (1e8, 1e10))
    d = batch_exec_distribution(m, 1e9, n)
    ref = oracles.mc_gamma_sum(alpha, theta, n, replicas=40_000, seed=7)
    assert d.mean == pytest.approx(ref["mean"], rel=0.01)
    assert d.quantile(0.05) == pytest.approx(ref["q05"], rel=0.02)
    assert d.quantile(0.95) == pytest.approx(ref["q95"], rel=0.02)


def test_moment_matching():
    d = moment_matched_batch(0.03, 0.1, 100)
    assert d.mean == pytest.approx(3.0)
    assert np.sqrt(d.variance) / d.mean == pytest.approx(0.1 / 10)
    with pytest.raises(ValueError):
        batch_exec_distribution(ExecTimeModel((1.0,), (1.0,), (1.0, 2.0)), 1.5, 0)


def test_agx_frequency_for_200_images_in_10_s():
    # mean time per image must be 50 ms; derived by inverting the BSP law
    p = PLATFORMS["agx"]
    f = optimal_frequency(p, W, 200, 10.0)
    assert f == pytest.approx(1.122 * 79.1e9 / (4096 * (0.05 - 14.14e-3)), rel=1e-12)
    assert f == pytest.approx(0.6042e9, rel=1e-3)
