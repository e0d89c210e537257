import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from leoedge.atmosphere import (
    DEFAULT_ACCEPT_PROB,
    DEFAULT_MEDIAN,
    DEFAULT_SIGMA_LN,
    DEFAULT_THRESHOLD,
    TurbulenceConfigError,
    TurbulenceModel,
    load_cdf_csv,
    sigma_for_acceptance,
)


def test_default_acceptance():
    m = TurbulenceModel()
    assert m.acceptance_probability == pytest.approx(0.65, abs=1e-12)
    assert DEFAULT_SIGMA_LN == pytest.approx(math.log(2e-14 / 1.1e-14) / stats.norm.ppf(0.65))


@given(st.floats(1e-16, 1e-13), st.floats(0.55, 0.99))
def test_sigma_inverts_cdf(median, p):
    thr = median * 3.0
    s = sigma_for_acceptance(median, thr, p)
    assert TurbulenceModel(median=median, sigma_ln=s, threshold=thr).acceptance_probability == pytest.approx(p)


def test_sigma_inconsistent_inputs():
    with pytest.raises(ValueError):
        sigma_for_acceptance(DEFAULT_MEDIAN, DEFAULT_THRESHOLD, 0.3)


def test_samples_are_positive_and_match_the_cdf():
    m = TurbulenceModel(rng_seed=5)
    x = m.sample_cn2(200_000)
    assert np.all(x > 0)
    assert np.mean(x <= DEFAULT_THRESHOLD) == pytest.approx(DEFAULT_ACCEPT_PROB, abs=0.005)
    assert np.median(x) == pytest.approx(DEFAULT_MEDIAN, rel=0.02)


def test_seed_reproducibility():
    a = TurbulenceModel(rng_seed=9).sample_cn2(10)
    b = TurbulenceModel(rng_seed=9).sample_cn2(10)
    c = TurbulenceModel(rng_seed=10).sample_cn2(10)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_gate_boundary():
    m = TurbulenceModel()
    assert m.gate_observation(DEFAULT_THRESHOLD)
    assert not m.gate_observation(np.nextafter(DEFAULT_THRESHOLD, 1.0))
    with pytest.raises(ValueError):
        m.gate_observation(-1e-15)


def test_invalid_configs():
    with pytest.raises(TurbulenceConfigError):
        TurbulenceModel(threshold=0)
    with pytest.raises(TurbulenceConfigError):
        TurbulenceModel(kind="gaussian")
    with pytest.raises(TurbulenceConfigError):
        TurbulenceModel(kind="empirical")
    with pytest.raises(TurbulenceConfigError):
        TurbulenceModel(kind="empirical", cdf_values=np.array([2.0, 1.0]), cdf_probs=np.array([0.1, 0.9]))


def test_empirical_roundtrip(tmp_path):
    p = tmp_path / "cdf.csv"
    p.write_text("cn2,cumulative_probability\n0.0,0.0\n1e-14,0.4\n2e-14,0.65\n5e-14,1.0\n")
    v, q = load_cdf_csv(p)
    m = TurbulenceModel.from_csv(p, rng_seed=1)
    assert m.acceptance_probability == pytest.approx(0.65)
    assert float(m.cdf(1.5e-14)) == pytest.approx(0.525)
    assert float(m.quantile(0.4)) == pytest.approx(1e-14)
    x = m.sample_cn2(100_000)
    assert np.all((x >= v[0]) & (x <= v[-1]))
    assert np.mean(x <= 2e-14) == pytest.approx(0.65, abs=0.01)


def test_cdf_file_needs_named_columns(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("x,y\n0,0\n1,1\n")
    with pytest.raises(TurbulenceConfigError):
        load_cdf_csv(p)
