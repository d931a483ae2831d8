import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bootdistill.schedule import (
    NoiseSchedule,
    alpha_sigma,
    decay_factor,
    half_log_snr,
    lambda_prime,
    lambda_prime_discrete,
)

S = NoiseSchedule()


def test_alpha_sigma_examples():
    assert alpha_sigma(S, 0.0) == (1.0, 0.0)
    a, s = alpha_sigma(S, 0.5)
    assert a == pytest.approx(math.sqrt(2) / 2, abs=1e-15)
    assert s == pytest.approx(math.sqrt(2) / 2, abs=1e-15)
    a, s = alpha_sigma(S, 0.25)
    assert a == pytest.approx(0.9238795, abs=1e-7)
    assert s == pytest.approx(0.3826834, abs=1e-7)


def test_alpha_sigma_domain():
    with pytest.raises(ValueError):
        alpha_sigma(S, 1.2)
    with pytest.raises(ValueError):
        alpha_sigma(S, -0.1)


def test_vp_identity_on_grid():
    t = np.linspace(0, 1, 10_000)
    a, s = alpha_sigma(S, t)
    assert np.max(np.abs(a * a + s * s - 1)) <= 1e-14


def test_monotonicity_on_grid():
    t = np.linspace(S.t_min, S.t_max, 10_000)
    a, s = alpha_sigma(S, t)
    lam = half_log_snr(S, t)
    assert np.all(np.diff(a) < 0) and np.all(np.diff(s) > 0)
    assert np.all(np.diff(lam) > 0)
    assert np.all(np.diff(a**2 / s**2) < 0)


def test_half_log_snr_examples():
    assert half_log_snr(S, 0.5) == pytest.approx(0.0, abs=1e-15)
    assert half_log_snr(S, 0.25) == pytest.approx(-0.881374, abs=1e-6)
    for bad in (0.0, 1.0):
        with pytest.raises(ValueError):
            half_log_snr(S, bad)


def test_lambda_prime_examples():
    assert lambda_prime(S, 0.5) == pytest.approx(math.pi, abs=1e-12)
    t = np.linspace(0.05, 0.95, 50)
    np.testing.assert_allclose(lambda_prime(S, t), lambda_prime(S, 1 - t), rtol=1e-12)
    h = 2e-6
    fd = (half_log_snr(S, t + h) - half_log_snr(S, t - h)) / (2 * h)
    np.testing.assert_allclose(lambda_prime(S, t), fd, rtol=1e-8)


def test_lambda_prime_bounded_on_default_range():
    assert lambda_prime(S, S.t_min) < 51.0 and lambda_prime(S, S.t_max) < 51.0


def test_lambda_prime_discrete():
    t = 0.5
    assert 0.04 * lambda_prime_discrete(S, t, 0.04) == pytest.approx(0.118382, abs=1e-6)
    e1 = abs(lambda_prime_discrete(S, t, 0.02) - math.pi)
    e2 = abs(lambda_prime_discrete(S, t, 0.01) - math.pi)
    assert 1.8 <= e1 / e2 <= 2.2
    with pytest.raises(ValueError):
        lambda_prime_discrete(S, t, 0.0)
    with pytest.raises(ValueError):
        lambda_prime_discrete(S, 0.1, 0.2)


def test_decay_factor_closed_form():
    assert decay_factor(S, 0.5, 0.25) == pytest.approx(math.tan(math.pi / 8), abs=1e-12)
    assert decay_factor(S, 0.5, 0.25) == pytest.approx(0.414214, abs=1e-6)


@given(st.floats(0.03, 0.97), st.floats(0.0, 1.0))
def test_decay_factor_matches_log_snr(t, frac):
    s = 0.02 + frac * (t - 0.02)
    lhs = math.exp(half_log_snr(S, s) - half_log_snr(S, t))
    assert abs(lhs - decay_factor(S, t, s)) <= 1e-12 * max(1.0, lhs)
    assert 1 - decay_factor(S, t, s) == pytest.approx(1 - math.exp(half_log_snr(S, s) - half_log_snr(S, t)), abs=1e-12)


def test_schedule_config_round_trip():
    d = NoiseSchedule(t_min=0.05, t_max=0.9).to_dict()
    assert d == {"kind": "cosine", "t_min": 0.05, "t_max": 0.9}
    assert NoiseSchedule.from_dict(d) == NoiseSchedule(t_min=0.05, t_max=0.9)
    with pytest.raises(ValueError):
        NoiseSchedule.from_dict({**d, "extra": 1})
    with pytest.raises(ValueError):
        NoiseSchedule(kind="linear")
    with pytest.raises(ValueError):
        NoiseSchedule(t_min=0.5, t_max=0.4)
