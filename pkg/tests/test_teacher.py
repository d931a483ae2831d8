import math

import numpy as np
import pytest

from bootdistill.data import GaussianRing
from bootdistill.schedule import NoiseSchedule, alpha_sigma
from bootdistill.teacher import (
    AnalyticGaussianTeacher,
    DenoiserNet,
    PredictionKind,
    analytic_posterior_mean,
    output_from_signal,
    signal_from_output,
    teacher_batch_loss,
    train_teacher,
)
from bootdistill.verify import check_kind_roundtrip, check_posterior_quadrature

S = NoiseSchedule()


def _noisy(rng, x0, t):
    a, s = alpha_sigma(S, t)
    eps = rng.standard_normal(x0.shape)
    return a[:, None] * x0 + s[:, None] * eps, eps


def test_perfect_teacher_has_zero_loss():
    rng = np.random.default_rng(0)
    net = DenoiserNet.create(rng, 2, S, hidden=(8,))
    for p in net.params.params.values():
        p.data[...] = 0.0
    x0 = np.zeros((16, 2))
    t = rng.uniform(S.t_min, S.t_max, 16)
    loss = teacher_batch_loss(net, x0, t, rng.standard_normal((16, 2)))
    assert float(loss.data) == 0.0


def test_constant_data_teacher_predicts_constant():
    c = 1.5
    rng = np.random.default_rng(1)
    net = DenoiserNet.create(rng, 1, S, hidden=(32, 32), time_dim=16, max_freq=20.0)
    data = lambda r, n: (np.full((n, 1), c), None)  # noqa: E731
    train_teacher(data, net, S, 1500, lr=3e-3, batch=128, rng=rng)
    train_teacher(data, net, S, 500, lr=3e-4, batch=128, rng=rng)
    t = rng.uniform(S.t_min, S.t_max, 200)
    x_t, _ = _noisy(rng, np.full((200, 1), c), t)
    assert np.max(np.abs(net.predict_signal(x_t, t) - c)) < 0.05


def test_ring_teacher_loss_decreases_early():
    rng = np.random.default_rng(0)
    net = DenoiserNet.create(rng, 2, S)
    losses = []
    train_teacher(GaussianRing().sample, net, S, 100, lr=1e-3, batch=256, rng=rng, callback=lambda i, v: losses.append(v))
    smooth = np.convolve(losses, np.ones(20) / 20, mode="valid")
    assert smooth[-1] < smooth[0]
    assert np.mean(losses[-20:]) < np.mean(losses[:20])


def test_train_teacher_rejects_bad_inputs():
    rng = np.random.default_rng(0)
    net = DenoiserNet.create(rng, 2, S, hidden=(4,))
    with pytest.raises(ValueError):
        train_teacher(GaussianRing().sample, net, S, 1, uncond_prob=1.5)
    net3 = DenoiserNet.create(rng, 3, S, hidden=(4,))
    with pytest.raises(ValueError, match="dimension"):
        train_teacher(GaussianRing().sample, net3, S, 1)


def test_train_teacher_aborts_on_nan():
    rng = np.random.default_rng(0)
    net = DenoiserNet.create(rng, 2, S, hidden=(4,))
    with pytest.raises(FloatingPointError, match="step 0"):
        train_teacher(lambda r, n: (np.full((n, 2), np.nan), None), net, S, 3, rng=rng)


def test_noise_kind_truth_recovers_signal():
    rng = np.random.default_rng(2)
    x0 = rng.standard_normal((10, 2))
    t = rng.uniform(S.t_min, S.t_max, 10)
    x_t, eps = _noisy(rng, x0, t)
    np.testing.assert_allclose(signal_from_output(PredictionKind.NOISE, eps, x_t, t, S), x0, atol=1e-12)


def test_v_kind_truth_recovers_signal():
    rng = np.random.default_rng(3)
    x0 = rng.standard_normal((10, 2))
    t = rng.uniform(S.t_min, S.t_max, 10)
    x_t, eps = _noisy(rng, x0, t)
    a, s = alpha_sigma(S, t)
    v = a[:, None] * eps - s[:, None] * x0
    np.testing.assert_allclose(signal_from_output(PredictionKind.V, v, x_t, t, S), x0, atol=1e-12)


def test_kind_round_trip():
    assert check_kind_roundtrip().passed
    rng = np.random.default_rng(4)
    x0 = rng.standard_normal((5, 2))
    t = np.full(5, 0.3)
    x_t, _ = _noisy(rng, x0, t)
    for kind in PredictionKind:
        out = output_from_signal(kind, x0, x_t, t, S)
        np.testing.assert_allclose(output_from_signal(kind, signal_from_output(kind, out, x_t, t, S), x_t, t, S), out, atol=1e-12)


def test_noise_kind_refuses_alpha_zero():
    with pytest.raises(FloatingPointError):
        signal_from_output(PredictionKind.NOISE, np.zeros((1, 1)), np.zeros((1, 1)), 1.0, S)


def test_predict_signal_shape_and_conditions():
    rng = np.random.default_rng(5)
    net = DenoiserNet.create(rng, 2, S, hidden=(8,), n_classes=3)
    x = rng.standard_normal((7, 2))
    assert net.predict_signal(x, 0.5).shape == (7, 2)
    assert net.predict_signal(x, 0.5, 3).shape == (7, 2)
    assert net.predict_signal(x, 0.5, np.arange(7) % 3).shape == (7, 2)
    with pytest.raises(ValueError):
        net.predict_signal(x, 0.5, 4)
    uncond = DenoiserNet.create(rng, 2, S, hidden=(8,))
    with pytest.raises(ValueError):
        uncond.predict_signal(x, 0.5, 0)


def test_posterior_mean_limits():
    teacher = AnalyticGaussianTeacher([0.3, -0.2], [[2.0, 0.5], [0.5, 1.0]], S)
    x = np.array([[1.0, 2.0], [-1.0, 0.5]])
    np.testing.assert_allclose(analytic_posterior_mean(teacher, x, 1e-7, S), x, atol=1e-9)
    std = AnalyticGaussianTeacher([0.0, 0.0], np.eye(2), S)
    for t in (0.1, 0.5, 0.9):
        a, _ = alpha_sigma(S, t)
        np.testing.assert_allclose(analytic_posterior_mean(std, x, t, S), a * x, atol=1e-14)


def test_posterior_mean_one_dimensional_example():
    teacher = AnalyticGaussianTeacher([1.0], [[4.0]], S)
    r = math.sqrt(2) / 2
    for x_t in (-2.0, 0.0, 1.3):
        want = 1 + r * 4 / (2 + 0.5) * (x_t - r)
        assert analytic_posterior_mean(teacher, np.array([[x_t]]), 0.5, S)[0, 0] == pytest.approx(want, abs=1e-13)
    assert check_posterior_quadrature().passed


def test_analytic_teacher_minimises_denoising_loss():
    rng = np.random.default_rng(6)
    teacher = AnalyticGaussianTeacher([0.5, -1.0], [[1.0, 0.3], [0.3, 0.5]], S)
    x0, _ = teacher.sample(rng, 200_000)
    x_t, _ = _noisy(rng, x0, np.full(len(x0), 0.6))
    best = analytic_posterior_mean(teacher, x_t, 0.6, S)
    base = np.mean(np.sum((best - x0) ** 2, axis=1))
    for shift in (np.array([0.05, 0.0]), np.array([0.0, -0.05])):
        assert np.mean(np.sum((best + shift - x0) ** 2, axis=1)) > base
    assert np.mean(np.sum((1.05 * best - x0) ** 2, axis=1)) > base


def test_analytic_teacher_rejects_bad_covariance():
    with pytest.raises(ValueError):
        AnalyticGaussianTeacher([0.0, 0.0], [[1.0, 2.0], [0.0, 1.0]], S)
    with pytest.raises(ValueError):
        AnalyticGaussianTeacher([0.0], [[-1.0]], S)


def test_flow_map_matches_fine_ddim():
    from bootdistill.solvers import ddim_sample

    teacher = AnalyticGaussianTeacher([0.5], [[0.3]], S)
    eps = np.linspace(-2, 2, 9)[:, None]
    x, _ = ddim_sample(teacher, eps, 4096, S)
    np.testing.assert_allclose(x, teacher.flow_map(eps, S.t_max, S.t_min), atol=2e-3)


def test_cfg_teacher_answers_null_and_real():
    rng = np.random.default_rng(7)
    data = GaussianRing(n_classes=2)
    net = DenoiserNet.create(rng, 2, S, hidden=(16,), n_classes=2)
    train_teacher(data.sample, net, S, 20, rng=rng, uncond_prob=0.2)
    x = rng.standard_normal((4, 2))
    for cond in (None, 0, 1, 2):
        assert np.all(np.isfinite(net.predict_signal(x, 0.4, cond)))
