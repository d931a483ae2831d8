import numpy as np
import pytest

from bootdistill.baselines import ConsistencyStudent, consistency_baseline, direct_distill_baseline
from bootdistill.boot import LinearStudent, sample_student
from bootdistill.data import GaussianRing
from bootdistill.schedule import NoiseSchedule, alpha_sigma
from bootdistill.solvers import ddim_sample
from bootdistill.teacher import AnalyticGaussianTeacher, DenoiserNet

S = NoiseSchedule()


def test_direct_distillation_matches_its_solver():
    teacher = AnalyticGaussianTeacher([0.2], [[0.25]], S)
    student = LinearStudent.from_teacher(teacher, S)
    teacher.counter.reset()
    losses = []
    direct_distill_baseline(teacher, student, 1500, 16, lr=1e-3, rng=np.random.default_rng(0),
                            callback=lambda i, v: losses.append(v))
    assert teacher.counter.nfe == 1500 * 128 * 16
    eps = np.random.default_rng(1).standard_normal((300, 1))
    x, _ = ddim_sample(teacher, eps, 16, S)
    a, s = alpha_sigma(S, S.t_min)
    rmse = np.sqrt(np.mean((sample_student(student, eps) - (x - s * eps) / a) ** 2))
    assert rmse < 1e-3
    assert losses[-1] < 1e-3 * losses[0]


def _ring_teacher(seed=0):
    net = DenoiserNet.create(np.random.default_rng(seed), 2, S, hidden=(16, 16))
    return net


def test_consistency_student_is_identity_at_t_min():
    student = ConsistencyStudent.from_teacher(_ring_teacher())
    assert student.c_skip(S.t_min) == pytest.approx(1.0, abs=1e-15)
    assert 0 < student.c_skip(S.t_max) < 1
    x = np.random.default_rng(2).standard_normal((5, 2))
    np.testing.assert_allclose(student.forward(x, S.t_min).data, x, atol=1e-14)


def test_consistency_target_moves_only_by_ema():
    net = _ring_teacher(1)
    student = ConsistencyStudent.from_teacher(net)
    before = {k: v.copy() for k, v in student.params.shadow.items()}
    consistency_baseline(net, GaussianRing().sample, student, 1, lr=1e-3, target_decay=0.9, batch=16)
    for k, p in student.params.params.items():
        np.testing.assert_allclose(student.params.shadow[k], 0.9 * before[k] + 0.1 * p.data, rtol=1e-13, atol=1e-15)
    frozen = ConsistencyStudent.from_teacher(net)
    ref = {k: v.copy() for k, v in frozen.params.shadow.items()}
    consistency_baseline(net, GaussianRing().sample, frozen, 3, lr=0.0, batch=16)
    for k in ref:
        np.testing.assert_allclose(frozen.params.shadow[k], ref[k], rtol=1e-15, atol=1e-16)


def test_consistency_loss_is_finite_and_logged():
    net = _ring_teacher(2)
    student = ConsistencyStudent.from_teacher(net)
    losses = []
    consistency_baseline(net, GaussianRing().sample, student, 5, batch=16, callback=lambda i, v: losses.append(v))
    assert len(losses) == 5 and np.all(np.isfinite(losses))
    assert student.sample(np.zeros((3, 2))).shape == (3, 2)
