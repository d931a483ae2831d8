"""Bootstrapping a 1-D Gaussian teacher into a student that is linear in its parameters.

The student is y(eps, t) = a(t) eps + b(t) with a, b expanded in Chebyshev
polynomials of t.  No data is used: every target comes from the student
itself plus one teacher call.

Run: python demos/02_linear_gaussian.py [steps]
"""

import sys
import time

import numpy as np

from bootdistill.boot import BootConfig, LinearStudent, distill, sample_student
from bootdistill.schedule import NoiseSchedule
from bootdistill.solvers import ddim_sample
from bootdistill.teacher import AnalyticGaussianTeacher

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 20000
sched = NoiseSchedule()
teacher = AnalyticGaussianTeacher([0.2], [[0.25]], sched)
student = LinearStudent.from_teacher(teacher, sched)

cfg = BootConfig(target_solver="heun", lr=1e-3, ema_decay=0.999, batch=128, steps=steps)
eps = np.random.default_rng(1).standard_normal((1000, 1))
ref, _ = ddim_sample(teacher, eps, 256, sched)
a, s = sched.alpha_sigma(sched.t_min)


def rmse(st):
    return np.sqrt(np.mean((a * sample_student(st, eps) + s * eps - ref) ** 2))


print(f"before training: RMSE {rmse(student):.4f}")
start = time.perf_counter()
student = distill(teacher, student, cfg, rng=np.random.default_rng(0))
print(f"after {steps} steps ({time.perf_counter() - start:.1f} s): RMSE {rmse(student):.4f}")

# the exact map is affine in eps: x = k eps + c
k = np.polyfit(eps[:, 0], ref[:, 0], 1)
got = np.polyfit(eps[:, 0], (a * sample_student(student, eps) + s * eps)[:, 0], 1)
print("DDIM-256 slope/intercept:", np.round(k, 4))
print("student  slope/intercept:", np.round(got, 4))
