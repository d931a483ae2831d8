"""DDIM and the Signal-ODE are the same sampler written in two coordinates.

Run: python demos/01_signal_ode.py
"""

import numpy as np

from bootdistill.schedule import NoiseSchedule
from bootdistill.solvers import ddim_sample, signal_ode_sample
from bootdistill.teacher import AnalyticGaussianTeacher, DenoiserNet
from bootdistill.verify import convergence_ratios

sched = NoiseSchedule()
rng = np.random.default_rng(0)

# an untrained MLP is as good a teacher as any for this identity
net = DenoiserNet.create(rng, 2, sched, hidden=(32, 32))
eps = rng.standard_normal((5, 2))

x_ddim, _ = ddim_sample(net, eps, 64, sched)
y, _ = signal_ode_sample(net, eps, 64, sched, method="exact")
a, s = sched.alpha_sigma(sched.t_min)
x_sig = a * y + s * eps
print("DDIM x      :", x_ddim[0])
print("Signal-ODE x:", x_sig[0])
print("max |diff|  : %.2e" % np.max(np.abs(x_ddim - x_sig)))

# Euler vs Heun on a Gaussian teacher whose flow map is known in closed form
teacher = AnalyticGaussianTeacher([0.5, -1.0], [[1.0, 0.3], [0.3, 0.5]], sched)
for method in ("euler", "heun"):
    ratios, errs = convergence_ratios(method, teacher=teacher)
    print(f"{method:5s} errors", " ".join(f"{e:.2e}" for e in errs), " ratios", " ".join(f"{r:.2f}" for r in ratios))
