"""One student for every guidance weight: w is an input, sampled in [1, 5] during training.

Run: python demos/04_guidance.py [teacher_steps] [student_steps]
"""

import sys

from bootdistill import experiments as ex
from bootdistill.config import ExperimentConfig
from bootdistill.guidance import GuidanceSpec

t_steps = int(sys.argv[1]) if len(sys.argv) > 1 else 20000
s_steps = int(sys.argv[2]) if len(sys.argv) > 2 else 20000

cfg = ExperimentConfig(seed=0)
cfg.teacher.steps = t_steps
cfg.teacher.dataset = dict(cfg.teacher.dataset, n_classes=2)
teacher, data = ex.fit_teacher(cfg)

boot = ex.toy_boot_config(steps=s_steps, weighting="inv_lambda_prime_sq")
d = ex.distill_run(teacher, boot, GuidanceSpec(weight_range=(1.0, 5.0)), ex.streams(0)["distill"])
rep = ex.guidance_report(d.ema_student(), data, (1.0, 2.0, 3.0, 4.0), 2000, 0)

print("   w   nearest-mode dist   cov trace")
for w, dist, trace in rep["mean"]:
    print(f"{w:4.1f}   {dist:17.4f}   {trace:9.3f}")
