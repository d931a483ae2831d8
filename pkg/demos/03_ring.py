"""Eight-Gaussian ring: teacher, BOOT student, energy distance and scatter plots.

Run: python demos/03_ring.py [teacher_steps] [student_steps] [outdir]
Defaults are the full 20k/20k budget (several minutes on one core).
"""

import sys
import time
from pathlib import Path

from bootdistill import experiments as ex
from bootdistill.config import ExperimentConfig
from bootdistill.metrics import scatter_svg

t_steps = int(sys.argv[1]) if len(sys.argv) > 1 else 20000
s_steps = int(sys.argv[2]) if len(sys.argv) > 2 else 20000
out = Path(sys.argv[3] if len(sys.argv) > 3 else "runs/demo_ring")
out.mkdir(parents=True, exist_ok=True)

cfg = ExperimentConfig(seed=0)
cfg.teacher.steps = t_steps

start = time.perf_counter()
teacher, data = ex.fit_teacher(cfg)
print(f"teacher: {t_steps} steps in {time.perf_counter() - start:.0f} s")

start = time.perf_counter()
boot = ex.toy_boot_config(steps=s_steps)
d = ex.distill_run(teacher, boot, None, ex.streams(cfg.seed)["distill"],
                   callback=lambda r: r["step"] % 2000 == 0 and print(f"  step {r['step']:6d}  loss_bs {r['loss_bs']:.4g}"))
print(f"student: {s_steps} steps in {time.perf_counter() - start:.0f} s")

res = ex.evaluate_student(d.ema_student(), teacher, data, 2000, 64, cfg.seed)
samples = res.pop("_samples")
print(f"energy distance (same noises)  {res['energy_distance']:.4f}")
print(f"energy distance (fresh noises) {res['energy_distance_unpaired']:.4f}")
print(f"teacher-vs-teacher floor       {res['teacher_floor']:.4f}")
print(f"mode coverage student {res['mode_coverage']}/8, teacher {res['teacher_mode_coverage']}/8")
scatter_svg(samples["student"], out / "student.svg")
scatter_svg(samples["teacher"], out / "teacher.svg")
print("wrote", out / "student.svg", out / "teacher.svg")
