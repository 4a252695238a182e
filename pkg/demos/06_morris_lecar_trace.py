"""Morris-Lecar scenario: closed forms against the generic machinery and
the trace of the fluctuation covariance along the averaged path.

Writes demo_results/trace.svg.

Run: python3 demos/06_morris_lecar_trace.py
"""

import os

import numpy as np

from pdmpfluct import experiments
from pdmpfluct.config import default_config
from pdmpfluct.morris_lecar import ml_trace_bound

cfg = default_config().replace(out_dir="demo_results")
system = experiments.build_system(cfg)
print(f"effective diffusivity {cfg.params.diffusivity}, {cfg.params.N_K} potassium channels, K={cfg.K}")

worst = np.zeros(3)
for i in range(20):
    coeffs, states = experiments.ml_instance(cfg, system, i)
    worst = np.maximum(worst, experiments.check_ml_instance(cfg, system, coeffs, states))
print("closed form vs generic, max relative gap (phi, s_i, C):", worst)

ref, series, _ = experiments.averaged_trace(cfg, system)
bound = ml_trace_bound(cfg.params, system.basis, float(ref.h_norms(system).max()))
for t in (0.0, 0.05, 0.1, 0.5, 1.0, 2.4):
    n = int(np.argmin(np.abs(series.times - t)))
    print(f"t={series.times[n]:<5.2f} Tr Q_t = {series.trace[n]:9.3f}  (+ tail <= {series.tail_bound[n]:.3f})")
print(f"closed-form bound {bound:.4g}")
os.makedirs(cfg.out_dir, exist_ok=True)
with open(os.path.join(cfg.out_dir, "trace.svg"), "w") as fh:
    fh.write(experiments.line_plot_svg(series.times, series.trace, "t", "Tr Q_t"))
print("wrote", os.path.join(cfg.out_dir, "trace.svg"))
