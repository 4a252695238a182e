"""Exact PDMP simulation of the Morris-Lecar cable and convergence to the
averaged (deterministic) cable as the channel time scale eps shrinks.

Run: python3 demos/03_pdmp_averaging.py
"""

import time

import numpy as np

from pdmpfluct.morris_lecar import ml_system
from pdmpfluct.pdmp import simulate_averaged, simulate_pdmp, sup_l2_distance
from pdmpfluct.seeding import JUMP_LANE, stream

system = ml_system(K=64)
T = 2.4
avg = simulate_averaged(system, T, np.random.default_rng(0))
probe = avg.values(system, [0.05, 0.5])
print(f"averaged cable: u(0.05) in [{probe[:, 0].min():.2f}, {probe[:, 0].max():.2f}], "
      f"u(0.5) in [{probe[:, 1].min():.2f}, {probe[:, 1].max():.2f}]")

print("eps      jumps    sup_t ||u_eps - u||_L2   (mean of 5 paired replicas)")
for eps in (1.0, 0.1, 0.01, 0.001):
    t0 = time.perf_counter()
    errs, jumps = [], []
    for r in range(5):
        tr = simulate_pdmp(system, eps, T, stream(1, r, JUMP_LANE))
        errs.append(sup_l2_distance(tr, avg))
        jumps.append(tr.jumps.size)
    print(f"{eps:<8g} {int(np.mean(jumps)):<8d} {np.mean(errs):10.4f}   ({time.perf_counter() - t0:.1f} s)")
