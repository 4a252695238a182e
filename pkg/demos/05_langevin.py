"""Langevin approximation: the averaged cable plus sqrt(eps) Gaussian
noise with the central-limit covariance.  Mean-square distance to the
averaged path scales like eps.

Run: python3 demos/05_langevin.py
"""

import numpy as np

from pdmpfluct.langevin import LangevinConfig, langevin_ensemble, mollified
from pdmpfluct.morris_lecar import ml_system

system = mollified(ml_system(K=64), 0.009)
T = 1.0
det = langevin_ensemble(LangevinConfig(eps=0.0, K=64, T=T), system, 1)[1][0]

eps_grid = np.array([1e-1, 1e-2, 1e-3])
means = []
for eps in eps_grid:
    _, paths = langevin_ensemble(LangevinConfig(eps=eps, K=64, T=T, seed=3), system, 20)
    sup2 = np.max(np.sum((paths - det) ** 2, axis=2), axis=1)
    means.append(sup2.mean())
    print(f"eps={eps:<6g} E sup_t ||u_lang - u||^2 = {means[-1]:.5g}   / eps = {means[-1] / eps:.4g}")
print("log-log slope:", round(np.polyfit(np.log(eps_grid), np.log(means), 1)[0], 3))
