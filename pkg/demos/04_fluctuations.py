"""Corrector (Poisson equation), Green-Kubo variance and the diffusion
operator of the central limit.

Run: python3 demos/04_fluctuations.py
"""

import numpy as np

from pdmpfluct.fluctuation import additive_functional, center, channel_variance, diffusion_matrix, solve_phi_integral, solve_phi_linear
from pdmpfluct.kinetics import random_generator, stationary_vector
from pdmpfluct.morris_lecar import ml_system

rng = np.random.default_rng(0)
q = random_generator(rng, 4)
mu = stationary_vector(q)
d = center(rng.normal(size=4), mu)

# two independent routes to the corrector: B phi = -d and the time integral
phi_lin = solve_phi_linear(q, d, mu)
phi_int = solve_phi_integral(q, d, mu)
print("phi (linear)  :", np.round(phi_lin, 10))
print("phi (integral):", np.round(phi_int, 10))
s = channel_variance(mu, d, phi_lin)
print(f"s = mu(d phi) = {s:.6f}")

# eps^{-1/2} int_0^t d(r_s) ds has variance close to 2 s t for small eps
t = 1.0
for eps in (1e-1, 1e-2, 1e-3):
    x = additive_functional(q, d, t, eps, 10_000, rng, mu=mu)
    print(f"eps={eps:<6g} Var = {x.var(ddof=1):.4f}   Green-Kubo 2 s t = {2 * s * t:.4f}")

# diffusion operator of the cable at a random state: a = M M^T, rank <= N
system = ml_system(K=64)
c = rng.normal(scale=40, size=64) / system.basis.modes
op = diffusion_matrix(system, c)
print(f"operator: trace {np.trace(op.a):.4g}, rank {np.linalg.matrix_rank(op.factor)} of {op.a.shape[0]} modes")
