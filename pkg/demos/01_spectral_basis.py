"""Sine basis of the cable operator, point evaluations and mollifiers.

Run: python3 demos/01_spectral_basis.py
"""

import numpy as np

from pdmpfluct.spectral import Mollifier, SpectralBasis, SpectralField, dirac_pairing, eval_field, semigroup_apply

basis = SpectralBasis(K=64)
print("first eigenvalues (k pi)^2:", np.round(basis.eigenvalues[:3], 4))

# a field given by a function, projected onto 64 modes
u = SpectralField.from_function(lambda x: x * (1 - x) * np.exp(2 * x), basis)
x = np.array([0.1, 0.5, 0.9])
print("u(x) exact    :", np.round(x * (1 - x) * np.exp(2 * x), 6))
print("u(x) spectral :", np.round(eval_field(u, x), 6))
print(f"||u||_L2 = {u.l2_norm():.6f}, ||u||_H = {u.h_norm():.6f}")

# the heat semigroup damps mode k by exp(-lambda_k t)
for t in (0.0, 0.01, 0.1):
    print(f"t={t:<5} ||S_t u||_L2 = {semigroup_apply(u, t).l2_norm():.6f}")

# Dirac pairing <delta_x, e_k> with e_k the H-normalised eigenfunction
d = dirac_pairing(0.5, 1)
print("pairing <delta_0.5, e_1>:", d)

# a normalised bump of half-width kappa has unit mass and tends to delta_z
delta = np.sqrt(2) * np.sin(np.pi * basis.modes * 0.3)
for kappa in (0.05, 0.009, 1e-3):
    m = Mollifier(0.3, kappa, basis)
    gap = np.abs(m.pairings - delta)[:8].max()
    print(f"kappa={kappa:<6} mass={m.mass():.12f}  max gap to delta_0.3 over modes 1-8: {gap:.2e}")
