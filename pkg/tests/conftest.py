import numpy as np
import pytest

from pdmpfluct.spectral import SpectralBasis
from pdmpfluct.system import CableSystem, Population, regular_positions


def cable(models, counts, K=16, stimulus=None, u0=None, weights=None, pointlike=True, kappa=0.009, positions=None):
    """Small cable with one population per model at regular sites."""
    basis = SpectralBasis(K=K)
    pops = []
    for i, (m, n) in enumerate(zip(models, counts)):
        z = regular_positions(n) if positions is None else positions[i]
        w = 1.0 / n if weights is None else weights[i]
        pops.append(Population(m, z, w))
    return CableSystem(basis, tuple(pops), stimulus, u0, pointlike, kappa)


@pytest.fixture(scope="session")
def ml():
    from pdmpfluct.morris_lecar import MLParameters, ml_system

    p = MLParameters()
    return p, ml_system(p)
