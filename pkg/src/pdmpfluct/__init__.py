"""Slow-fast stochastic cable models: exact PDMP simulation, averaging,
central-limit fluctuations and the Langevin approximation."""

from .fluctuation import (
    DiffusionOperator,
    TraceSeries,
    channel_variance,
    class_statistics,
    constant_trace,
    diffusion_matrix,
    noise_factor,
    solve_phi_integral,
    solve_phi_linear,
    trace_q,
)
from .kinetics import (
    ChannelModel,
    GeneratorMatrix,
    QuasiStationary,
    RateForm,
    aggregated_generator,
    averaged_rate,
    generator_matrix,
    quasi_stationary,
    two_state_model,
)
from .langevin import LangevinConfig, em_step, langevin_ensemble, mollified, mollified_reaction, simulate_langevin
from .morris_lecar import MLParameters, ml_diffusion_closed_form, ml_model, ml_phi_closed_form, ml_system
from .pdmp import HybridState, Trajectory, flow_step, next_jump, simulate_averaged, simulate_pdmp
from .spectral import Mollifier, SpectralBasis, SpectralField, dirac_pairing, eval_field, semigroup_apply
from .system import CableSystem, Population, regular_positions

__version__ = "0.1.0"
