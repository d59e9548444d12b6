"""Trapped-ion Ramsey test of causal non-linear quantum evolution.

Modules
-------
oscillator   harmonic-oscillator functions, trap configuration, constants
nonlinear    closed-form and numerical non-linear phase rates
simulator    pulse sequence, heating and measurement simulation
estimator    three-point phase inversion, noise propagation, epsilon estimate
campaign     campaign configuration, execution, persistence, analysis
scan         interrogation-time scans
cli          command-line interface
"""
from .campaign import CampaignConfig, analyze_dataset, emit_plot_data, load_config, run_campaign
from .estimator import (
    EpsilonEstimate,
    PhaseEstimate,
    RamseyTriple,
    differential_phase_estimate,
    epsilon_from_delta_phase,
    fit_gaussian,
    invert_three_point,
    optimal_bias,
    propagate_phase_uncertainty,
    tau_scan_statistics,
)
from .nonlinear import (
    NonlinearCoupling,
    SuperpositionSpec,
    differential_phase_model,
    phase_rate_closed_form,
    phase_rate_numeric,
)
from .oscillator import CONSTANTS, PhysicalConstants, TrapConfig, characteristic_length, hermite
from .simulator import NoiseModel, ShotSimulator, SpinPhononState, contrast_envelope, run_shot

__version__ = "0.1.0"
