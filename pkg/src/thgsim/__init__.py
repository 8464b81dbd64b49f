"""Stochastic and linearised simulation of third-harmonic generation.

Direct THG is simulated with the truncated positive-P equations and the
cascaded (SHG + sum-frequency) process with the exact positive-P equations.
Quadrature moments feed Duan-Simon, Reid-EPR and van Loock-Furusawa
criteria; intracavity spectra come from the linearised Ornstein-Uhlenbeck
treatment.
"""

from .criteria import bipartite_report, classify_steering, duan_simon, reid_epr, vlf_tripartite
from .models import (CascadeParams, DirectParams, SDEModel, cascade_model, conserved_charge,
                     direct_model, model_for)
from .phase_space import ModeAmplitude, QuadratureMoments, SystemState, merge, tree_merge
from .sde import EnsembleResult, IntegrationConfig, run_ensemble, run_trajectory, step
from .spectra import (build_fluctuation_model, critical_pump_direct, ou_spectrum,
                      output_quadrature_spectra, pump_sweep, steady_state_cascade,
                      steady_state_direct)

__version__ = "0.1.0"
