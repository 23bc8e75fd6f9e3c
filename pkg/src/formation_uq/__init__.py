"""Formation flight mission planning under uncertainty.

Multi-phase pseudospectral transcription of switched cruise dynamics,
solved by a sparse interior-point NLP solver, with non-intrusive
polynomial chaos expansions and Sobol indices for uncertain fuel benefit
and departure delays.
"""
from .delays import GaussianMixtureDelays, GmmModel, em_fit, mixture_stats
from .ingestion import load_gmm, load_mission, load_wind_grid
from .mission import DiscreteState, DocReport, MissionSpec, doc, mode_sequence_of
from .model import AircraftParams, cruise_dynamics, orthodromic_distance, wind_fit
from .nlp import NlpProblem, SolveOptions, check_kkt, solve
from .pipeline import (FormationMissionPlanner, MissionReport, ScenarioConfig, load_scenario,
                       report_from_raw, run_deterministic_mission, run_solo_baseline,
                       run_stochastic_mission)
from .sensitivity import SobolReport, dominant_variable, sobol_from_gpc
from .transcription import build_grid, lgr_nodes, transcribe
from .uq import (PolynomialChaosExpansion, RandomVariableSpec, StochasticSolution, build_basis,
                 build_quadrature, estimate_coefficients, evaluate_expansion)

__version__ = "0.1.0"

__all__ = [
    "AircraftParams", "DiscreteState", "DocReport", "FormationMissionPlanner",
    "GaussianMixtureDelays", "GmmModel", "MissionReport", "MissionSpec", "NlpProblem",
    "PolynomialChaosExpansion", "RandomVariableSpec", "ScenarioConfig", "SobolReport",
    "SolveOptions", "StochasticSolution", "build_basis", "build_grid", "build_quadrature",
    "check_kkt", "cruise_dynamics", "doc", "dominant_variable", "em_fit",
    "estimate_coefficients", "evaluate_expansion", "lgr_nodes", "load_gmm", "load_mission",
    "load_scenario", "load_wind_grid", "mixture_stats", "mode_sequence_of",
    "orthodromic_distance", "report_from_raw", "run_deterministic_mission",
    "run_solo_baseline", "run_stochastic_mission", "sobol_from_gpc", "solve", "transcribe",
    "wind_fit",
]
