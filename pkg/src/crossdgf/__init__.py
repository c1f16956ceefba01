"""Directed greybox fuzzing scheduler for vulnerabilities in a library reached through a client program."""

from .analysis import Analysis, analyze_files, analyze_texts
from .campaign import CampaignConfig, CampaignReport, run_campaign
from .distance import INVALID, DistanceMap, compute_distances, compute_merged_distances
from .program import MicroProgram, execute, load_program
from .risk import NormalizedRisk, RiskTuple, normalize_risks, seed_risk
from .schedule import ScheduleConfig, annealing_factor, assign_power, fine_ratio
from .targets import TargetSpec, TargetTuple, build_target_tuple, load_target_spec

__version__ = "0.1.0"
