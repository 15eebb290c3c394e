"""Inverse optimisation: optimality system, proximal step and learning loop."""

from .kkt import KktSystem, derive_kkt
from .lfra import LfraConfig, LfraTrace, identification, lfra_run
from .params import ParameterVector
from .step import InverseProgram, MineRecord, StepResult, build_inverse_step, solve_inverse_step

__all__ = [
    "InverseProgram",
    "KktSystem",
    "LfraConfig",
    "LfraTrace",
    "MineRecord",
    "ParameterVector",
    "StepResult",
    "build_inverse_step",
    "derive_kkt",
    "identification",
    "lfra_run",
    "solve_inverse_step",
]
