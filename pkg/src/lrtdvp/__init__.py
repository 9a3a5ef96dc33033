"""Rank-adaptive low-rank time evolution of Lindblad master equations."""

from .control import RankPolicy
from .lindblad import LindbladModel
from .numerics import PinvConfig
from .oracle import integrate_dense
from .records import Observable, RunRecord
from .state import LowRankState, from_pure, overlap, reconstruct_dense
from .tdvp import SolverConfig, integrate, supervise
from .truncation import TruncationState, equivalence_probe, integrate_truncation

__version__ = "0.1.0"

__all__ = [
    "RankPolicy", "LindbladModel", "PinvConfig", "integrate_dense", "Observable", "RunRecord",
    "LowRankState", "from_pure", "overlap", "reconstruct_dense", "SolverConfig", "integrate",
    "supervise", "TruncationState", "equivalence_probe", "integrate_truncation",
]
