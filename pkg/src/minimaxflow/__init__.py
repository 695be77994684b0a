"""Minimax flow control on tree networks, centralized and distributed."""

from .network import FlowAssignment, FlowNetwork, leaf_elimination_oracle, solve_flows
from .downstream import analyze, controllable_edges
from .lp import MinimaxSolution, solve_minimax, solve_minimax_microgrid
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "FlowAssignment",
    "FlowNetwork",
    "MinimaxSolution",
    "analyze",
    "controllable_edges",
    "leaf_elimination_oracle",
    "solve_flows",
    "solve_minimax",
    "solve_minimax_microgrid",
]
