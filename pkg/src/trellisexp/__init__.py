"""Trellis and asynchronous multiple-access error exponents for virtual MACs."""

from .async_exponent import AsyncSolver, SolverConfig, async_exponent, comparison_curve, grid_oracle
from .channels import BinaryOp, Dmc, MacChannel, bsc, parse_channel_spec, virtual_mac, z_channel
from .gallager import e0, rho_of_rate, trellis_exponent
from .prob_core import Dist, JointDist, TypeVector

__all__ = [
    "AsyncSolver", "SolverConfig", "async_exponent", "comparison_curve", "grid_oracle",
    "BinaryOp", "Dmc", "MacChannel", "bsc", "parse_channel_spec", "virtual_mac", "z_channel",
    "e0", "rho_of_rate", "trellis_exponent",
    "Dist", "JointDist", "TypeVector",
]
