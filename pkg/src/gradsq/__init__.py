"""Gradient-squared discrete Gaussian free field toolkit."""

__version__ = "0.1.0"

from .errors import GradSqError
from .lattice import DomainSpec, Edge, LatticeDomain, discretize, floor_point
from .greens import GreenTable, chi, double_diff, infinite_double_diff, kappa0, solve_green, transfer_current
from .continuum import MobiusMap, TestFunction, green_disk, green_disk_dd, l2_inner
from .correlation import (
    joint_cumulant_exact,
    kpoint_exact,
    kpoint_limit_continuum,
    kpoint_oracle_feynman,
    kpoint_oracle_subset,
    sandpile_cumulant_map,
)
from .sampler import mc_cumulants, phi_field, sample_dgff
