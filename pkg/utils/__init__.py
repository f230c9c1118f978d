__version__ = "0.3.0"

from .errors import SpinBosonError, ConfigurationError, NumericalFailure
from .model import ModelSpec, DiscreteModes, discretize, regularize_mass, critical_coupling, ir_classify, weighted_norm
from .kernel import KernelTable, build_table, kernel_value, l1_norm, segment_pair_integral, tail_asymptote
from .fock import FockBasis, SparseOperator, GroundStateResult, build_basis, hamiltonian, ground_state
from .estimate import Estimate
from .ising_mc import SpinPath, McConfig, estimate_partition, estimate_energy, estimate_susceptibility
from .config import RunConfig

__all__ = [
    "__version__",
    "SpinBosonError", "ConfigurationError", "NumericalFailure",
    "ModelSpec", "DiscreteModes", "discretize", "regularize_mass", "critical_coupling", "ir_classify",
    "weighted_norm",
    "KernelTable", "build_table", "kernel_value", "l1_norm", "segment_pair_integral", "tail_asymptote",
    "FockBasis", "SparseOperator", "GroundStateResult", "build_basis", "hamiltonian", "ground_state",
    "Estimate",
    "SpinPath", "McConfig", "estimate_partition", "estimate_energy", "estimate_susceptibility",
    "RunConfig",
]
