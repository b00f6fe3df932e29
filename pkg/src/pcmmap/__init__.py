"""Marginal MAP inference in smooth, decomposable probabilistic circuits."""

from .circuit import (
    Circuit,
    evaluate,
    leaf_values_for_marginal,
    load_circuit,
    marginal,
    parse_circuit,
    random_circuit,
    validate,
)
from .mmap import (
    MmapProblem,
    MmapSolution,
    all_marginals,
    brute_force_mmap,
    hill_climb,
    max_approx,
    ml_approx,
    score,
    seq_approx,
)
from .partition import VariablePartition
from .qpc import QpcContext, grad_loss, grad_single, loss, qpc_leaf_values, qpc_value

__version__ = "0.1.0"
