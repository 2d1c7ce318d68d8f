"""Permanent approximations and approximate profile maximum likelihood."""

from permpml.approx import (
    ApproximationReport,
    DoublyStochasticWitness,
    bethe_permanent,
    block_ones_matrix,
    functional_u,
    functional_v,
    k_distinct_column_matrix,
    scaled_sinkhorn_permanent,
    sinkhorn_permanent,
    sinkhorn_scale,
)
from permpml.convex import (
    AllocationMatrix,
    DiscretizationSet,
    build_discretization,
    discretize,
    log_g,
    log_g_gradient,
    log_h,
    maximize_log_g,
    pseudo_distribution_of,
)
from permpml.estimator import (
    PmlResult,
    PropertyEstimate,
    approximate_pml,
    estimate_property,
    exact_pml_oracle,
)
from permpml.permanent import (
    is_doubly_stochastic,
    log_permanent,
    matrix_from_json,
    matrix_to_json,
    permanent_naive,
    permanent_ryser,
)
from permpml.profiles import (
    Profile,
    log_c_phi,
    profile_of_sequence,
    profile_probability_bruteforce,
    profile_probability_exact,
    profile_probability_grouped,
    profile_probability_matrix,
    sample_sequence,
)
from permpml.rounding import (
    RoundingTrace,
    create_new_probability_values,
    round_allocation,
    structured_rounding,
)

__all__ = [
    "ApproximationReport",
    "AllocationMatrix",
    "DiscretizationSet",
    "DoublyStochasticWitness",
    "PmlResult",
    "Profile",
    "PropertyEstimate",
    "RoundingTrace",
    "approximate_pml",
    "bethe_permanent",
    "block_ones_matrix",
    "build_discretization",
    "create_new_probability_values",
    "discretize",
    "estimate_property",
    "exact_pml_oracle",
    "functional_u",
    "functional_v",
    "is_doubly_stochastic",
    "k_distinct_column_matrix",
    "log_c_phi",
    "log_g",
    "log_g_gradient",
    "log_h",
    "log_permanent",
    "matrix_from_json",
    "matrix_to_json",
    "maximize_log_g",
    "permanent_naive",
    "permanent_ryser",
    "profile_of_sequence",
    "profile_probability_bruteforce",
    "profile_probability_exact",
    "profile_probability_grouped",
    "profile_probability_matrix",
    "pseudo_distribution_of",
    "round_allocation",
    "sample_sequence",
    "scaled_sinkhorn_permanent",
    "sinkhorn_permanent",
    "sinkhorn_scale",
    "structured_rounding",
]
