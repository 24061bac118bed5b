"""Multinomial probit with Choquet-integral utilities and attribute cut-offs."""

from .choquet import (
    CiAttribute,
    CutoffRule,
    ModelParameters,
    Observation,
    UtilityModel,
    UtilitySpec,
    WsTerm,
    choquet_integral,
    choquet_rows,
    systematic_utilities,
)
from .fuzzy_measures import (
    Capacity,
    ConstraintSystem,
    MobiusVector,
    build_constraints,
    capacity_to_mobius,
    interaction_group,
    interaction_pair,
    mobius_to_capacity,
    shapley,
)
from .membership import (
    CutoffParameterization,
    Direction,
    HalfTriangularDecreasing,
    HalfTriangularIncreasing,
    MinMaxRange,
    Trapezoidal,
    membership_value,
    normalize_minmax,
    resolve_cutoffs,
)
from .mnp import (
    CholeskyMap,
    ErrorKind,
    ErrorStructure,
    HaltonPlan,
    choice_probability,
    differencing_matrix,
    halton_draws,
    mvncdf_ghk,
    reparam_cholesky_rownorm,
)

__version__ = "0.1.0"
