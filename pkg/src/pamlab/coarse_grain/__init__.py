"""Coarse-graining machinery: corridors, blocks, tilts, the correlation penalty and bound certificates."""

from .geometry import (
    Block,
    CoarseGrainSpec,
    CorridorSequence,
    blocks_for,
    block_volume,
    enumerate_corridors,
    prescribed_n_d1,
    prescribed_n_d2,
    smallest_square_at_least,
    tilt_for,
)
from .kernel import (
    CorrelationKernel,
    block_statistics,
    correlation_R,
    f_K,
    kernel_value,
    penalty,
    r_statistic,
    variance_Q_R,
)
from .path_integrals import D_n_and_Y, D_n_closed_form, D_n_quadrature, Y_value
from .slices import endpoint_factors_1d, killed_endpoint_table, slice_factors_d1, tail_sum
from .certificates import d1_bound_certificate, d2_bound_certificate, fractional_moment, moment_from_logs

__all__ = [
    "Block",
    "CoarseGrainSpec",
    "CorrelationKernel",
    "CorridorSequence",
    "D_n_and_Y",
    "D_n_closed_form",
    "D_n_quadrature",
    "Y_value",
    "block_statistics",
    "block_volume",
    "blocks_for",
    "correlation_R",
    "d1_bound_certificate",
    "d2_bound_certificate",
    "endpoint_factors_1d",
    "enumerate_corridors",
    "f_K",
    "fractional_moment",
    "kernel_value",
    "killed_endpoint_table",
    "moment_from_logs",
    "penalty",
    "prescribed_n_d1",
    "prescribed_n_d2",
    "r_statistic",
    "slice_factors_d1",
    "smallest_square_at_least",
    "tail_sum",
    "tilt_for",
    "variance_Q_R",
]
