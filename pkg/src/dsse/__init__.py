"""Single-iteration distribution system state estimation.

Pseudo measurements and sparse real measurements are fused by conditioning
a multivariate complex Gaussian over stacked load currents that carries
spatial and temporal load correlation; all network states then follow from
a direct (non-iterative) load flow.
"""

from dsse.netmodel import (
    Branch, Bus, FlowMatrices, NetworkStructureError, RadialNetwork,
    build_flow_matrices, direct_power_flow, perturb_rx_ratio, read_network,
)
from dsse.complexstats import (
    ComplexGaussian, CorrelationMatrix, LoadProfile, RealCompositeCovariance,
    assemble_complex_covariance, build_cr_matrix, empirical_correlation,
    nearest_pd_correlation, real_composite_from_complex, sd_from_error,
)
from dsse.cmcgd import (
    DegenerateMeasurementError, Partition, condition, condition_temporal,
    conditioning_gains,
)
from dsse.estimator import (
    Measurement, MeasurementSet, ObservabilityError, StateEstimate, build_prior,
    estimate, magnitude_angle_variance, propagate_states, quality,
)
from dsse.wls import WlsOptions, WlsResult, wls_estimate

__version__ = "0.1.0"

__all__ = [
    "Branch", "Bus", "FlowMatrices", "NetworkStructureError", "RadialNetwork",
    "build_flow_matrices", "direct_power_flow", "perturb_rx_ratio", "read_network",
    "ComplexGaussian", "CorrelationMatrix", "LoadProfile", "RealCompositeCovariance",
    "assemble_complex_covariance", "build_cr_matrix", "empirical_correlation",
    "nearest_pd_correlation", "real_composite_from_complex", "sd_from_error",
    "DegenerateMeasurementError", "Partition", "condition", "condition_temporal",
    "conditioning_gains",
    "Measurement", "MeasurementSet", "ObservabilityError", "StateEstimate", "build_prior",
    "estimate", "magnitude_angle_variance", "propagate_states", "quality",
    "WlsOptions", "WlsResult", "wls_estimate",
]
