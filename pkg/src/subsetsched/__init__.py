"""Queue-overflow analysis for scheduling with subset-sampled channel state."""

__version__ = "0.1.0"

from .channels import JointChannelDistribution, SubsetSystem, SubStateDistribution
from .simulate import (
    ArrivalSpec,
    Policy,
    PolicyViolationError,
    SampledTrace,
    Simulator,
    SystemModel,
    SystemState,
    check_invariants,
    rng_from_seed,
    scaled_path,
)
from .policies import MaxExp, MaxQueue, PolicySpec, RoundRobinSubset, UniformRandomSubset, make_policy
from .ratefn import (
    ScalarRateFunction,
    SubsetRateRegion,
    TiltedDistribution,
    fluid_drift_bound,
    region_vertices,
    sanov_rate,
    stability_check,
    tilt_to_mean,
)
from .bounds import (
    DriftSolution,
    ExponentReport,
    JstarResult,
    UnstableArrivalsError,
    cost_per_drift,
    drift_solve,
    jstar_singleton,
    minimize_subset_upper_bound,
    overflow_time_window,
    subset_upper_bound,
    upper_bound_eval,
    upper_bound_min,
    verify_matching,
)
from .estimate import (
    ExponentFit,
    OverflowEstimate,
    direct_overflow_curve,
    estimate_overflow_direct,
    estimate_overflow_importance,
    fit_exponent,
    tilted_proposals,
)

__all__ = [
    "ArrivalSpec",
    "DriftSolution",
    "ExponentFit",
    "ExponentReport",
    "JointChannelDistribution",
    "JstarResult",
    "MaxExp",
    "MaxQueue",
    "OverflowEstimate",
    "Policy",
    "PolicySpec",
    "PolicyViolationError",
    "RoundRobinSubset",
    "SampledTrace",
    "ScalarRateFunction",
    "Simulator",
    "SubsetRateRegion",
    "SubsetSystem",
    "SubStateDistribution",
    "SystemModel",
    "SystemState",
    "TiltedDistribution",
    "UniformRandomSubset",
    "UnstableArrivalsError",
    "check_invariants",
    "cost_per_drift",
    "direct_overflow_curve",
    "drift_solve",
    "estimate_overflow_direct",
    "estimate_overflow_importance",
    "fit_exponent",
    "fluid_drift_bound",
    "jstar_singleton",
    "make_policy",
    "minimize_subset_upper_bound",
    "overflow_time_window",
    "region_vertices",
    "rng_from_seed",
    "sanov_rate",
    "scaled_path",
    "stability_check",
    "subset_upper_bound",
    "tilt_to_mean",
    "tilted_proposals",
    "upper_bound_eval",
    "upper_bound_min",
    "verify_matching",
]
