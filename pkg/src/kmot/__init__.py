"""k-sample inference with multimarginal optimal transport on finite supports."""

from .errors import KmotError, SolverFailure, ValidationError
from .inference import (
    BootstrapConfig,
    ConfidenceInterval,
    PowerCurvePoint,
    TestResult,
    confidence_region,
    cutoff_bound,
    derivative_bootstrap_null,
    dual_range,
    mn_bootstrap,
    permutation_test,
    power_lower_bound,
    reference_mot,
    test_h0,
    ub0_null,
)
from .limits import (
    NullProgram,
    RateInfo,
    build_ub0,
    nlb_sigma,
    rate,
    sample_ub0,
    sample_x0,
)
from .measures import (
    Measure,
    MeasureCollection,
    SupportSpace,
    empirical_measure,
    gaussian_limit_sample,
    multinomial_resample,
    replicate_rng,
)
from .mot import (
    MarginalMatrix,
    MotSolution,
    MotSolver,
    build_cost_tensor,
    check_regularity,
    normalize_dual,
    pair_cost,
    solve_mot,
    w2_squared,
)

__version__ = "0.1.0"
