"""Peer-prediction payments for crowd sensing, with truth discovery and equilibrium checks."""

__version__ = "0.1.0"

from .calibration import (  # noqa: E402
    CalibrationReport,
    GuaranteeTargets,
    Infeasible,
    NoSolution,
    approx_upper_bound,
    calibrate,
    check_conditions,
    generate_complete_params,
    generate_incomplete_params,
    participation_lower_bound,
)
from .errors import AggregationError, ConfigurationError, DomainError, GenerationError  # noqa: E402
from .metrics import (  # noqa: E402
    TrialReport,
    error_probability_estimate,
    error_bound,
    mae,
    verify_budget,
    verify_ir,
)
from .payment import PaymentParams, PaymentRecord, compute_payments, expected_payment  # noqa: E402
from .population import (  # noqa: E402
    DROP_OUT,
    CostBounds,
    Population,
    StrategyProfile,
    WorkerProfile,
    bne_profile_complete,
    bne_profile_incomplete,
    expected_utility,
    generate_data,
    sample_population,
)
from .quality import QualityDistribution, UniformQuality  # noqa: E402
from .truth import AggregationResult, DataMatrix, crh_weights, run_truth_discovery, weighted_truths  # noqa: E402
