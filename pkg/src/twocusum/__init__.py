"""2-CUSUM rules for detecting a two-sided drift change in Brownian motion."""

from .analytic import (
    BoundBracket, DriftPair, Measure, RuleClass, Side, ThresholdPair, classify,
    corollary_bounds, decay_rate, delay_bounds, drift_argument, exact_2cusum_expectation,
    exp_excess, f, big_c, lambda_, harmonic_mean_expectation, harmonic_weight, lorden_value,
    one_sided_expectation, side_expectation,
)
from .engine import (
    CusumState, FiredSide, StoppingReport, check_stop, init_state, reflect_step,
    run_to_stop, update,
)
from .errors import (
    DomainError, EstimationError, InputError, RangeError, SearchError, TwoCusumError,
)

__version__ = "0.1.0"
