"""Closed-form performance of 2-CUSUM rules for a two-sided drift change.

The observation is ``d xi_t = dw_t`` before the change and ``+mu1 dt + dw_t``
or ``-mu2 dt + dw_t`` afterwards. A 2-CUSUM rule stops the first time either
reflected statistic ``y+`` (tuned to ``+mu1``) reaches ``nu1`` or ``y-``
(tuned to ``-mu2``) reaches ``nu2``.

Every expectation here is built from one kernel,

    exp_excess(x, y) = (exp(x*y) - x*y - 1) / y**2,

because a one-sided CUSUM with threshold ``nu`` stops after
``2 * exp_excess(nu, rho)`` time units on average, where ``rho`` depends on
the side and on the law of the observations (see :func:`drift_argument`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .errors import DomainError, RangeError

SERIES_CUTOFF = 1e-4
G_CLASS_RTOL = 1e-9
MAX_EXPONENT = 700.0

# Taylor coefficients of (e^z - z - 1) / z^2 = sum_k z^k / (k + 2)!
_SERIES = tuple(1.0 / math.factorial(k + 2) for k in range(18))


class Measure(Enum):
    """Law of the observations: no change, or a change at time 0."""

    INFINITY = "infinity"
    POSITIVE = "positive"
    NEGATIVE = "negative"


class Side(Enum):
    """Which one-sided CUSUM of the pair."""

    POSITIVE = "positive"  # y+, threshold nu1, tuned to +mu1
    NEGATIVE = "negative"  # y-, threshold nu2, tuned to -mu2


class RuleClass(Enum):
    G = "G"  # equal thresholds (harmonic-mean rules)
    C1 = "C1"  # nu1 > nu2
    C2 = "C2"  # nu2 > nu1


@dataclass(frozen=True)
class DriftPair:
    """Post-change drift magnitudes; the change is to ``+mu1`` or ``-mu2``."""

    mu1: float
    mu2: float

    def __post_init__(self) -> None:
        if not (self.mu1 > 0 and self.mu2 > 0):
            raise DomainError(f"drifts must be positive, got mu1={self.mu1}, mu2={self.mu2}")

    def swapped(self) -> DriftPair:
        return DriftPair(self.mu2, self.mu1)


@dataclass(frozen=True)
class ThresholdPair:
    """Thresholds ``nu1`` on ``y+`` and ``nu2`` on ``y-``."""

    nu1: float
    nu2: float

    def __post_init__(self) -> None:
        if not (self.nu1 > 0 and self.nu2 > 0):
            raise DomainError(f"thresholds must be positive, got nu1={self.nu1}, nu2={self.nu2}")

    @property
    def low(self) -> float:
        return min(self.nu1, self.nu2)

    @property
    def high(self) -> float:
        return max(self.nu1, self.nu2)

    @property
    def gap(self) -> float:
        return self.high - self.low

    @property
    def rule_class(self) -> RuleClass:
        return classify(self)

    def swapped(self) -> ThresholdPair:
        return ThresholdPair(self.nu2, self.nu1)


@dataclass(frozen=True)
class BoundBracket:
    lower: float
    upper: float

    def __post_init__(self) -> None:
        if self.lower > self.upper:
            raise DomainError(f"bracket is inverted: {self.lower} > {self.upper}")

    def contains(self, value: float, slack: float = 0.0) -> bool:
        return self.lower - slack <= value <= self.upper + slack

    @property
    def width(self) -> float:
        return self.upper - self.lower


def classify(thresholds: ThresholdPair) -> RuleClass:
    """G when the thresholds agree to ``G_CLASS_RTOL`` relative, else C1/C2."""
    if abs(thresholds.nu1 - thresholds.nu2) <= G_CLASS_RTOL * thresholds.high:
        return RuleClass.G
    return RuleClass.C1 if thresholds.nu1 > thresholds.nu2 else RuleClass.C2


def _check_exponent(z: float) -> None:
    if z > MAX_EXPONENT:
        raise RangeError(f"exp({z:g}) overflows the evaluation range", exponent=z)


def exp_excess(x: float, y: float) -> float:
    """``(e^{xy} - xy - 1) / y^2``, continuous at ``y = 0`` where it is ``x^2/2``.

    For ``|xy| < SERIES_CUTOFF`` a four-term Taylor series in ``z = xy`` is
    used. Between the cutoff and ``|z| = 1`` a longer series keeps the
    result accurate to a few ulps (``expm1(z) - z`` cancels badly there).

    Raises:
        RangeError: if ``xy`` exceeds ``MAX_EXPONENT``.
    """
    z = x * y
    _check_exponent(z)
    az = abs(z)
    if az < SERIES_CUTOFF:
        return x * x * (0.5 + z * (1.0 / 6.0 + z * (1.0 / 24.0 + z / 120.0)))
    if az < 1.0:
        acc = 0.0
        for c in reversed(_SERIES):
            acc = acc * z + c
        return x * x * acc
    return (math.expm1(z) - z) / (y * y)


def harmonic_weight(m: float, x: float, y: float) -> float:
    """``f_m(x)^2 / (f_m(x) + f_m(y))`` with ``f = exp_excess``.

    Raises:
        DomainError: if the denominator vanishes (only when ``m = 0``).
    """
    fx = exp_excess(m, x)
    fy = exp_excess(m, y)
    denom = fx + fy
    if denom <= 0.0:
        raise DomainError(f"harmonic_weight denominator vanishes at m={m}")
    return fx * fx / denom


def decay_rate(x: float, y: float) -> float:
    """``1 / (y f_x(y) + x)``, evaluated as ``(z / expm1(z)) / x`` with ``z = xy``.

    The identity ``y f_x(y) + x = expm1(xy) / y`` avoids cancellation; at
    ``y = 0`` the rate is ``1 / x``. For ``x > 0`` this is the exit rate of
    a Brownian motion with drift ``-y/2`` through an infinitesimal upper
    level before it falls ``x`` below its start.

    Raises:
        DomainError: if the denominator is zero (``x = 0``).
        RangeError: if ``xy`` exceeds ``MAX_EXPONENT``.
    """
    if x == 0.0:
        raise DomainError("decay_rate is undefined at x = 0")
    z = x * y
    _check_exponent(z)
    if z == 0.0:
        return 1.0 / x
    # z / expm1(z) stays accurate when y is subnormal
    return (z / math.expm1(z)) / x


def drift_argument(side: Side, measure: Measure, drifts: DriftPair) -> float:
    """Argument ``rho`` of ``E[T_side(nu)] = 2 f_nu(rho)`` under ``measure``.

    ``y+`` reflects ``xi - mu1 t / 2``; when ``xi`` has drift ``d`` its drift
    is ``d - mu1/2`` and ``rho = mu1 - 2d``. Likewise ``rho = mu2 + 2d`` for
    ``y-``.
    """
    mu1, mu2 = drifts.mu1, drifts.mu2
    if side is Side.POSITIVE:
        return {
            Measure.INFINITY: mu1,
            Measure.POSITIVE: -mu1,
            Measure.NEGATIVE: mu1 + 2.0 * mu2,
        }[measure]
    return {
        Measure.INFINITY: mu2,
        Measure.POSITIVE: mu2 + 2.0 * mu1,
        Measure.NEGATIVE: -mu2,
    }[measure]


def one_sided_expectation(nu: float, rho: float) -> float:
    """Mean stopping time ``2 f_nu(rho)`` of a single CUSUM."""
    if not nu > 0:
        raise DomainError(f"threshold must be positive, got {nu}")
    return 2.0 * exp_excess(nu, rho)


def side_expectation(side: Side, nu: float, measure: Measure, drifts: DriftPair) -> float:
    return one_sided_expectation(nu, drift_argument(side, measure, drifts))


def harmonic_mean_expectation(nu: float, measure: Measure, drifts: DriftPair) -> float:
    """``E[T(nu, nu)] = E1 E2 / (E1 + E2)`` for equal thresholds."""
    e1 = side_expectation(Side.POSITIVE, nu, measure, drifts)
    e2 = side_expectation(Side.NEGATIVE, nu, measure, drifts)
    return e1 * e2 / (e1 + e2)


def _lead_and_other(rule: RuleClass) -> tuple[Side, Side]:
    # the side carrying the smaller threshold leads the composite formulas
    if rule is RuleClass.C1:
        return Side.NEGATIVE, Side.POSITIVE
    return Side.POSITIVE, Side.NEGATIVE


def bracket_exponents(thresholds: ThresholdPair, drifts: DriftPair,
                      measure: Measure) -> tuple[float, float]:
    """``(slow, fast)`` decay rates in ``exp(-rate * gap)`` of the bounds.

    The slow rate gives the lower bound and the fast rate the upper bound;
    the true continuation exponent lies between them.
    """
    rule = classify(thresholds)
    if rule is RuleClass.G:
        rule = RuleClass.C1
    lead, other = _lead_and_other(rule)
    m = thresholds.low
    rho_lead = drift_argument(lead, measure, drifts)
    rho_other = drift_argument(other, measure, drifts)
    return decay_rate(m, rho_lead), decay_rate(m, -rho_other)


def _composite(m: float, gap: float, rho_lead: float, rho_other: float,
               decay: float) -> float:
    f_lead = exp_excess(m, rho_lead)
    weight = harmonic_weight(m, rho_lead, rho_other) / f_lead
    return 2.0 * f_lead * (1.0 - weight * math.exp(-decay * gap))


def corollary_bounds(thresholds: ThresholdPair, drifts: DriftPair,
                     measure: Measure) -> BoundBracket:
    """Lower and upper bounds on ``E[T(nu1, nu2)]`` under ``measure``.

    For C1 (``nu2 = m < nu1 = M``) the bounds are

        2 f_m(r2) [1 - C_m(r2, r1) / f_m(r2) * exp(-k (M - m))]

    with ``r1``, ``r2`` the drift arguments of the two sides,
    ``k = lambda_m(r2)`` for the lower and ``k = lambda_m(-r1)`` for the
    upper bound. C2 is the mirror image (sides exchanged). For equal
    thresholds both bounds equal :func:`harmonic_mean_expectation`.
    """
    rule = classify(thresholds)
    if rule is RuleClass.G:
        value = harmonic_mean_expectation(thresholds.low, measure, drifts)
        return BoundBracket(value, value)
    lead, other = _lead_and_other(rule)
    m, gap = thresholds.low, thresholds.gap
    rho_lead = drift_argument(lead, measure, drifts)
    rho_other = drift_argument(other, measure, drifts)
    lower = _composite(m, gap, rho_lead, rho_other, decay_rate(m, rho_lead))
    upper = _composite(m, gap, rho_lead, rho_other, decay_rate(m, -rho_other))
    # upper >= lower analytically (rho_lead + rho_other = mu1 + mu2 > 0);
    # max() only absorbs rounding at tiny gaps
    return BoundBracket(lower, max(lower, upper))


def exact_2cusum_expectation(thresholds: ThresholdPair, drifts: DriftPair,
                             measure: Measure, limit_factor: float) -> float:
    """Mean stopping time given the continuation factor ``limit_factor``.

    For C1, ``E[T] = E2 [1 - E2 / (E1 + E2) * L]`` with ``E1``, ``E2`` the
    one-sided expectations at the smaller threshold; C2 exchanges the
    sides. ``L`` is the probability-like factor in ``[0, 1]`` produced by
    :func:`twocusum.simulate.estimate_limit_factor`. Equal thresholds
    return the harmonic-mean value (the factor is 1 there).
    """
    if not 0.0 <= limit_factor <= 1.0:
        raise DomainError(f"limit factor must lie in [0, 1], got {limit_factor}")
    rule = classify(thresholds)
    if rule is RuleClass.G:
        return harmonic_mean_expectation(thresholds.low, measure, drifts)
    lead, other = _lead_and_other(rule)
    m = thresholds.low
    e_lead = side_expectation(lead, m, measure, drifts)
    e_other = side_expectation(other, m, measure, drifts)
    return e_lead * (1.0 - e_lead / (e_lead + e_other) * limit_factor)


def lorden_value(delay_pos: float, delay_neg: float) -> float:
    """Worst-case detection delay: the larger of the two post-change means."""
    return max(delay_pos, delay_neg)


def delay_bounds(thresholds: ThresholdPair, drifts: DriftPair) -> dict[Measure, BoundBracket]:
    """Brackets under all three measures, keyed by measure."""
    return {ms: corollary_bounds(thresholds, drifts, ms) for ms in Measure}


# conventional short names
f = exp_excess
big_c = harmonic_weight
lambda_ = decay_rate
