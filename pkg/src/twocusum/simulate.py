"""Monte Carlo estimation for 2-CUSUM rules.

Paths are generated by the compiled kernels in :mod:`twocusum._kernels`.
Each path is a pure function of ``(seed, path_index)``, so estimates from
disjoint index ranges can be pooled and results do not depend on the
number of worker threads.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from typing import Sequence

import numba
import numpy as np

from . import _kernels as K
from .analytic import (
    DriftPair, Measure, RuleClass, Side, ThresholdPair, classify, corollary_bounds,
    exact_2cusum_expectation, side_expectation,
)
from .errors import EstimationError, InputError

WORKERS_ENV = "TWOCUSUM_WORKERS"
CENSOR_WARN = 0.01
NEITHER_WARN = 0.05
HORIZON_FACTOR = 50.0
DEFAULT_GRID = (8, 16, 32, 64)
_SEED_MASK = (1 << 64) - 1


def configure_workers(n: int | None = None) -> int:
    """Set the kernel thread count from ``n`` or the ``TWOCUSUM_WORKERS`` variable."""
    if n is None:
        raw = os.environ.get(WORKERS_ENV)
        if not raw:
            return numba.get_num_threads()
        try:
            n = int(raw)
        except ValueError:
            raise InputError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise InputError(f"worker count must be >= 1, got {n}")
    n = min(n, numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(n)
    return n


@dataclass(frozen=True)
class Scenario:
    """Law and discretisation of simulated observation paths.

    ``t_max=None`` picks a horizon per estimate (see the estimators).
    ``max_step`` above ``dt`` lets the stopping kernel take longer steps
    while both statistics are far below their thresholds; ``None`` keeps
    every step at ``dt``. ``refine = r`` builds each fixed step from ``r``
    sub-step normals: the same seed at ``dt / r`` then simulates the same
    Brownian path more finely.
    """

    measure: Measure
    drifts: DriftPair
    tau: float = 0.0
    dt: float = 1e-3
    t_max: float | None = None
    seed: int = 0
    bridge: bool = True
    max_step: float | None = None
    refine: int = 1

    def __post_init__(self) -> None:
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise InputError(f"dt must be positive, got {self.dt}")
        if not (self.tau >= 0 and math.isfinite(self.tau)):
            raise InputError(f"tau must be nonnegative, got {self.tau}")
        if self.t_max is not None:
            if not self.t_max > 0:
                raise InputError(f"t_max must be positive, got {self.t_max}")
            if self.dt > self.t_max:
                raise InputError("dt exceeds t_max")
            if self.measure is not Measure.INFINITY and self.tau > self.t_max:
                raise InputError("change time tau exceeds t_max")
        if self.max_step is not None and self.max_step < self.dt:
            raise InputError("max_step must be at least dt")
        if self.refine < 1 or (self.refine > 1 and self.max_step not in (None, self.dt)):
            raise InputError("refine must be >= 1 and needs fixed steps")
        if not 0 <= int(self.seed) <= _SEED_MASK:
            raise InputError("seed must be a 64-bit unsigned integer")

    @property
    def drift(self) -> float:
        """Post-change drift of xi."""
        if self.measure is Measure.POSITIVE:
            return self.drifts.mu1
        if self.measure is Measure.NEGATIVE:
            return -self.drifts.mu2
        return 0.0

    def with_horizon(self, t_max: float) -> Scenario:
        return replace(self, t_max=t_max)

    def horizon_for(self, thresholds: ThresholdPair) -> float:
        if self.t_max is not None:
            return self.t_max
        upper = corollary_bounds(thresholds, self.drifts, self.measure).upper
        return HORIZON_FACTOR * upper + self.tau

    def race_horizon(self, a: float = 0.0, b: float = 0.0) -> float:
        """Horizon for races to levels ``a`` and ``b``.

        At least ``1e4 dt``, and long enough (50 times the time a drifting
        process needs to fall out of reach) that undecided races are rare.
        """
        if self.t_max is not None:
            return self.t_max
        rate = min(abs(self.drift - self.drifts.mu1 / 2), abs(self.drift + self.drifts.mu2 / 2))
        return max(1e4 * self.dt, HORIZON_FACTOR * (a + b + 30.0 / rate) / rate)

    def _args(self) -> tuple:
        tau = 0.0 if self.measure is Measure.INFINITY else self.tau
        return (self.drifts.mu1, self.drifts.mu2, self.drift, tau, self.dt)


@dataclass(frozen=True)
class McEstimate:
    """Mean of a simulated quantity with its standard error (``ddof=1``)."""

    mean: float
    stderr: float
    n_paths: int
    n_censored: int = 0
    flagged: bool = False
    warning: str | None = None

    @classmethod
    def from_samples(cls, x: np.ndarray, n_censored: int = 0,
                     warning: str | None = None) -> McEstimate:
        n = int(x.size)
        if n < 2:
            raise InputError("need at least two paths")
        se = float(np.std(x, ddof=1) / math.sqrt(n))
        return cls(float(np.mean(x)), se, n, int(n_censored), warning is not None, warning)

    def pooled(self, *others: McEstimate) -> McEstimate:
        """Combine with estimates from disjoint path ranges."""
        parts = (self,) + others
        n = sum(p.n_paths for p in parts)
        total = sum(p.mean * p.n_paths for p in parts)
        mean = total / n
        sumsq = sum(p.stderr ** 2 * p.n_paths * (p.n_paths - 1) + p.n_paths * p.mean ** 2
                    for p in parts)
        var = max(sumsq - n * mean * mean, 0.0) / (n - 1)
        warnings = [p.warning for p in parts if p.warning]
        return McEstimate(mean, math.sqrt(var / n), n, sum(p.n_censored for p in parts),
                          any(p.flagged for p in parts), "; ".join(warnings) or None)

    def interval(self, k: float = 2.0) -> tuple[float, float]:
        return self.mean - k * self.stderr, self.mean + k * self.stderr

    def to_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "n_paths": self.n_paths,
                "n_censored": self.n_censored, "flagged": self.flagged,
                "warning": self.warning}


def simulate_path(scenario: Scenario, n_steps: int | None = None,
                  path_index: int = 0) -> np.ndarray:
    """Increments of one path as an ``(n_steps, 2)`` array of ``(d_xi, dt)`` rows."""
    if n_steps is None:
        horizon = scenario.t_max if scenario.t_max is not None else 1e4 * scenario.dt
        n_steps = int(math.ceil(horizon / scenario.dt - 1e-9))
    tau = 0.0 if scenario.measure is Measure.INFINITY else scenario.tau
    dxi = K.gaussian_increments(np.uint64(scenario.seed), path_index, int(n_steps),
                                scenario.dt, scenario.drift, tau)
    return np.column_stack([dxi, np.full(int(n_steps), scenario.dt)])


@dataclass(frozen=True)
class StoppingSample:
    """Per-path output of the stopping kernel."""

    times: np.ndarray
    sides: np.ndarray
    censored: np.ndarray


def stopping_sample(scenario: Scenario, thresholds: ThresholdPair, n_paths: int,
                    first_path: int = 0, start: tuple[float, float] = (0.0, 0.0),
                    t_max: float | None = None) -> StoppingSample:
    configure_workers()
    mu1, mu2, drift, tau, dt = scenario._args()
    horizon = scenario.horizon_for(thresholds) if t_max is None else t_max
    max_step = scenario.max_step if scenario.max_step is not None else dt
    times, sides, censored = K.stopping_times(
        np.uint64(scenario.seed), first_path, int(n_paths), mu1, mu2, drift, tau, dt,
        max_step, horizon, thresholds.nu1, thresholds.nu2, start[0], start[1],
        scenario.bridge, scenario.refine)
    return StoppingSample(times, sides, censored)


def estimate_stopping_expectation(scenario: Scenario, thresholds: ThresholdPair,
                                  n_paths: int, first_path: int = 0) -> McEstimate:
    """Mean alarm time of the rule over ``n_paths`` simulated paths.

    Censored paths contribute the horizon and are counted; the result is
    flagged when more than 1% are censored. The default horizon is 50 times
    the analytic upper bound for the scenario's measure.
    """
    if n_paths < 2:
        raise InputError("n_paths must be at least 2")
    s = stopping_sample(scenario, thresholds, n_paths, first_path)
    n_cens = int(s.censored.sum())
    warning = None
    if n_cens > CENSOR_WARN * n_paths:
        warning = f"{n_cens} of {n_paths} paths censored at the horizon"
    return McEstimate.from_samples(s.times, n_cens, warning)


def estimate_race(a: float, b: float, scenario: Scenario, n_paths: int,
                  winner: Side = Side.POSITIVE, first_path: int = 0) -> McEstimate:
    """Probability that one side wins the race of ``u+`` to ``a`` against ``u-`` to ``b``.

    ``winner=POSITIVE`` is the event that ``u+`` reaches ``a`` strictly
    first; ``NEGATIVE`` that ``u-`` reaches ``b`` first. Paths where neither
    level is reached (settled, or undecided at the horizon) count against
    the event; undecided paths are reported as censored.
    """
    if not (a > 0 and b > 0):
        raise InputError("race levels must be positive")
    if n_paths < 2:
        raise InputError("n_paths must be at least 2")
    configure_workers()
    mu1, mu2, drift, tau, dt = scenario._args()
    out = K.race_outcomes(np.uint64(scenario.seed), first_path, int(n_paths), mu1, mu2,
                          drift, tau, dt, scenario.race_horizon(a, b), a, b, scenario.bridge)
    code = K.RACE_PLUS if winner is Side.POSITIVE else K.RACE_MINUS
    success = (out == code).astype(np.float64)
    undecided = int(np.count_nonzero(out == K.RACE_UNDECIDED))
    neither = int(np.count_nonzero(out == K.RACE_NEITHER)) + undecided
    warning = None
    if neither > NEITHER_WARN * n_paths:
        warning = (f"{neither} of {n_paths} paths reached neither level; "
                   "consider a longer horizon")
    return McEstimate.from_samples(success, undecided, warning)


def estimate_pi(a: float, b: float, scenario: Scenario, n_paths: int,
                first_path: int = 0) -> McEstimate:
    """``P(U+(a) < U-(b))``: ``u+`` reaches ``a`` before ``u-`` reaches ``b``."""
    return estimate_race(a, b, scenario, n_paths, Side.POSITIVE, first_path)


@dataclass(frozen=True)
class LimitFactor:
    """Extrapolated ``L = exp(-exponent * (M - m))`` with its grid data."""

    value: float
    stderr: float
    exponent: float
    exponent_stderr: float
    grid: tuple[int, ...] = ()
    g: tuple[float, ...] = ()
    g_stderr: tuple[float, ...] = ()
    estimates: tuple[McEstimate, ...] = field(default=(), repr=False)

    def __float__(self) -> float:
        return self.value


def _check_grid(n_grid: Sequence[int], order: int) -> tuple[int, ...]:
    grid = tuple(int(n) for n in n_grid)
    if len(grid) < 3 or any(n <= 0 for n in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
        raise InputError(f"n_grid must be increasing positive integers, length >= 3: {grid}")
    if not 1 <= order < len(grid):
        raise InputError(f"extrapolation order {order} needs more than {order} grid points")
    return grid


def estimate_limit_factor(thresholds: ThresholdPair, scenario: Scenario,
                          n_grid: Sequence[int] = DEFAULT_GRID, n_paths: int = 200_000,
                          order: int = 2) -> LimitFactor:
    """Limit ``lim_n P_n^{(M - m) n}`` by extrapolation in ``1/n``.

    For C1, ``P_n = P(U+(1/n) < U-(m))``. For C2 the roles of the two
    sides are exchanged, ``P_n = P(U-(1/n) < U+(m))``. The exponent
    ``g(n) = n log P_n`` is fitted by a weighted polynomial of degree
    ``order`` in ``1/n`` and its intercept gives the limit.

    Raises:
        EstimationError: if some ``P_n`` is zero, or ``g`` reverses direction
            by more than three standard errors along the grid.
    """
    grid = _check_grid(n_grid, order)
    rule = classify(thresholds)
    if rule is RuleClass.G:
        return LimitFactor(1.0, 0.0, math.nan, math.nan, grid)
    m, gap = thresholds.low, thresholds.gap
    estimates = []
    for n in grid:
        if rule is RuleClass.C1:
            est = estimate_race(1.0 / n, m, scenario, n_paths, Side.POSITIVE)
        else:
            est = estimate_race(m, 1.0 / n, scenario, n_paths, Side.NEGATIVE)
        estimates.append(est)
    p = np.array([e.mean for e in estimates])
    if np.any(p <= 0.0):
        raise EstimationError("race probability estimated as zero", grid=grid,
                              values=tuple(p))
    n_arr = np.array(grid, dtype=float)
    g = n_arr * np.log(p)
    se = n_arr * np.array([max(e.stderr, 1e-300) for e in estimates]) / p
    steps = np.diff(g)
    noise = np.sqrt(se[1:] ** 2 + se[:-1] ** 2)
    if np.any(steps > 3 * noise) and np.any(steps < -3 * noise):
        raise EstimationError("exponent estimates are not monotone along the grid",
                              grid=grid, values=tuple(g))
    coef, cov = np.polyfit(1.0 / n_arr, g, order, w=1.0 / se, cov="unscaled")
    g_inf = float(coef[-1])
    g_se = float(math.sqrt(max(cov[-1, -1], 0.0)))
    value = min(max(math.exp(gap * g_inf), 0.0), 1.0)
    return LimitFactor(value, value * gap * g_se, -g_inf, g_se, grid,
                       tuple(float(v) for v in g), tuple(float(v) for v in se),
                       tuple(estimates))


def _long_short(rule: RuleClass) -> tuple[Side, Side]:
    return (Side.POSITIVE, Side.NEGATIVE) if rule is RuleClass.C1 else (Side.NEGATIVE, Side.POSITIVE)


def estimate_continuation_factor(thresholds: ThresholdPair, scenario: Scenario,
                                 n_paths: int, first_path: int = 0) -> McEstimate:
    """Probability that the long side climbs from ``m`` to ``M`` before the short side reaches ``m``.

    Paths start with the long-side statistic at ``m`` and the short-side
    statistic at 0. With this factor in place of the limit,
    :func:`twocusum.analytic.exact_2cusum_expectation` gives the mean
    stopping time exactly. Same-step ties count one half.
    """
    rule = classify(thresholds)
    if rule is RuleClass.G:
        return McEstimate(1.0, 0.0, max(int(n_paths), 2))
    if n_paths < 2:
        raise InputError("n_paths must be at least 2")
    m = thresholds.low
    long_side, short_side = _long_short(rule)
    start = (m, 0.0) if long_side is Side.POSITIVE else (0.0, m)
    if scenario.t_max is not None:
        horizon = scenario.t_max
    else:
        horizon = HORIZON_FACTOR * side_expectation(short_side, m, scenario.measure,
                                                    scenario.drifts) + scenario.tau
    s = stopping_sample(scenario, thresholds, n_paths, first_path, start, horizon)
    win = K.SIDE_POSITIVE if long_side is Side.POSITIVE else K.SIDE_NEGATIVE
    score = (s.sides == win).astype(np.float64) + 0.5 * (s.sides == K.SIDE_TIE)
    n_cens = int(s.censored.sum())
    warning = None
    if n_cens > CENSOR_WARN * n_paths:
        warning = f"{n_cens} of {n_paths} paths censored at the horizon"
    return McEstimate.from_samples(score, n_cens, warning)


def estimate_composite_expectation(thresholds: ThresholdPair, scenario: Scenario,
                                   n_paths: int, first_path: int = 0) -> McEstimate:
    """Mean stopping time from the closed-form composite and a simulated continuation factor."""
    cont = estimate_continuation_factor(thresholds, scenario, n_paths, first_path)
    value = exact_2cusum_expectation(thresholds, scenario.drifts, scenario.measure, cont.mean)
    if classify(thresholds) is RuleClass.G:
        return McEstimate(value, 0.0, cont.n_paths)
    long_side, short_side = _long_short(classify(thresholds))
    m = thresholds.low
    e_short = side_expectation(short_side, m, scenario.measure, scenario.drifts)
    e_long = side_expectation(long_side, m, scenario.measure, scenario.drifts)
    slope = e_short * e_short / (e_short + e_long)
    return McEstimate(value, slope * cont.stderr, cont.n_paths, cont.n_censored,
                      cont.flagged, cont.warning)
