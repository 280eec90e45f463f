"""Streaming CUSUM statistics and the 2-CUSUM stopping rule.

The engine works on any numeric type supporting ``+ - * /`` and ordering,
so exact arithmetic (``fractions.Fraction``) runs through the same code as
floats. Drift terms are computed as ``mu * dt / 2``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Any, Iterable

from .analytic import DriftPair, ThresholdPair
from .errors import InputError


class FiredSide(Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    TIE = "tie"  # both crossed on the same update


@dataclass(frozen=True)
class CusumState:
    """Values of the statistics after the last update.

    ``y_plus = u_plus - min_plus`` and ``y_minus = u_minus - min_minus``.
    """

    u_plus: Any = 0.0
    u_minus: Any = 0.0
    min_plus: Any = 0.0
    min_minus: Any = 0.0
    y_plus: Any = 0.0
    y_minus: Any = 0.0
    t: Any = 0.0

    def to_dict(self) -> dict[str, float]:
        return {k: float(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> CusumState:
        fields = set(cls.__dataclass_fields__)
        unknown = set(data) - fields
        missing = fields - set(data)
        if unknown or missing:
            raise InputError(
                f"state record mismatch: unknown={sorted(unknown)}, missing={sorted(missing)}")
        values = {k: float(data[k]) for k in fields}
        if not all(math.isfinite(v) for v in values.values()):
            raise InputError("state record contains non-finite values")
        state = cls(**values)
        if state.y_plus < 0 or state.y_minus < 0 or state.t < 0:
            raise InputError("state record has negative statistics or time")
        return state


@dataclass(frozen=True)
class StoppingReport:
    stopped: bool
    alarm_time: Any = None
    fired_side: FiredSide | None = None
    overshoot: Any = None
    state: CusumState | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "stopped": self.stopped,
            "alarm_time": None if self.alarm_time is None else float(self.alarm_time),
            "fired_side": None if self.fired_side is None else self.fired_side.value,
            "overshoot": None if self.overshoot is None else float(self.overshoot),
        }
        if self.state is not None:
            out["state"] = self.state.to_dict()
        return out


def init_state() -> CusumState:
    return CusumState()


def reflect_step(y: Any, du: Any) -> Any:
    """One step of the reflected recursion ``max(y + du, 0)``."""
    x = y + du
    return x if x > 0 else x - x


def _finite(v: Any) -> bool:
    try:
        return math.isfinite(v)
    except (TypeError, OverflowError):
        return False


def update(state: CusumState, d_xi: Any, dt: Any, drifts: DriftPair) -> CusumState:
    """Advance the statistics by one observation increment ``d_xi`` over ``dt``.

    Raises:
        InputError: on a non-finite increment or a non-positive step.
    """
    if not _finite(d_xi):
        raise InputError(f"non-finite increment {d_xi!r}")
    if not (_finite(dt) and dt > 0):
        raise InputError(f"time step must be positive and finite, got {dt!r}")
    u_plus = state.u_plus + (d_xi - drifts.mu1 * dt / 2)
    u_minus = state.u_minus + (-d_xi - drifts.mu2 * dt / 2)
    min_plus = u_plus if u_plus < state.min_plus else state.min_plus
    min_minus = u_minus if u_minus < state.min_minus else state.min_minus
    return CusumState(u_plus, u_minus, min_plus, min_minus,
                      u_plus - min_plus, u_minus - min_minus, state.t + dt)


def check_stop(state: CusumState, thresholds: ThresholdPair) -> StoppingReport:
    over_p = state.y_plus - thresholds.nu1
    over_m = state.y_minus - thresholds.nu2
    hit_p = over_p >= 0
    hit_m = over_m >= 0
    if not (hit_p or hit_m):
        return StoppingReport(False, state=state)
    if hit_p and hit_m:
        side, over = FiredSide.TIE, max(over_p, over_m)
    elif hit_p:
        side, over = FiredSide.POSITIVE, over_p
    else:
        side, over = FiredSide.NEGATIVE, over_m
    return StoppingReport(True, state.t, side, over, state)


def resolve_tie(report: StoppingReport, thresholds: ThresholdPair) -> FiredSide | None:
    """Tie policy for reporting: the side with the larger overshoot, Positive on equality."""
    if report.fired_side is not FiredSide.TIE:
        return report.fired_side
    st = report.state
    if st.y_minus - thresholds.nu2 > st.y_plus - thresholds.nu1:
        return FiredSide.NEGATIVE
    return FiredSide.POSITIVE


def run_to_stop(increments: Iterable[tuple[Any, Any]], thresholds: ThresholdPair,
                drifts: DriftPair, state: CusumState | None = None) -> StoppingReport:
    """Feed ``(d_xi, dt)`` pairs until the rule fires or the input ends."""
    state = init_state() if state is None else state
    for d_xi, dt in increments:
        state = update(state, d_xi, dt, drifts)
        report = check_stop(state, thresholds)
        if report.stopped:
            return report
    return StoppingReport(False, state=state)

