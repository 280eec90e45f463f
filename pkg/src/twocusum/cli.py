"""Command-line interface: ``twocusum {calibrate,bounds,simulate,detect,search}``.

Reports are single JSON documents carrying the fully resolved configuration,
so ``--config report.json`` re-runs any report. ``detect`` emits one JSON
record per line. Exit codes: 0 success or alarm, 1 no alarm, 2 usage or
parse error, 3 infeasible search.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, fields
from typing import Any, Sequence, TextIO

from . import __version__
from .analytic import (
    DriftPair, Measure, ThresholdPair, classify, corollary_bounds, harmonic_mean_expectation,
    lorden_value, one_sided_expectation,
)
from .design import DesignConstraint, SearchMode, calibrate_harmonic, calibrate_one_sided, search_best_rule
from .engine import CusumState, FiredSide, check_stop, init_state, resolve_tie, update
from .errors import InputError, SearchError, TwoCusumError
from .simulate import Scenario, estimate_stopping_expectation

EXIT_OK, EXIT_NO_ALARM, EXIT_USAGE, EXIT_INFEASIBLE = 0, 1, 2, 3

_MEASURE_ALIASES = {
    "infinity": Measure.INFINITY, "inf": Measure.INFINITY, "p_inf": Measure.INFINITY,
    "positive": Measure.POSITIVE, "pos": Measure.POSITIVE, "p0_1": Measure.POSITIVE,
    "negative": Measure.NEGATIVE, "neg": Measure.NEGATIVE, "p0_2": Measure.NEGATIVE,
}


class UsageError(TwoCusumError):
    pass


@dataclass
class RunConfig:
    mu1: float = 1.0
    mu2: float = 1.0
    nu1: float | None = None
    nu2: float | None = None
    gamma: float | None = None
    dt: float = 1e-3
    t_max: float | None = None
    n_paths: int = 10_000
    seed: int = 0
    measure: str = "infinity"
    tau: float = 0.0
    max_step: float | None = None
    mode: str = "hybrid"
    budget: int = 2000

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def validate(self) -> None:
        try:
            DriftPair(self.mu1, self.mu2)
        except TwoCusumError as exc:
            raise UsageError(str(exc)) from None
        for name in ("nu1", "nu2", "gamma", "t_max", "max_step"):
            v = getattr(self, name)
            if v is not None and not (v > 0 and math.isfinite(v)):
                raise UsageError(f"{name} must be positive, got {v}")
        if not self.dt > 0:
            raise UsageError(f"dt must be positive, got {self.dt}")
        if self.n_paths < 2 or self.budget < 1:
            raise UsageError("n_paths must be >= 2 and budget >= 1")
        if not self.tau >= 0:
            raise UsageError(f"tau must be nonnegative, got {self.tau}")
        if not 0 <= self.seed < 2 ** 64:
            raise UsageError("seed must be a 64-bit unsigned integer")
        self.measure_enum()
        try:
            SearchMode(self.mode)
        except ValueError:
            raise UsageError(f"unknown mode {self.mode!r}") from None

    def measure_enum(self) -> Measure:
        try:
            return _MEASURE_ALIASES[self.measure.lower()]
        except KeyError:
            raise UsageError(f"unknown measure {self.measure!r}") from None

    def drifts(self) -> DriftPair:
        return DriftPair(self.mu1, self.mu2)

    def thresholds(self) -> ThresholdPair:
        if self.nu1 is None or self.nu2 is None:
            raise UsageError("nu1 and nu2 are required")
        return ThresholdPair(self.nu1, self.nu2)

    def need_gamma(self) -> float:
        if self.gamma is None:
            raise UsageError("gamma is required")
        return self.gamma


_INT_KEYS = {"n_paths", "seed", "budget"}
_STR_KEYS = {"measure", "mode"}


def _coerce(key: str, value: Any) -> Any:
    if value is None:
        return None
    try:
        if key in _INT_KEYS:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if key in _STR_KEYS:
            return str(value)
        return float(value)
    except (TypeError, ValueError):
        raise UsageError(f"bad value for {key}: {value!r}") from None


def load_config_file(path: str) -> dict[str, Any]:
    """Config keys from a JSON config file, or from the ``config`` of a report."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if isinstance(data, dict) and isinstance(data.get("config"), dict):
        data = data["config"]
    if not isinstance(data, dict):
        raise UsageError("config must be a JSON object")
    unknown = sorted(set(data) - set(RunConfig.keys()))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    return data


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then command-line flags."""
    values: dict[str, Any] = {}
    if args.config:
        values.update(load_config_file(args.config))
    for key in RunConfig.keys():
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    cfg = RunConfig(**{k: _coerce(k, v) for k, v in values.items()})
    cfg.validate()
    return cfg


def _scenario(cfg: RunConfig) -> Scenario:
    try:
        return Scenario(cfg.measure_enum(), cfg.drifts(), cfg.tau, cfg.dt, cfg.t_max, cfg.seed,
                        max_step=cfg.max_step)
    except InputError as exc:
        raise UsageError(str(exc)) from None


def _report(command: str, cfg: RunConfig, body: dict[str, Any]) -> dict[str, Any]:
    return {"command": command, "version": __version__, "seed": cfg.seed,
            "config": asdict(cfg), **body}


def cmd_calibrate(cfg: RunConfig) -> tuple[dict, int]:
    gamma = cfg.need_gamma()
    drifts = cfg.drifts()
    th = calibrate_harmonic(drifts, gamma)
    nu1 = calibrate_one_sided(drifts.mu1, gamma)
    nu2 = calibrate_one_sided(drifts.mu2, gamma)
    body = {
        "harmonic": {"nu": th.nu1,
                     "e_inf": harmonic_mean_expectation(th.nu1, Measure.INFINITY, drifts),
                     "e_pos": harmonic_mean_expectation(th.nu1, Measure.POSITIVE, drifts),
                     "e_neg": harmonic_mean_expectation(th.nu1, Measure.NEGATIVE, drifts)},
        "one_sided": {"positive": {"nu": nu1, "e_inf": one_sided_expectation(nu1, drifts.mu1)},
                      "negative": {"nu": nu2, "e_inf": one_sided_expectation(nu2, drifts.mu2)}},
    }
    return _report("calibrate", cfg, body), EXIT_OK


def _bounds_table(th: ThresholdPair, drifts: DriftPair) -> dict[str, Any]:
    table = {ms.value: asdict(corollary_bounds(th, drifts, ms)) for ms in Measure}
    jl = lorden_value(table["positive"]["upper"], table["negative"]["upper"])
    return {"rule_class": classify(th).value, "bounds": table, "jl_upper_bound": jl}


def cmd_bounds(cfg: RunConfig) -> tuple[dict, int]:
    body = _bounds_table(cfg.thresholds(), cfg.drifts())
    return _report("bounds", cfg, body), EXIT_OK


def cmd_simulate(cfg: RunConfig) -> tuple[dict, int]:
    th = cfg.thresholds()
    est = estimate_stopping_expectation(_scenario(cfg), th, cfg.n_paths)
    bracket = corollary_bounds(th, cfg.drifts(), cfg.measure_enum())
    body = {"rule_class": classify(th).value, "measure": cfg.measure_enum().value,
            "estimate": est.to_dict(), "bounds": asdict(bracket),
            "status": "warning" if est.flagged else "ok"}
    return _report("simulate", cfg, body), EXIT_OK


def cmd_search(cfg: RunConfig) -> tuple[dict, int]:
    gamma = cfg.need_gamma()
    DesignConstraint(gamma)
    try:
        res = search_best_rule(cfg.drifts(), gamma, cfg.mode, cfg.budget, cfg.seed,
                               dt=cfg.dt, max_step=cfg.max_step or 0.25)
    except SearchError as exc:
        body = {"status": "infeasible", "error": str(exc)}
        return _report("search", cfg, body), EXIT_INFEASIBLE
    return _report("search", cfg, {"status": "ok", "design": res.to_dict()}), EXIT_OK


# streaming detection


@dataclass
class StreamCursor:
    """Detector state plus the last observation, enough to resume a stream."""

    state: CusumState
    t: float | None = None
    x: float | None = None
    rows: int = 0

    def to_dict(self, cfg: RunConfig) -> dict[str, Any]:
        return {"state": self.state.to_dict(), "last": {"t": self.t, "x": self.x},
                "rows": self.rows, "config": asdict(cfg)}

    @classmethod
    def load(cls, path: str) -> StreamCursor:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
            last = data["last"]
            return cls(CusumState.from_dict(data["state"]), last["t"], last["x"],
                       int(data.get("rows", 0)))
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise UsageError(f"cannot read saved state {path}: {exc}") from None


def _rows(stream: TextIO):
    reader = csv.reader(stream)
    header = None
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row) or row[0].lstrip().startswith("#"):
            continue
        if header is None:
            header = [c.strip().lower() for c in row]
            if "t" not in header or "x" not in header:
                raise UsageError(f"line {line}: header must contain columns t and x")
            it, ix = header.index("t"), header.index("x")
            continue
        if len(row) != len(header):
            raise UsageError(f"line {line}: expected {len(header)} fields, got {len(row)}")
        try:
            t, x = float(row[it]), float(row[ix])
        except ValueError:
            raise UsageError(f"line {line}: non-numeric value in {row!r}") from None
        if not (math.isfinite(t) and math.isfinite(x)):
            raise UsageError(f"line {line}: non-finite value in {row!r}")
        yield line, t, x
    if header is None:
        raise UsageError("input has no header row")


def cmd_detect(cfg: RunConfig, stream: TextIO, out: TextIO,
               cursor: StreamCursor | None = None) -> tuple[StreamCursor, int]:
    th, drifts = cfg.thresholds(), cfg.drifts()
    cur = cursor or StreamCursor(init_state())
    for line, t, x in _rows(stream):
        cur.rows += 1
        if cur.t is None:
            cur.t, cur.x = t, x
            continue
        dt = t - cur.t
        if not dt > 0:
            raise UsageError(f"line {line}: time must increase (t={t} after {cur.t})")
        cur.state = update(cur.state, x - cur.x, dt, drifts)
        cur.t, cur.x = t, x
        rep = check_stop(cur.state, th)
        if rep.stopped:
            side = resolve_tie(rep, th)
            over = (cur.state.y_plus - th.nu1 if side is FiredSide.POSITIVE
                    else cur.state.y_minus - th.nu2)
            event = {"event": "alarm", "time": t, "elapsed": float(cur.state.t),
                     "side": side.value, "tie": rep.fired_side is FiredSide.TIE,
                     "overshoot": float(over), "y_plus": float(cur.state.y_plus),
                     "y_minus": float(cur.state.y_minus), "line": line, "seed": cfg.seed,
                     "config": asdict(cfg)}
            out.write(json.dumps(event) + "\n")
            return cur, EXIT_OK
    summary = {"event": "no_alarm", "time": cur.t, "elapsed": float(cur.state.t),
               "rows": cur.rows, "y_plus": float(cur.state.y_plus),
               "y_minus": float(cur.state.y_minus), "seed": cfg.seed, "config": asdict(cfg)}
    out.write(json.dumps(summary) + "\n")
    return cur, EXIT_NO_ALARM


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file, or a previous report")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="write the report here as well as to stdout")
    common.add_argument("--mu1", type=float)
    common.add_argument("--mu2", type=float)
    common.add_argument("--nu1", type=float)
    common.add_argument("--nu2", type=float)
    common.add_argument("--gamma", type=float)
    common.add_argument("--dt", type=float)
    common.add_argument("--t-max", dest="t_max", type=float)
    common.add_argument("--n-paths", dest="n_paths", type=int)
    common.add_argument("--measure")
    common.add_argument("--tau", type=float)
    common.add_argument("--max-step", dest="max_step", type=float)

    parser = argparse.ArgumentParser(
        prog="twocusum", description="Two-sided CUSUM rules for drift changes in Brownian motion.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("calibrate", parents=[common], help="thresholds meeting E_inf = gamma")
    sub.add_parser("bounds", parents=[common], help="bracket table for (nu1, nu2)")
    sub.add_parser("simulate", parents=[common], help="Monte Carlo mean stopping time")
    p = sub.add_parser("search", parents=[common], help="best rule under the false-alarm constraint")
    p.add_argument("--mode", choices=[m.value for m in SearchMode])
    p.add_argument("--budget", type=int, help="paths per simulated expectation")
    p = sub.add_parser("detect", parents=[common], help="run the rule on a t,x data stream")
    p.add_argument("input", nargs="?", default="-", help="CSV file with columns t,x ('-' for stdin)")
    p.add_argument("--resume", help="continue from a state saved by --save-state")
    p.add_argument("--save-state", dest="save_state", help="write the final detector state here")
    return parser


def _emit(report: dict, out_path: str | None, stdout: TextIO) -> None:
    text = json.dumps(report, indent=2, sort_keys=False)
    stdout.write(text + "\n")
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def main(argv: Sequence[str] | None = None, stdin: TextIO | None = None,
         stdout: TextIO | None = None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "detect":
            cursor = StreamCursor.load(args.resume) if args.resume else None
            events = io.StringIO()
            if args.input == "-":
                cur, code = cmd_detect(cfg, stdin, events, cursor)
            else:
                try:
                    fh = open(args.input, encoding="utf-8", newline="")
                except OSError as exc:
                    raise UsageError(f"cannot open {args.input}: {exc}") from None
                with fh:
                    cur, code = cmd_detect(cfg, fh, events, cursor)
            stdout.write(events.getvalue())
            if args.out:
                with open(args.out, "w", encoding="utf-8") as fh:
                    fh.write(events.getvalue())
            if args.save_state:
                with open(args.save_state, "w", encoding="utf-8") as fh:
                    json.dump(cur.to_dict(cfg), fh, indent=2)
            return code
        handler = {"calibrate": cmd_calibrate, "bounds": cmd_bounds,
                   "simulate": cmd_simulate, "search": cmd_search}[args.command]
        report, code = handler(cfg)
        _emit(report, args.out, stdout)
        return code
    except (UsageError, InputError, ValueError) as exc:
        print(f"twocusum: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TwoCusumError as exc:
        print(f"twocusum: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
