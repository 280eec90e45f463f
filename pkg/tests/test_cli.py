import io
import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from twocusum.analytic import (
    DriftPair, Measure, ThresholdPair, corollary_bounds, harmonic_mean_expectation,
)
from twocusum.cli import (
    EXIT_INFEASIBLE, EXIT_NO_ALARM, EXIT_OK, EXIT_USAGE, RunConfig, main,
)
from twocusum.simulate import Scenario, simulate_path


def run(argv, stdin_text=""):
    out = io.StringIO()
    code = main(argv, io.StringIO(stdin_text), out)
    return code, out.getvalue()


def run_json(argv):
    code, text = run(argv)
    return code, json.loads(text)


def events(text):
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def csv_from_increments(inc, t0=0.0, x0=0.0):
    t = t0 + np.concatenate([[0.0], np.cumsum(inc[:, 1])])
    x = x0 + np.concatenate([[0.0], np.cumsum(inc[:, 0])])
    return "t,x\n" + "".join(f"{float(a)!r},{float(b)!r}\n" for a, b in zip(t, x))


class TestCalibrate:
    def test_example(self):
        code, rep = run_json(["calibrate", "--gamma", str(math.exp(2) - 3)])
        assert code == EXIT_OK
        assert rep["harmonic"]["nu"] == pytest.approx(2.0, rel=1e-12)
        assert rep["command"] == "calibrate" and rep["seed"] == 0

    def test_round_trip_unequal(self):
        code, rep = run_json(["calibrate", "--mu1", "1", "--mu2", "2", "--gamma", "50"])
        assert code == EXIT_OK
        assert rep["harmonic"]["e_inf"] == pytest.approx(50.0, rel=1e-6)
        d = DriftPair(1.0, 2.0)
        assert harmonic_mean_expectation(rep["harmonic"]["nu"], Measure.INFINITY, d) == \
            pytest.approx(50.0, rel=1e-9)
        assert rep["one_sided"]["positive"]["e_inf"] == pytest.approx(50.0, rel=1e-9)

    @pytest.mark.parametrize("argv", [["calibrate"], ["calibrate", "--gamma", "0"],
                                      ["calibrate", "--gamma", "-3"],
                                      ["calibrate", "--gamma", "5", "--mu1", "0"]])
    def test_usage_errors(self, argv):
        assert run(argv)[0] == EXIT_USAGE


class TestBounds:
    def test_collapse(self):
        code, rep = run_json(["bounds", "--nu1", "2", "--nu2", "2"])
        assert code == EXIT_OK and rep["rule_class"] == "G"
        for b in rep["bounds"].values():
            assert b["lower"] == b["upper"]
        assert rep["bounds"]["infinity"]["lower"] == pytest.approx(math.exp(2) - 3, rel=1e-12)

    def test_pass_through(self):
        code, rep = run_json(["bounds", "--nu1", "1.5", "--nu2", "1", "--mu2", "2"])
        th, d = ThresholdPair(1.5, 1.0), DriftPair(1.0, 2.0)
        assert rep["rule_class"] == "C1"
        for m in Measure:
            b = corollary_bounds(th, d, m)
            assert rep["bounds"][m.value]["lower"] == b.lower
            assert rep["bounds"][m.value]["upper"] == b.upper
        assert rep["jl_upper_bound"] == max(rep["bounds"]["positive"]["upper"],
                                            rep["bounds"]["negative"]["upper"])

    @pytest.mark.parametrize("argv", [["bounds", "--nu1", "1"], ["bounds", "--nu1", "0", "--nu2", "1"],
                                      ["bounds", "--nu1", "-1", "--nu2", "1"]])
    def test_usage_errors(self, argv):
        assert run(argv)[0] == EXIT_USAGE

    @pytest.mark.parametrize("measure", ["infinity", "positive", "negative"])
    def test_contains_simulation(self, measure):
        base = ["--nu1", "1.5", "--nu2", "1", "--mu2", "2", "--measure", measure]
        _, b = run_json(["bounds", *base])
        _, s = run_json(["simulate", *base, "--n-paths", "4000", "--dt", "2e-3",
                         "--max-step", "0.05", "--seed", "3"])
        lo, hi = b["bounds"][measure]["lower"], b["bounds"][measure]["upper"]
        e = s["estimate"]
        assert e["mean"] - 2 * e["stderr"] <= hi and e["mean"] + 2 * e["stderr"] >= lo


class TestSimulate:
    args = ["simulate", "--nu1", "2", "--nu2", "2", "--n-paths", "4000", "--dt", "2e-3",
            "--max-step", "0.25", "--seed", "5"]

    def test_deterministic(self):
        assert run(self.args)[1] == run(self.args)[1]

    def test_reference(self):
        code, rep = run_json(self.args)
        e = rep["estimate"]
        assert code == EXIT_OK and rep["status"] == "ok"
        assert abs(e["mean"] - (math.exp(2) - 3)) < 3 * e["stderr"]
        assert rep["bounds"]["lower"] == rep["bounds"]["upper"]
        assert rep["seed"] == 5 and e["n_censored"] == 0

    def test_symmetric_measures(self):
        _, a = run_json([*self.args, "--measure", "positive"])
        _, b = run_json([*self.args, "--measure", "negative", "--seed", "6"])
        ea, eb = a["estimate"], b["estimate"]
        assert abs(ea["mean"] - eb["mean"]) < 2 * math.hypot(ea["stderr"], eb["stderr"])

    def test_censoring_warning(self):
        code, rep = run_json(["simulate", "--nu1", "3", "--nu2", "3", "--n-paths", "100",
                              "--dt", "0.01", "--t-max", "1"])
        assert code == EXIT_OK and rep["status"] == "warning"
        assert rep["estimate"]["n_censored"] > 1

    def test_bad_measure(self):
        assert run(["simulate", "--nu1", "1", "--nu2", "1", "--measure", "sideways"])[0] == EXIT_USAGE


class TestSearch:
    def test_equal_drifts(self):
        code, rep = run_json(["search", "--gamma", "20", "--budget", "400", "--seed", "2"])
        d = rep["design"]
        assert code == EXIT_OK and d["rule_class"] == "G" and d["agrees"]
        assert d["e_inf"] - 2 * d["e_inf_stderr"] >= 20.0

    def test_weaker_positive_drift(self):
        code, rep = run_json(["search", "--gamma", "20", "--mu1", "0.5", "--budget", "400",
                              "--seed", "2"])
        d = rep["design"]
        assert d["rule_class"] == "C2" and d["predicted_class"] == "C2" and d["agrees"]

    def test_tiny_budget_feasible(self):
        code, rep = run_json(["search", "--gamma", "20", "--budget", "1", "--mode", "montecarlo",
                              "--mu2", "2", "--seed", "1"])
        d = rep["design"]
        assert code == EXIT_OK
        assert d["e_inf"] - 2 * d["e_inf_stderr"] >= 20.0

    def test_bound_mode(self):
        code, rep = run_json(["search", "--gamma", "50", "--mode", "bound"])
        assert code == EXIT_OK and rep["design"]["method"] == "bound"

    def test_infeasible(self):
        code, rep = run_json(["search", "--gamma", "1e300", "--mode", "bound"])
        assert code == EXIT_INFEASIBLE and rep["status"] == "infeasible" and rep["error"]


class TestConfig:
    def test_unknown_keys(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"gamma": 5, "colour": "red"}))
        assert run(["calibrate", "--config", str(p)])[0] == EXIT_USAGE

    def test_unreadable(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{not json")
        assert run(["calibrate", "--config", str(p)])[0] == EXIT_USAGE
        assert run(["calibrate", "--config", str(tmp_path / "missing.json")])[0] == EXIT_USAGE

    def test_precedence(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"gamma": 10, "mu1": 2.0}))
        _, rep = run_json(["calibrate", "--config", str(p)])
        assert rep["config"]["gamma"] == 10 and rep["config"]["mu1"] == 2.0
        _, rep = run_json(["calibrate", "--config", str(p), "--gamma", "30"])
        assert rep["config"]["gamma"] == 30 and rep["config"]["mu1"] == 2.0
        assert rep["config"]["mu2"] == RunConfig().mu2

    def test_full_config_in_report(self):
        _, rep = run_json(["bounds", "--nu1", "1", "--nu2", "2"])
        assert set(rep["config"]) == set(RunConfig.keys())

    def test_out_file(self, tmp_path):
        p = tmp_path / "r.json"
        code, text = run(["bounds", "--nu1", "1", "--nu2", "2", "--out", str(p)])
        assert json.loads(p.read_text()) == json.loads(text)

    def test_rerun_from_report(self, tmp_path):
        p = tmp_path / "r.json"
        argv = ["simulate", "--nu1", "1.5", "--nu2", "1", "--n-paths", "500", "--dt", "0.01",
                "--seed", "77", "--measure", "pos", "--out", str(p)]
        _, first = run(argv)
        _, again = run(["simulate", "--config", str(p)])
        assert again == first


def _subprocess(argv, env_extra):
    env = {**os.environ, **env_extra}
    res = subprocess.run([sys.executable, "-m", "twocusum", *argv], capture_output=True,
                         text=True, env=env, check=False)
    return res.returncode, res.stdout


def test_report_reproducible_sequential(tmp_path):
    p = tmp_path / "r.json"
    code, first = _subprocess(["simulate", "--nu1", "2", "--nu2", "1.5", "--n-paths", "2000",
                               "--dt", "0.01", "--seed", "9", "--out", str(p)], {})
    assert code == 0
    code, again = _subprocess(["simulate", "--config", str(p)], {"TWOCUSUM_WORKERS": "1"})
    assert code == 0 and again == first


class TestDetect:
    th = ["--nu1", "3", "--nu2", "3"]

    def test_injected_positive_drift(self, tmp_path):
        tau = 5.0
        sc = Scenario(Measure.POSITIVE, DriftPair(1.0, 1.0), tau=tau, dt=0.01, seed=12)
        data = csv_from_increments(simulate_path(sc, 4000), t0=100.0, x0=3.0)
        f = tmp_path / "s.csv"
        f.write_text(data)
        code, text = run(["detect", str(f), *self.th])
        ev = events(text)
        assert code == EXIT_OK and len(ev) == 1
        e = ev[0]
        assert e["event"] == "alarm" and e["side"] == "positive"
        assert e["elapsed"] > tau and e["time"] == pytest.approx(100.0 + e["elapsed"])
        assert e["overshoot"] >= 0 and e["y_plus"] >= 3.0

    def test_zeros_no_alarm(self):
        data = "t,x\n" + "".join(f"{i * 0.1},0\n" for i in range(1000))
        code, text = run(["detect", *self.th], data)
        ev = events(text)
        assert code == EXIT_NO_ALARM and ev[0]["event"] == "no_alarm" and ev[0]["rows"] == 1000

    def test_negation(self):
        sc = Scenario(Measure.NEGATIVE, DriftPair(1.0, 1.0), tau=2.0, dt=0.01, seed=13)
        inc = simulate_path(sc, 4000)
        flipped = inc.copy()
        flipped[:, 0] *= -1
        _, a = run(["detect", *self.th], csv_from_increments(inc))
        _, b = run(["detect", *self.th], csv_from_increments(flipped))
        ea, eb = events(a)[0], events(b)[0]
        assert ea["elapsed"] == eb["elapsed"]
        assert {ea["side"], eb["side"]} == {"positive", "negative"}

    @pytest.mark.parametrize("data, line", [
        ("t,x\n0,0\n0.1,abc\n", 3), ("t,x\n0,0\n0.1\n", 3), ("t,x\n0,0\n0,1\n", 3),
        ("a,b\n0,0\n", 1), ("t,x\n0,0\n0.1,nan\n", 3)])
    def test_malformed(self, data, line, capsys):
        code, _ = run(["detect", *self.th], data)
        assert code == EXIT_USAGE
        if line:
            assert f"line {line}" in capsys.readouterr().err

    def test_comments_and_extra_columns(self):
        data = "# sensor 4\nx,t,flag\n0,0,a\n\n5,1,b\n"
        code, text = run(["detect", "--nu1", "1", "--nu2", "1"], data)
        assert code == EXIT_OK and events(text)[0]["line"] == 5

    def test_resume(self, tmp_path):
        sc = Scenario(Measure.POSITIVE, DriftPair(1.0, 1.0), tau=3.0, dt=0.01, seed=14)
        rows = csv_from_increments(simulate_path(sc, 4000)).splitlines()
        whole = "\n".join(rows) + "\n"
        _, full = run(["detect", *self.th], whole)
        alarm = events(full)[0]
        cut = 250
        assert alarm["line"] > cut
        state = tmp_path / "state.json"
        code, first = run(["detect", *self.th, "--save-state", str(state)],
                          "\n".join(rows[:cut]) + "\n")
        assert code == EXIT_NO_ALARM
        rest = "\n".join([rows[0], *rows[cut:]]) + "\n"
        code, second = run(["detect", *self.th, "--resume", str(state)], rest)
        resumed = events(second)[0]
        assert code == EXIT_OK
        for k in ("time", "elapsed", "side", "y_plus", "y_minus", "overshoot"):
            assert resumed[k] == alarm[k]

    def test_bad_state_file(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text("{}")
        assert run(["detect", *self.th, "--resume", str(p)], "t,x\n0,0\n")[0] == EXIT_USAGE

    def test_missing_input(self, tmp_path):
        assert run(["detect", str(tmp_path / "nope.csv"), *self.th])[0] == EXIT_USAGE

    def test_out_copy(self, tmp_path):
        p = tmp_path / "ev.jsonl"
        _, text = run(["detect", *self.th, "--out", str(p)], "t,x\n0,0\n1,0\n")
        assert p.read_text() == text
