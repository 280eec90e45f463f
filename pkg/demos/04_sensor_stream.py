#!/usr/bin/env python3
"""Streaming detection on a sensor log.

Writes a synthetic log with a downward drift starting at t=130 (the file
in demos/data is this script's output), then runs the detector through
the command-line interface in two chunks with a saved state in between.
"""

import io
import json
import tempfile
from pathlib import Path

import numpy as np

from twocusum import DriftPair, Measure
from twocusum.cli import main
from twocusum.simulate import Scenario, simulate_path

HERE = Path(__file__).parent
CSV = HERE / "data" / "sensor_demo.csv"

# %% a log with irregular clock start and level offset
sc = Scenario(Measure.NEGATIVE, DriftPair(1.0, 1.0), tau=30.0, dt=0.05, seed=2024)
inc = simulate_path(sc, 1600)
t = 100.0 + np.concatenate([[0.0], np.cumsum(inc[:, 1])])
x = 12.5 + np.concatenate([[0.0], np.cumsum(inc[:, 0])])
CSV.parent.mkdir(exist_ok=True)
with open(CSV, "w") as fh:
    fh.write("t,x\n")
    for a, b in zip(t, x):
        fh.write(f"{a:.2f},{b:.6f}\n")

# %% one pass over the whole file
args = ["detect", str(CSV), "--nu1", "4", "--nu2", "4"]
out = io.StringIO()
code = main(args, stdout=out)
event = json.loads(out.getvalue())
print(f"exit {code}: {event['event']} at t={event['time']:.2f} side={event['side']} "
      f"overshoot={event['overshoot']:.4f}")

# %% the same stream fed in two pieces
lines = CSV.read_text().splitlines()
with tempfile.TemporaryDirectory() as tmp:
    state = Path(tmp) / "state.json"
    first = "\n".join(lines[:400]) + "\n"
    rest = "\n".join([lines[0], *lines[400:]]) + "\n"
    code1 = main([*args[:1], "--nu1", "4", "--nu2", "4", "--save-state", str(state)],
                 stdin=io.StringIO(first), stdout=io.StringIO())
    out = io.StringIO()
    code2 = main([*args[:1], "--nu1", "4", "--nu2", "4", "--resume", str(state)],
                 stdin=io.StringIO(rest), stdout=out)
    resumed = json.loads(out.getvalue())
print(f"chunked: exit {code1} then {code2}, alarm at t={resumed['time']:.2f} side={resumed['side']}")
