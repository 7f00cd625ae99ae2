"""
A full two-part experiment
==========================

Part A uses the alpha control signal for all six sessions.  Part B starts the
same way, then retrains the CSP decoder before each later session on every
earlier session.  Afterwards the Part B recordings are replayed offline with
EMG-only and combined EEG+EMG decoders.

Runs a few seeds; expect a minute or two.
"""

import sys

from neuroloop import build_experiment_plan, offline_replay, run_experiment_part
from neuroloop.analysis import block_differences, performance_row, render_report
from neuroloop.protocol import experiment_scenario
from neuroloop.seeds import derive_seed

n_runs = int(sys.argv[1]) if len(sys.argv) > 1 else 3
columns = {"CS1": [], "CS2": [], "CS3": [], "CS4": []}

for run in range(n_runs):
    seed = derive_seed(2024, "demo", run)
    scenario = experiment_scenario(seed)

    a = run_experiment_part(build_experiment_plan("A", seed), scenario)
    columns["CS1"].append(performance_row(block_differences(a.logs), run=f"run{run}"))

    plan_b = build_experiment_plan("B", seed)
    b = run_experiment_part(plan_b, scenario)
    columns["CS2"].append(performance_row(block_differences(b.logs[1:]), run=f"run{run}"))

    for kind in ("CS3", "CS4"):
        logs, _ = offline_replay(plan_b.sessions, b.recordings, kind)
        columns[kind].append(performance_row(block_differences(logs), run=f"run{run}"))

    print(f"run {run}: " + "  ".join(f"{k} {v[-1].cell}" for k, v in columns.items()))

report = render_report(columns)
print()
print(report.to_csv())
