"""
One closed-loop session
=======================

A session is three blocks.  Each block holds an Up and a Down phase in random
order; every phase starts with a 5 s instruction, then 35 s of active control
during which a virtual plane's altitude follows the control signal.
"""

from neuroloop import build_session_plan, run_session, session_duration
from neuroloop.analysis import block_differences, performance_row
from neuroloop.decoder import cs1_model
from neuroloop.protocol import calibrate_cs1, experiment_scenario, tick_times

plan = build_session_plan(seed=4)
for w in plan.windows():
    print(w)
print("session length:", session_duration(plan), "s")
times, conds = tick_times(plan)
print(len(times), "altitude updates,", (conds > 0).sum(), "of them in Up phases")

# %%
# Calibrate CS1 for a synthetic participant, then play the session.
participant = experiment_scenario(seed=4)
alpha, cal = calibrate_cs1(participant)
log = run_session(plan, participant, cs1_model(alpha, cal))

for d in block_differences([log]):
    print(f"block {d.block}: Up {d.mean_up:+.2f}  Down {d.mean_down:+.2f}  difference {d.diff:+.2f}")
print(performance_row(block_differences([log]), run="demo").cell)
