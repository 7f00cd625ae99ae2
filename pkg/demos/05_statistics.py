"""
Scoring and statistics
======================

Each run is summarized by the mean and standard deviation of its block
differences, tested against zero.  Control signals are compared with an exact
Wilcoxon signed-rank test over runs.  The bundled reference table has ten
runs per control signal.
"""

import numpy as np

from neuroloop import render_report, spearman, wilcoxon_signed_rank
from neuroloop.cli import load_table2

table = load_table2()
report = render_report(table)
for name, mu in report.mu.items():
    print(f"{name}: mean over runs {mu:.3f}")

for test in report.tests:
    print(test)

# %%
# The exact p-value sums over all 2^n sign assignments; for ten paired runs
# that all favour one side the two-sided p is 2/1024.
x = np.arange(1, 11) + 0.5
y = np.arange(1, 11)
print(wilcoxon_signed_rank(x, y))

# %%
# Rank correlation, for instance between a run's index and its performance.
cs2 = [row.mean for row in table["CS2"]]
print(spearman(np.arange(len(cs2)), cs2))
