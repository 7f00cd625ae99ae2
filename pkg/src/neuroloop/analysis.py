"""Performance index, significance tests and Table-II / time-course reports."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .protocol import SessionLog

EXCLUSION = 5.0
MAX_WILCOXON_N = 25
REPORT_FORMAT = "neuroloop.report"
REPORT_VERSION = 1


@dataclass(frozen=True)
class BlockDifference:
    session: int
    block: int
    mean_up: float
    mean_down: float

    @property
    def diff(self) -> float:
        return self.mean_up - self.mean_down


@dataclass(frozen=True)
class PerformanceRow:
    run: str
    mean: float
    std: float
    t: float | None = None
    p: float | None = None
    stars: str = ""
    n: int | None = None

    @property
    def cell(self) -> str:
        """Table II style ``mean (std)`` plus stars."""
        return f"{self.mean:.2f} ({self.std:.2f}){self.stars}"


@dataclass(frozen=True)
class StatResult:
    statistic: float
    p: float
    method: str
    n: int = 0
    all_zero: bool = False

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p-value {self.p} outside [0, 1]")


def stars(p: float | None) -> str:
    if p is None or not np.isfinite(p):
        return ""
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


# --------------------------------------------------------------------------
# Performance index


def block_differences(logs: Sequence[SessionLog], exclusion: float = EXCLUSION) -> list[BlockDifference]:
    """Mean Up altitude minus mean Down altitude for every block of every log.

    Ticks in the first ``exclusion`` seconds of each active phase are ignored.
    """
    out = []
    for s, log in enumerate(logs):
        keep = log.phase_time >= exclusion - 1e-9
        for b in range(len(log.plan.blocks)):
            in_block = keep & (log.block == b)
            up = log.altitude[in_block & (log.condition > 0)]
            down = log.altitude[in_block & (log.condition < 0)]
            if up.size == 0 or down.size == 0:
                raise ValueError(f"session {s + 1}, block {b + 1} lacks an Up or Down phase")
            out.append(BlockDifference(int(log.meta.get("session", s + 1)), b + 1,
                                       float(up.mean()), float(down.mean())))
    return out


def performance_row(diffs: Sequence[BlockDifference] | Sequence[float], run: str = "") -> PerformanceRow:
    """Mean and sample std of block differences with a two-sided one-sample t-test."""
    d = np.asarray([x.diff if isinstance(x, BlockDifference) else x for x in diffs], dtype=float)
    n = d.size
    if n < 2:
        raise ValueError("need at least 2 block differences")
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    se = sd / math.sqrt(n)
    if se > 0:
        t = mean / se
        p = float(2 * stats.t.sf(abs(t), n - 1))
    elif mean == 0:
        t, p = 0.0, 1.0
    else:
        t, p = math.copysign(math.inf, mean), 0.0
    return PerformanceRow(run, mean, sd, float(t), min(p, 1.0), stars(p), n)


def column_mean(rows: Sequence[PerformanceRow]) -> float:
    if not rows:
        raise ValueError("column_mean of an empty column")
    return float(np.mean([r.mean for r in rows]))


# --------------------------------------------------------------------------
# Nonparametric tests


def signed_rank_distribution(ranks) -> tuple[np.ndarray, np.ndarray]:
    """Exact null distribution of W+ for the given (possibly tied) ranks.

    Counts all 2**n sign assignments; ranks are doubled so average ranks stay
    integral. Returns ``(support, probability)`` with support in rank units.
    """
    doubled = np.rint(2 * np.asarray(ranks, dtype=float)).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled:
        shifted = counts[:total + 1 - r].copy()
        counts[r:] += shifted
    n_patterns = 1 << doubled.size
    if int(counts.sum()) != n_patterns:
        raise AssertionError("signed-rank enumeration lost sign patterns")
    probs = counts / n_patterns
    if not math.isclose(float(probs.sum()), 1.0, rel_tol=0, abs_tol=1e-12):
        raise AssertionError("signed-rank distribution does not sum to 1")
    support = np.arange(total + 1) / 2.0
    nz = counts > 0
    return support[nz], probs[nz]


def wilcoxon_signed_rank(x, y, decimals: int = 12) -> StatResult:
    """Exact two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped; tied magnitudes get average ranks.
    Differences are rounded to ``decimals`` places first so values like
    ``0.95 - 0.90`` and ``0.30 - 0.25`` tie as they would in decimal arithmetic.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("paired samples must be 1-D and of equal length")
    if not 2 <= x.size <= MAX_WILCOXON_N:
        raise ValueError(f"exact enumeration supports 2..{MAX_WILCOXON_N} pairs, got {x.size}")
    d = np.round(x - y, decimals)
    d = d[d != 0]
    if d.size == 0:
        return StatResult(0.0, 1.0, "wilcoxon-exact", 0, all_zero=True)
    ranks = stats.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    support, probs = signed_rank_distribution(ranks)
    p = 2.0 * float(probs[support <= w + 1e-9].sum())
    return StatResult(w, min(p, 1.0), "wilcoxon-exact", int(d.size))


def spearman(x, y) -> StatResult:
    """Spearman rank correlation with a two-sided t-approximation p-value."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("spearman needs two 1-D samples of equal length")
    n = x.size
    if n < 4:
        raise ValueError("spearman needs at least 4 pairs")
    rx = stats.rankdata(x) - (n + 1) / 2
    ry = stats.rankdata(y) - (n + 1) / 2
    sxx, syy = float(rx @ rx), float(ry @ ry)
    if sxx == 0 or syy == 0:
        raise ValueError("spearman is undefined for constant input")
    r = float(np.clip((rx @ ry) / math.sqrt(sxx * syy), -1.0, 1.0))
    if abs(r) == 1.0:
        p = 0.0
    else:
        t = r * math.sqrt((n - 2) / (1 - r * r))
        p = float(2 * stats.t.sf(abs(t), n - 2))
    return StatResult(r, min(p, 1.0), "spearman-t", n)


# --------------------------------------------------------------------------
# Time course


@dataclass(frozen=True, eq=False)
class TimeCourse:
    t: np.ndarray  # bin start, seconds into the active phase
    mean_up: np.ndarray
    mean_down: np.ndarray
    n_up: np.ndarray
    n_down: np.ndarray

    def gap(self, start: float, stop: float) -> float:
        sel = (self.t >= start - 1e-9) & (self.t < stop - 1e-9)
        return float(np.nanmean(self.mean_up[sel] - self.mean_down[sel]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,mean_up,mean_down,n_up,n_down\n")
        for row in zip(self.t, self.mean_up, self.mean_down, self.n_up, self.n_down):
            t, mu, md, nu, nd = row
            buf.write(f"{t:g},{_fmt(mu)},{_fmt(md)},{nu},{nd}\n")
        return buf.getvalue()


def _fmt(v: float) -> str:
    return "" if not np.isfinite(v) else f"{v:.6g}"


def time_course(logs: Sequence[SessionLog], bin: float = 1.0, span: float = 35.0) -> TimeCourse:
    """Mean altitude per condition as a function of time into the phase."""
    edges = np.arange(0.0, span + 1e-9, bin)
    n_bins = edges.size - 1
    sums = {1: np.zeros(n_bins), -1: np.zeros(n_bins)}
    counts = {1: np.zeros(n_bins, dtype=int), -1: np.zeros(n_bins, dtype=int)}
    for log in logs:
        idx = np.floor(log.phase_time / bin + 1e-9)
        ok = np.isfinite(idx) & (idx >= 0) & (idx < n_bins)
        for c in (1, -1):
            sel = ok & (log.condition == c)
            k = idx[sel].astype(int)
            np.add.at(sums[c], k, log.altitude[sel])
            np.add.at(counts[c], k, 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        up = np.where(counts[1] > 0, sums[1] / np.maximum(counts[1], 1), np.nan)
        down = np.where(counts[-1] > 0, sums[-1] / np.maximum(counts[-1], 1), np.nan)
    return TimeCourse(edges[:-1], up, down, counts[1], counts[-1])


# --------------------------------------------------------------------------
# Reports


@dataclass
class Report:
    """Table-II shaped summary: one column per control signal, one row per run."""

    columns: dict[str, list[PerformanceRow]]
    tests: list[dict] = field(default_factory=list)

    @property
    def mu(self) -> dict[str, float]:
        return {name: column_mean(rows) for name, rows in self.columns.items()}

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "columns": {name: [_row_dict(r) for r in rows] for name, rows in self.columns.items()},
            "mu": self.mu,
            "tests": self.tests,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        names = list(self.columns)
        n_rows = max(len(rows) for rows in self.columns.values())
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["run"] + names)
        for i in range(n_rows):
            run = next((rows[i].run for rows in self.columns.values() if i < len(rows)), str(i + 1))
            w.writerow([run] + [rows[i].cell if i < len(rows) else "" for rows in self.columns.values()])
        w.writerow(["mu"] + [f"{self.mu[name]:.2f}" for name in names])
        return buf.getvalue()


def _row_dict(r: PerformanceRow) -> dict:
    d = asdict(r)
    for key in ("t", "p"):
        if d[key] is not None and not np.isfinite(d[key]):
            d[key] = None if np.isnan(d[key]) else ("inf" if d[key] > 0 else "-inf")
    return d


def _row_from(d: dict) -> PerformanceRow:
    d = dict(d)
    if isinstance(d.get("t"), str):
        d["t"] = float(d["t"])
    return PerformanceRow(**d)


def parse_report(text: str | dict) -> Report:
    d = json.loads(text) if isinstance(text, str) else text
    if d.get("format") != REPORT_FORMAT:
        raise ValueError("not a neuroloop report")
    cols = {name: [_row_from(r) for r in rows] for name, rows in d["columns"].items()}
    return Report(cols, list(d.get("tests", [])))


def cross_tests(columns: Mapping[str, Sequence[PerformanceRow]]) -> list[dict]:
    """Paired Wilcoxon on per-run means for every pair of equally long columns."""
    out = []
    for a, b in combinations(columns, 2):
        xa = [r.mean for r in columns[a]]
        xb = [r.mean for r in columns[b]]
        if len(xa) != len(xb) or len(xa) < 2:
            continue
        res = wilcoxon_signed_rank(xb, xa)
        out.append({"x": b, "y": a, "statistic": res.statistic, "p": res.p,
                    "n": res.n, "method": res.method, "all_zero": res.all_zero})
    return out


def render_report(columns: Mapping[str, Sequence[PerformanceRow]]) -> Report:
    """Build the report, with cross-column Wilcoxon tests when there are 2+ columns."""
    if not columns:
        raise ValueError("report needs at least one column")
    cols = {name: list(rows) for name, rows in columns.items()}
    return Report(cols, cross_tests(cols) if len(cols) > 1 else [])


def rows_from_runs(runs: Iterable[tuple[str, Sequence[SessionLog]]]) -> list[PerformanceRow]:
    return [performance_row(block_differences(logs), run=name) for name, logs in runs]
