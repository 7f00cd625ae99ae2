"""``neuroloop`` command line: synth, run, analyze, table2.

Exit codes: 0 success, 1 failed verification (table2), 2 configuration
error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

from . import analysis
from .decoder import DecoderModel, ModelKind
from .protocol import (
    EXPERIMENT_DEFAULTS, SessionLog, build_experiment_plan, experiment_scenario,
    offline_replay, run_experiment_part, run_session,
)
from .seeds import derive_seed
from .signals import SynthScenario, generate_synthetic, load_csv, save_csv

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_DATA = 3

SEED_ENV = "NEUROLOOP_SEED"

# Reference mean row and Wilcoxon p-values for the bundled Table II fixture.
PRINTED_MU = {"CS1": 0.16, "CS2": 0.63, "CS3": 0.36, "CS4": 0.77}
PRINTED_P = {("CS2", "CS1"): 0.002, ("CS3", "CS2"): 0.033, ("CS4", "CS2"): 0.019}
MU_TOL = 0.005
P_TOL = 0.0005
INFO_P_TOL = 0.02


class ConfigError(ValueError):
    pass


class DataError(RuntimeError):
    pass


@dataclass
class SynthConfig:
    duration: float = 80.0
    schedule: list = field(default_factory=lambda: [[5.0, 40.0, "Up"], [45.0, 80.0, "Down"]])


@dataclass
class RunConfig:
    seed: int = 0
    part: str = "A"
    out: str = "neuroloop-out"
    runs: int = 1
    parallel: int = 1
    save_recordings: bool = True
    offline: str = "auto"
    fatigue: float = 0.0
    scenario: dict = field(default_factory=dict)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["scenario"] = {**EXPERIMENT_DEFAULTS, **self.scenario}
        return d


_SCENARIO_KEYS = {f.name for f in dataclasses.fields(SynthScenario)} - {"seed", "duration", "schedule"}


def _read_config_file(path: str | Path) -> dict:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if path.suffix.lower() == ".json":
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    try:
        return tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError as toml_exc:
        try:
            return json.loads(raw)
        except json.JSONDecodeError:
            raise ConfigError(f"{path}: invalid TOML ({toml_exc})") from None


def _coerce(name: str, value, kind):
    try:
        if kind is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected {kind.__name__}, got {value!r}") from None


def build_config(file_values: dict | None = None, **flags) -> RunConfig:
    """Defaults, then the config file, then environment seed, then CLI flags."""
    cfg = RunConfig()
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        cfg.seed = _coerce(SEED_ENV, env_seed, int)
    values = dict(file_values or {})
    top = {f.name: f for f in dataclasses.fields(RunConfig)}
    for key, value in values.items():
        if key not in top:
            raise ConfigError(f"{key}: unknown config field")
        if key == "scenario":
            if not isinstance(value, dict):
                raise ConfigError("scenario: expected a table")
            for k in value:
                if k not in _SCENARIO_KEYS:
                    raise ConfigError(f"scenario.{k}: unknown scenario field")
            cfg.scenario = dict(value)
        elif key == "synth":
            if not isinstance(value, dict):
                raise ConfigError("synth: expected a table")
            for k in value:
                if k not in ("duration", "schedule"):
                    raise ConfigError(f"synth.{k}: unknown synth field")
            cfg.synth = SynthConfig(
                duration=_coerce("synth.duration", value.get("duration", cfg.synth.duration), float),
                schedule=list(value.get("schedule", cfg.synth.schedule)),
            )
        else:
            kind = {"seed": int, "part": str, "out": str, "runs": int, "parallel": int,
                    "save_recordings": bool, "offline": str, "fatigue": float}[key]
            setattr(cfg, key, _coerce(key, value, kind))
    for key, value in flags.items():
        if value is not None:
            setattr(cfg, key, value)
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    if cfg.part not in ("A", "B"):
        raise ConfigError(f"part: must be A or B, got {cfg.part!r}")
    if cfg.runs < 1:
        raise ConfigError("runs: must be at least 1")
    if cfg.parallel < 1:
        raise ConfigError("parallel: must be at least 1")
    if not 0.0 <= cfg.fatigue < 1.0:
        raise ConfigError("fatigue: must lie in [0, 1)")
    offline = cfg.offline.upper()
    if offline not in ("AUTO", "NONE") and not set(_offline_kinds(cfg.offline)) <= {"CS1", "CS3", "CS4"}:
        raise ConfigError(f"offline: expected auto, none or a list of CS1/CS3/CS4, got {cfg.offline!r}")
    try:
        experiment_scenario(0, **cfg.scenario)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"scenario: {exc}") from None
    try:
        synth_scenario(cfg, 0)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"synth.schedule: {exc}") from None


def _offline_kinds(text: str) -> list[str]:
    return [t.strip().upper() for t in text.split(",") if t.strip()]


def synth_scenario(cfg: RunConfig, seed: int) -> SynthScenario:
    spans = []
    for i, span in enumerate(cfg.synth.schedule):
        if not isinstance(span, (list, tuple)) or len(span) != 3:
            raise ConfigError(f"synth.schedule[{i}]: expected [start, end, condition]")
        spans.append((float(span[0]), float(span[1]), str(span[2])))
    try:
        return experiment_scenario(seed, **cfg.scenario).replace(
            duration=cfg.synth.duration, schedule=tuple(spans))
    except ValueError as exc:
        raise ConfigError(f"synth.schedule: {exc}") from None


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------
# synth


def cmd_synth(cfg: RunConfig) -> Path:
    """Write one synthetic recording (CSV + events sidecar) to ``cfg.out``."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    scenario = synth_scenario(cfg, derive_seed(cfg.seed, "cli", "synth"))
    path = out / "recording.csv"
    save_csv(generate_synthetic(scenario), path)
    return path


# --------------------------------------------------------------------------
# run


def run_seed(cfg: RunConfig, i: int) -> int:
    return derive_seed(cfg.seed, "cli", "run", i)


def _run_one(cfg: RunConfig, i: int) -> dict:
    seed = run_seed(cfg, i)
    name = f"run_{i:02d}"
    run_dir = Path(cfg.out) / name
    run_dir.mkdir(parents=True, exist_ok=True)
    plan = build_experiment_plan(cfg.part, seed)
    result = run_experiment_part(plan, experiment_scenario(seed, **cfg.scenario), fatigue=cfg.fatigue)
    models = {}
    for k, (log, model) in enumerate(zip(result.logs, result.models), start=1):
        log.save(run_dir / f"session_{k}.csv")
        if model.kind is ModelKind.CS1:
            models.setdefault("model_cs1.json", model)
        else:
            models[f"model_session_{k}.json"] = model
        if cfg.save_recordings:
            save_csv(result.recordings[k - 1], run_dir / f"recording_session_{k}.csv")
    for fname, model in models.items():
        model.save(run_dir / fname)
    _write_json(run_dir / "run.json", {
        "run": name, "seed": seed, "part": cfg.part,
        "alpha": result.alpha.to_dict(), "calibration": result.calibration.to_dict(),
        "kinds": [m.kind.value for m in result.models],
        "recording_digests": [r.digest() for r in result.recordings],
    })
    return {"run": name, "seed": seed}


def _load_run_logs(run_dir: Path) -> list[SessionLog]:
    paths = sorted(run_dir.glob("session_*.csv"), key=lambda p: int(p.stem.split("_")[1]))
    if not paths:
        raise DataError(f"{run_dir}: no session logs")
    return [SessionLog.load(p) for p in paths]


def _online_column(logs: list[SessionLog]) -> tuple[str, list[SessionLog]]:
    kinds = [log.kind for log in logs]
    if all(k is ModelKind.CS1 for k in kinds):
        return "CS1", logs
    return "CS2", [log for log in logs if log.kind is ModelKind.CS2]


def cmd_run(cfg: RunConfig) -> Path:
    """Run part A or B for ``cfg.runs`` seeded participants and write the report."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.parallel > 1 and cfg.runs > 1:
        with ProcessPoolExecutor(max_workers=cfg.parallel) as pool:
            runs = list(pool.map(_run_one, [cfg] * cfg.runs, range(cfg.runs)))
    else:
        runs = [_run_one(cfg, i) for i in range(cfg.runs)]

    all_logs, rows, name = [], [], "CS1"
    for r in runs:
        name, logs = _online_column(_load_run_logs(out / r["run"]))
        rows.append(analysis.performance_row(analysis.block_differences(logs), run=r["run"]))
        all_logs.extend(logs)
    report = analysis.render_report({name: rows})
    (out / "report.json").write_text(report.to_json())
    (out / "report.csv").write_text(report.to_csv())
    (out / "time_course.csv").write_text(analysis.time_course(all_logs).to_csv())
    _write_json(out / "config.json", {k: v for k, v in cfg.to_dict().items() if k != "out"})

    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "MANIFEST.json")
    _write_json(out / "MANIFEST.json", {
        "root_seed": cfg.seed, "part": cfg.part, "runs": runs,
        "files": {str(p.relative_to(out)): _sha256(p) for p in files},
    })
    return out


# --------------------------------------------------------------------------
# analyze


def load_table2(path: str | Path | None = None) -> dict[str, list[analysis.PerformanceRow]]:
    """Per-participant Table II cells as report columns."""
    if path is None:
        text = resources.files("neuroloop").joinpath("data/table2.csv").read_text()
    else:
        text = Path(path).read_text()
    rows = list(csv.DictReader(text.splitlines()))
    if not rows:
        raise DataError("empty Table II fixture")
    names = [k[:-5] for k in rows[0] if k.endswith("_mean")]
    try:
        return {
            name: [analysis.PerformanceRow(r["participant"], float(r[f"{name}_mean"]),
                                           float(r[f"{name}_std"]), stars=r.get(f"{name}_stars", ""))
                   for r in rows]
            for name in names
        }
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed Table II fixture: {exc}") from None


def _replay_cs1(run_dir: Path, logs: list[SessionLog], recordings) -> list[SessionLog]:
    """Stored CS1 model decoded over sessions 2..n, matching the CS2 sessions."""
    model = DecoderModel.load(run_dir / "model_cs1.json")
    return [run_session(log.plan, rec, model, meta={"session": k, "offline": True})
            for k, (log, rec) in enumerate(zip(logs[1:], recordings[1:]), start=2)]


def _analyze_run_dir(path: Path, offline: str) -> list[tuple[str, analysis.PerformanceRow, bool]]:
    """``(column, row, is_offline)`` entries for every run under ``path``."""
    manifest_path = path / "MANIFEST.json"
    if not manifest_path.exists():
        raise DataError(f"{path}: no MANIFEST.json (not a neuroloop run directory)")
    manifest = json.loads(manifest_path.read_text())
    mode = offline.upper()
    wanted = _offline_kinds(offline) if mode not in ("AUTO", "NONE") else []
    entries = []
    for r in manifest["runs"]:
        run_dir = path / r["run"]
        logs = _load_run_logs(run_dir)
        name, online = _online_column(logs)
        entries.append((name, analysis.performance_row(analysis.block_differences(online), run=r["run"]), False))
        if manifest.get("part") != "B" or mode == "NONE":
            continue
        rec_paths = [run_dir / f"recording_session_{k}.csv" for k in range(1, len(logs) + 1)]
        if not all(p.exists() for p in rec_paths):
            if mode == "AUTO":
                continue
            raise DataError(f"{run_dir}: raw recordings missing, cannot compute {', '.join(wanted)}")
        recordings = [load_csv(p) for p in rec_paths]
        kinds = wanted
        if mode == "AUTO":
            has_emg = all(rec.labels_of("EMG") for rec in recordings)
            kinds = ["CS1", "CS3", "CS4"] if has_emg else ["CS1"]
        for kind in kinds:
            try:
                if kind == "CS1":
                    replay = _replay_cs1(run_dir, logs, recordings)
                else:
                    replay, _ = offline_replay([log.plan for log in logs], recordings, kind)
            except KeyError as exc:
                raise DataError(f"{run_dir}: {exc.args[0]}") from None
            entries.append((kind, analysis.performance_row(analysis.block_differences(replay), run=r["run"]), True))
    return entries


def cmd_analyze(paths: Sequence[str | Path], offline: str = "auto") -> analysis.Report:
    """Report from stored run directories and/or Table II fixture files.

    Part-B run directories contribute their online CS2 column plus CS1, CS3
    and CS4 replayed offline over the same sessions. Online columns take
    precedence over offline ones of the same name (e.g. CS1 from a part-A run).
    """
    found: dict[tuple[str, int], list[analysis.PerformanceRow]] = {}
    online_names = set()
    for i, p in enumerate(paths):
        p = Path(p)
        if p.is_dir():
            entries = _analyze_run_dir(p, offline)
        elif p.is_file():
            entries = [(name, row, False) for name, rows in load_table2(p).items() for row in rows]
        else:
            raise DataError(f"{p}: no such file or directory")
        for name, row, is_offline in entries:
            found.setdefault((name, i, is_offline), []).append(row)
            if not is_offline:
                online_names.add(name)
    columns: dict[str, list[analysis.PerformanceRow]] = {}
    for (name, _, is_offline), rows in found.items():
        if is_offline and name in online_names:
            continue
        key, n = name, 2
        while key in columns:
            key = f"{name}_{n}"
            n += 1
        columns[key] = rows
    if not columns:
        raise DataError("nothing to analyze")
    order = sorted(columns, key=lambda k: (k[:3], k))
    return analysis.render_report({k: columns[k] for k in order})


# --------------------------------------------------------------------------
# table2


def cmd_table2(fixture: str | Path | None = None, stream=None) -> bool:
    """Compare computed μ row and Wilcoxon p-values with the printed ones."""
    stream = stream or sys.stdout
    columns = load_table2(fixture)
    report = analysis.render_report(columns)
    ok = True
    print("Table II mean row (computed vs printed, tolerance ±0.005)", file=stream)
    for name, printed in PRINTED_MU.items():
        if name not in report.mu:
            continue
        got = report.mu[name]
        passed = abs(got - printed) <= MU_TOL
        ok &= passed
        print(f"  mu {name}: {got:.4f} vs {printed:.2f}  {'PASS' if passed else 'FAIL'}", file=stream)
    print("Paired Wilcoxon signed-rank, exact two-sided p", file=stream)
    tests = {(t["x"], t["y"]): t for t in report.tests}
    for (x, y), printed in PRINTED_P.items():
        t = tests.get((x, y))
        if t is None:
            continue
        if (x, y) == ("CS2", "CS1"):
            passed = abs(t["p"] - printed) <= P_TOL
            ok &= passed
            verdict = "PASS" if passed else "FAIL"
            tol = P_TOL
        else:
            verdict = "info, " + ("within" if abs(t["p"] - printed) <= INFO_P_TOL else "outside") + " band"
            tol = INFO_P_TOL
        print(f"  {x} vs {y}: W={t['statistic']:g} n={t['n']} p={t['p']:.5f} vs printed {printed} "
              f"(±{tol})  {verdict}", file=stream)
    return ok


# --------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML (or JSON) configuration file")
    common.add_argument("--seed", type=int, help=f"root seed (default: ${SEED_ENV} or 0)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--part", choices=["A", "B"], help="experiment part")
    common.add_argument("--parallel", type=int, help="worker processes for independent runs")

    parser = argparse.ArgumentParser(prog="neuroloop", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write a synthetic recording")
    run = sub.add_parser("run", parents=[common], help="run part A or B end to end")
    run.add_argument("--runs", type=int, help="number of seeded participants")
    ana = sub.add_parser("analyze", parents=[common], help="report from run directories or fixtures")
    ana.add_argument("paths", nargs="+")
    ana.add_argument("--offline", help="auto, none, or a list such as CS1,CS3,CS4")
    t2 = sub.add_parser("table2", parents=[common], help="verify the bundled Table II values")
    t2.add_argument("--fixture", help="alternative fixture CSV")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        file_values = _read_config_file(args.config) if args.config else {}
        flags = {"seed": args.seed, "out": args.out, "part": args.part, "parallel": args.parallel,
                 "runs": getattr(args, "runs", None), "offline": getattr(args, "offline", None)}
        cfg = build_config(file_values, **flags)
    except ConfigError as exc:
        print(f"neuroloop: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "synth":
            path = cmd_synth(cfg)
            print(path)
        elif args.command == "run":
            out = cmd_run(cfg)
            print((out / "report.csv").read_text(), end="")
        elif args.command == "analyze":
            report = cmd_analyze(args.paths, cfg.offline)
            if args.out:
                out = Path(args.out)
                out.mkdir(parents=True, exist_ok=True)
                (out / "report.json").write_text(report.to_json())
                (out / "report.csv").write_text(report.to_csv())
            print(report.to_csv(), end="")
            for t in report.tests:
                print(f"wilcoxon {t['x']} vs {t['y']}: W={t['statistic']:g} n={t['n']} p={t['p']:.5f}")
        elif args.command == "table2":
            return EXIT_OK if cmd_table2(args.fixture) else EXIT_FAIL
    except ConfigError as exc:
        print(f"neuroloop: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, KeyError, ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"neuroloop: data error: {msg}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
