"""Session schedule, closed-loop game simulation and per-part experiment driver."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dsp
from .decoder import (
    DecoderModel, ModelKind, SourceSet, TrainingSet, cs1_model, decode_stream,
    rank_candidates, train_combined, train_model,
)
from .seeds import derive_seed
from .signals import DOWN, UP, Recording, SynthScenario, generate_synthetic

TICK_RATE = dsp.OUTPUT_RATE
INSTRUCTION = 5.0
ACTIVE = 35.0
BLOCK_BREAK = 10.0
N_BLOCKS = 3
N_SESSIONS = 6
EYES_CLOSED = 30.0
CALIBRATION_TASK = 30.0


@dataclass(frozen=True)
class Phase:
    condition: str
    instruction: float = INSTRUCTION
    active: float = ACTIVE

    def __post_init__(self):
        if self.condition not in (UP, DOWN):
            raise ValueError(f"phase condition must be Up or Down, got {self.condition!r}")


@dataclass(frozen=True)
class PhaseWindow:
    """Where one phase sits on the session clock."""

    block: int
    index: int  # phase index within the session
    condition: str
    instruction_start: float
    active_start: float
    active_end: float


@dataclass(frozen=True)
class SessionPlan:
    blocks: tuple[tuple[Phase, Phase], ...]
    break_between_blocks: float = BLOCK_BREAK
    rng_seed: int = 0

    def __post_init__(self):
        for first, second in self.blocks:
            if {first.condition, second.condition} != {UP, DOWN}:
                raise ValueError("each block needs exactly one Up and one Down phase")

    def windows(self) -> list[PhaseWindow]:
        out = []
        t = 0.0
        for b, block in enumerate(self.blocks):
            if b:
                t += self.break_between_blocks
            for phase in block:
                active_start = t + phase.instruction
                out.append(PhaseWindow(b, len(out), phase.condition, t, active_start, active_start + phase.active))
                t = active_start + phase.active
        return out

    def active_spans(self) -> tuple[tuple[float, float, str], ...]:
        return tuple((w.active_start, w.active_end, w.condition) for w in self.windows())

    def to_dict(self) -> dict:
        return {
            "rng_seed": self.rng_seed,
            "break_between_blocks": self.break_between_blocks,
            "blocks": [
                [{"condition": p.condition, "instruction": p.instruction, "active": p.active} for p in blk]
                for blk in self.blocks
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SessionPlan":
        blocks = tuple(tuple(Phase(**p) for p in blk) for blk in d["blocks"])
        return cls(blocks, float(d["break_between_blocks"]), int(d["rng_seed"]))


def build_session_plan(seed: int, n_blocks: int = N_BLOCKS, instruction: float = INSTRUCTION,
                       active: float = ACTIVE, break_between_blocks: float = BLOCK_BREAK) -> SessionPlan:
    """Blocks of one Up and one Down phase; each block's order is a fair coin flip."""
    rng = np.random.default_rng(seed)
    blocks = []
    for _ in range(n_blocks):
        up_first = bool(rng.integers(2))
        order = (UP, DOWN) if up_first else (DOWN, UP)
        blocks.append(tuple(Phase(c, instruction, active) for c in order))
    return SessionPlan(tuple(blocks), break_between_blocks, seed)


def session_duration(plan: SessionPlan) -> float:
    """Instruction + active time of every phase plus the breaks between blocks."""
    phases = sum(p.instruction + p.active for blk in plan.blocks for p in blk)
    return phases + max(len(plan.blocks) - 1, 0) * plan.break_between_blocks


class Part(str, enum.Enum):
    A = "A"
    B = "B"


@dataclass(frozen=True)
class ExperimentPlan:
    part: Part
    sessions: tuple[SessionPlan, ...]
    retrain_between_sessions: bool
    first_session_control: ModelKind = ModelKind.CS1

    def __post_init__(self):
        object.__setattr__(self, "part", Part(self.part))

    def kinds(self) -> list[ModelKind]:
        if self.part is Part.A:
            return [ModelKind.CS1] * len(self.sessions)
        return [self.first_session_control] + [ModelKind.CS2] * (len(self.sessions) - 1)


def build_experiment_plan(part: Part | str, seed: int, n_sessions: int = N_SESSIONS) -> ExperimentPlan:
    part = Part(part)
    sessions = tuple(build_session_plan(derive_seed(seed, "protocol", "session", i)) for i in range(n_sessions))
    return ExperimentPlan(part, sessions, retrain_between_sessions=part is Part.B)


# --------------------------------------------------------------------------
# Session logs


@dataclass(eq=False)
class SessionLog:
    """Per-tick record of one session.

    ``condition`` holds +1 (Up) / -1 (Down); ``block`` and ``phase_time`` are
    derived from the plan.
    """

    plan: SessionPlan
    kind: ModelKind
    time: np.ndarray
    condition: np.ndarray
    control: np.ndarray
    altitude: np.ndarray
    block: np.ndarray
    phase_time: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = ModelKind(self.kind)
        if np.any(np.abs(self.altitude) > 1.0):
            raise ValueError("altitude outside [-1, 1]")

    @property
    def n_ticks(self) -> int:
        return self.time.size

    def header(self) -> dict:
        return {"format": "neuroloop.session_log", "version": 1, "kind": self.kind.value,
                "plan": self.plan.to_dict(), **self.meta}

    def save(self, path: str | Path) -> None:
        """Write ``<path>`` (CSV ticks) and ``<path>.json`` (header)."""
        path = Path(path)
        cond = np.where(self.condition > 0, UP, DOWN)
        with open(path, "w", newline="") as fh:
            fh.write("time,condition,control,altitude\n")
            for t, c, u, z in zip(self.time, cond, self.control, self.altitude):
                fh.write(f"{t:.10g},{c},{u:.10g},{z:.10g}\n")
        with open(path.with_name(path.name + ".json"), "w") as fh:
            json.dump(self.header(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "SessionLog":
        path = Path(path)
        with open(path.with_name(path.name + ".json")) as fh:
            header = json.load(fh)
        plan = SessionPlan.from_dict(header.pop("plan"))
        kind = header.pop("kind")
        header.pop("format", None)
        header.pop("version", None)
        rows = np.genfromtxt(path, delimiter=",", names=True, dtype=None, encoding="utf-8")
        rows = np.atleast_1d(rows)
        time = rows["time"].astype(float)
        condition = np.where(rows["condition"] == UP, 1, -1)
        block, phase_time = _locate(plan, time)
        return cls(plan, kind, time, condition, rows["control"].astype(float),
                   rows["altitude"].astype(float), block, phase_time, header)


def _locate(plan: SessionPlan, time: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    block = np.full(time.size, -1)
    phase_time = np.full(time.size, np.nan)
    for w in plan.windows():
        sel = (time >= w.active_start - 1e-9) & (time < w.active_end - 1e-9)
        block[sel] = w.block
        phase_time[sel] = time[sel] - w.active_start
    return block, phase_time


def tick_times(plan: SessionPlan, rate: float = TICK_RATE) -> tuple[np.ndarray, np.ndarray]:
    """Tick times during active intervals and the matching condition codes."""
    times, conds = [], []
    for w in plan.windows():
        n = int(round((w.active_end - w.active_start) * rate))
        times.append(w.active_start + np.arange(n) / rate)
        conds.append(np.full(n, 1 if w.condition == UP else -1))
    return np.concatenate(times), np.concatenate(conds)


def session_scenario(plan: SessionPlan, base: SynthScenario, seed: int) -> SynthScenario:
    """The synthetic participant for one session: follows the plan's active spans."""
    return base.replace(seed=seed, duration=session_duration(plan), schedule=plan.active_spans())


def run_session(plan: SessionPlan, source: Recording | SynthScenario, model: DecoderModel,
                meta: dict | None = None) -> SessionLog:
    """Play one session: altitude equals the control value at every active tick.

    Instruction periods and breaks consume signal but produce no ticks.
    """
    if isinstance(source, SynthScenario):
        source = generate_synthetic(session_scenario(plan, source, source.seed))
    needed = session_duration(plan)
    if source.duration + 1e-9 < needed:
        raise ValueError(f"source exhausted: {source.duration:.2f} s available, plan needs {needed:.2f} s")
    stream = decode_stream(model, source)
    times, conds = tick_times(plan)
    control = stream.at(times)
    altitude = np.clip(control, -1.0, 1.0)
    block, phase_time = _locate(plan, times)
    info = {"source_digest": source.digest()}
    info.update(meta or {})
    return SessionLog(plan, model.kind, times, conds, control, altitude, block, phase_time, info)


# --------------------------------------------------------------------------
# Experiment parts


@dataclass(eq=False)
class ExperimentResult:
    plan: ExperimentPlan
    logs: list[SessionLog]
    models: list[DecoderModel]  # model used in each session
    recordings: list[Recording]
    alpha: dsp.AlphaBand
    calibration: dsp.CalibrationMap
    training_sizes: list[int]  # phases available for training before each session

    @property
    def final_model(self) -> DecoderModel:
        return self.models[-1]


def _scaled(base: SynthScenario, session: int, n_sessions: int, fatigue: float) -> SynthScenario:
    if fatigue == 0 or n_sessions < 2:
        return base
    f = 1.0 - fatigue * session / (n_sessions - 1)
    return base.replace(alpha_amp_relax=base.alpha_amp_relax * f,
                        alpha_amp_concentrate=base.alpha_amp_concentrate * f)


def calibrate_cs1(scenario: SynthScenario) -> tuple[dsp.AlphaBand, dsp.CalibrationMap]:
    """Eyes-closed alpha peak search, then a no-feedback relax/concentrate calibration."""
    root = scenario.seed
    eyes = generate_synthetic(scenario.replace(
        seed=derive_seed(root, "signals", "eyes_closed"), duration=EYES_CLOSED,
        schedule=((0.0, EYES_CLOSED, DOWN),)))
    alpha = dsp.estimate_alpha_band(eyes.channel("Pz"), eyes.sample_rate)
    calib = generate_synthetic(scenario.replace(
        seed=derive_seed(root, "signals", "calibration"), duration=2 * CALIBRATION_TASK,
        schedule=((0.0, CALIBRATION_TASK, DOWN), (CALIBRATION_TASK, 2 * CALIBRATION_TASK, UP))))
    raw = dsp.raw_cs1(calib, alpha)
    keep = raw.times - dsp.WINDOW >= dsp.WARMUP
    return alpha, dsp.fit_calibration(raw.values[keep])


def session_recording(plan: ExperimentPlan, scenario: SynthScenario, i: int, fatigue: float = 0.0) -> Recording:
    base = _scaled(scenario, i, len(plan.sessions), fatigue)
    seed = derive_seed(scenario.seed, "signals", "session", i)
    return generate_synthetic(session_scenario(plan.sessions[i], base, seed))


def run_experiment_part(plan: ExperimentPlan, scenario: SynthScenario, fatigue: float = 0.0) -> ExperimentResult:
    """Run all sessions of one part on synthetic data.

    Part A: CS1 throughout. Part B: CS1 in session 1, then a CS2 model
    retrained before every later session on all earlier sessions of the part.
    ``scenario.seed`` is the root seed; ``fatigue`` linearly shrinks the alpha
    amplitudes to ``1 - fatigue`` of nominal by the last session.
    """
    alpha, cal = calibrate_cs1(scenario)
    cs1 = cs1_model(alpha, cal)
    logs, models, recordings, sizes = [], [], [], []
    cache: list[TrainingSet] = []
    for i, (splan, kind) in enumerate(zip(plan.sessions, plan.kinds())):
        rec = session_recording(plan, scenario, i, fatigue)
        if kind is ModelKind.CS1:
            model = cs1
        else:
            model = train_model(TrainingSet.concat(cache), SourceSet.EEG, ModelKind.CS2)
            if rec.digest() in model.training_digests:
                raise RuntimeError("current session leaked into the training data")
        sizes.append(sum(len(r.annotations) for r in recordings))
        log = run_session(splan, rec, model, meta={
            "session": i + 1, "part": plan.part.value, "root_seed": scenario.seed,
            "session_seed": derive_seed(scenario.seed, "signals", "session", i),
            "model_digests": list(model.training_digests),
        })
        logs.append(log)
        models.append(model)
        recordings.append(rec)
        if plan.retrain_between_sessions:
            cache.append(TrainingSet.from_recording(rec, SourceSet.EEG))
    return ExperimentResult(plan, logs, models, recordings, alpha, cal, sizes)


def offline_replay(plans: Sequence[SessionPlan], recordings: Sequence[Recording],
                   kind: ModelKind | str) -> tuple[list[SessionLog], list[DecoderModel]]:
    """Re-decode sessions 2..n offline with CS2/CS3/CS4 retrained on earlier sessions."""
    kind = ModelKind(kind)
    if kind is ModelKind.CS1:
        raise ValueError("offline replay covers CS2, CS3 and CS4")
    need = {ModelKind.CS2: ("EEG",), ModelKind.CS3: ("EMG",), ModelKind.CS4: ("EEG", "EMG")}[kind]
    for rec in recordings:
        for modality in need:
            if not rec.labels_of(modality):
                raise KeyError(f"{kind.value} needs {modality} channels, recording has none")
    sets = {m: [TrainingSet.from_recording(r, m) for r in recordings] for m in need}
    logs, models = [], []
    for i in range(1, len(recordings)):
        if kind is ModelKind.CS4:
            model = train_combined(rank_candidates(TrainingSet.concat(sets["EEG"][:i])),
                                   rank_candidates(TrainingSet.concat(sets["EMG"][:i])))
        else:
            model = train_model(TrainingSet.concat(sets[need[0]][:i]), need[0], kind)
        logs.append(run_session(plans[i], recordings[i], model, meta={"session": i + 1, "offline": True}))
        models.append(model)
    return logs, models


# Canonical synthetic participant for full experiment runs: moderate alpha
# modulation with slow amplitude jitter, a weaker frontal beta rise during
# concentration, and muscle bursts that are more frequent during Up phases.
EXPERIMENT_DEFAULTS = {
    "channel_set": "BOTH",
    "alpha_peak": 10.0,
    "alpha_amp_relax": 10.0,
    "alpha_amp_concentrate": 7.0,
    "noise_scale": 5.0,
    "noise_correlation": 0.5,
    "alpha_jitter": 0.6,
    "beta_peak": 22.0,
    "beta_amp_relax": 1.0,
    "beta_amp_concentrate": 2.5,
    "emg_burst_amp": 10.0,
    "emg_rate_up": 2.0,
    "emg_rate_down": 0.5,
}


def experiment_scenario(seed: int, **overrides) -> SynthScenario:
    params = {**EXPERIMENT_DEFAULTS, **overrides}
    return SynthScenario(seed=seed, duration=1.0, **params)
