"""Recording data model, synthetic EEG/EMG generator and CSV persistence."""

from __future__ import annotations

import csv
import enum
import functools
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import signal as sp_signal

EEG_MONTAGE = (
    "Fp1", "Fpz", "Fp2", "F3", "Fz", "F4",
    "T7", "C3", "Cz", "C4", "T8",
    "P3", "Pz", "P4", "O1", "O2",
)
EMG_LABELS = ("EMG1", "EMG2", "EMG3", "EMG4", "EMG5")

POSTERIOR = ("P3", "Pz", "P4", "O1", "O2")
CENTRAL = ("T7", "C3", "Cz", "C4", "T8")
FRONTAL = ("Fp1", "Fpz", "Fp2", "F3", "Fz", "F4")

# Alpha source gain per EEG channel.
ALPHA_GAIN = {
    **{ch: 1.0 for ch in POSTERIOR},
    **{ch: 0.5 for ch in CENTRAL},
    **{ch: 0.25 for ch in FRONTAL},
}
# Gain of the optional concentration-related beta source (frontal maximum).
BETA_GAIN = {
    **{ch: 0.25 for ch in POSTERIOR},
    **{ch: 0.5 for ch in CENTRAL},
    **{ch: 1.0 for ch in FRONTAL},
}
# Fixed gain of the shared muscle burst on each EMG electrode (eyes x4, neck).
EMG_GAIN = (1.0, 0.8, 1.0, 0.8, 0.6)

UP = "Up"
DOWN = "Down"
CONDITIONS = (UP, DOWN)


class Modality(str, enum.Enum):
    EEG = "EEG"
    EMG = "EMG"


class ChannelSet(str, enum.Enum):
    EEG16 = "EEG16"
    EMG5 = "EMG5"
    BOTH = "BOTH"


class RecordingFormatError(ValueError):
    """Raised when a recording file cannot be parsed."""


@dataclass(frozen=True)
class ChannelInfo:
    label: str
    modality: Modality

    def __post_init__(self):
        object.__setattr__(self, "modality", Modality(self.modality))
        if self.modality is Modality.EEG and self.label not in EEG_MONTAGE:
            raise ValueError(f"unknown EEG label {self.label!r}")
        if self.modality is Modality.EMG and self.label not in EMG_LABELS:
            raise ValueError(f"unknown EMG label {self.label!r}")


@dataclass(frozen=True)
class Annotation:
    start: float
    end: float
    condition: str

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise ValueError(f"condition must be one of {CONDITIONS}, got {self.condition!r}")
        if not self.end > self.start:
            raise ValueError(f"annotation span [{self.start}, {self.end}] is empty")


def eeg_channels() -> tuple[ChannelInfo, ...]:
    return tuple(ChannelInfo(lab, Modality.EEG) for lab in EEG_MONTAGE)


def emg_channels() -> tuple[ChannelInfo, ...]:
    return tuple(ChannelInfo(lab, Modality.EMG) for lab in EMG_LABELS)


@dataclass(frozen=True, eq=False)
class Recording:
    """Multichannel recording.

    Attributes
    ----------
    sample_rate : float
        Samples per second.
    channels : tuple of ChannelInfo
        One entry per row of ``samples``.
    samples : ndarray, shape (n_channels, n_times)
        Values in microvolts. Stored read-only.
    annotations : tuple of Annotation
        Condition spans in seconds.
    """

    sample_rate: float
    channels: tuple[ChannelInfo, ...]
    samples: np.ndarray
    annotations: tuple[Annotation, ...] = ()

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float, ndmin=2)
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "annotations", tuple(self.annotations))
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        if samples.shape[0] != len(self.channels):
            raise ValueError(
                f"{len(self.channels)} channels but {samples.shape[0]} sample rows"
            )
        labels = self.labels
        if len(set(labels)) != len(labels):
            raise ValueError("channel labels must be unique")
        for ann in self.annotations:
            if ann.start < 0 or ann.end > self.duration + 1e-9:
                raise ValueError(f"annotation {ann} outside [0, {self.duration}]")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(ch.label for ch in self.channels)

    @property
    def n_times(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_times / self.sample_rate

    def channel(self, label: str) -> np.ndarray:
        try:
            return self.samples[self.labels.index(label)]
        except ValueError:
            raise KeyError(f"channel {label!r} not in recording") from None

    def pick(self, labels: Sequence[str]) -> np.ndarray:
        """Return the rows for ``labels`` in the given order."""
        missing = [lab for lab in labels if lab not in self.labels]
        if missing:
            raise KeyError(f"channels missing from recording: {missing}")
        idx = [self.labels.index(lab) for lab in labels]
        return self.samples[idx]

    def labels_of(self, modality: Modality) -> tuple[str, ...]:
        return tuple(ch.label for ch in self.channels if ch.modality is Modality(modality))

    def digest(self) -> str:
        """SHA-256 over rate, channel header, annotations and raw sample bytes."""
        h = hashlib.sha256()
        h.update(repr(float(self.sample_rate)).encode())
        h.update(",".join(f"{c.label}:{c.modality.value}" for c in self.channels).encode())
        for a in self.annotations:
            h.update(f"{a.start!r},{a.end!r},{a.condition};".encode())
        h.update(np.ascontiguousarray(self.samples, dtype="<f8").tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, Recording):
            return NotImplemented
        return (
            self.sample_rate == other.sample_rate
            and self.channels == other.channels
            and self.annotations == other.annotations
            and self.samples.shape == other.samples.shape
            and bool(np.array_equal(self.samples, other.samples))
        )

    __hash__ = None


# --------------------------------------------------------------------------
# Synthetic generator


@dataclass(frozen=True)
class SynthScenario:
    """Parameters of the synthetic participant.

    Amplitudes are nominal microvolts. ``schedule`` lists ``(start, end,
    condition)`` spans; outside the spans the participant is neutral and the
    alpha amplitude and EMG burst rate sit halfway between the two conditions.

    ``noise_correlation`` is the fraction of background noise variance shared
    by all EEG channels. ``alpha_jitter`` is the standard deviation of the slow
    log-amplitude fluctuation of the alpha source. ``ramp_time`` makes the
    condition effect build up linearly over the first seconds of each span.
    The beta source (off by default) is strongest frontally and grows with
    concentration, the opposite of alpha.
    """

    seed: int = 0
    duration: float = 60.0
    channel_set: ChannelSet = ChannelSet.EEG16
    alpha_peak: float = 10.0
    alpha_amp_relax: float = 10.0
    alpha_amp_concentrate: float = 2.0
    noise_scale: float = 5.0
    emg_burst_amp: float = 0.0
    emg_rate_up: float = 2.0
    emg_rate_down: float = 0.5
    schedule: tuple[tuple[float, float, str], ...] = ()
    sample_rate: float = 512.0
    noise_correlation: float = 0.5
    alpha_jitter: float = 0.0
    ramp_time: float = 0.0
    beta_peak: float = 22.0
    beta_amp_relax: float = 0.0
    beta_amp_concentrate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "channel_set", ChannelSet(self.channel_set))
        object.__setattr__(
            self, "schedule", tuple((float(a), float(b), str(c)) for a, b, c in self.schedule)
        )
        self.validate()

    def validate(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if not 6.0 <= self.alpha_peak <= 20.0:
            raise ValueError("alpha_peak must lie in [6, 20] Hz")
        if not self.alpha_amp_relax >= self.alpha_amp_concentrate >= 0:
            raise ValueError("need alpha_amp_relax >= alpha_amp_concentrate >= 0")
        if not self.beta_amp_concentrate >= self.beta_amp_relax >= 0:
            raise ValueError("need beta_amp_concentrate >= beta_amp_relax >= 0")
        if not 0 < self.beta_peak < self.sample_rate / 2:
            raise ValueError("beta_peak must lie below Nyquist")
        if self.noise_scale < 0 or self.emg_burst_amp < 0:
            raise ValueError("noise_scale and emg_burst_amp must be non-negative")
        if self.emg_rate_up < 0 or self.emg_rate_down < 0:
            raise ValueError("EMG burst rates must be non-negative")
        if not 0.0 <= self.noise_correlation <= 1.0:
            raise ValueError("noise_correlation must lie in [0, 1]")
        spans = sorted(self.schedule)
        for start, end, cond in spans:
            Annotation(start, end, cond)
            if start < 0 or end > self.duration + 1e-9:
                raise ValueError(f"schedule span ({start}, {end}) outside [0, {self.duration}]")
        for (_, end, _), (start, _, _) in zip(spans, spans[1:]):
            if start < end:
                raise ValueError(f"schedule spans overlap at t={start}")

    def replace(self, **changes) -> "SynthScenario":
        from dataclasses import replace

        return replace(self, **changes)


@functools.lru_cache(maxsize=8)
def _pink_sos(fs: float) -> tuple[np.ndarray, float]:
    """First-order pole/zero cascade with a -10 dB/decade slope over 0.5-100 Hz.

    Returns the SOS array and the output standard deviation for unit white input.
    """
    ratio = 10 ** (1 / 3)
    poles = []
    f = 0.5
    while f < 100.0 * ratio:
        poles.append(f)
        f *= ratio
    poles = np.array(poles)
    zeros = poles * np.sqrt(ratio)
    z, p, k = sp_signal.bilinear_zpk(
        -2 * np.pi * zeros, -2 * np.pi * poles, 1.0, fs
    )
    sos = sp_signal.zpk2sos(z, p, k)
    _, h = sp_signal.sosfreqz(sos, worN=1 << 16, fs=fs)
    # variance of unit white noise through the filter = mean |H|^2 over [0, pi]
    std = float(np.sqrt(np.mean(np.abs(h) ** 2)))
    return sos, std


def pink_noise(rng: np.random.Generator, n_channels: int, n_times: int, fs: float) -> np.ndarray:
    """Unit-variance 1/f noise, shape (n_channels, n_times)."""
    sos, std = _pink_sos(float(fs))
    # one second of burn-in so the recursion starts near steady state
    burn = int(fs)
    white = rng.standard_normal((n_channels, n_times + burn))
    return sp_signal.sosfilt(sos, white, axis=-1)[:, burn:] / std


def _condition_track(scenario: SynthScenario, t: np.ndarray) -> np.ndarray:
    """Per-sample condition code: +1 Up, -1 Down, 0 neutral (ramped within spans)."""
    track = np.zeros_like(t)
    for start, end, cond in scenario.schedule:
        sel = (t >= start) & (t < end)
        sign = 1.0 if cond == UP else -1.0
        if scenario.ramp_time > 0:
            track[sel] = sign * np.clip((t[sel] - start) / scenario.ramp_time, 0.0, 1.0)
        else:
            track[sel] = sign
    return track


def _slow_envelope(rng: np.random.Generator, n_times: int, fs: float) -> np.ndarray:
    """Unit-variance noise low-passed at 0.5 Hz."""
    sos = sp_signal.butter(2, 0.5, btype="low", fs=fs, output="sos")
    burn = int(4 * fs)
    x = sp_signal.sosfilt(sos, rng.standard_normal(n_times + burn))[burn:]
    return x / max(float(np.std(x)), 1e-12)


def _emg_bursts(
    rng: np.random.Generator, track: np.ndarray, scenario: SynthScenario, fs: float
) -> np.ndarray:
    n_times = track.size
    if scenario.emg_burst_amp == 0:
        return np.zeros(n_times)
    mid = 0.5 * (scenario.emg_rate_up + scenario.emg_rate_down)
    half = 0.5 * (scenario.emg_rate_up - scenario.emg_rate_down)
    rate = np.clip(mid + half * track, 0.0, None)  # bursts per second
    onsets = np.flatnonzero(rng.random(n_times) < rate / fs)
    burst_len = int(round(0.3 * fs))
    envelope = np.zeros(n_times + burst_len)
    window = np.hanning(burst_len)
    for onset in onsets:
        envelope[onset:onset + burst_len] += window
    envelope = envelope[:n_times]
    high = min(100.0, 0.45 * fs)
    sos = sp_signal.butter(4, [30.0, high], btype="bandpass", fs=fs, output="sos")
    carrier = sp_signal.sosfiltfilt(sos, rng.standard_normal(n_times))
    carrier /= max(float(np.std(carrier)), 1e-12)
    return scenario.emg_burst_amp * envelope * carrier


def generate_synthetic(scenario: SynthScenario) -> Recording:
    """Generate a deterministic synthetic recording for ``scenario``.

    EEG rows are pink background noise (partly shared across channels) plus an
    alpha sinusoid whose amplitude follows the condition schedule: relaxed
    (Down) spans get ``alpha_amp_relax``, concentrated (Up) spans get
    ``alpha_amp_concentrate``. EMG rows are pink noise plus 30-100 Hz muscle
    bursts that occur at ``emg_rate_up`` / ``emg_rate_down`` bursts per second.
    """
    scenario.validate()
    fs = float(scenario.sample_rate)
    n_times = int(round(scenario.duration * fs))
    rng = np.random.default_rng(scenario.seed)
    t = np.arange(n_times) / fs
    track = _condition_track(scenario, t)

    channels: list[ChannelInfo] = []
    rows: list[np.ndarray] = []

    if scenario.channel_set in (ChannelSet.EEG16, ChannelSet.BOTH):
        eeg = eeg_channels()
        rho = scenario.noise_correlation
        shared = pink_noise(rng, 1, n_times, fs)[0]
        own = pink_noise(rng, len(eeg), n_times, fs)
        noise = scenario.noise_scale * (np.sqrt(rho) * shared + np.sqrt(1 - rho) * own)

        mid = 0.5 * (scenario.alpha_amp_relax + scenario.alpha_amp_concentrate)
        half = 0.5 * (scenario.alpha_amp_relax - scenario.alpha_amp_concentrate)
        amp = mid - half * track
        if scenario.alpha_jitter > 0:
            j = scenario.alpha_jitter
            amp = amp * np.exp(j * _slow_envelope(rng, n_times, fs) - 0.5 * j * j)
        phase0 = rng.uniform(0, 2 * np.pi)
        alpha = amp * np.sin(2 * np.pi * scenario.alpha_peak * t + phase0)
        gains = np.array([ALPHA_GAIN[ch.label] for ch in eeg])
        eeg_rows = noise + gains[:, None] * alpha[None, :]
        if scenario.beta_amp_concentrate > 0:
            mid = 0.5 * (scenario.beta_amp_concentrate + scenario.beta_amp_relax)
            half = 0.5 * (scenario.beta_amp_concentrate - scenario.beta_amp_relax)
            bamp = mid + half * track
            if scenario.alpha_jitter > 0:
                j = scenario.alpha_jitter
                bamp = bamp * np.exp(j * _slow_envelope(rng, n_times, fs) - 0.5 * j * j)
            beta = bamp * np.sin(2 * np.pi * scenario.beta_peak * t + rng.uniform(0, 2 * np.pi))
            bgains = np.array([BETA_GAIN[ch.label] for ch in eeg])
            eeg_rows = eeg_rows + bgains[:, None] * beta[None, :]
        channels.extend(eeg)
        rows.append(eeg_rows)

    if scenario.channel_set in (ChannelSet.EMG5, ChannelSet.BOTH):
        emg = emg_channels()
        noise = scenario.noise_scale * pink_noise(rng, len(emg), n_times, fs)
        burst = _emg_bursts(rng, track, scenario, fs)
        channels.extend(emg)
        rows.append(noise + np.asarray(EMG_GAIN)[:, None] * burst[None, :])

    annotations = tuple(Annotation(a, b, c) for a, b, c in sorted(scenario.schedule))
    return Recording(fs, tuple(channels), np.vstack(rows), annotations)


# --------------------------------------------------------------------------
# CSV persistence


def _format_rate(rate: float) -> str:
    return str(int(rate)) if float(rate).is_integer() else repr(float(rate))


def events_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".events")


def save_csv(recording: Recording, path: str | Path) -> None:
    """Write ``recording`` to ``path`` and its annotations to ``<path>.events``.

    Layout: ``rate=<N>`` on the first line, ``label:modality`` pairs on the
    second, then one row per sample with values at 6 significant digits.
    """
    path = Path(path)
    header = ",".join(f"{ch.label}:{ch.modality.value}" for ch in recording.channels)
    with open(path, "w", newline="") as fh:
        fh.write(f"rate={_format_rate(recording.sample_rate)}\n")
        fh.write(header + "\n")
        np.savetxt(fh, recording.samples.T, fmt="%.6g", delimiter=",")
    with open(events_path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["start", "end", "condition"])
        for ann in recording.annotations:
            writer.writerow([f"{ann.start:.6g}", f"{ann.end:.6g}", ann.condition])


def _parse_header(rate_line: str, label_line: str) -> tuple[float, list[ChannelInfo]]:
    rate_line = rate_line.strip()
    if not rate_line.startswith("rate="):
        raise RecordingFormatError(f"first line must be 'rate=<N>', got {rate_line!r}")
    try:
        rate = float(rate_line[5:])
    except ValueError:
        raise RecordingFormatError(f"bad sample rate {rate_line[5:]!r}") from None
    channels = []
    for token in label_line.strip().split(","):
        label, sep, modality = token.partition(":")
        if not sep:
            raise RecordingFormatError(f"channel token {token!r} is not 'label:modality'")
        if modality not in Modality.__members__:
            raise RecordingFormatError(f"unknown modality {modality!r} in {token!r}")
        try:
            channels.append(ChannelInfo(label, Modality(modality)))
        except ValueError as exc:
            raise RecordingFormatError(str(exc)) from None
    return rate, channels


def load_csv(path: str | Path) -> Recording:
    """Read a recording written by :func:`save_csv`.

    The ``.events`` sidecar is optional; without it the recording has no
    annotations.
    """
    path = Path(path)
    with open(path) as fh:
        rate_line = fh.readline()
        label_line = fh.readline()
        if not label_line:
            raise RecordingFormatError(f"{path}: missing channel header")
        rate, channels = _parse_header(rate_line, label_line)
        n = len(channels)
        try:
            data = np.loadtxt(fh, delimiter=",", dtype=float, ndmin=2)
        except ValueError as exc:
            raise RecordingFormatError(f"{path}: ragged or non-numeric rows ({exc})") from None
    if data.size == 0:
        data = np.zeros((0, n))
    if data.shape[1] != n:
        raise RecordingFormatError(
            f"{path}: ragged rows, {data.shape[1]} columns for {n} channel labels"
        )
    data = data.T

    annotations: list[Annotation] = []
    ev = events_path(path)
    if ev.exists():
        with open(ev, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["start", "end", "condition"]:
                raise RecordingFormatError(f"{ev}: header must be start,end,condition")
            for row in reader:
                annotations.append(
                    Annotation(float(row["start"]), float(row["end"]), row["condition"])
                )
    return Recording(rate, tuple(channels), data, tuple(annotations))


def concatenate(recordings: Iterable[Recording]) -> Recording:
    """Join recordings end to end, shifting annotations accordingly."""
    recordings = list(recordings)
    if not recordings:
        raise ValueError("nothing to concatenate")
    first = recordings[0]
    offset = 0.0
    anns: list[Annotation] = []
    for rec in recordings:
        if rec.channels != first.channels or rec.sample_rate != first.sample_rate:
            raise ValueError("recordings differ in channels or sample rate")
        anns.extend(Annotation(a.start + offset, a.end + offset, a.condition) for a in rec.annotations)
        offset += rec.duration
    data = np.hstack([rec.samples for rec in recordings])
    return Recording(first.sample_rate, first.channels, data, tuple(anns))
