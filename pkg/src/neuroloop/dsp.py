"""Band-pass filtering, spectra, sliding band power and the CS1 control signal."""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sp_signal

from .signals import Recording

DEFAULT_WIDTH = 4.0
MIN_LOW_EDGE = 0.5
FILTER_ORDER = 4
OUTPUT_RATE = 16.0
WINDOW = 1.0
# filtered output inside the first second is treated as transient
WARMUP = 1.0


@dataclass(frozen=True)
class BandSpec:
    """Band of ``width`` Hz centred on ``center``, low edge floored at 0.5 Hz."""

    center: float
    width: float = DEFAULT_WIDTH

    @property
    def low(self) -> float:
        return max(self.center - self.width / 2, MIN_LOW_EDGE)

    @property
    def high(self) -> float:
        return self.center + self.width / 2

    def validate(self, sample_rate: float) -> "BandSpec":
        if not self.width > 0:
            raise ValueError(f"band width must be positive, got {self.width}")
        if not self.low < self.high:
            raise ValueError(f"empty band [{self.low}, {self.high}]")
        if self.high >= sample_rate / 2:
            raise ValueError(
                f"band high edge {self.high} Hz at or above Nyquist ({sample_rate / 2} Hz)"
            )
        return self

    def to_dict(self) -> dict:
        return {"center": self.center, "width": self.width}

    @classmethod
    def from_dict(cls, d: dict) -> "BandSpec":
        return cls(float(d["center"]), float(d.get("width", DEFAULT_WIDTH)))


@dataclass(frozen=True)
class AlphaBand:
    peak: float
    band: BandSpec = field(init=False)

    def __post_init__(self):
        if not 6.0 <= self.peak <= 20.0:
            raise ValueError(f"alpha peak {self.peak} Hz outside [6, 20]")
        object.__setattr__(self, "band", BandSpec(self.peak, DEFAULT_WIDTH))

    def to_dict(self) -> dict:
        return {"peak": self.peak, "low": self.band.low, "high": self.band.high}

    @classmethod
    def from_dict(cls, d: dict) -> "AlphaBand":
        return cls(float(d["peak"]))


@dataclass(frozen=True)
class CalibrationMap:
    """Affine map ``gain * x + offset`` followed by clamping to [-1, 1]."""

    gain: float
    offset: float

    def __post_init__(self):
        if not np.isfinite(self.gain) or self.gain == 0 or not np.isfinite(self.offset):
            raise ValueError("calibration gain must be finite and nonzero")

    def __call__(self, x):
        return np.clip(self.gain * np.asarray(x, dtype=float) + self.offset, -1.0, 1.0)

    def to_dict(self) -> dict:
        return {"gain": self.gain, "offset": self.offset}

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationMap":
        return cls(float(d["gain"]), float(d["offset"]))


@dataclass(frozen=True, eq=False)
class PowerSeries:
    """Values emitted at ``rate`` per second; the first at ``start`` seconds."""

    rate: float
    values: np.ndarray
    start: float = WINDOW

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def times(self) -> np.ndarray:
        return self.start + np.arange(self.values.size) / self.rate

    def __len__(self):
        return self.values.size

    def at(self, t) -> np.ndarray:
        """Values at times ``t`` (must fall on the output grid)."""
        idx = np.rint((np.asarray(t, dtype=float) - self.start) * self.rate).astype(int)
        if np.any(idx < 0) or np.any(idx >= self.values.size):
            raise IndexError("requested time outside the series")
        return self.values[idx]


@functools.lru_cache(maxsize=256)
def _butter_sos(low: float, high: float, sample_rate: float) -> np.ndarray:
    return sp_signal.butter(FILTER_ORDER, [low, high], btype="bandpass", fs=sample_rate, output="sos")


def design_band_filter(band: BandSpec, sample_rate: float) -> np.ndarray:
    """Causal Butterworth band-pass for ``band`` as second-order sections.

    Returns
    -------
    sos : ndarray, shape (n_sections, 6)
    """
    band.validate(sample_rate)
    return _butter_sos(band.low, band.high, float(sample_rate)).copy()


def filter_poles(sos: np.ndarray) -> np.ndarray:
    return np.concatenate([np.roots(section[3:]) for section in sos])


def bandpass(x: np.ndarray, band: BandSpec, sample_rate: float, zi=None):
    """Causally filter ``x`` along its last axis.

    With ``zi`` given, returns ``(y, zf)`` so filtering can continue on the
    next chunk.
    """
    sos = design_band_filter(band, sample_rate)
    if zi is None:
        return sp_signal.sosfilt(sos, x, axis=-1)
    return sp_signal.sosfilt(sos, x, axis=-1, zi=zi)


def n_outputs(n_samples: int, sample_rate: float, window: float = WINDOW, rate: float = OUTPUT_RATE) -> int:
    duration = n_samples / sample_rate
    return int(np.floor((duration - window) * rate + 1e-9)) + 1


def output_ends(n_samples: int, sample_rate: float, window: float = WINDOW, rate: float = OUTPUT_RATE) -> np.ndarray:
    """Sample index (exclusive) at which each output window ends."""
    k = np.arange(n_outputs(n_samples, sample_rate, window, rate))
    return np.rint((window + k / rate) * sample_rate).astype(int)


def trailing_mean(x: np.ndarray, ends: np.ndarray, n_window: int) -> np.ndarray:
    """Mean of ``x[..., e - n_window:e]`` for each ``e`` in ``ends``."""
    csum = np.concatenate(
        [np.zeros(x.shape[:-1] + (1,)), np.cumsum(x, axis=-1)], axis=-1
    )
    return (csum[..., ends] - csum[..., ends - n_window]) / n_window


def band_power_series(
    signal,
    band: BandSpec,
    sample_rate: float,
    window: float = WINDOW,
    rate: float = OUTPUT_RATE,
) -> PowerSeries:
    """Sliding-window band power of a single channel.

    The signal is band-pass filtered, squared and averaged over the trailing
    ``window`` seconds; one value every ``1/rate`` s starting at ``t = window``.
    """
    x = np.asarray(signal, dtype=float)
    if x.ndim != 1:
        raise ValueError("band_power_series expects a single channel")
    n_window = int(round(window * sample_rate))
    if x.size < n_window:
        raise ValueError(f"signal of {x.size / sample_rate:.3f} s is shorter than the {window} s window")
    y = bandpass(x, band, sample_rate)
    ends = output_ends(x.size, sample_rate, window, rate)
    values = np.maximum(trailing_mean(y * y, ends, n_window), 0.0)
    return PowerSeries(rate, values, start=window)


class BandPowerStream:
    """Incremental version of :func:`band_power_series`.

    Feed arbitrary chunks with :meth:`push`; each call returns the power values
    whose windows completed inside that chunk. Not thread-safe.
    """

    def __init__(self, band: BandSpec, sample_rate: float, window: float = WINDOW, rate: float = OUTPUT_RATE):
        self.band = band.validate(sample_rate)
        self.sample_rate = float(sample_rate)
        self.window = window
        self.rate = rate
        self.n_window = int(round(window * sample_rate))
        sos = design_band_filter(band, sample_rate)
        self._zi = np.zeros((sos.shape[0], 2))
        self._buf = np.zeros(0)
        self._n_seen = 0
        self._k = 0  # index of the next output

    def _next_end(self) -> int:
        return int(round((self.window + self._k / self.rate) * self.sample_rate))

    def push(self, chunk) -> np.ndarray:
        chunk = np.asarray(chunk, dtype=float).ravel()
        y, self._zi = bandpass(chunk, self.band, self.sample_rate, zi=self._zi)
        buf_start = self._n_seen - self._buf.size
        self._buf = np.concatenate([self._buf, y * y])
        self._n_seen += chunk.size
        out = []
        while self._next_end() <= self._n_seen:
            end = self._next_end() - buf_start
            out.append(max(float(np.mean(self._buf[end - self.n_window:end])), 0.0))
            self._k += 1
        keep = min(self._buf.size, self.n_window)
        self._buf = self._buf[self._buf.size - keep:]
        return np.asarray(out)


def power_spectrum(signal, sample_rate: float, segment: float = 2.0):
    """Welch spectrum: 2 s Hann segments, 50% overlap, 0.5 Hz resolution.

    Returns
    -------
    freqs : ndarray
    density : ndarray
        One-sided power spectral density (units^2 / Hz).
    """
    x = np.asarray(signal, dtype=float)
    nperseg = int(round(segment * sample_rate))
    if x.size < nperseg:
        raise ValueError(f"need at least {segment} s of signal for the spectrum")
    return sp_signal.welch(
        x, fs=sample_rate, window="hann", nperseg=nperseg, noverlap=nperseg // 2,
        detrend="constant", scaling="density",
    )


def estimate_alpha_band(
    eyes_closed, sample_rate: float, min_duration: float = 30.0, fmin: float = 6.0, fmax: float = 20.0
) -> AlphaBand:
    """Individual alpha band: the 6-20 Hz spectral peak with a fixed 4 Hz width."""
    x = np.asarray(eyes_closed, dtype=float)
    if x.size / sample_rate < min_duration - 1e-9:
        raise ValueError(
            f"eyes-closed segment of {x.size / sample_rate:.1f} s is shorter than {min_duration} s"
        )
    freqs, density = power_spectrum(x, sample_rate)
    sel = (freqs >= fmin - 1e-9) & (freqs <= fmax + 1e-9)
    peak = float(freqs[sel][np.argmax(density[sel])])
    return AlphaBand(peak)


def fit_calibration(control_samples, low_pct: float = 5.0, high_pct: float = 95.0) -> CalibrationMap:
    """Affine map sending the 5th percentile to -1 and the 95th to +1."""
    x = np.asarray(control_samples, dtype=float).ravel()
    if x.size < 32:
        raise ValueError(f"need at least 32 calibration samples, got {x.size}")
    lo, hi = np.percentile(x, [low_pct, high_pct])
    if not hi > lo:
        raise ValueError("calibration samples have zero spread")
    gain = 2.0 / (hi - lo)
    return CalibrationMap(gain, -1.0 - gain * lo)


def raw_cs1(recording: Recording, alpha: AlphaBand, channel: str = "Pz") -> PowerSeries:
    """Negated alpha band power at ``channel`` (before calibration)."""
    if channel not in recording.labels:
        raise KeyError(f"recording has no {channel} channel")
    power = band_power_series(recording.channel(channel), alpha.band, recording.sample_rate)
    return PowerSeries(power.rate, -power.values, power.start)


def compute_cs1(recording: Recording, alpha: AlphaBand, cal: CalibrationMap, channel: str = "Pz") -> PowerSeries:
    """CS1 control stream: calibrated, clamped negative alpha power at Pz."""
    raw = raw_cs1(recording, alpha, channel)
    return PowerSeries(raw.rate, cal(raw.values), raw.start)


class Cs1Stream:
    """Incremental CS1: push Pz samples, receive control values in [-1, 1]."""

    def __init__(self, alpha: AlphaBand, cal: CalibrationMap, sample_rate: float):
        self.cal = cal
        self._power = BandPowerStream(alpha.band, sample_rate)

    def push(self, chunk) -> np.ndarray:
        return self.cal(-self._power.push(chunk))
