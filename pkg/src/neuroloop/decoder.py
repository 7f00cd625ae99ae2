"""Filter-bank CSP decoder: candidate features, MI selection, linear readout.

Training works on per-epoch covariance matrices of the band-filtered signal:
for a spatial filter ``w`` the variance of ``w @ X`` equals ``w @ C @ w``, so
log-variance features for any filter can be read off the cached covariances
without touching the raw samples again.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

from . import dsp
from .dsp import AlphaBand, BandSpec, CalibrationMap, PowerSeries
from .signals import UP, Modality, Recording

FEATURE_FLOOR = 1e-12
SHRINKAGE = 1e-6
RIDGE = 1e-8
N_FEATURES = 5
MI_BINS = 10
MODEL_FORMAT = "neuroloop.decoder"
MODEL_VERSION = 1


class ModelKind(str, enum.Enum):
    CS1 = "CS1"
    CS2 = "CS2"
    CS3 = "CS3"
    CS4 = "CS4"


def make_filter_bank(first: int = 2, last: int = 30, width: float = dsp.DEFAULT_WIDTH) -> list[BandSpec]:
    """Bands of ``width`` Hz centred on every integer frequency in [first, last]."""
    return [BandSpec(float(c), width) for c in range(first, last + 1)]


# --------------------------------------------------------------------------
# Epochs and covariances


@dataclass(frozen=True, eq=False)
class LabeledEpoch:
    samples: np.ndarray
    label: int

    def __post_init__(self):
        if self.label not in (1, -1):
            raise ValueError(f"epoch label must be +1 or -1, got {self.label}")
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=float))


def label_code(condition: str) -> int:
    return 1 if condition == UP else -1


def epoch_starts(recording: Recording, exclusion: float = 5.0, length: float = 1.0):
    """Start sample and label of every non-overlapping epoch after the exclusion.

    Returns
    -------
    starts : ndarray of int
    labels : ndarray of int (+1 Up, -1 Down)
    """
    if not recording.annotations:
        raise ValueError("recording has no condition annotations")
    fs = recording.sample_rate
    n = int(round(length * fs))
    starts, labels = [], []
    for ann in recording.annotations:
        usable = ann.end - ann.start - exclusion
        count = int(np.floor(usable / length + 1e-9))
        if count < 1:
            raise ValueError(
                f"phase [{ann.start}, {ann.end}] too short for a {length} s epoch "
                f"after the {exclusion} s exclusion"
            )
        first = int(round((ann.start + exclusion) * fs))
        for k in range(count):
            starts.append(first + k * n)
            labels.append(label_code(ann.condition))
    return np.asarray(starts, dtype=int), np.asarray(labels, dtype=int)


def epoch_phases(recording: Recording, exclusion: float = 5.0, length: float = 1.0,
                 channels: Sequence[str] | None = None) -> list[LabeledEpoch]:
    """Cut each annotated phase into 1 s epochs after skipping ``exclusion`` s."""
    starts, labels = epoch_starts(recording, exclusion, length)
    data = recording.samples if channels is None else recording.pick(channels)
    n = int(round(length * recording.sample_rate))
    return [LabeledEpoch(data[:, s:s + n], int(lab)) for s, lab in zip(starts, labels)]


def epoch_covariance(x: np.ndarray) -> np.ndarray:
    """Channel covariance of one epoch (mean removed, normalised by n)."""
    x = np.asarray(x, dtype=float)
    xc = x - x.mean(axis=-1, keepdims=True)
    return xc @ xc.T / x.shape[-1]


def _class_covariance(covs: np.ndarray, shrinkage: float = SHRINKAGE) -> np.ndarray:
    if len(covs) == 0:
        raise ValueError("no epochs for this class")
    traces = np.trace(covs, axis1=-2, axis2=-1)
    traces = np.where(traces > 0, traces, 1.0)
    mean = (covs / traces[:, None, None]).mean(axis=0)
    mean = 0.5 * (mean + mean.T)
    return mean + shrinkage * np.eye(mean.shape[0])


def regularized_covariance(epochs: Sequence[LabeledEpoch], shrinkage: float = SHRINKAGE) -> np.ndarray:
    """Mean trace-normalised epoch covariance plus ``shrinkage * I``."""
    if len(epochs) == 0:
        raise ValueError("regularized_covariance needs at least one epoch")
    covs = np.stack([epoch_covariance(ep.samples) for ep in epochs])
    return _class_covariance(covs, shrinkage)


# --------------------------------------------------------------------------
# CSP


@dataclass(frozen=True, eq=False)
class SpatialFilter:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        norm = np.linalg.norm(w)
        if not np.all(np.isfinite(w)) or norm == 0:
            raise ValueError("spatial filter weights must be finite and nonzero")
        if abs(norm - 1.0) > 1e-12:  # leave already-unit vectors bit-exact
            w = w / norm
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.weights.size

    def __eq__(self, other):
        return isinstance(other, SpatialFilter) and np.array_equal(self.weights, other.weights)

    __hash__ = None


def _check_spd(m: np.ndarray, name: str) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be a square matrix")
    if not np.allclose(m, m.T, rtol=1e-10, atol=1e-12 * np.abs(m).max()):
        raise ValueError(f"{name} is not symmetric")
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} is not positive definite") from None
    return 0.5 * (m + m.T)


def csp_ratio(w, cov_up, cov_down) -> float:
    """Fraction of composite variance captured in the Up class along ``w``."""
    w = np.asarray(w, dtype=float)
    return float(w @ cov_up @ w / (w @ (cov_up + cov_down) @ w))


def csp_decomposition(cov_up, cov_down):
    """Solve ``cov_up w = lam (cov_up + cov_down) w``.

    Returns eigenvalues in descending order and unit-norm eigenvectors as
    columns, each signed so its largest-magnitude entry is positive.
    """
    a = _check_spd(cov_up, "cov_up")
    b = _check_spd(cov_down, "cov_down")
    if a.shape != b.shape:
        raise ValueError(f"covariance shapes differ: {a.shape} vs {b.shape}")
    lam, vecs = scipy.linalg.eigh(a, a + b)
    order = np.argsort(lam)[::-1]
    lam, vecs = lam[order], vecs[:, order]
    vecs = vecs / np.linalg.norm(vecs, axis=0)
    flip = np.sign(vecs[np.argmax(np.abs(vecs), axis=0), np.arange(vecs.shape[1])])
    return lam, vecs * flip


def train_csp(cov_up, cov_down, n_filters: int = 2) -> list[SpatialFilter]:
    """CSP filters from both ends of the spectrum.

    Returns ``n_filters // 2`` filters with the largest eigenvalues (most Up
    variance) followed by as many with the smallest.
    """
    lam, vecs = csp_decomposition(cov_up, cov_down)
    if n_filters < 2 or n_filters % 2 or n_filters > lam.size:
        raise ValueError(f"n_filters must be even and in [2, {lam.size}]")
    half = n_filters // 2
    idx = list(range(half)) + list(range(lam.size - half, lam.size))
    return [SpatialFilter(vecs[:, i]) for i in idx]


# --------------------------------------------------------------------------
# Features


_BANK = frozenset(make_filter_bank())


class SourceSet(str, enum.Enum):
    EEG = "EEG"
    EMG = "EMG"


@dataclass(frozen=True, eq=False)
class FeatureDef:
    band: BandSpec
    filter: SpatialFilter
    source_set: SourceSet

    def __post_init__(self):
        object.__setattr__(self, "source_set", SourceSet(self.source_set))
        if self.band not in _BANK:
            raise ValueError(f"band {self.band} is not in the filter bank")

    def to_dict(self) -> dict:
        return {
            "band": self.band.to_dict(),
            "filter": [float(v) for v in self.filter.weights],
            "source_set": self.source_set.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureDef":
        return cls(BandSpec.from_dict(d["band"]), SpatialFilter(d["filter"]), SourceSet(d["source_set"]))


def log_variance(projected: np.ndarray) -> float:
    return float(np.log(np.var(projected) + FEATURE_FLOOR))


def extract_feature(samples, band: BandSpec, filter: SpatialFilter, sample_rate: float,
                    window: float | None = None) -> float:
    """log(variance of the spatially filtered, band-passed epoch + 1e-12).

    With ``window`` set, the whole input is filtered but only its trailing
    ``window`` seconds enter the variance, so leading samples act as filter
    pre-roll (this is how the online decoder sees each epoch).
    """
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    if x.shape[0] != len(filter):
        raise ValueError(f"epoch has {x.shape[0]} channels, filter expects {len(filter)}")
    projected = filter.weights @ dsp.bandpass(x, band, sample_rate)
    if window is not None:
        n = int(round(window * sample_rate))
        if n > projected.size:
            raise ValueError(f"input shorter than the {window} s window")
        projected = projected[projected.size - n:]
    return log_variance(projected)


def _features_from_covs(covs: np.ndarray, w: np.ndarray) -> np.ndarray:
    var = np.einsum("c,ecd,d->e", w, covs, w)
    return np.log(np.maximum(var, 0.0) + FEATURE_FLOOR)


# --------------------------------------------------------------------------
# Mutual information and selection


def _check_labels(labels) -> np.ndarray:
    y = np.asarray(labels).ravel()
    if not np.all(np.isin(y, (1, -1))):
        raise ValueError("labels must be +1 or -1")
    if np.unique(y).size < 2:
        raise ValueError("both classes must be present")
    return y.astype(int)


def equal_frequency_bins(values, n_bins: int = MI_BINS) -> np.ndarray:
    """Bin index per value using empirical quantiles as edges; ties share a bin."""
    v = np.asarray(values, dtype=float).ravel()
    edges = np.quantile(v, np.linspace(0, 1, n_bins + 1)[1:-1])
    return np.searchsorted(edges, v, side="right")


def mutual_information(values, labels, n_bins: int = MI_BINS) -> float:
    """Plug-in mutual information (bits) between a discretised feature and ±1 labels."""
    v = np.asarray(values, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    if v.size != y.size:
        raise ValueError(f"length mismatch: {v.size} values, {y.size} labels")
    if v.size < 20:
        raise ValueError("mutual_information needs at least 20 samples")
    y = _check_labels(y)
    bins = equal_frequency_bins(v, n_bins)
    joint = np.zeros((n_bins, 2))
    np.add.at(joint, (bins, (y > 0).astype(int)), 1.0)
    joint /= joint.sum()
    pb = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    mi = float(np.sum(joint[nz] * np.log2(joint[nz] / (pb @ py)[nz])))
    return min(max(mi, 0.0), 1.0)


def rank_features(candidates: Sequence[FeatureDef], feature_matrix, labels) -> list[tuple[int, float]]:
    """``(candidate index, MI)`` pairs by descending MI, then band centre, then index."""
    F = np.asarray(feature_matrix, dtype=float)
    if F.ndim != 2 or F.shape[1] != len(candidates):
        raise ValueError(f"feature matrix has {F.shape[-1]} columns for {len(candidates)} candidates")
    mi = [mutual_information(F[:, j], labels) for j in range(F.shape[1])]
    # MI values equal up to summation order count as ties
    order = sorted(range(len(candidates)), key=lambda j: (-round(mi[j], 12), candidates[j].band.center, j))
    return [(j, mi[j]) for j in order]


def select_features(candidates: Sequence[FeatureDef], feature_matrix, labels, k: int = N_FEATURES) -> list[FeatureDef]:
    """The ``k`` most relevant candidates, most relevant first."""
    if k > len(candidates):
        raise ValueError(f"cannot select {k} of {len(candidates)} candidates")
    ranked = rank_features(candidates, feature_matrix, labels)
    return [candidates[j] for j, _ in ranked[:k]]


# --------------------------------------------------------------------------
# Linear readout


def fit_linear(features, labels, ridge: float = RIDGE) -> tuple[np.ndarray, float]:
    """Least-squares fit of ``features @ w + b`` to ±1 targets.

    Solved through the normal equations with ``ridge`` added to the feature
    block of the Gram matrix (the bias is not penalised).
    """
    F = np.atleast_2d(np.asarray(features, dtype=float))
    if F.shape[0] == 1 and np.asarray(features).ndim == 1:
        F = F.T
    y = _check_labels(labels).astype(float)
    n, k = F.shape
    if y.size != n:
        raise ValueError(f"{n} feature rows for {y.size} labels")
    if n < k + 1:
        raise ValueError(f"need at least {k + 1} epochs for {k} features")
    X = np.hstack([F, np.ones((n, 1))])
    gram = X.T @ X
    gram[np.arange(k), np.arange(k)] += ridge
    sol = np.linalg.solve(gram, X.T @ y)
    return sol[:k], float(sol[k])


# --------------------------------------------------------------------------
# Training data


@dataclass(eq=False)
class TrainingSet:
    """Per-band epoch covariances for one source set.

    Attributes
    ----------
    bands : list of BandSpec
    channels : tuple of str
    covs : ndarray, shape (n_bands, n_epochs, n_channels, n_channels)
    labels : ndarray of ±1, shape (n_epochs,)
    digests : tuple of str
        Digests of the recordings the epochs came from.
    """

    bands: list[BandSpec]
    channels: tuple[str, ...]
    covs: np.ndarray
    labels: np.ndarray
    digests: tuple[str, ...] = ()
    source_set: SourceSet = SourceSet.EEG

    @property
    def n_epochs(self) -> int:
        return self.labels.size

    @classmethod
    def from_recording(cls, recording: Recording, source_set: SourceSet | str = SourceSet.EEG,
                       bands: Sequence[BandSpec] | None = None, exclusion: float = 5.0) -> "TrainingSet":
        source_set = SourceSet(source_set)
        bands = list(bands) if bands is not None else make_filter_bank()
        channels = recording.labels_of(Modality(source_set.value))
        if not channels:
            raise KeyError(f"recording has no {source_set.value} channels")
        fs = recording.sample_rate
        starts, labels = epoch_starts(recording, exclusion)
        if starts.size and starts.min() < int(round(dsp.WARMUP * fs)):
            raise ValueError("epochs overlap the filter warm-up interval")
        n = int(round(fs))
        x = recording.pick(channels)
        idx = starts[:, None] + np.arange(n)[None, :]
        covs = np.empty((len(bands), starts.size, len(channels), len(channels)))
        for b, band in enumerate(bands):
            y = dsp.bandpass(x, band, fs)
            ep = y[:, idx].transpose(1, 0, 2)  # (E, C, n)
            ep -= ep.mean(axis=-1, keepdims=True)
            covs[b] = np.matmul(ep, ep.transpose(0, 2, 1)) / n
        return cls(bands, tuple(channels), covs, labels, (recording.digest(),), source_set)

    @classmethod
    def concat(cls, sets: Sequence["TrainingSet"]) -> "TrainingSet":
        sets = list(sets)
        if not sets:
            raise ValueError("no training data")
        first = sets[0]
        for s in sets[1:]:
            if s.channels != first.channels or s.bands != first.bands or s.source_set != first.source_set:
                raise ValueError("training sets differ in bands, channels or source set")
        return cls(
            first.bands, first.channels,
            np.concatenate([s.covs for s in sets], axis=1),
            np.concatenate([s.labels for s in sets]),
            tuple(d for s in sets for d in s.digests),
            first.source_set,
        )

    def subset(self, mask) -> "TrainingSet":
        mask = np.asarray(mask)
        return TrainingSet(self.bands, self.channels, self.covs[:, mask], self.labels[mask],
                           self.digests, self.source_set)

    def with_labels(self, labels) -> "TrainingSet":
        return TrainingSet(self.bands, self.channels, self.covs, np.asarray(labels, dtype=int),
                           self.digests, self.source_set)

    def band_index(self, band: BandSpec) -> int:
        return self.bands.index(band)

    def features(self, feats: Sequence[FeatureDef]) -> np.ndarray:
        """Feature matrix (n_epochs, len(feats)) computed from the covariances."""
        cols = [_features_from_covs(self.covs[self.band_index(f.band)], f.filter.weights) for f in feats]
        return np.column_stack(cols) if cols else np.zeros((self.n_epochs, 0))


@dataclass
class RankedCandidates:
    """Candidate features of one source set with their training columns and MI."""

    features: list[FeatureDef]
    columns: np.ndarray
    mi: list[float]
    labels: np.ndarray
    channels: tuple[str, ...]
    digests: tuple[str, ...]

    def top(self, k: int) -> tuple[list[FeatureDef], np.ndarray]:
        return self.features[:k], self.columns[:, :k]


def csp_candidates(tset: TrainingSet, n_filters: int = 2) -> tuple[list[FeatureDef], np.ndarray]:
    """One CSP per band; returns candidates (band-major) and their feature matrix."""
    labels = _check_labels(tset.labels)
    cands, cols = [], []
    for b, band in enumerate(tset.bands):
        cov_up = _class_covariance(tset.covs[b, labels > 0])
        cov_down = _class_covariance(tset.covs[b, labels < 0])
        for filt in train_csp(cov_up, cov_down, n_filters):
            cands.append(FeatureDef(band, filt, tset.source_set))
            cols.append(_features_from_covs(tset.covs[b], filt.weights))
    return cands, np.column_stack(cols)


def rank_candidates(tset: TrainingSet) -> RankedCandidates:
    cands, F = csp_candidates(tset)
    ranked = rank_features(cands, F, tset.labels)
    order = [j for j, _ in ranked]
    return RankedCandidates(
        [cands[j] for j in order], F[:, order], [mi for _, mi in ranked],
        tset.labels, tset.channels, tset.digests,
    )


# --------------------------------------------------------------------------
# Model


@dataclass(eq=False)
class DecoderModel:
    kind: ModelKind
    features: list[FeatureDef] = field(default_factory=list)
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bias: float = 0.0
    calibration: CalibrationMap | None = None
    alpha: AlphaBand | None = None
    channels: dict[str, tuple[str, ...]] = field(default_factory=dict)
    training_digests: tuple[str, ...] = ()

    def __post_init__(self):
        self.kind = ModelKind(self.kind)
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        self.channels = {SourceSet(k).value: tuple(v) for k, v in self.channels.items()}
        n = len(self.features)
        if self.weights.size != n:
            raise ValueError(f"{self.weights.size} weights for {n} features")
        if self.kind is ModelKind.CS1:
            if n or self.calibration is None or self.alpha is None:
                raise ValueError("a CS1 model has no features and needs calibration and alpha band")
            return
        if n != N_FEATURES:
            raise ValueError(f"{self.kind.value} model needs {N_FEATURES} features, got {n}")
        split = [sum(f.source_set is s for f in self.features) for s in SourceSet]
        expected = {ModelKind.CS2: [5, 0], ModelKind.CS3: [0, 5], ModelKind.CS4: [3, 2]}[self.kind]
        if split != expected:
            raise ValueError(f"{self.kind.value} feature split (EEG, EMG) must be {expected}, got {split}")
        for f in self.features:
            labels = self.channels.get(f.source_set.value)
            if labels is None or len(labels) != len(f.filter):
                raise ValueError(f"filter dimension does not match the {f.source_set.value} channel list")

    @property
    def required_channels(self) -> tuple[str, ...]:
        if self.kind is ModelKind.CS1:
            return ("Pz",)
        return tuple(lab for s in SourceSet if s.value in self.channels for lab in self.channels[s.value])

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kind": self.kind.value,
            "features": [f.to_dict() for f in self.features],
            "weights": [float(w) for w in self.weights],
            "bias": float(self.bias),
            "calibration": self.calibration.to_dict() if self.calibration else None,
            "alpha": self.alpha.to_dict() if self.alpha else None,
            "channels": {k: list(v) for k, v in self.channels.items()},
            "training_digests": list(self.training_digests),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecoderModel":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError(f"not a decoder model document (format={d.get('format')!r})")
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')!r}")
        return cls(
            kind=ModelKind(d["kind"]),
            features=[FeatureDef.from_dict(f) for f in d["features"]],
            weights=np.asarray(d["weights"], dtype=float),
            bias=float(d["bias"]),
            calibration=CalibrationMap.from_dict(d["calibration"]) if d.get("calibration") else None,
            alpha=AlphaBand.from_dict(d["alpha"]) if d.get("alpha") else None,
            channels=d.get("channels", {}),
            training_digests=tuple(d.get("training_digests", ())),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DecoderModel":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "DecoderModel":
        with open(path) as fh:
            return cls.from_json(fh.read())


def cs1_model(alpha: AlphaBand, calibration: CalibrationMap) -> DecoderModel:
    return DecoderModel(ModelKind.CS1, calibration=calibration, alpha=alpha)


def _as_training_set(data, source_set: SourceSet) -> TrainingSet:
    if isinstance(data, TrainingSet):
        if data.source_set is not source_set:
            raise ValueError(f"training set is {data.source_set.value}, expected {source_set.value}")
        return data
    if isinstance(data, Recording):
        data = [data]
    sets = [d if isinstance(d, TrainingSet) else TrainingSet.from_recording(d, source_set) for d in data]
    return TrainingSet.concat(sets)


def train_model(data, source_set: SourceSet | str = SourceSet.EEG,
                kind: ModelKind | str | None = None, k: int = N_FEATURES) -> DecoderModel:
    """Train a CS2 (EEG) or CS3 (EMG) model.

    ``data`` is a Recording, a list of Recordings, or a prepared TrainingSet.
    """
    source_set = SourceSet(source_set)
    if kind is None:
        kind = ModelKind.CS2 if source_set is SourceSet.EEG else ModelKind.CS3
    kind = ModelKind(kind)
    if kind not in (ModelKind.CS2, ModelKind.CS3):
        raise ValueError("train_model builds CS2 or CS3 models; use train_combined for CS4")
    tset = _as_training_set(data, source_set)
    _check_labels(tset.labels)
    ranked = rank_candidates(tset)
    feats, F = ranked.top(k)
    w, b = fit_linear(F, tset.labels)
    return DecoderModel(kind, feats, w, b, channels={source_set.value: tset.channels},
                        training_digests=tset.digests)


def train_combined(eeg_ranked: RankedCandidates, emg_ranked: RankedCandidates,
                   n_eeg: int = 3, n_emg: int = 2) -> DecoderModel:
    """CS4: top EEG and top EMG candidates (each set ranked on its own), refit jointly."""
    if len(eeg_ranked.features) < n_eeg or len(emg_ranked.features) < n_emg:
        raise ValueError(f"need at least {n_eeg} EEG and {n_emg} EMG candidates")
    if not np.array_equal(eeg_ranked.labels, emg_ranked.labels):
        raise ValueError("EEG and EMG candidates were computed on different epochs")
    fe, Fe = eeg_ranked.top(n_eeg)
    fm, Fm = emg_ranked.top(n_emg)
    w, b = fit_linear(np.hstack([Fe, Fm]), eeg_ranked.labels)
    digests = tuple(dict.fromkeys(eeg_ranked.digests + emg_ranked.digests))
    return DecoderModel(
        ModelKind.CS4, fe + fm, w, b,
        channels={SourceSet.EEG.value: eeg_ranked.channels, SourceSet.EMG.value: emg_ranked.channels},
        training_digests=digests,
    )


def train_cs4(recordings: Iterable[Recording]) -> DecoderModel:
    recordings = list(recordings)
    eeg = rank_candidates(_as_training_set(recordings, SourceSet.EEG))
    emg = rank_candidates(_as_training_set(recordings, SourceSet.EMG))
    return train_combined(eeg, emg)


def epoch_outputs(model: DecoderModel, sets: dict[str, TrainingSet] | TrainingSet) -> np.ndarray:
    """Unclamped linear output of ``model`` for every epoch in ``sets``."""
    if isinstance(sets, TrainingSet):
        sets = {sets.source_set.value: sets}
    cols = [sets[f.source_set.value].features([f])[:, 0] for f in model.features]
    F = np.column_stack(cols)
    return F @ model.weights + model.bias


# --------------------------------------------------------------------------
# Decoding


def _sliding_variance(p: np.ndarray, ends: np.ndarray, n: int) -> np.ndarray:
    m1 = dsp.trailing_mean(p, ends, n)
    m2 = dsp.trailing_mean(p * p, ends, n)
    return np.maximum(m2 - m1 * m1, 0.0)


def decode_stream(model: DecoderModel, recording: Recording) -> PowerSeries:
    """Control values at 16/s in [-1, 1], first value at t = 1 s.

    Each value uses the trailing 1 s window. CS1 models delegate to
    :func:`neuroloop.dsp.compute_cs1`.
    """
    missing = [lab for lab in model.required_channels if lab not in recording.labels]
    if missing:
        raise KeyError(f"recording lacks channels required by the {model.kind.value} model: {missing}")
    if model.kind is ModelKind.CS1:
        return dsp.compute_cs1(recording, model.alpha, model.calibration)
    fs = recording.sample_rate
    n = int(round(dsp.WINDOW * fs))
    if recording.n_times < n:
        raise ValueError("recording shorter than the 1 s decoding window")
    ends = dsp.output_ends(recording.n_times, fs)
    out = np.full(ends.size, model.bias, dtype=float)
    data = {s: recording.pick(labs) for s, labs in model.channels.items()}
    for f, w in zip(model.features, model.weights):
        projected = f.filter.weights @ data[f.source_set.value]
        y = dsp.bandpass(projected, f.band, fs)
        out += w * np.log(_sliding_variance(y, ends, n) + FEATURE_FLOOR)
    return PowerSeries(dsp.OUTPUT_RATE, np.clip(out, -1.0, 1.0), start=dsp.WINDOW)


class DecoderStream:
    """Incremental decoder: push ``(n_channels, n)`` chunks in recording channel order.

    ``channel_labels`` names the rows of the pushed chunks. Used by one
    consumer at a time.
    """

    def __init__(self, model: DecoderModel, channel_labels: Sequence[str], sample_rate: float):
        self.model = model
        labels = list(channel_labels)
        missing = [lab for lab in model.required_channels if lab not in labels]
        if missing:
            raise KeyError(f"stream lacks channels required by the model: {missing}")
        self.sample_rate = float(sample_rate)
        self._n = int(round(dsp.WINDOW * sample_rate))
        if model.kind is ModelKind.CS1:
            self._cs1 = dsp.Cs1Stream(model.alpha, model.calibration, sample_rate)
            self._pz = labels.index("Pz")
            return
        self._cs1 = None
        self._rows = {s: [labels.index(lab) for lab in labs] for s, labs in model.channels.items()}
        self._zi = [np.zeros((dsp.design_band_filter(f.band, sample_rate).shape[0], 2))
                    for f in model.features]
        self._buf = np.zeros((len(model.features), 0))
        self._n_seen = 0
        self._k = 0

    def push(self, chunk) -> np.ndarray:
        chunk = np.atleast_2d(np.asarray(chunk, dtype=float))
        if self._cs1 is not None:
            return self._cs1.push(chunk[self._pz])
        ys = []
        for i, f in enumerate(self.model.features):
            projected = f.filter.weights @ chunk[self._rows[f.source_set.value]]
            y, self._zi[i] = dsp.bandpass(projected, f.band, self.sample_rate, zi=self._zi[i])
            ys.append(y)
        buf_start = self._n_seen - self._buf.shape[1]
        self._buf = np.hstack([self._buf, np.vstack(ys)])
        self._n_seen += chunk.shape[1]
        out = []
        while True:
            end = int(round((dsp.WINDOW + self._k / dsp.OUTPUT_RATE) * self.sample_rate))
            if end > self._n_seen:
                break
            win = self._buf[:, end - buf_start - self._n:end - buf_start]
            feats = np.log(np.var(win, axis=1) + FEATURE_FLOOR)
            out.append(float(np.clip(feats @ self.model.weights + self.model.bias, -1.0, 1.0)))
            self._k += 1
        self._buf = self._buf[:, max(self._buf.shape[1] - self._n, 0):]
        return np.asarray(out)
