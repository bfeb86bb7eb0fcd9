"""Low-level descriptors (HR, EDA, RSP-amp, RSP-rate), their six HLD
functionals per 2 s segment, and the change-score variants.

LLDs are computed over a whole 20 s window and sliced per segment: a 2 s
segment is shorter than one breath, so respiration rate cannot be estimated
inside a segment alone.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage
from scipy import signal as sps

from .errors import DataError, FeatureError, ParameterError, ShapeError
from .signal import SEG_HOP_S, SEG_S, Window, _samples, n_frames

MODALITIES = ("HR", "EDA", "RSP_AMP", "RSP_RATE")
MODALITY_NAMES = {
    "HR": "Heart rate",
    "EDA": "EDA",
    "RSP_AMP": "RSP amplitude",
    "RSP_RATE": "RSP rate",
}
FUNCTIONALS = ("mean", "min", "max", "median", "var", "std")
FEATURE_MODES = ("raw", "change", "delta")
N_SEGMENTS = 19

RR_BOUNDS_S = (0.25, 2.0)


def feature_names(mode: str = "raw") -> list[str]:
    if mode in ("raw", "delta"):
        suffix = "" if mode == "raw" else " delta"
        return [f"{MODALITY_NAMES[m]} {f.capitalize()}{suffix}" for m in MODALITIES for f in FUNCTIONALS]
    if mode == "change":
        return [f"{MODALITY_NAMES[m]} vector {kind}" for m in MODALITIES
                for kind in ("Cosine similarity", "Euclidean distance")]
    if mode == "grouped":
        return [MODALITY_NAMES[m] for m in MODALITIES]
    raise ParameterError(f"unknown feature mode {mode!r}")


def columns_per_modality(mode: str) -> int:
    if mode in ("raw", "delta"):
        return len(FUNCTIONALS)
    if mode == "change":
        return 2
    raise ParameterError(f"unknown feature mode {mode!r}")


# -- HLD functionals -------------------------------------------------------

@dataclass(frozen=True)
class HldVector:
    mean: float
    min: float
    max: float
    median: float
    var: float
    std: float

    def as_array(self) -> np.ndarray:
        return np.array([self.mean, self.min, self.max, self.median, self.var, self.std])

    @classmethod
    def from_array(cls, values) -> "HldVector":
        v = np.asarray(values, dtype=np.float64)
        if v.shape != (6,):
            raise ShapeError("HldVector", v.shape, (6,))
        return cls(*map(float, v))


def hld(series) -> HldVector:
    """Six functionals of a series; variance is the population variance."""
    x = np.asarray(series, dtype=np.float64).ravel()
    if x.size == 0:
        raise ParameterError("hld of an empty series")
    return HldVector.from_array(_hld_rows(x[None, :])[0])


def _hld_rows(frames: np.ndarray) -> np.ndarray:
    """Functionals along the last axis of a 2-D array, NaN-aware."""
    if np.isfinite(frames).all():
        mean = frames.mean(axis=1)
        var = frames.var(axis=1)
        return np.column_stack([mean, frames.min(axis=1), frames.max(axis=1),
                                np.median(frames, axis=1), var, np.sqrt(var)])
    out = np.full((frames.shape[0], 6), np.nan)
    for i, row in enumerate(frames):
        row = row[np.isfinite(row)]
        if row.size:
            var = row.var()
            out[i] = [row.mean(), row.min(), row.max(), np.median(row), var, np.sqrt(var)]
    return out


def segment_hlds(lld, rate: float, n_segments: int = N_SEGMENTS,
                 seg_s: float = SEG_S, hop_s: float = SEG_HOP_S) -> np.ndarray:
    """(n_segments, 6) HLD rows of an LLD series sliced into overlapping segments.

    Segments whose LLD is undefined everywhere inherit the nearest preceding
    segment's row (the following one for the first segment).
    """
    x = np.asarray(lld, dtype=np.float64)
    length, hop = _samples(seg_s, rate), _samples(hop_s, rate)
    available = n_frames(x.size, length, hop)
    if available < n_segments:
        raise ParameterError(f"series holds {available} segments, need {n_segments}")
    frames = sliding_window_view(x, length)[::hop][:n_segments]
    rows = _hld_rows(frames)
    bad = np.isnan(rows[:, 0])
    if bad.all():
        raise FeatureError("descriptor undefined in every segment")
    if bad.any():
        good = np.flatnonzero(~bad)
        for i in np.flatnonzero(bad):
            before = good[good < i]
            rows[i] = rows[before[-1]] if before.size else rows[good[0]]
    return rows


# -- heart rate ------------------------------------------------------------

def detect_r_peaks(ecg, sample_rate_hz: float) -> np.ndarray:
    """Pan-Tompkins-style R-peak detector.

    Band-pass 5-20 Hz, derivative, squaring, 150 ms moving average; candidate
    peaks must exceed half the rolling 2 s maximum of the integrated signal and
    respect a 250 ms refractory period. Each candidate is relocated to the ECG
    maximum within +-100 ms.
    """
    x = np.asarray(ecg, dtype=np.float64)
    rate = float(sample_rate_hz)
    if x.size < int(2 * rate):
        raise ParameterError("ECG shorter than 2 s")
    x = x - np.median(x)
    if not np.any(x):
        return np.empty(0, dtype=np.int64)
    sos = sps.butter(2, [5.0, min(20.0, 0.45 * rate)], btype="bandpass", fs=rate, output="sos")
    band = sps.sosfiltfilt(sos, x)
    energy = np.gradient(band) ** 2
    mwa = ndimage.uniform_filter1d(energy, max(1, int(round(0.15 * rate))), mode="nearest")
    peak_level = mwa.max()
    if peak_level <= 1e-12 * max(1.0, float(np.abs(x).max()) ** 2):
        return np.empty(0, dtype=np.int64)
    rolling = ndimage.maximum_filter1d(mwa, int(round(2.0 * rate)), mode="nearest")
    threshold = np.maximum(0.5 * rolling, 0.05 * np.median(rolling))
    refractory = int(round(RR_BOUNDS_S[0] * rate))
    candidates, _ = sps.find_peaks(mwa, height=threshold, distance=refractory)
    if candidates.size == 0:
        return candidates.astype(np.int64)
    half = int(round(0.1 * rate))
    refined = []
    for c in candidates:
        lo, hi = max(0, c - half), min(x.size, c + half + 1)
        refined.append(lo + int(np.argmax(x[lo:hi])))
    refined = np.unique(np.asarray(refined, dtype=np.int64))
    keep = [refined[0]]
    for p in refined[1:]:
        if p - keep[-1] >= refractory:
            keep.append(p)
        elif x[p] > x[keep[-1]]:
            keep[-1] = p
    return np.asarray(keep, dtype=np.int64)


def _held_interval_values(events: np.ndarray, values: np.ndarray, out_len: int) -> np.ndarray:
    """Sample-and-hold ``values[k]`` over ``[events[k], events[k+1])``.

    Samples before the first boundary take the first value; after the last
    they keep the last value.
    """
    n = np.arange(out_len)
    idx = np.searchsorted(events[1:-1], n, side="right")
    return values[np.clip(idx, 0, values.size - 1)]


def hr_series(peaks, sample_rate_hz: float, out_len: int, mask_outliers: bool = False) -> np.ndarray:
    """Instantaneous heart rate (bpm) held between R-peaks.

    The interval between peaks k and k+1 carries 60/RR_k. With
    ``mask_outliers`` intervals outside the physiological RR bounds become NaN.
    """
    p = np.asarray(peaks, dtype=np.int64)
    if p.size < 2:
        raise FeatureError("fewer than 2 R-peaks; reuse the previous segment's final HR",
                           fallback="previous_hr")
    rr = np.diff(p) / float(sample_rate_hz)
    if np.any(rr <= 0):
        raise ParameterError("R-peak indices must be strictly increasing")
    bpm = 60.0 / rr
    if mask_outliers:
        bpm = np.where((rr < RR_BOUNDS_S[0]) | (rr > RR_BOUNDS_S[1]), np.nan, bpm)
    return _held_interval_values(p, bpm, out_len)


# -- respiration -----------------------------------------------------------

def rsp_rate_amp(rsp, sample_rate_hz: float) -> tuple[np.ndarray, np.ndarray]:
    """Breathing rate (breaths/min) and amplitude series from inhalation peaks.

    Rate over an inter-peak interval is 60/period; the amplitude of a breath is
    the excursion from the trough preceding its peak. Both are held between
    peaks, sampled on the input grid.
    """
    x = np.asarray(rsp, dtype=np.float64)
    rate = float(sample_rate_hz)
    if x.size == 0:
        raise ParameterError("empty respiration series")
    lo, hi = np.percentile(x, [5, 95])
    spread = hi - lo
    if not spread > 1e-12:
        raise FeatureError("no breath cycle found; reuse the surrounding window's estimate",
                           fallback="surrounding_window")
    peaks, _ = sps.find_peaks(x, distance=max(1, int(round(1.0 * rate))), prominence=0.3 * spread)
    if peaks.size < 2:
        raise FeatureError("no full breath cycle found; reuse the surrounding window's estimate",
                           fallback="surrounding_window")
    period = np.diff(peaks) / rate
    rate_series = _held_interval_values(peaks, 60.0 / period, x.size)

    amps = np.array([x[b] - x[a:b].min() for a, b in zip(peaks[:-1], peaks[1:])])
    # amplitude of breath k+1 is known from its peak onwards
    idx = np.searchsorted(peaks[1:], np.arange(x.size), side="right") - 1
    amp_series = amps[np.clip(idx, 0, amps.size - 1)]
    return rate_series, amp_series


# -- window-level extraction ----------------------------------------------

@dataclass(frozen=True, eq=False)
class LldSeries:
    hr: np.ndarray
    eda: np.ndarray
    rsp_rate: np.ndarray
    rsp_amp: np.ndarray

    def in_column_order(self) -> tuple[np.ndarray, ...]:
        return self.hr, self.eda, self.rsp_amp, self.rsp_rate


def window_llds(window: Window) -> LldSeries:
    rate, n = window.sample_rate_hz, window.n_samples
    peaks = detect_r_peaks(window.ecg, rate)
    try:
        hr = hr_series(peaks, rate, n, mask_outliers=True)
    except FeatureError as exc:
        raise FeatureError(f"{window.window_id}: {exc}", fallback=exc.fallback) from exc
    try:
        rsp_rate, rsp_amp = rsp_rate_amp(window.rsp, rate)
    except FeatureError as exc:
        raise FeatureError(f"{window.window_id}: {exc}", fallback=exc.fallback) from exc
    return LldSeries(hr=hr, eda=np.asarray(window.eda, dtype=np.float64), rsp_rate=rsp_rate, rsp_amp=rsp_amp)


def window_hlds(window: Window) -> np.ndarray:
    """(19, 4, 6) HLDs: segment x modality (column order) x functional."""
    llds = window_llds(window)
    blocks = []
    for name, series in zip(MODALITIES, llds.in_column_order()):
        try:
            blocks.append(segment_hlds(series, window.sample_rate_hz))
        except FeatureError as exc:
            raise FeatureError(f"{window.window_id} {name}: {exc}") from exc
    return np.stack(blocks, axis=1)


def raw_features(window: Window) -> np.ndarray:
    """19 x 24 raw feature grid in canonical column order."""
    return window_hlds(window).reshape(N_SEGMENTS, -1)


# -- change scores ---------------------------------------------------------

class ChangeScore(NamedTuple):
    euclid: float
    cosine: float
    degenerate: bool


def change_score(post, baseline) -> ChangeScore:
    a = post.as_array() if isinstance(post, HldVector) else np.asarray(post, dtype=np.float64)
    b = baseline.as_array() if isinstance(baseline, HldVector) else np.asarray(baseline, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError("change_score", a.shape, b.shape)
    euclid, cosine, degenerate = _change_arrays(a[None, :], b)
    return ChangeScore(float(euclid[0]), float(cosine[0]), bool(degenerate[0]))


def _change_arrays(post: np.ndarray, baseline: np.ndarray):
    """Row-wise euclidean distance and cosine similarity of ``post`` rows to ``baseline``."""
    diff = post - baseline
    euclid = np.sqrt(np.sum(diff * diff, axis=-1))
    norms = np.linalg.norm(post, axis=-1) * np.linalg.norm(baseline)
    degenerate = norms == 0
    with np.errstate(invalid="ignore", divide="ignore"):
        cosine = np.where(degenerate, 0.0, np.sum(post * baseline, axis=-1) / np.where(degenerate, 1.0, norms))
    return euclid, np.clip(cosine, -1.0, 1.0), degenerate


def delta_change_score(post, baseline) -> np.ndarray:
    a = post.as_array() if isinstance(post, HldVector) else np.asarray(post, dtype=np.float64)
    b = baseline.as_array() if isinstance(baseline, HldVector) else np.asarray(baseline, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError("delta_change_score", a.shape, b.shape)
    return a - b


@dataclass(frozen=True, eq=False)
class BaselineScore:
    participant_id: str
    vectors: np.ndarray  # (4, 6), modalities in column order
    n_segments: int = 0

    def modality(self, name: str) -> HldVector:
        return HldVector.from_array(self.vectors[MODALITIES.index(name)])


def baseline_score(windows, hlds=None) -> BaselineScore:
    """Mean HLD vector per modality over every baseline-condition segment.

    ``hlds`` may carry precomputed (19, 4, 6) arrays aligned with ``windows``.
    """
    windows = list(windows)
    if not windows:
        raise DataError("baseline_score needs at least one baseline window")
    pids = {w.participant_id for w in windows}
    if len(pids) != 1:
        raise DataError(f"baseline windows span several participants: {sorted(pids)}")
    if any(w.condition != "baseline" for w in windows):
        raise DataError("baseline_score accepts only baseline-condition windows")
    if hlds is None:
        hlds = [window_hlds(w) for w in windows]
    stacked = np.concatenate([np.asarray(h).reshape(-1, 4, 6) for h in hlds], axis=0)
    return BaselineScore(participant_id=pids.pop(), vectors=stacked.mean(axis=0), n_segments=stacked.shape[0])


def _check_participant(window: Window, baseline: BaselineScore):
    if window.participant_id != baseline.participant_id:
        raise DataError(
            f"baseline of {baseline.participant_id} applied to window of {window.participant_id}"
        )


def change_matrix_from_hlds(hlds: np.ndarray, baseline: BaselineScore) -> np.ndarray:
    """(19, 8) grid: per modality the (cosine, euclid) pair."""
    out = np.empty((hlds.shape[0], 2 * len(MODALITIES)))
    for m in range(len(MODALITIES)):
        euclid, cosine, _ = _change_arrays(hlds[:, m, :], baseline.vectors[m])
        out[:, 2 * m] = cosine
        out[:, 2 * m + 1] = euclid
    return out


def delta_matrix_from_hlds(hlds: np.ndarray, baseline: BaselineScore) -> np.ndarray:
    return (hlds - baseline.vectors[None, :, :]).reshape(hlds.shape[0], -1)


def change_score_matrix(window: Window, baseline: BaselineScore) -> np.ndarray:
    _check_participant(window, baseline)
    return change_matrix_from_hlds(window_hlds(window), baseline)


def delta_score_matrix(window: Window, baseline: BaselineScore) -> np.ndarray:
    _check_participant(window, baseline)
    return delta_matrix_from_hlds(window_hlds(window), baseline)


def feature_matrix(hlds: np.ndarray, mode: str, baseline: BaselineScore | None = None) -> np.ndarray:
    """Project (19, 4, 6) HLDs onto a feature mode's grid."""
    if mode == "raw":
        return hlds.reshape(hlds.shape[0], -1)
    if baseline is None:
        raise DataError(f"feature mode {mode!r} requires a baseline score")
    if mode == "change":
        return change_matrix_from_hlds(hlds, baseline)
    if mode == "delta":
        return delta_matrix_from_hlds(hlds, baseline)
    raise ParameterError(f"unknown feature mode {mode!r}")
