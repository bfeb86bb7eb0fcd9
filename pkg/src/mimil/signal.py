"""Raw recordings, drift removal and the window/segment hierarchy.

A recording is cut into 20 s windows with a 15 s hop, and each window into
nineteen 2 s segments with a 1 s hop. Segments are the MIL instances.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .errors import DataError, EmptyResultError, ParameterError

GROUPS = ("CWS", "CWNS")
CONDITIONS = ("baseline", "task")
CHANNELS = ("ecg", "eda", "rsp")

DEFAULT_RATE_HZ = 1250.0
WIN_S = 20.0
WIN_HOP_S = 15.0
SEG_S = 2.0
SEG_HOP_S = 1.0
HIGHPASS_CUTOFF_HZ = 0.05
HIGHPASS_ORDER = 2
# EDA carries slow tonic responses; a 0.05 Hz cutoff would erase rises of a
# few seconds, so its drift removal uses a lower cutoff.
EDA_HIGHPASS_CUTOFF_HZ = 0.01


@dataclass(frozen=True, eq=False)
class RawRecording:
    participant_id: str
    group: str
    condition: str
    ecg: np.ndarray
    eda: np.ndarray
    rsp: np.ndarray
    sample_rate_hz: float = DEFAULT_RATE_HZ

    def __post_init__(self):
        if self.group not in GROUPS:
            raise ParameterError(f"group must be one of {GROUPS}, got {self.group!r}")
        if self.condition not in CONDITIONS:
            raise ParameterError(f"condition must be one of {CONDITIONS}, got {self.condition!r}")
        if not self.sample_rate_hz > 0:
            raise ParameterError("sample_rate_hz must be positive")
        for name in CHANNELS:
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        lengths = {len(self.ecg), len(self.eda), len(self.rsp)}
        if len(lengths) != 1:
            raise ParameterError(f"channel lengths differ: {sorted(lengths)}")

    @property
    def n_samples(self) -> int:
        return len(self.ecg)

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz

    @property
    def label(self) -> int:
        return 1 if self.group == "CWS" else 0

    def channels(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in CHANNELS}


@dataclass(frozen=True, eq=False)
class Window:
    participant_id: str
    condition: str
    start_s: float
    ecg: np.ndarray
    eda: np.ndarray
    rsp: np.ndarray
    sample_rate_hz: float = DEFAULT_RATE_HZ
    index: int = 0
    group: str | None = None

    @property
    def n_samples(self) -> int:
        return len(self.ecg)

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz

    @property
    def window_id(self) -> str:
        return f"{self.participant_id}/{self.condition}/{self.index:03d}"


@dataclass(frozen=True, eq=False)
class Segment:
    index: int
    start_s: float
    ecg: np.ndarray
    eda: np.ndarray
    rsp: np.ndarray


def n_frames(total: int, length: int, hop: int) -> int:
    """Number of full frames of ``length`` samples taken every ``hop`` samples."""
    if length <= 0 or hop <= 0:
        raise ParameterError("frame length and hop must be positive")
    if total < length:
        return 0
    return (total - length) // hop + 1


def _samples(seconds: float, rate: float) -> int:
    return int(round(seconds * rate))


def highpass_filter(series, sample_rate_hz: float, cutoff_hz: float = HIGHPASS_CUTOFF_HZ,
                    order: int = HIGHPASS_ORDER) -> np.ndarray:
    """Causal Butterworth high-pass realized as cascaded second-order sections.

    The filter state is initialized to the steady-state response of the first
    sample, so a constant input produces a zero output from the first sample on.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ParameterError("highpass_filter needs a non-empty 1-D series")
    if order < 1:
        raise ParameterError("order must be >= 1")
    if x.size < 3 * order:
        raise ParameterError(f"series of {x.size} samples is shorter than 3*order")
    nyquist = sample_rate_hz / 2.0
    if not 0 < cutoff_hz < nyquist:
        raise ParameterError(f"cutoff {cutoff_hz} Hz must lie in (0, {nyquist}) Hz")
    sos = sps.butter(order, cutoff_hz, btype="highpass", fs=sample_rate_hz, output="sos")
    zi = sps.sosfilt_zi(sos) * x[0]
    y, _ = sps.sosfilt(sos, x, zi=zi)
    return y


def preprocess(recording: RawRecording, cutoff_hz: float = HIGHPASS_CUTOFF_HZ,
               order: int = HIGHPASS_ORDER,
               eda_cutoff_hz: float = EDA_HIGHPASS_CUTOFF_HZ) -> RawRecording:
    """Drift-remove every channel of a recording."""
    rate = recording.sample_rate_hz
    cutoffs = {"ecg": cutoff_hz, "eda": eda_cutoff_hz, "rsp": cutoff_hz}
    return replace(
        recording,
        **{name: highpass_filter(getattr(recording, name), rate, cutoffs[name], order)
           for name in CHANNELS},
    )


def extract_windows(recording: RawRecording, win_s: float = WIN_S,
                    hop_s: float = WIN_HOP_S) -> list[Window]:
    rate = recording.sample_rate_hz
    length, hop = _samples(win_s, rate), _samples(hop_s, rate)
    count = n_frames(recording.n_samples, length, hop)
    if count == 0:
        raise EmptyResultError(
            f"{recording.participant_id}/{recording.condition}: "
            f"{recording.duration_s:.2f} s is shorter than one {win_s} s window"
        )
    windows = []
    for k in range(count):
        lo = k * hop
        sl = slice(lo, lo + length)
        windows.append(Window(
            participant_id=recording.participant_id,
            condition=recording.condition,
            start_s=lo / rate,
            ecg=recording.ecg[sl],
            eda=recording.eda[sl],
            rsp=recording.rsp[sl],
            sample_rate_hz=rate,
            index=k,
            group=recording.group,
        ))
    return windows


def segment_bounds(n_samples: int, rate: float, seg_s: float = SEG_S,
                   hop_s: float = SEG_HOP_S) -> list[tuple[int, int]]:
    """Sample ranges ``[lo, hi)`` of the segments of an ``n_samples`` window."""
    length, hop = _samples(seg_s, rate), _samples(hop_s, rate)
    if length > n_samples:
        raise ParameterError(f"segment of {seg_s} s exceeds window of {n_samples / rate} s")
    return [(k * hop, k * hop + length) for k in range(n_frames(n_samples, length, hop))]


def segment_window(window: Window, seg_s: float = SEG_S, hop_s: float = SEG_HOP_S) -> list[Segment]:
    rate = window.sample_rate_hz
    return [
        Segment(index=k, start_s=lo / rate, ecg=window.ecg[lo:hi], eda=window.eda[lo:hi],
                rsp=window.rsp[lo:hi])
        for k, (lo, hi) in enumerate(segment_bounds(window.n_samples, rate, seg_s, hop_s))
    ]


# -- file interchange ------------------------------------------------------

def save_recording(recording: RawRecording, csv_path, meta_path=None) -> tuple[Path, Path]:
    """Write ``t,ecg,eda,rsp`` CSV plus its JSON metadata sidecar."""
    csv_path = Path(csv_path)
    meta_path = Path(meta_path) if meta_path else csv_path.with_suffix(".json")
    t = np.arange(recording.n_samples) / recording.sample_rate_hz
    table = np.column_stack([t, recording.ecg, recording.eda, recording.rsp])
    with open(csv_path, "w", newline="") as fh:
        fh.write("t,ecg,eda,rsp\n")
        np.savetxt(fh, table, fmt="%.9g", delimiter=",")
    meta = {
        "participant_id": recording.participant_id,
        "group": recording.group,
        "condition": recording.condition,
        "sample_rate_hz": recording.sample_rate_hz,
    }
    meta_path.write_text(json.dumps(meta, indent=2) + "\n")
    return csv_path, meta_path


def load_recording(csv_path, meta_path) -> RawRecording:
    csv_path, meta_path = Path(csv_path), Path(meta_path)
    try:
        meta = json.loads(meta_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read recording metadata {meta_path}: {exc}") from exc
    missing = {"participant_id", "group", "condition"} - set(meta)
    if missing:
        raise DataError(f"{meta_path}: missing metadata keys {sorted(missing)}")
    try:
        with open(csv_path, newline="") as fh:
            header = next(csv.reader(fh))
            if [h.strip() for h in header] != ["t", "ecg", "eda", "rsp"]:
                raise DataError(f"{csv_path}: expected header t,ecg,eda,rsp, got {header}")
            table = np.loadtxt(fh, delimiter=",", ndmin=2)
    except (OSError, ValueError, StopIteration) as exc:
        raise DataError(f"cannot read recording {csv_path}: {exc}") from exc
    try:
        return RawRecording(
            participant_id=str(meta["participant_id"]),
            group=meta["group"],
            condition=meta["condition"],
            ecg=table[:, 1], eda=table[:, 2], rsp=table[:, 3],
            sample_rate_hz=float(meta.get("sample_rate_hz", DEFAULT_RATE_HZ)),
        )
    except ParameterError as exc:
        raise DataError(f"{meta_path}: {exc}") from exc


def load_manifest(path) -> list[RawRecording]:
    """Load every recording listed in a dataset manifest.

    Relative paths in the manifest resolve against the manifest's directory.
    """
    path = Path(path)
    try:
        entries = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(entries, list):
        raise DataError(f"{path}: manifest must be a JSON array")
    root = path.parent
    recordings = []
    for i, entry in enumerate(entries):
        try:
            meta, table = entry["metadata"], entry["csv"]
        except (TypeError, KeyError) as exc:
            raise DataError(f"{path}: entry {i} needs 'metadata' and 'csv'") from exc
        recordings.append(load_recording(root / table, root / meta))
    return recordings


def write_manifest(path, pairs) -> Path:
    """``pairs`` is an iterable of (metadata_path, csv_path) relative to ``path``'s directory."""
    path = Path(path)
    entries = [{"metadata": str(m), "csv": str(c)} for m, c in pairs]
    path.write_text(json.dumps(entries, indent=2) + "\n")
    return path


def expected_window_count(duration_s: float, win_s: float = WIN_S, hop_s: float = WIN_HOP_S) -> int:
    if duration_s < win_s:
        return 0
    return math.floor((duration_s - win_s) / hop_s) + 1
