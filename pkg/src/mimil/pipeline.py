"""Recordings to bags: drift removal, windowing, HLD extraction and projection."""
from __future__ import annotations

from collections import defaultdict

import numpy as np

from .bags import Bag
from .errors import DataError, FeatureError
from .features import FEATURE_MODES, baseline_score, feature_matrix, window_hlds
from .signal import RawRecording, Window, extract_windows, preprocess


def robust_window_hlds(windows: list[Window]) -> list[np.ndarray]:
    """HLDs per window; a window whose descriptors cannot be extracted reuses
    the nearest preceding window's HLDs (the following one at the start)."""
    out: list[np.ndarray | None] = []
    for w in windows:
        try:
            out.append(window_hlds(w))
        except FeatureError:
            out.append(None)
    good = [i for i, h in enumerate(out) if h is not None]
    if not good:
        pid = windows[0].participant_id if windows else "?"
        raise FeatureError(f"{pid}: descriptors undefined in every window")
    for i, h in enumerate(out):
        if h is None:
            before = [j for j in good if j < i]
            out[i] = out[before[-1]] if before else out[good[0]]
    return out


def recording_hlds(recording: RawRecording) -> tuple[list[Window], list[np.ndarray]]:
    windows = extract_windows(preprocess(recording))
    return windows, robust_window_hlds(windows)


def featurize(recordings, modes=FEATURE_MODES) -> dict[str, list[Bag]]:
    """Bags of every task window per requested feature mode.

    Change and delta modes need each participant's baseline recording.
    """
    modes = tuple(modes)
    unknown = set(modes) - set(FEATURE_MODES)
    if unknown:
        raise DataError(f"unknown feature modes {sorted(unknown)}")
    by_pid: dict[str, dict[str, RawRecording]] = defaultdict(dict)
    for rec in recordings:
        if rec.condition in by_pid[rec.participant_id]:
            raise DataError(f"{rec.participant_id}: duplicate {rec.condition} recording")
        by_pid[rec.participant_id][rec.condition] = rec
    out: dict[str, list[Bag]] = {m: [] for m in modes}
    for pid in sorted(by_pid):
        recs = by_pid[pid]
        if "task" not in recs:
            continue
        baseline = None
        if set(modes) - {"raw"}:
            if "baseline" not in recs:
                raise DataError(f"participant {pid}: no baseline recording for change-score features")
            bw, bh = recording_hlds(recs["baseline"])
            baseline = baseline_score(bw, bh)
        windows, hlds = recording_hlds(recs["task"])
        label = recs["task"].label
        for w, h in zip(windows, hlds):
            for m in modes:
                out[m].append(Bag(pid, w.window_id, label, m, feature_matrix(h, m, baseline)))
    return out
