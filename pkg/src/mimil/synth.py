"""Synthetic ECG/EDA/RSP recordings with planted, instance-labelled patterns.

Each participant gets a baseline and a task recording built from smooth
physiological carriers. In task recordings of the positive group every
20 s window receives short (2-5 s) patterns in the heart-rate, EDA and
respiration-rate channels, placed independently per channel. Because the
placement is known, every 2 s segment carries a ground-truth instance label.

Patterns are applied to finished recordings: heart-rate and breathing-rate
patterns locally time-warp the ECG/RSP trace (slowing or speeding the beat
or breath train), the EDA pattern adds a sigmoidal tonic step.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .bags import Bag, write_bags
from .errors import ConfigError, FeatureError, ParameterError
from .features import MODALITIES, N_SEGMENTS, detect_r_peaks
from .nn.optim import make_rng
from .pipeline import featurize
from .signal import (
    DEFAULT_RATE_HZ, SEG_HOP_S, SEG_S, WIN_HOP_S, WIN_S, RawRecording, save_recording, write_manifest,
)

PATTERN_MODALITY = {
    "eda_ramp": "EDA",
    "hr_freeze": "HR",
    "hr_var_burst": "HR",
    "rsp_rate_drift": "RSP_RATE",
}
PATTERN_TYPES = tuple(PATTERN_MODALITY)
# each source channel hosts at most one pattern per window
CHANNEL_OF_MODALITY = {"HR": "ecg", "EDA": "eda", "RSP_RATE": "rsp"}


@dataclass
class SynthConfig:
    n_cws: int = 20
    n_cwns: int = 20
    windows_per_participant: int = 20
    baseline_windows: int = 15
    patterns: tuple = PATTERN_TYPES
    pattern_duration_s: tuple = (2.0, 5.0)
    asynchrony: bool = True
    pattern_prob: float = 1.0
    amplitude_scale: float = 1.0
    noise_sd: dict = field(default_factory=lambda: {"ecg": 0.05, "eda": 0.05, "rsp": 0.05})
    decoy_prob: float = 0.2
    decoy_scale: float = 0.5
    random_sign: bool = False
    shuffle_labels: bool = False
    hr_rest_bpm: tuple = (90.0, 120.0)
    rsp_rate_rest: tuple = (15.0, 25.0)
    eda_level_us: tuple = (2.0, 10.0)
    rsp_amp: tuple = (0.5, 1.5)
    rr_jitter_s: float = 0.006
    sample_rate_hz: float = DEFAULT_RATE_HZ
    feature_modes: tuple = ("raw", "change", "delta")
    write_recordings: bool = False
    seed: int = 0

    def __post_init__(self):
        self.patterns = tuple(self.patterns)
        self.pattern_duration_s = tuple(float(v) for v in self.pattern_duration_s)
        self.feature_modes = tuple(self.feature_modes)
        self.noise_sd = {**{"ecg": 0.05, "eda": 0.05, "rsp": 0.05}, **dict(self.noise_sd)}
        for name in ("n_cws", "n_cwns", "windows_per_participant", "baseline_windows"):
            if int(getattr(self, name)) < 1:
                raise ConfigError("must be a positive integer", name)
        bad = set(self.patterns) - set(PATTERN_TYPES)
        if bad:
            raise ConfigError(f"unknown pattern types {sorted(bad)}", "patterns")
        lo, hi = self.pattern_duration_s
        if not 2.0 <= lo <= hi <= 5.0:
            raise ConfigError("pattern durations must lie within [2, 5] s", "pattern_duration_s")
        for name in ("pattern_prob", "decoy_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError("must be a probability", name)
        if self.amplitude_scale < 0 or self.decoy_scale < 0:
            raise ConfigError("amplitude scales must be non-negative", "amplitude_scale")
        if set(self.noise_sd) != {"ecg", "eda", "rsp"} or min(self.noise_sd.values()) < 0:
            raise ConfigError("noise_sd needs non-negative ecg, eda and rsp entries", "noise_sd")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(f"unknown synthesis key {key!r}", key)
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def task_duration_s(self) -> float:
        return WIN_HOP_S * (self.windows_per_participant - 1) + WIN_S

    def baseline_duration_s(self) -> float:
        return WIN_HOP_S * (self.baseline_windows - 1) + WIN_S


@dataclass(frozen=True)
class PlantedPattern:
    type: str
    start_s: float          # from recording start
    duration_s: float
    amplitude: float = 1.0
    sign: int = 1
    decoy: bool = False

    @property
    def modality(self) -> str:
        return PATTERN_MODALITY[self.type]

    @property
    def end_s(self) -> float:
        return self.start_s + self.duration_s

    def to_dict(self, offset_s: float = 0.0) -> dict:
        d = asdict(self)
        d["start_s"] = self.start_s - offset_s
        d["modality"] = self.modality
        return d


# -- instance labels -------------------------------------------------------

def segment_overlaps(start_s: float, end_s: float, window_start_s: float) -> np.ndarray:
    """0/1 vector over the 19 segments of a window: 1 where [start, end) overlaps."""
    lo = window_start_s + SEG_HOP_S * np.arange(N_SEGMENTS)
    return ((lo < end_s) & (lo + SEG_S > start_s)).astype(np.int64)


def window_labels(patterns, window_start_s: float) -> dict[str, np.ndarray]:
    """Per-modality instance labels of one window from non-decoy patterns."""
    labels = {m: np.zeros(N_SEGMENTS, dtype=np.int64) for m in MODALITIES}
    for p in patterns:
        if not p.decoy and p.amplitude > 0:
            labels[p.modality] |= segment_overlaps(p.start_s, p.end_s, window_start_s)
    return labels


def _overlapping_windows(start_s, end_s, duration_s):
    n = int(math.floor((duration_s - WIN_S) / WIN_HOP_S)) + 1 if duration_s >= WIN_S else 0
    return [w for w in range(n) if w * WIN_HOP_S < end_s and w * WIN_HOP_S + WIN_S > start_s]


# -- pattern planting ------------------------------------------------------

def _hann_bump(t, start, dur):
    """Raised-cosine bump on [start, start+dur], peak 1 at the centre."""
    u = (t - start) / dur
    return np.where((u >= 0) & (u <= 1), 0.5 - 0.5 * np.cos(2 * np.pi * np.clip(u, 0, 1)), 0.0)


def _plateau(t, start, dur, edge=0.25):
    """Flat-topped window: cosine ramps over the first/last ``edge`` fraction."""
    u = np.clip((t - start) / dur, 0.0, 1.0)
    ramp = np.minimum(np.minimum(u, 1 - u) / edge, 1.0)
    return np.where((t >= start) & (t <= start + dur), 0.5 - 0.5 * np.cos(np.pi * ramp), 0.0)


def _warp(x, rate, lo, hi, speed):
    """Resample ``x`` from sample ``lo`` on so that samples [lo, hi) advance at ``speed``.

    After ``hi`` the signal continues with the accumulated time offset;
    reads past the end hold the last sample.
    """
    y = x.copy()
    steps = np.ones(x.size - lo)
    steps[: hi - lo] = speed
    tau = lo + np.concatenate([[0.0], np.cumsum(steps[:-1])])
    y[lo:] = np.interp(tau, np.arange(x.size), x)
    return y


def _local_rate(peaks, rate, lo, hi, fallback):
    near = peaks[(peaks >= lo) & (peaks < hi)]
    if near.size < 2:
        return fallback
    return 60.0 * rate / float(np.median(np.diff(near)))


def _check_bounds(recording, start_s, duration_s):
    if duration_s <= 0:
        raise ParameterError("pattern duration must be positive")
    if start_s < 0 or start_s + duration_s > recording.duration_s + 1e-9:
        raise ParameterError(
            f"pattern [{start_s}, {start_s + duration_s}] s lies outside the "
            f"{recording.duration_s:.2f} s recording"
        )


def plant_pattern(recording: RawRecording, type: str, start_s: float, duration_s: float,
                  amplitude: float = 1.0, sign: int = 1, magnitude: float | None = None,
                  eda_noise_sd: float = 0.05):
    """Insert one pattern; returns (new recording, {window index: 19 instance labels}).

    ``magnitude`` fixes the pattern's natural size (bpm dip, breaths/min,
    relative RR alternation, microsiemens); the default is the mid-range
    value. ``amplitude`` scales it; amplitude 0 leaves the recording as is.
    """
    if type not in PATTERN_MODALITY:
        raise ParameterError(f"unknown pattern type {type!r}")
    _check_bounds(recording, start_s, duration_s)
    if amplitude == 0:
        return recording, {}
    rate = recording.sample_rate_hz
    lo, hi = int(round(start_s * rate)), min(recording.n_samples, int(round((start_s + duration_s) * rate)))
    t = np.arange(lo, hi) / rate
    ctx_lo, ctx_hi = max(0, lo - int(10 * rate)), min(recording.n_samples, hi + int(10 * rate))

    if type == "eda_ramp":
        size = (3.0 * eda_noise_sd if magnitude is None else magnitude) * amplitude * sign
        centre, width = start_s + duration_s / 2, duration_s / 8
        tt = np.arange(lo, recording.n_samples) / rate
        step = size / (1 + np.exp(-(tt - centre) / width))
        eda = recording.eda.copy()
        eda[lo:] += step - step[0]
        new = replace(recording, eda=eda)
    elif type in ("hr_freeze", "hr_var_burst"):
        ecg = recording.ecg
        peaks = detect_r_peaks(ecg[ctx_lo:ctx_hi], rate) + ctx_lo
        hr = _local_rate(peaks, rate, ctx_lo, ctx_hi, 100.0)
        if type == "hr_freeze":
            depth = (15.0 if magnitude is None else magnitude) * amplitude * sign
            split = 0.7 * duration_s
            delta = (-depth * _plateau(t, start_s, split)
                     + 0.3 * depth * _hann_bump(t, start_s + split, duration_s - split))
            speed = np.clip((hr + delta) / hr, 0.2, 3.0)
        else:
            alpha = (0.08 if magnitude is None else magnitude) * amplitude
            inside = peaks[(peaks >= lo) & (peaks < hi)]
            edges = np.concatenate([[lo], inside, [hi]])
            speed = np.ones(hi - lo)
            for k, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
                speed[a - lo:b - lo] = 1.0 / (1.0 + alpha) if k % 2 else 1.0 / max(1.0 - alpha, 0.2)
        new = replace(recording, ecg=_warp(ecg, rate, lo, hi, speed))
    else:  # rsp_rate_drift
        rsp = recording.rsp
        seg = rsp[ctx_lo:ctx_hi]
        peaks, _ = sps.find_peaks(seg, distance=int(rate), prominence=0.3 * np.ptp(seg))
        br = _local_rate(peaks + ctx_lo, rate, ctx_lo, ctx_hi, 20.0)
        rise = (4.5 if magnitude is None else magnitude) * amplitude * sign
        speed = np.clip((br + rise * _plateau(t, start_s, duration_s)) / br, 0.2, 3.0)
        new = replace(recording, rsp=_warp(rsp, rate, lo, hi, speed))

    labels = {
        w: segment_overlaps(start_s, start_s + duration_s, w * WIN_HOP_S)
        for w in _overlapping_windows(start_s, start_s + duration_s, recording.duration_s)
    }
    return new, labels


# -- carriers --------------------------------------------------------------

def _smooth_noise(rng, n, rate, cutoff_hz, sd):
    """Low-pass Gaussian noise of standard deviation ``sd`` on an ``n``-sample grid."""
    if sd == 0:
        return np.zeros(n)
    coarse_rate = 16.0 * max(cutoff_hz, 0.25)
    m = int(math.ceil(n / rate * coarse_rate)) + 2
    pad = int(math.ceil(3.0 * coarse_rate / cutoff_hz))
    sos = sps.butter(2, cutoff_hz, fs=coarse_rate, output="sos")
    z = sps.sosfilt(sos, rng.standard_normal(m + pad))[pad:]
    z *= sd / max(z.std(), 1e-12)
    return np.interp(np.arange(n) / rate, np.arange(m) / coarse_rate, z)


_ECG_WAVES = (  # (offset s, width s, relative amplitude)
    (-0.03, 0.008, -0.12), (0.0, 0.011, 1.0), (0.03, 0.010, -0.18), (0.24, 0.04, 0.22),
)


def _ecg_template(rate):
    t = np.arange(int(-0.12 * rate), int(0.45 * rate)) / rate
    wave = sum(a * np.exp(-0.5 * ((t - c) / w) ** 2) for c, w, a in _ECG_WAVES)
    return wave, int(-0.12 * rate)


def _carrier(rng, n, rate, params, noise_sd, rr_jitter_s=0.006):
    """Clean recording channels from individual resting parameters."""
    t = np.arange(n) / rate
    br = params["rsp_rate"] + _smooth_noise(rng, n, rate, 0.02, 0.8)
    resp_phase = np.cumsum(br / 60.0) / rate + rng.uniform()
    amp = params["rsp_amp"] * (1 + _smooth_noise(rng, n, rate, 0.03, 0.08))
    rsp = amp * np.sin(2 * np.pi * resp_phase) + _smooth_noise(rng, n, rate, 2.0, noise_sd["rsp"])

    hr = (params["hr"] + _smooth_noise(rng, n, rate, 0.02, 1.5)
          + 1.5 * np.sin(2 * np.pi * resp_phase))
    beat_phase = np.cumsum(hr / 60.0) / rate + rng.uniform()
    beats = np.flatnonzero(np.diff(np.floor(beat_phase)) > 0) + 1
    beats = beats + np.round(rng.normal(0, rr_jitter_s * rate, beats.size)).astype(int)
    wave, offset = _ecg_template(rate)
    ecg = np.zeros(n)
    for b in beats:
        a, z = b + offset, b + offset + wave.size
        lo, hi = max(a, 0), min(z, n)
        if lo < hi:
            ecg[lo:hi] += params["ecg_amp"] * wave[lo - a:hi - a]
    ecg += 0.1 * np.sin(2 * np.pi * 0.3 * t + rng.uniform(0, 2 * np.pi))
    ecg += rng.normal(0, noise_sd["ecg"], n)

    eda = (params["eda"] + _smooth_noise(rng, n, rate, 0.005, 0.05)
           + _smooth_noise(rng, n, rate, 1.0, noise_sd["eda"]))
    return ecg, eda, rsp


def participant_params(rng, config: SynthConfig) -> dict:
    return {
        "hr": rng.uniform(*config.hr_rest_bpm),
        "rsp_rate": rng.uniform(*config.rsp_rate_rest),
        "rsp_amp": rng.uniform(*config.rsp_amp),
        "eda": rng.uniform(*config.eda_level_us),
        "ecg_amp": rng.uniform(0.8, 1.2),
    }


# -- placement -------------------------------------------------------------

def _channel_types(config):
    by_mod: dict[str, list[str]] = {}
    for p in config.patterns:
        by_mod.setdefault(PATTERN_MODALITY[p], []).append(p)
    return by_mod


def _start_choices(w, n_windows, duration):
    """Integer starts keeping the pattern inside window ``w``'s exclusive span,
    so no other window of the recording overlaps it."""
    lo = w * WIN_HOP_S + (0.0 if w == 0 else WIN_S - WIN_HOP_S)
    hi = w * WIN_HOP_S + (WIN_S if w == n_windows - 1 else WIN_HOP_S)
    return np.arange(math.ceil(lo), math.floor(hi - duration) + 1)


_MAGNITUDE_RANGE = {
    "hr_freeze": (10.0, 20.0),
    "hr_var_burst": (0.06, 0.10),
    "rsp_rate_drift": (3.0, 6.0),
}


def draw_patterns(rng, config: SynthConfig, positive: bool, n_windows: int) -> list[PlantedPattern]:
    """Pattern schedule of one task recording."""
    by_mod = _channel_types(config)
    out = []
    dmin, dmax = config.pattern_duration_s
    for w in range(n_windows):
        decoy = not positive
        shared = None
        for mod in sorted(by_mod):
            prob = config.decoy_prob if decoy else config.pattern_prob
            if rng.uniform() >= prob:
                continue
            kind = by_mod[mod][rng.integers(len(by_mod[mod]))]
            if shared is None or config.asynchrony:
                dur = float(rng.uniform(dmin, dmax))
                start = float(rng.choice(_start_choices(w, n_windows, dur)))
                shared = (start, dur)
            start, dur = shared
            scale = config.amplitude_scale * (config.decoy_scale if decoy else 1.0)
            sign = int(rng.choice([-1, 1])) if config.random_sign and kind != "hr_var_burst" else 1
            out.append(PlantedPattern(kind, start, dur, scale, sign, decoy))
    return out


def _magnitude(rng, kind, config):
    if kind == "eda_ramp":
        return 3.0 * config.noise_sd["eda"]
    return float(rng.uniform(*_MAGNITUDE_RANGE[kind]))


# -- participants and datasets --------------------------------------------

def generate_participant(group: str, config: SynthConfig, rng, participant_id: str = "P000",
                         label_group: str | None = None):
    """(baseline recording, task recording, ground truth) for one participant.

    ``label_group`` overrides the group written into the recordings (used
    for label-shuffled controls); patterns always follow ``group``.
    """
    rate = config.sample_rate_hz
    params = participant_params(rng, config)
    tag = label_group or group
    margin = 3.0
    recs = {}
    schedule = []
    for condition, dur in (("baseline", config.baseline_duration_s()), ("task", config.task_duration_s())):
        n_out = int(round(dur * rate))
        ecg, eda, rsp = _carrier(rng, n_out + int(margin * rate), rate, params, config.noise_sd,
                                 config.rr_jitter_s)
        rec = RawRecording(participant_id, tag, condition, ecg, eda, rsp, rate)
        if condition == "task":
            schedule = draw_patterns(rng, config, group == "CWS", config.windows_per_participant)
            for p in sorted(schedule, key=lambda p: p.start_s):
                rec, _ = plant_pattern(rec, p.type, p.start_s, p.duration_s, p.amplitude, p.sign,
                                       _magnitude(rng, p.type, config), config.noise_sd["eda"])
        recs[condition] = replace(rec, ecg=rec.ecg[:n_out], eda=rec.eda[:n_out], rsp=rec.rsp[:n_out])
    truth = {}
    for w in range(config.windows_per_participant):
        start = w * WIN_HOP_S
        inside = [p for p in schedule if p.start_s < start + WIN_S and p.end_s > start]
        labels = window_labels(inside, start)
        truth[f"{participant_id}/task/{w:03d}"] = {
            **{m: labels[m].tolist() for m in MODALITIES},
            "patterns": [p.to_dict(start) for p in inside],
            "group": group,
        }
    return recs["baseline"], recs["task"], truth


@dataclass
class SynthDataset:
    config: SynthConfig
    bags: dict                     # feature mode -> list[Bag]
    ground_truth: dict             # window id -> {modality: labels, patterns, group}
    groups: dict                   # participant id -> true group
    recordings: list = field(default_factory=list)
    paths: dict = field(default_factory=dict)

    def instance_labels(self, window_id: str) -> dict[str, np.ndarray]:
        g = self.ground_truth[window_id]
        return {m: np.asarray(g[m]) for m in MODALITIES}


def participant_ids(config: SynthConfig) -> list[tuple[str, str]]:
    n = config.n_cws + config.n_cwns
    width = max(3, len(str(n)))
    return [(f"P{i + 1:0{width}d}", "CWS" if i < config.n_cws else "CWNS") for i in range(n)]


def shuffled_groups(config: SynthConfig) -> dict[str, str]:
    """Labels from a random permutation of the true groups (class counts kept).

    Patterns still follow the true group, so labels carry no signal.
    """
    ids = participant_ids(config)
    order = make_rng(config.seed, 0x5A1F).permutation(len(ids))
    return {pid: ids[j][1] for (pid, _), j in zip(ids, order)}


def generate_dataset(config: SynthConfig, out_dir=None) -> SynthDataset:
    """Generate, featurize and optionally persist a full synthetic dataset."""
    labels = shuffled_groups(config) if config.shuffle_labels else {}
    recordings, truth, groups = [], {}, {}
    for index, (pid, group) in enumerate(participant_ids(config)):
        rng = make_rng(config.seed, 0x5E7, index)
        base, task, gt = generate_participant(group, config, rng, pid, labels.get(pid))
        recordings += [base, task]
        truth.update(gt)
        groups[pid] = group
    bags = featurize(recordings, config.feature_modes)
    ds = SynthDataset(config, bags, truth, groups, recordings)
    if out_dir is not None:
        write_dataset(ds, out_dir)
    return ds


def write_dataset(ds: SynthDataset, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"config": out / "synth_config.json", "ground_truth": out / "ground_truth.json"}
    paths["config"].write_text(json.dumps(ds.config.to_dict(), indent=2, sort_keys=True) + "\n")
    paths["ground_truth"].write_text(json.dumps(ds.ground_truth, sort_keys=True) + "\n")
    for mode, bags in ds.bags.items():
        paths[f"bags_{mode}"] = write_bags(out / f"bags_{mode}.jsonl", bags)
    if ds.config.write_recordings:
        rec_dir = out / "recordings"
        rec_dir.mkdir(exist_ok=True)
        pairs = []
        for rec in ds.recordings:
            stem = f"{rec.participant_id}_{rec.condition}"
            save_recording(rec, rec_dir / f"{stem}.csv", rec_dir / f"{stem}.json")
            pairs.append((f"recordings/{stem}.json", f"recordings/{stem}.csv"))
        paths["manifest"] = write_manifest(out / "manifest.json", pairs)
    ds.paths = {k: str(v) for k, v in paths.items()}
    return ds.paths


# -- oracles ---------------------------------------------------------------

def _auc(scores, labels):
    """Area under the ROC curve by the rank-sum identity (ties count half)."""
    from scipy.stats import rankdata

    scores, labels = np.asarray(scores, float), np.asarray(labels)
    pos = labels == 1
    n1, n0 = pos.sum(), (~pos).sum()
    if n1 == 0 or n0 == 0:
        raise ParameterError("AUC needs both classes")
    r = rankdata(scores)
    return (r[pos].sum() - n1 * (n1 + 1) / 2) / (n1 * n0)


def separability_auc(bags: list[Bag], modality: str) -> tuple[float, int, str]:
    """Best single-column bag score AUC within one modality.

    A bag's score on column c is the maximum (or the negated minimum) of
    that column over its 19 instances. Returns (auc, column, direction).
    """
    X = np.stack([b.modality(modality) for b in bags])
    y = np.array([b.label for b in bags])
    best = (0.0, -1, "max")
    for c in range(X.shape[2]):
        for direction, score in (("max", X[:, :, c].max(axis=1)), ("min", -X[:, :, c].min(axis=1))):
            auc = _auc(score, y)
            if auc > best[0]:
                best = (float(auc), c, direction)
    return best
