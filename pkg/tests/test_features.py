import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mimil.errors import DataError, FeatureError, ParameterError
from mimil.features import (
    HldVector, baseline_score, change_score, change_score_matrix, delta_change_score,
    delta_score_matrix, detect_r_peaks, feature_names, hld, hr_series, raw_features,
    rsp_rate_amp, window_hlds,
)
from mimil.signal import Window, extract_windows, preprocess
from mimil.synth import SynthConfig, generate_participant
from mimil import nn

RATE = 1250.0


def _ecg(period_s, seconds, rate=RATE, noise_sd=0.0, seed=0):
    n = int(seconds * rate)
    t = np.arange(n) / rate
    beats = np.arange(period_s / 2, seconds, period_s)
    x = sum(np.exp(-0.5 * ((t - b) / 0.01) ** 2) for b in beats)
    if noise_sd:
        x = x + np.random.default_rng(seed).normal(0, noise_sd, n)
    return x, np.round(beats * rate).astype(int)


def _window(period_s=0.5, breath_s=3.0, eda=5.0, pid="P001", condition="task", rate=RATE):
    n = int(20 * rate)
    t = np.arange(n) / rate
    ecg, _ = _ecg(period_s, 20, rate)
    rsp = np.sin(2 * np.pi * t / breath_s)
    return Window(pid, condition, 0.0, ecg, np.full(n, eda), rsp, rate)


# -- R peaks and heart rate -------------------------------------------------------

def test_impulse_train_peaks():
    n = int(10 * RATE)
    x = np.zeros(n)
    x[625::625] = 1.0
    peaks = detect_r_peaks(x, RATE)
    truth = np.arange(625, n, 625)
    assert len(peaks) == len(truth)
    assert np.all(np.abs(peaks - truth) <= 5)


def test_flat_signal_has_no_peaks():
    assert len(detect_r_peaks(np.zeros(int(5 * RATE)), RATE)) == 0


def test_noisy_template_detection_recall_precision():
    ecg, truth = _ecg(1.0, 30, noise_sd=0.0)
    signal_power = np.mean(ecg ** 2)
    noisy, _ = _ecg(1.0, 30, noise_sd=np.sqrt(signal_power / 100), seed=3)
    peaks = detect_r_peaks(noisy, RATE)
    hits = sum(np.any(np.abs(peaks - p) <= int(0.05 * RATE)) for p in truth)
    recall = hits / len(truth)
    precision = hits / max(len(peaks), 1)
    assert recall >= 0.95 and precision >= 0.95
    assert np.all(np.diff(peaks) > 0)


def test_hr_series_examples():
    assert np.allclose(hr_series(np.arange(0, 5000, 625), RATE, 5000)[:4375], 120)
    assert np.allclose(hr_series(np.arange(0, 5000, 1250), RATE, 5000)[:3750], 60)
    hr = hr_series(np.array([0, 625, 1875]), RATE, 1875)
    assert np.allclose(hr[:625], 120) and np.allclose(hr[625:1875], 60)
    with pytest.raises(FeatureError) as exc:
        hr_series(np.array([10]), RATE, 100)
    assert exc.value.fallback == "previous_hr"


@pytest.mark.parametrize("period,amp,rate_bpm", [(3.0, 1.0, 20.0), (4.0, 0.5, 15.0)])
def test_rsp_rate_amp_on_sines(period, amp, rate_bpm):
    t = np.arange(int(30 * RATE)) / RATE
    rate, amplitude = rsp_rate_amp(amp * np.sin(2 * np.pi * t / period), RATE)
    tail = slice(int(10 * RATE), None)
    assert np.allclose(rate[tail], rate_bpm, rtol=0.05)
    assert np.allclose(amplitude[tail], 2 * amp, rtol=0.05)


def test_rsp_constant_raises():
    with pytest.raises(FeatureError):
        rsp_rate_amp(np.ones(int(10 * RATE)), RATE)


# -- HLDs ---------------------------------------------------------------------------

def test_hld_examples():
    v = hld([1, 2, 3, 4])
    assert (v.mean, v.min, v.max, v.median, v.var) == (2.5, 1, 4, 2.5, 1.25)
    assert abs(v.std - np.sqrt(1.25)) < 1e-12
    assert hld([7, 7, 7]) == HldVector(7, 7, 7, 7, 0, 0)
    s = hld([3])
    assert (s.mean, s.min, s.max, s.median, s.var) == (3, 3, 3, 3, 0)
    with pytest.raises(ParameterError):
        hld([])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=200))
def test_hld_ordering_invariants(values):
    v = hld(values)
    eps = 1e-9 * (1 + max(abs(x) for x in values))
    assert v.min <= v.median + eps and v.median <= v.max + eps
    assert v.min <= v.mean + eps and v.mean <= v.max + eps
    assert v.var >= 0 and abs(v.std - np.sqrt(v.var)) <= 1e-9 * (1 + v.std)


def test_raw_features_shape_and_constructed_hr():
    grid = raw_features(_window(period_s=0.5))
    assert grid.shape == (19, 24)
    assert np.allclose(grid[:, 0], 120, atol=0.5)
    assert np.allclose(grid[:, 6 + 4], 0)  # EDA var of a constant channel
    assert np.allclose(grid[:, 6 + 5], 0)
    assert grid.tobytes() == raw_features(_window(period_s=0.5)).tobytes()


def test_feature_names_canonical_order():
    names = feature_names("raw")
    assert len(names) == 24 and names[0] == "Heart rate Mean" and names[23] == "RSP rate Std"
    assert names[6].startswith("EDA") and names[12].startswith("RSP amplitude")
    change = feature_names("change")
    assert len(change) == 8 and "Cosine" in change[0] and "Euclidean" in change[1]


# -- change scores -------------------------------------------------------------------

def test_change_score_examples():
    b = np.arange(1.0, 7.0)
    assert change_score(b, b)[:2] == (0.0, 1.0)
    e, c, _ = change_score(2 * b, b)
    assert abs(c - 1) < 1e-12 and abs(e - np.linalg.norm(b)) < 1e-12
    e, c, _ = change_score(np.eye(6)[0], np.eye(6)[1])
    assert abs(c) < 1e-12 and abs(e - np.sqrt(2)) < 1e-12
    e, c, flag = change_score(np.zeros(6), b)
    assert c == 0 and flag


def test_delta_examples():
    b = np.arange(1.0, 7.0)
    assert np.array_equal(delta_change_score(b, b), np.zeros(6))
    assert np.allclose(delta_change_score(b + 1, b), 1)
    assert np.array_equal(delta_change_score(np.full(6, 5.0), np.full(6, 2.0)), np.full(6, 3.0))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=12, max_size=12))
def test_change_score_ranges(values):
    e, c, _ = change_score(np.array(values[:6]), np.array(values[6:]))
    assert -1 <= c <= 1 and e >= 0


def test_change_score_matrix_examples():
    base_windows = [_window(condition="baseline") for _ in range(2)]
    base = baseline_score(base_windows)
    grid = change_score_matrix(_window(condition="baseline"), base)
    assert grid.shape == (19, 8)
    assert np.allclose(grid[:, 1::2], 0, atol=1e-9) and np.allclose(grid[:, 0::2], 1, atol=1e-9)

    w = _window(period_s=0.5)
    doubled = Window(w.participant_id, w.condition, 0.0, w.ecg, w.eda * 2, w.rsp * 2, RATE)
    g1, g2 = change_score_matrix(w, base), change_score_matrix(doubled, base)
    # EDA and RSP-amp HLDs all scale by 2, so their cosine columns are unchanged
    assert np.allclose(g1[:, [2, 4]], g2[:, [2, 4]], atol=1e-9)

    assert delta_score_matrix(w, base).shape == (19, 24)
    with pytest.raises(DataError):
        change_score_matrix(_window(pid="P999"), base)


def test_baseline_score_rejects_task_windows():
    with pytest.raises(DataError):
        baseline_score([_window(condition="task")])


def test_euclid_lower_on_baseline_than_on_patterned_task():
    cfg = SynthConfig(n_cws=7, n_cwns=7, windows_per_participant=6, amplitude_scale=2.0)
    baseline, task, _ = generate_participant("CWS", cfg, nn.make_rng(0, 1), "P001")
    bw = extract_windows(preprocess(baseline))
    tw = extract_windows(preprocess(task))
    base = baseline_score(bw)
    on_base = np.mean([change_score_matrix(w, base)[:, 1::2].mean() for w in bw])
    on_task = np.mean([change_score_matrix(w, base)[:, 1::2].mean() for w in tw])
    assert on_base < on_task


def test_window_hlds_layout():
    h = window_hlds(_window())
    assert h.shape == (19, 4, 6)
    assert np.array_equal(h.reshape(19, -1), raw_features(_window()))
