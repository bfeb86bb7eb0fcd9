import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mimil.errors import EmptyResultError, ParameterError
from mimil.signal import (
    RawRecording, Window, expected_window_count, extract_windows, highpass_filter, load_manifest,
    load_recording, n_frames, preprocess, save_recording, segment_window, write_manifest,
)

RATE = 1250.0


def _recording(seconds, rate=RATE, condition="task"):
    n = int(round(seconds * rate))
    t = np.arange(n) / rate
    return RawRecording("P001", "CWS", condition, np.sin(t), np.cos(t), np.sin(2 * t), rate)


def _steady_amplitude(y, rate, tail_s):
    return np.max(np.abs(y[-int(tail_s * rate):]))


def test_highpass_removes_constant():
    x = np.full(int(10 * RATE), 5.0)
    y = highpass_filter(x, RATE, 0.05)
    assert np.max(np.abs(y[-int(RATE):])) < 0.05


def test_highpass_passband_sine():
    rate = 100.0
    t = np.arange(int(300 * rate)) / rate
    y = highpass_filter(np.sin(2 * np.pi * 1.0 * t), rate, 0.05, 2)
    expected = 1 / np.sqrt(1 + (0.05 / 1.0) ** 4)
    assert abs(_steady_amplitude(y, rate, 10) - expected) < 0.02 * expected


def test_highpass_cutoff_is_minus_3db():
    rate = 10.0
    f = 0.05
    t = np.arange(int(2000 / f)) / rate
    y = highpass_filter(np.sin(2 * np.pi * f * t), rate, f, 2)
    ratio = _steady_amplitude(y, rate, 3 / f)
    assert abs(ratio - 1 / np.sqrt(2)) < 0.02 / np.sqrt(2)


def test_highpass_errors():
    with pytest.raises(ParameterError):
        highpass_filter(np.ones(100), RATE, RATE / 2)
    with pytest.raises(ParameterError):
        highpass_filter(np.array([]), RATE, 0.05)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 10_000))
def test_highpass_is_linear(a, b, seed):
    r = np.random.default_rng(seed)
    x, y = r.normal(size=500), r.normal(size=500)
    lhs = highpass_filter(a * x + b * y, 100.0, 0.5)
    rhs = a * highpass_filter(x, 100.0, 0.5) + b * highpass_filter(y, 100.0, 0.5)
    assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-9 * (abs(a) + abs(b) + 1))


def test_preprocess_uses_lower_eda_cutoff():
    rec = _recording(60)
    out = preprocess(rec)
    assert np.allclose(out.ecg, highpass_filter(rec.ecg, RATE, 0.05))
    assert np.allclose(out.eda, highpass_filter(rec.eda, RATE, 0.01))


@pytest.mark.parametrize("T,count,starts", [(60, 3, [0, 15, 30]), (20, 1, [0]), (240, 15, None)])
def test_extract_windows_counts(T, count, starts):
    windows = extract_windows(_recording(T))
    assert len(windows) == count == expected_window_count(T)
    if starts:
        assert [w.start_s for w in windows] == starts
    assert all(w.n_samples == int(20 * RATE) for w in windows)


def test_extract_windows_too_short():
    with pytest.raises(EmptyResultError):
        extract_windows(_recording(19.9))


@pytest.mark.parametrize("seconds,count", [(20, 19), (2, 1), (10, 9)])
def test_segment_counts(seconds, count):
    n = int(seconds * RATE)
    w = Window("P", "task", 0.0, np.zeros(n), np.zeros(n), np.zeros(n), RATE)
    segs = segment_window(w)
    assert len(segs) == count
    assert [s.start_s for s in segs] == list(range(count))


def test_segment_longer_than_window():
    n = int(1.5 * RATE)
    w = Window("P", "task", 0.0, np.zeros(n), np.zeros(n), np.zeros(n), RATE)
    with pytest.raises(ParameterError):
        segment_window(w)


@settings(max_examples=60, deadline=None)
@given(total=st.integers(0, 5000), length=st.integers(1, 800), hop=st.integers(1, 400))
def test_frame_count_formula(total, length, hop):
    expected = (total - length) // hop + 1 if total >= length else 0
    assert n_frames(total, length, hop) == expected


@settings(max_examples=20, deadline=None)
@given(seconds=st.floats(20, 120), rate=st.sampled_from([50.0, 100.0, 125.0]))
def test_window_count_property(seconds, rate):
    rec = _recording(seconds, rate)
    length, hop = int(round(20 * rate)), int(round(15 * rate))
    assert len(extract_windows(rec)) == (rec.n_samples - length) // hop + 1


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 1000))
def test_segmentation_reconstructs_window(seed):
    r = np.random.default_rng(seed)
    n = int(20 * 100)
    w = Window("P", "task", 0.0, r.normal(size=n), r.normal(size=n), r.normal(size=n), 100.0)
    rebuilt = np.full(n, np.nan)
    for s in segment_window(w):
        lo = int(round(s.start_s * 100))
        rebuilt[lo:lo + s.ecg.size] = s.ecg
    assert np.array_equal(rebuilt, w.ecg)


def test_recording_invariants():
    with pytest.raises(ParameterError):
        RawRecording("P", "CWS", "task", np.zeros(3), np.zeros(4), np.zeros(3))
    with pytest.raises(ParameterError):
        RawRecording("P", "XYZ", "task", np.zeros(3), np.zeros(3), np.zeros(3))
    with pytest.raises(ParameterError):
        RawRecording("P", "CWS", "task", np.zeros(3), np.zeros(3), np.zeros(3), sample_rate_hz=0)


def test_csv_and_manifest_roundtrip(tmp_path):
    rec = _recording(21, rate=100.0)
    csv_path, meta_path = save_recording(rec, tmp_path / "r.csv")
    assert csv_path.read_text().splitlines()[0] == "t,ecg,eda,rsp"
    back = load_recording(csv_path, meta_path)
    assert back.participant_id == "P001" and back.sample_rate_hz == 100.0
    assert np.allclose(back.ecg, rec.ecg, rtol=1e-8, atol=1e-12)
    manifest = write_manifest(tmp_path / "manifest.json", [("r.json", "r.csv")])
    (loaded,) = load_manifest(manifest)
    assert np.allclose(loaded.rsp, rec.rsp, rtol=1e-8, atol=1e-12)
