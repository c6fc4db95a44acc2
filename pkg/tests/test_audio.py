import numpy as np
import pytest

from dancediff.audio import (
    BEAT_CHANNEL,
    FEATURE_DIM,
    PEAK_CHANNEL,
    AudioBuffer,
    BeatGrid,
    beats_from_features,
    chroma,
    click_track,
    detect_beats,
    extract_baseline_features,
    load_wav,
    magnitude_spectrogram,
    mel_filterbank,
    mfcc,
    onset_envelope,
    save_wav,
)
from dancediff.errors import DataError, EmptyAudio, NoTempoFound, TooShort

SR = 22050


def sine(freq, seconds, sample_rate=SR, amp=0.5):
    t = np.arange(int(seconds * sample_rate)) / sample_rate
    wave = (amp * np.sin(2 * np.pi * freq * t)).astype(np.float32)
    return AudioBuffer(samples=wave, sample_rate=sample_rate)


def test_audio_buffer_rejects_empty():
    with pytest.raises(EmptyAudio):
        AudioBuffer(samples=np.array([], dtype=np.float32), sample_rate=SR)


def test_beat_grid_requires_increasing_times():
    with pytest.raises(DataError):
        BeatGrid(beat_times=np.array([0.5, 0.5, 1.0]), tempo_bpm=120.0)


def test_wav_round_trip(tmp_path):
    buf = sine(440.0, 0.5)
    path = tmp_path / "a.wav"
    save_wav(buf, path)
    back = load_wav(path)
    assert back.sample_rate == SR
    # int16 quantization bounds the round-trip error
    assert np.abs(back.samples - buf.samples).max() < 2.0 / 32767


def test_spectrogram_peak_at_sine_frequency():
    buf = sine(1000.0, 1.0)
    spec = magnitude_spectrogram(buf, hop=SR // 30)
    freqs = np.fft.rfftfreq(1024, 1.0 / SR)
    peak_bin = spec[spec.shape[0] // 2].argmax()
    assert abs(freqs[peak_bin] - 1000.0) < freqs[1]


def test_mel_filterbank_covers_spectrum():
    fb = mel_filterbank(SR, 1024, 64)
    assert fb.shape == (64, 513)
    assert (fb >= 0).all()
    assert (fb.sum(axis=1) > 0).all()  # no empty band
    # band center frequencies increase
    centers = fb.argmax(axis=1)
    assert (np.diff(centers) >= 0).all()


def test_onset_envelope_spikes_at_clicks():
    buf = click_track(bpm=60.0, duration=3.0, sample_rate=SR)
    hop = SR // 100
    env = onset_envelope(buf, hop)
    assert env.max() == pytest.approx(1.0)  # normalized
    # energy concentrates within 30 ms of the click instants
    frames = np.arange(len(env)) * hop / SR
    near = np.zeros(len(env), dtype=bool)
    for t in (0.0, 1.0, 2.0):
        near |= np.abs(frames - t) < 0.03
    assert env[near].sum() > 0.8 * env.sum()


def test_onset_envelope_amplitude_invariant():
    buf = click_track(bpm=90.0, duration=3.0, sample_rate=SR)
    quiet = AudioBuffer(samples=buf.samples * 0.1, sample_rate=SR)
    hop = SR // 100
    np.testing.assert_allclose(onset_envelope(buf, hop), onset_envelope(quiet, hop), atol=1e-6)


def test_mfcc_shape_and_steady_tone_is_constant():
    buf = sine(500.0, 1.0)
    m = mfcc(buf, hop=SR // 30)
    assert m.shape[1] == 20
    interior = m[5:-5]
    assert np.abs(interior - interior.mean(axis=0)).max() < 0.05 * np.abs(interior).max()


def test_chroma_concentrates_on_played_pitch_class():
    buf = sine(440.0, 1.0)  # A4 -> pitch class 9
    c = chroma(buf, hop=SR // 30)
    assert c.shape[1] == 12
    interior = c[5:-5]
    assert (interior[:, 9] / (interior.sum(axis=1) + 1e-12)).mean() > 0.6


def test_detect_beats_on_click_track():
    for bpm in (90.0, 120.0, 140.0):
        grid = detect_beats(click_track(bpm=bpm, duration=8.0, sample_rate=SR))
        assert abs(grid.tempo_bpm - bpm) < 1.0, bpm
        clicks = np.arange(0.0, 8.0, 60.0 / bpm)
        for t in grid.beat_times:
            assert np.abs(clicks - t).min() < 0.03, (bpm, t)


def test_detect_beats_time_stretch_halves_tempo():
    fast = detect_beats(click_track(bpm=140.0, duration=8.0, sample_rate=SR))
    slow = detect_beats(click_track(bpm=70.0, duration=8.0, sample_rate=SR))
    assert abs(fast.tempo_bpm / slow.tempo_bpm - 2.0) < 0.05


def test_detect_beats_amplitude_invariant():
    buf = click_track(bpm=120.0, duration=8.0, sample_rate=SR)
    quiet = AudioBuffer(samples=buf.samples * 0.1, sample_rate=SR)
    a, b = detect_beats(buf), detect_beats(quiet)
    assert a.tempo_bpm == pytest.approx(b.tempo_bpm, abs=1e-6)
    np.testing.assert_allclose(a.beat_times, b.beat_times, atol=1e-6)


def test_detect_beats_silence_raises():
    silent = AudioBuffer(samples=np.zeros(SR * 4, dtype=np.float32), sample_rate=SR)
    with pytest.raises(NoTempoFound):
        detect_beats(silent)


def test_detect_beats_too_short_raises():
    with pytest.raises(TooShort):
        detect_beats(sine(440.0, 1.0))


def test_feature_extraction_shapes_and_rate():
    buf = click_track(bpm=120.0, duration=4.0, sample_rate=SR)
    seq, grid = extract_baseline_features(buf, fps=30.0)
    assert seq.features.shape[1] == FEATURE_DIM == 35
    assert seq.fps == 30.0
    # ~4 s at 30 fps
    assert abs(seq.features.shape[0] - 120) <= 2
    assert grid.beat_times.size > 0


def test_beat_channel_one_hot_spacing():
    buf = click_track(bpm=120.0, duration=6.0, sample_rate=SR)
    seq, _ = extract_baseline_features(buf, fps=30.0)
    beat_col = seq.features[:, BEAT_CHANNEL]
    assert set(np.unique(beat_col)) <= {0.0, 1.0}
    idx = np.flatnonzero(beat_col)
    # 120 bpm at 30 fps -> one beat every 15 frames
    assert idx.size >= 8
    spacing = np.diff(idx)
    assert np.abs(spacing - 15).max() <= 1


def test_beats_from_features_matches_grid():
    buf = click_track(bpm=100.0, duration=6.0, sample_rate=SR)
    seq, grid = extract_baseline_features(buf, fps=30.0)
    recovered = beats_from_features(seq)
    assert recovered.size == np.count_nonzero(seq.features[:, BEAT_CHANNEL])
    # every recovered beat within one frame of a detected beat
    for t in recovered:
        assert np.abs(grid.beat_times - t).min() <= 1.0 / 30.0 + 1e-9


def test_feature_extraction_silence_gives_empty_grid():
    silent = AudioBuffer(samples=np.zeros(SR * 4, dtype=np.float32), sample_rate=SR)
    seq, grid = extract_baseline_features(silent, fps=30.0)
    assert grid.beat_times.size == 0
    assert not seq.features[:, BEAT_CHANNEL].any()
    assert np.isfinite(seq.features).all()


def test_peak_channel_subset_of_envelope_peaks():
    buf = click_track(bpm=120.0, duration=6.0, sample_rate=SR)
    seq, _ = extract_baseline_features(buf, fps=30.0)
    peaks = seq.features[:, PEAK_CHANNEL]
    assert set(np.unique(peaks)) <= {0.0, 1.0}
    assert peaks.sum() >= 8  # one peak per click, roughly
