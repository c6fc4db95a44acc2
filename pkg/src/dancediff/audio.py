"""Baseline music feature extraction and beat tracking.

Features are computed per motion frame (hop = sample_rate / fps) and
concatenate: onset-strength envelope (1), 20 MFCCs, 12 chroma energies, a
beat one-hot and an onset-peak one-hot, for D = 35 total. Beat tracking runs
spectral flux on a mel spectrogram, autocorrelation tempo estimation in
40-220 BPM, and dynamic-programming alignment of onsets to the tempo period.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dct
from scipy.io import wavfile

from .errors import DataError, EmptyAudio, NoTempoFound, TooShort
from .motion_io import ConditioningSequence

WIN_LENGTH = 1024
N_MELS = 64
N_MFCC = 20
N_CHROMA = 12
FEATURE_DIM = 1 + N_MFCC + N_CHROMA + 2  # 35
BEAT_CHANNEL = 1 + N_MFCC + N_CHROMA  # column 33
PEAK_CHANNEL = BEAT_CHANNEL + 1
TEMPO_MIN_BPM = 40.0
TEMPO_MAX_BPM = 220.0
_BEAT_ENV_FPS = 100.0  # envelope rate used for beat tracking (10 ms grid)


@dataclass
class AudioBuffer:
    """Mono audio in [-1, 1] at a given sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DataError("AudioBuffer expects mono samples")
        if self.samples.size == 0:
            raise EmptyAudio("AudioBuffer is empty")
        if self.sample_rate <= 0:
            raise DataError("sample_rate must be positive")
        if not np.isfinite(self.samples).all():
            raise DataError("samples must be finite")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class BeatGrid:
    """Detected beat times (seconds, ascending) and the tempo estimate."""

    beat_times: np.ndarray
    tempo_bpm: float

    def __post_init__(self):
        self.beat_times = np.asarray(self.beat_times, dtype=np.float64)
        if self.beat_times.size and np.any(np.diff(self.beat_times) <= 0):
            raise DataError("beat times must be strictly increasing")


def load_wav(path) -> AudioBuffer:
    """Read an uncompressed PCM wave file; stereo is averaged to mono."""
    rate, data = wavfile.read(path)
    data = np.asarray(data)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if np.issubdtype(data.dtype, np.integer):
        data = data / float(np.iinfo(data.dtype).max)
    return AudioBuffer(data.astype(np.float64), rate)


def save_wav(audio: AudioBuffer, path) -> None:
    pcm = np.clip(audio.samples, -1.0, 1.0)
    wavfile.write(path, audio.sample_rate, (pcm * 32767).astype(np.int16))


# ---------------------------------------------------------------------------
# Spectral front end


def _frame_signal(samples: np.ndarray, hop: int, win: int) -> np.ndarray:
    """(n_frames, win) windows, frame i centered at sample i*hop."""
    n_frames = max(1, int(np.floor(samples.size / hop)))
    padded = np.pad(samples, (win // 2, win))
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    return padded[idx] * np.hanning(win)[None, :]


def magnitude_spectrogram(audio: AudioBuffer, hop: int, win: int = WIN_LENGTH) -> np.ndarray:
    """(n_frames, win//2 + 1) magnitude STFT."""
    return np.abs(np.fft.rfft(_frame_signal(audio.samples, hop, win), axis=-1))


def mel_filterbank(sr: int, n_fft: int, n_mels: int) -> np.ndarray:
    """(n_mels, n_fft//2 + 1) triangular filters on the HTK mel scale."""

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)

    fft_freqs = np.linspace(0, sr / 2, n_fft // 2 + 1)
    mel_pts = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sr / 2), n_mels + 2))
    fb = np.zeros((n_mels, fft_freqs.size))
    for m in range(n_mels):
        lo, c, hi = mel_pts[m : m + 3]
        up = (fft_freqs - lo) / max(c - lo, 1e-9)
        down = (hi - fft_freqs) / max(hi - c, 1e-9)
        fb[m] = np.clip(np.minimum(up, down), 0, None)
    return fb


def onset_envelope(audio: AudioBuffer, hop: int) -> np.ndarray:
    """Spectral flux on the log-mel spectrogram, normalized to max 1.

    The input is peak-normalized first, so the envelope (and everything
    derived from it) is invariant to scaling the audio by any positive
    constant.
    """
    peak_amp = np.max(np.abs(audio.samples))
    if peak_amp > 0:
        audio = AudioBuffer(audio.samples / peak_amp, audio.sample_rate)
    mag = magnitude_spectrogram(audio, hop)
    mel = mag @ mel_filterbank(audio.sample_rate, WIN_LENGTH, N_MELS).T
    logmel = np.log1p(1000.0 * mel)
    flux = np.maximum(np.diff(logmel, axis=0, prepend=logmel[:1]), 0.0).sum(axis=1)
    peak = flux.max()
    return flux / peak if peak > 1e-12 else flux


def mfcc(audio: AudioBuffer, hop: int, n_mfcc: int = N_MFCC) -> np.ndarray:
    mag = magnitude_spectrogram(audio, hop)
    mel = mag @ mel_filterbank(audio.sample_rate, WIN_LENGTH, N_MELS).T
    return dct(np.log(mel + 1e-10), type=2, axis=1, norm="ortho")[:, :n_mfcc]


def chroma(audio: AudioBuffer, hop: int) -> np.ndarray:
    """(n_frames, 12) pitch-class energies from the magnitude STFT."""
    mag = magnitude_spectrogram(audio, hop)
    freqs = np.linspace(0, audio.sample_rate / 2, mag.shape[1])
    valid = freqs > 20.0
    midi = 69.0 + 12.0 * np.log2(freqs[valid] / 440.0)
    pitch_class = np.mod(np.round(midi).astype(int), 12)
    out = np.zeros((mag.shape[0], N_CHROMA))
    energy = mag[:, valid] ** 2
    for pc in range(N_CHROMA):
        out[:, pc] = energy[:, pitch_class == pc].sum(axis=1)
    return out


# ---------------------------------------------------------------------------
# Beat tracking


def _estimate_tempo(env: np.ndarray, env_fps: float) -> float:
    env = env - env.mean()
    if np.max(np.abs(env)) < 1e-9:
        raise NoTempoFound("flat onset envelope")
    ac = np.correlate(env, env, mode="full")[env.size - 1 :]
    lag_min = max(1, int(np.floor(60.0 * env_fps / TEMPO_MAX_BPM)))
    lag_max = min(env.size - 1, int(np.ceil(60.0 * env_fps / TEMPO_MIN_BPM)))
    if lag_max <= lag_min:
        raise NoTempoFound("audio too short for the tempo search range")
    window = ac[lag_min : lag_max + 1]
    if window.max() <= 0:
        raise NoTempoFound("no autocorrelation peak in tempo range")
    best_lag = lag_min + int(np.argmax(window))
    # parabolic refinement around the peak for sub-frame lag accuracy
    if lag_min < best_lag < lag_max:
        y0, y1, y2 = ac[best_lag - 1 : best_lag + 2]
        denom = y0 - 2 * y1 + y2
        if abs(denom) > 1e-12:
            best_lag = best_lag + 0.5 * (y0 - y2) / denom
    return 60.0 * env_fps / best_lag


def _track_beats(env: np.ndarray, period: float, tightness: float = 400.0) -> np.ndarray:
    """Dynamic-programming alignment of onsets to the tempo period."""
    n = env.size
    score = np.array(env, dtype=np.float64)
    backlink = np.full(n, -1, dtype=np.int64)
    lo_off = int(np.round(period * 2.0))
    hi_off = max(1, int(np.round(period * 0.5)))
    for i in range(n):
        lo = max(0, i - lo_off)
        hi = i - hi_off
        if hi < lo:
            continue
        prev = np.arange(lo, hi + 1)
        trans = -tightness * np.log(np.maximum((i - prev) / period, 1e-9)) ** 2
        cand = score[prev] + trans
        j = int(np.argmax(cand))
        if cand[j] > 0:
            score[i] += cand[j]
            backlink[i] = prev[j]
    # backtrack from the best-scoring frame near the end
    tail = np.arange(max(0, n - int(np.round(period)) - 1), n)
    i = int(tail[np.argmax(score[tail])])
    beats = [i]
    while backlink[i] >= 0:
        i = int(backlink[i])
        beats.append(i)
    return np.array(beats[::-1], dtype=np.int64)


def detect_beats(audio: AudioBuffer) -> BeatGrid:
    """Tempo and beat times from the onset envelope."""
    if audio.samples.size == 0:
        raise EmptyAudio("empty audio buffer")
    if audio.duration < 2.0:
        raise TooShort(f"beat detection needs >= 2 s, got {audio.duration:.2f} s")
    hop = max(1, int(round(audio.sample_rate / _BEAT_ENV_FPS)))
    env_fps = audio.sample_rate / hop
    env = onset_envelope(audio, hop)
    tempo = _estimate_tempo(env, env_fps)
    frames = _track_beats(env, 60.0 * env_fps / tempo)
    return BeatGrid(beat_times=frames / env_fps, tempo_bpm=tempo)


# ---------------------------------------------------------------------------
# Per-frame baseline features


def _pick_peaks(env: np.ndarray) -> np.ndarray:
    """Local maxima of the envelope above its mean."""
    if env.size < 3:
        return np.zeros(0, dtype=np.int64)
    thresh = env.mean()
    core = (env[1:-1] > env[:-2]) & (env[1:-1] >= env[2:]) & (env[1:-1] > thresh)
    return np.flatnonzero(core) + 1


def extract_baseline_features(
    audio: AudioBuffer, fps: float
) -> tuple[ConditioningSequence, BeatGrid]:
    """D=35 per-frame features plus the detected beat grid.

    Silence (or anything without a detectable tempo) yields an empty
    BeatGrid rather than an error; the beat one-hot is then all zeros.
    """
    if audio.samples.size == 0:
        raise EmptyAudio("empty audio buffer")
    hop = max(1, int(round(audio.sample_rate / fps)))
    if audio.samples.size < hop:
        raise TooShort("audio shorter than one motion frame")
    env = onset_envelope(audio, hop)
    n = env.size
    feats = np.zeros((n, FEATURE_DIM), dtype=np.float32)
    feats[:, 0] = env
    feats[:, 1 : 1 + N_MFCC] = mfcc(audio, hop)
    feats[:, 1 + N_MFCC : 1 + N_MFCC + N_CHROMA] = chroma(audio, hop)

    try:
        grid = detect_beats(audio)
    except (NoTempoFound, TooShort):
        grid = BeatGrid(beat_times=np.zeros(0), tempo_bpm=0.0)
    beat_frames = np.round(grid.beat_times * fps).astype(int)
    beat_frames = beat_frames[(beat_frames >= 0) & (beat_frames < n)]
    feats[beat_frames, BEAT_CHANNEL] = 1.0
    feats[_pick_peaks(env), PEAK_CHANNEL] = 1.0

    seq = ConditioningSequence(feats, fps=fps, source="baseline")
    return seq, grid


def beats_from_features(seq: ConditioningSequence) -> np.ndarray:
    """Beat times (seconds) recovered from a baseline feature matrix."""
    if seq.dim != FEATURE_DIM:
        raise DataError(f"beat channel only defined for D={FEATURE_DIM} baseline features")
    return np.flatnonzero(seq.features[:, BEAT_CHANNEL] > 0.5) / seq.fps


def click_track(
    bpm: float, duration: float, sample_rate: int = 22050, click_hz: float = 1500.0
) -> AudioBuffer:
    """Synthetic click track: short decaying tone bursts on every beat."""
    n = int(round(duration * sample_rate))
    out = np.zeros(n)
    t_click = np.arange(int(0.01 * sample_rate)) / sample_rate
    burst = np.sin(2 * np.pi * click_hz * t_click) * np.exp(-t_click / 0.003)
    period = 60.0 / bpm
    k = 0
    while True:
        start = int(round(k * period * sample_rate))
        if start >= n:
            break
        seg = burst[: n - start]
        out[start : start + seg.size] += seg
        k += 1
    return AudioBuffer(out * 0.9, sample_rate)
