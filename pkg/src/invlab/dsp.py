"""Audio front/back ends: STFT, mel filterbank, log-mel, Griffin-Lim, WAV I/O.

The analysis chain (framing, windowing, DFT magnitude, mel projection,
log compression) is built from autodiff primitives so gradients flow from
a spectrogram loss all the way back to the waveform.  Reconstruction
(Griffin-Lim, inverse STFT) is plain numpy: it is post-hoc and never
differentiated through.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
import scipy.io.wavfile
import scipy.optimize

from .autodiff import Tensor, clamp_min, hypot, pad1d

__all__ = [
    "MelConfig",
    "Spectrogram",
    "whisper_mel_config",
    "hz_to_mel",
    "mel_to_hz",
    "frame_count",
    "stft_mag",
    "mel_filterbank",
    "mel_filter_centers",
    "log_mel",
    "mel_to_linear",
    "griffin_lim",
    "spectral_convergence",
    "wav_read",
    "wav_write",
]


@dataclass(frozen=True)
class MelConfig:
    """Geometry of the mel analysis chain.

    ``fmax=None`` resolves to the Nyquist frequency.  The Whisper-style
    preset (16 kHz, n_fft=400, hop=160, 128 mels) turns 30 s of audio into
    exactly 3000 log-mel frames.
    """

    sample_rate: int
    n_fft: int
    hop: int
    n_mels: int
    fmin: float = 0.0
    fmax: float | None = None
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.fmax is None:
            object.__setattr__(self, "fmax", self.sample_rate / 2.0)
        if self.sample_rate <= 0 or self.n_fft < 2 or self.hop <= 0:
            raise ValueError("sample_rate and hop must be positive, n_fft >= 2")
        if self.hop > self.n_fft:
            raise ValueError("hop must not exceed n_fft")
        if self.n_mels < 1:
            raise ValueError("n_mels must be at least 1")
        if not 0.0 <= self.fmin < self.fmax <= self.sample_rate / 2.0:
            raise ValueError("need 0 <= fmin < fmax <= sample_rate/2")
        if self.log_floor <= 0.0:
            raise ValueError("log_floor must be positive")

    @property
    def n_bins(self):
        return self.n_fft // 2 + 1


def whisper_mel_config():
    return MelConfig(sample_rate=16000, n_fft=400, hop=160, n_mels=128,
                     fmin=0.0, fmax=8000.0)


@dataclass
class Spectrogram:
    """Spectrogram values plus the geometry that produced them."""

    values: Tensor
    config: MelConfig
    domain: str  # "log_mel" or "linear"

    @property
    def array(self):
        return self.values.data if isinstance(self.values, Tensor) else np.asarray(self.values)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def _hann(n_fft):
    # periodic Hann, the FFT-analysis variant
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n_fft) / n_fft)


@functools.lru_cache(maxsize=8)
def _dft_mats(n_fft):
    bins = n_fft // 2 + 1
    k = np.arange(bins)[:, None]
    n = np.arange(n_fft)[None, :]
    angle = 2.0 * np.pi * k * n / n_fft
    return np.cos(angle), -np.sin(angle)


def frame_count(n_samples, cfg):
    if n_samples < cfg.n_fft:
        raise ValueError(f"wave of {n_samples} samples is shorter than one "
                         f"{cfg.n_fft}-sample analysis window")
    return (n_samples - cfg.n_fft) // cfg.hop + 1


def _frame_indices(n_samples, cfg):
    frames = frame_count(n_samples, cfg)
    return (np.arange(frames)[:, None] * cfg.hop + np.arange(cfg.n_fft)[None, :],
            frames)


def stft_mag(wave, cfg):
    """Hann-windowed magnitude spectrogram, shape (n_fft//2+1, frames).

    No centering or padding: frames = (N - n_fft)//hop + 1.  Differentiable.
    """
    wave = wave if isinstance(wave, Tensor) else Tensor(wave)
    if wave.ndim != 1:
        raise ValueError("stft_mag expects a rank-1 waveform")
    idx, _ = _frame_indices(wave.shape[0], cfg)
    cos_mat, sin_mat = _dft_mats(cfg.n_fft)
    windowed = wave.take(idx) * _hann(cfg.n_fft)       # (frames, n_fft)
    re = windowed @ Tensor(cos_mat.T)                   # (frames, bins)
    im = windowed @ Tensor(sin_mat.T)
    return hypot(re, im).T


def mel_filter_centers(cfg):
    """Hz center frequencies of the triangular filters, equally mel-spaced."""
    mel_pts = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    return mel_to_hz(mel_pts)[1:-1]


def _triangle_band_average(lo, mid, hi, a, b):
    """Mean of the (lo, mid, hi) unit triangle over the interval [a, b].

    The integrand is piecewise linear, so trapezoids between breakpoints
    are exact.
    """
    left, right = max(a, lo), min(b, hi)
    if right <= left:
        return 0.0

    def tri(f):
        if f <= mid:
            return (f - lo) / (mid - lo)
        return (hi - f) / (hi - mid)

    pts = [left, right]
    if left < mid < right:
        pts.insert(1, mid)
    area = 0.0
    for x0, x1 in zip(pts[:-1], pts[1:]):
        area += 0.5 * (tri(x0) + tri(x1)) * (x1 - x0)
    return area / (b - a)


@functools.lru_cache(maxsize=16)
def mel_filterbank(cfg):
    """Triangular filters with centers equally spaced on the mel scale.

    Each weight is the triangle's average over the FFT bin's frequency
    interval rather than a point sample at the bin center, so narrow
    low-frequency filters still see the bins they overlap (the Whisper
    preset packs 128 filters onto 201 bins).  Returns a constant,
    read-only (n_mels, n_fft//2+1) matrix.
    """
    bin_width = cfg.sample_rate / 2.0 / (cfg.n_bins - 1)
    fft_freqs = np.linspace(0.0, cfg.sample_rate / 2.0, cfg.n_bins)
    mel_pts = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    if np.any(np.diff(hz_pts) <= 0.0):
        raise ValueError("n_mels too large for the FFT resolution: empty mel filter")
    weights = np.zeros((cfg.n_mels, cfg.n_bins))
    for i in range(cfg.n_mels):
        lo, mid, hi = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        for k, center in enumerate(fft_freqs):
            a, b = center - bin_width / 2.0, center + bin_width / 2.0
            if b <= lo or a >= hi:
                continue
            weights[i, k] = _triangle_band_average(lo, mid, hi, a, b)
    if np.any(weights.sum(axis=1) == 0.0):
        raise ValueError("n_mels too large for the FFT resolution: empty mel filter")
    weights.flags.writeable = False
    return weights


def log_mel(wave, cfg):
    """log10 mel-magnitude spectrogram, floored at cfg.log_floor.

    The waveform tail is zero-padded by (n_fft - hop) samples so the frame
    count is floor(N / hop); the Whisper preset maps 30 s to exactly 3000
    frames.  Differentiable end to end.
    """
    wave = wave if isinstance(wave, Tensor) else Tensor(wave)
    if wave.ndim != 1:
        raise ValueError("log_mel expects a rank-1 waveform")
    if wave.shape[0] < cfg.hop:
        raise ValueError("wave shorter than one hop")
    padded = pad1d(wave, right=cfg.n_fft - cfg.hop)
    mag = stft_mag(padded, cfg)                           # (bins, frames)
    mel = Tensor(mel_filterbank(cfg)) @ mag               # (n_mels, frames)
    values = clamp_min(mel, cfg.log_floor).log10()
    return Spectrogram(values=values, config=cfg, domain="log_mel")


# ---------------------------------------------------------------------------
# reconstruction (numpy only)
# ---------------------------------------------------------------------------

def _stft_np(wave, cfg):
    idx, _ = _frame_indices(len(wave), cfg)
    frames = wave[idx] * _hann(cfg.n_fft)
    return np.fft.rfft(frames, axis=1).T                  # (bins, frames)


def _istft_np(spec, cfg):
    """Weighted overlap-add inverse of the non-centered STFT."""
    bins, frames = spec.shape
    win = _hann(cfg.n_fft)
    time_frames = np.fft.irfft(spec.T, n=cfg.n_fft, axis=1)
    length = (frames - 1) * cfg.hop + cfg.n_fft
    acc = np.zeros(length)
    weight = np.zeros(length)
    for t in range(frames):
        lo = t * cfg.hop
        acc[lo:lo + cfg.n_fft] += win * time_frames[t]
        weight[lo:lo + cfg.n_fft] += win * win
    return acc / np.maximum(weight, 1e-12)


def mel_to_linear(mel_mag, cfg):
    """Lift mel-domain magnitudes back to linear bins by nonnegative LS."""
    filters = mel_filterbank(cfg)
    mel_mag = np.asarray(mel_mag, dtype=np.float64)
    out = np.zeros((cfg.n_bins, mel_mag.shape[1]))
    for t in range(mel_mag.shape[1]):
        out[:, t], _ = scipy.optimize.nnls(filters, mel_mag[:, t])
    return out


def griffin_lim(spec, cfg=None, iterations=32, phase_seed=None):
    """Phase retrieval by alternating STFT projections.

    Accepts a :class:`Spectrogram` (log-mel spectra are lifted to linear
    magnitudes first) or a raw linear-magnitude array with an explicit
    config.  The default initial phase advances each bin at its center
    frequency per hop, which starts tonal content nearly consistent;
    ``phase_seed`` selects seeded random phases instead.  Either way the
    reconstruction is deterministic.  Output length is
    (frames-1)*hop + n_fft.
    """
    if iterations < 1:
        raise ValueError("iterations must be at least 1")
    if isinstance(spec, Spectrogram):
        cfg = spec.config
        values = spec.array
        if spec.domain == "log_mel":
            mag = mel_to_linear(10.0 ** values, cfg)
        else:
            mag = np.asarray(values, dtype=np.float64)
    else:
        if cfg is None:
            raise ValueError("raw magnitude input requires a config")
        mag = np.asarray(spec, dtype=np.float64)
    if mag.ndim != 2 or mag.shape[0] != cfg.n_bins:
        raise ValueError(f"magnitude shape {mag.shape} does not match "
                         f"{cfg.n_bins} FFT bins")
    frames = mag.shape[1]
    length = (frames - 1) * cfg.hop + cfg.n_fft
    if not np.any(mag):
        return np.zeros(length)
    if phase_seed is None:
        k = np.arange(cfg.n_bins)[:, None]
        t = np.arange(frames)[None, :]
        phase = 2.0 * np.pi * k * cfg.hop * t / cfg.n_fft
    else:
        rng = np.random.default_rng(phase_seed)
        phase = rng.uniform(-np.pi, np.pi, size=mag.shape)
    for _ in range(iterations):
        wave = _istft_np(mag * np.exp(1j * phase), cfg)
        phase = np.angle(_stft_np(wave, cfg))
    return _istft_np(mag * np.exp(1j * phase), cfg)


def spectral_convergence(target_mag, wave, cfg):
    """||  |STFT(wave)| - M ||_F / || M ||_F, the Griffin-Lim fidelity score."""
    target_mag = np.asarray(target_mag, dtype=np.float64)
    rebuilt = np.abs(_stft_np(np.asarray(wave, dtype=np.float64), cfg))
    if rebuilt.shape != target_mag.shape:
        raise ValueError(f"geometry mismatch: {rebuilt.shape} vs {target_mag.shape}")
    denom = np.linalg.norm(target_mag)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(rebuilt - target_mag) / denom)


# ---------------------------------------------------------------------------
# WAV I/O (PCM16 mono)
# ---------------------------------------------------------------------------

def wav_write(path, wave, sample_rate):
    """Write a [-1, 1] float waveform as PCM16 mono."""
    wave = np.asarray(wave, dtype=np.float64)
    if wave.ndim != 1:
        raise ValueError("wav_write expects a mono rank-1 waveform")
    pcm = np.clip(np.round(wave * 32768.0), -32768, 32767).astype(np.int16)
    scipy.io.wavfile.write(path, int(sample_rate), pcm)


def wav_read(path):
    """Read a PCM16 mono WAV; returns (float64 waveform in [-1, 1), rate)."""
    rate, data = scipy.io.wavfile.read(path)
    if data.dtype != np.int16:
        raise ValueError(f"unsupported encoding {data.dtype}; PCM16 required")
    if data.ndim != 1:
        raise ValueError("unsupported channel layout; mono required")
    return data.astype(np.float64) / 32768.0, int(rate)
