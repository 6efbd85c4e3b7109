"""Consistency metrics for inversion runs.

A clamped-cosine pair score (CLIPScore-style), a greedy-matching
embedding F1 (BERTScore-style), and a pluggable perceptual-audio scorer
slot shipped with a log-spectral-distance proxy.  A wrapper around a true
ITU-style PESQ implementation can register itself as another
:class:`AudioQualityScorer`.
"""

from __future__ import annotations

import csv

import numpy as np

from . import dsp
from .interpret import cosine

__all__ = [
    "clip_style_score",
    "bert_style_f1",
    "log_spectral_distance",
    "AudioQualityScorer",
    "LogSpectralDistanceScorer",
    "register_audio_scorer",
    "get_audio_scorer",
    "write_metrics_csv",
]


def clip_style_score(emb_a, emb_b, scale=2.5):
    """scale * max(cosine, 0): nonnegative, capped at ``scale``."""
    return scale * max(cosine(emb_a, emb_b), 0.0)


def _cosine_matrix(a, b):
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise ValueError("zero-norm embedding row")
    return (a / na[:, None]) @ (b / nb[:, None]).T


def bert_style_f1(cand_emb, ref_emb):
    """Greedy-matching precision/recall/F1 over embedding rows.

    Precision: mean over candidate rows of the best cosine against any
    reference row; recall is the symmetric quantity; F1 their harmonic
    mean.  Cosines are signed, so the harmonic mean is only meaningful
    when both sides are positive; otherwise F1 is 0 (which covers the
    p + r == 0 case).  No idf weighting.
    """
    cand_emb = np.atleast_2d(np.asarray(cand_emb, dtype=np.float64))
    ref_emb = np.atleast_2d(np.asarray(ref_emb, dtype=np.float64))
    if cand_emb.shape[0] < 1 or ref_emb.shape[0] < 1:
        raise ValueError("empty embedding sequence")
    sims = _cosine_matrix(cand_emb, ref_emb)
    precision = float(np.mean(np.max(sims, axis=1)))
    recall = float(np.mean(np.max(sims, axis=0)))
    if precision <= 0.0 or recall <= 0.0:
        return precision, recall, 0.0
    return precision, recall, 2.0 * precision * recall / (precision + recall)


def log_spectral_distance(ref_wave, deg_wave, cfg):
    """RMS difference of the two dB-scale magnitude spectra.

    Zero exactly when the (floored) magnitude spectra coincide; symmetric
    in its arguments.  Lower is better.
    """
    ref_wave = np.asarray(ref_wave, dtype=np.float64)
    deg_wave = np.asarray(deg_wave, dtype=np.float64)
    if ref_wave.shape != deg_wave.shape:
        raise ValueError("waveform length mismatch")
    ref_db = 20.0 * np.log10(np.maximum(np.abs(dsp._stft_np(ref_wave, cfg)), cfg.log_floor))
    deg_db = 20.0 * np.log10(np.maximum(np.abs(dsp._stft_np(deg_wave, cfg)), cfg.log_floor))
    return float(np.sqrt(np.mean((ref_db - deg_db) ** 2)))


class AudioQualityScorer:
    """Interface of the perceptual-audio slot: deterministic
    score(reference, degraded, sample_rate) -> float."""

    name = "abstract"

    def score(self, reference_wave, degraded_wave, sample_rate):
        raise NotImplementedError


class LogSpectralDistanceScorer(AudioQualityScorer):
    """Shipped stand-in for the perceptual slot; lower scores are better."""

    name = "lsd"

    def __init__(self, n_fft=256, hop=64, log_floor=1e-10):
        self.n_fft = n_fft
        self.hop = hop
        self.log_floor = log_floor

    def score(self, reference_wave, degraded_wave, sample_rate):
        cfg = dsp.MelConfig(sample_rate=int(sample_rate), n_fft=self.n_fft,
                            hop=self.hop, n_mels=1, log_floor=self.log_floor)
        return log_spectral_distance(reference_wave, degraded_wave, cfg)


_SCORERS = {}


def register_audio_scorer(scorer):
    _SCORERS[scorer.name] = scorer


def get_audio_scorer(name):
    try:
        return _SCORERS[name]
    except KeyError:
        raise KeyError(f"no audio scorer named {name!r}; "
                       f"registered: {sorted(_SCORERS)}") from None


register_audio_scorer(LogSpectralDistanceScorer())


def write_metrics_csv(path, rows):
    """Emit (step, metric, category, value) rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "metric", "category", "value"])
        for step, metric, category, value in rows:
            writer.writerow([step, metric, category, repr(float(value))])
