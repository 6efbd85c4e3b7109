"""Loss functions for the inversion objective L(f(x), y).

Three families cover the four pipelines: teacher-forced autoregressive
cross-entropy for token outputs, mean-squared error for fixed-size
outputs, and a log-mel spectrogram loss for waveforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dsp
from .autodiff import ShapeError, Tensor

__all__ = ["LossSpec", "xent_autoregressive", "mse", "mel_spec_loss"]

KINDS = ("xent_autoregressive", "mse", "mel_spec")


@dataclass
class LossSpec:
    kind: str
    reduction: str = "mean"
    mel_config: dsp.MelConfig | None = None
    mel_norm: str = "l1"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.reduction not in ("mean", "sum"):
            raise ValueError("reduction must be 'mean' or 'sum'")
        if (self.kind == "mel_spec") != (self.mel_config is not None):
            raise ValueError("mel_config must be present exactly when kind='mel_spec'")
        if self.mel_norm not in ("l1", "l2"):
            raise ValueError("mel_norm must be 'l1' or 'l2'")


def _reduce(t, reduction):
    return t.mean() if reduction == "mean" else t.sum()


def xent_autoregressive(logits, target_tokens, reduction="mean"):
    """Cross-entropy of teacher-forced logits against the target ids.

    ``logits`` has one row per position (T, V); row t must have been
    produced conditioned on the target prefix tokens[:t].  Returns
    -log softmax(logits[t])[target[t]] reduced over positions.
    """
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    if logits.ndim != 2:
        raise ShapeError("xent_autoregressive expects (positions, vocab) logits")
    ids = np.asarray(list(target_tokens), dtype=np.int64)
    positions, vocab = logits.shape
    if ids.size == 0:
        raise ValueError("empty target sequence")
    if ids.size != positions:
        raise ShapeError(f"{positions} logit rows but {ids.size} target tokens")
    if np.any(ids < 0) or np.any(ids >= vocab):
        raise ValueError(f"target id out of vocabulary range [0, {vocab})")
    picked = logits.log_softmax(axis=-1).take(np.arange(positions) * vocab + ids)
    return -_reduce(picked, reduction)


def mse(pred, target, reduction="mean"):
    """Mean (or sum) of squared differences; shapes must match exactly."""
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return _reduce(diff * diff, reduction)


def mel_spec_loss(pred_wave, target_wave, cfg, norm="l1", reduction="mean"):
    """Distance between the log-mel spectrograms of two waveforms.

    Differentiable through the whole analysis chain.  ``norm`` selects mean
    absolute ("l1", default) or mean squared ("l2") log-mel difference.
    """
    pred_wave = pred_wave if isinstance(pred_wave, Tensor) else Tensor(pred_wave)
    target_wave = target_wave if isinstance(target_wave, Tensor) else Tensor(target_wave)
    if pred_wave.shape != target_wave.shape:
        raise ShapeError(f"mel_spec_loss: length mismatch {pred_wave.shape} "
                         f"vs {target_wave.shape}")
    diff = dsp.log_mel(pred_wave, cfg).values - dsp.log_mel(target_wave, cfg).values
    if norm == "l1":
        return _reduce(diff.abs(), reduction)
    if norm == "l2":
        return _reduce(diff * diff, reduction)
    raise ValueError("norm must be 'l1' or 'l2'")
