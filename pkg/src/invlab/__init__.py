"""invlab: a desk-scale laboratory for inverting frozen differentiable
models by gradient descent on their inputs.

Given a frozen model f and a target output y, the engine optimizes the
input x to minimize L(f(x), y), checkpoints the trajectory, and ships the
decoding and scoring tools needed to interpret what the optimized inputs
actually are.
"""

from .autodiff import (DomainError, NonFiniteError, ShapeError, Tensor,
                       backward, finite_difference, set_debug_checks)
from .dsp import (MelConfig, Spectrogram, griffin_lim, log_mel,
                  mel_filterbank, spectral_convergence, stft_mag, wav_read,
                  wav_write, whisper_mel_config)
from .engine import (Initialization, InversionProblem, RunRecord, resume,
                     run_inversion)
from .interpret import cosine, nearest_tokens, project_trajectory
from .losses import LossSpec, mel_spec_loss, mse, xent_autoregressive
from .metrics import (AudioQualityScorer, LogSpectralDistanceScorer,
                      bert_style_f1, clip_style_score, log_spectral_distance,
                      register_audio_scorer)
from .optimizers import (OptimizerConfig, OptimizerState, adam_step,
                         adamw_step, gd_step)
from .zoo import (AdapterModel, VocabTable, greedy_decode, linear_adapter,
                  toy_asr, toy_captioner, toy_generator, toy_tts)

__version__ = "0.1.0"
