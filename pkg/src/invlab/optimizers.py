"""Input-space update rules: plain gradient descent, Adam, and AdamW.

The optimized variables are the *inputs* of a frozen model, held as
``requires_grad`` leaf tensors.  All three rules are stateless functions
over an explicit :class:`OptimizerState`; distinct (params, state) pairs
can safely run in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import NonFiniteError

__all__ = [
    "OptimizerConfig",
    "OptimizerState",
    "gd_step",
    "adam_step",
    "adamw_step",
    "apply_step",
    "clip_grad_norm",
]

KINDS = ("gd", "adam", "adamw")


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    max_grad_norm: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if not self.learning_rate > 0.0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValueError("betas must lie in [0, 1)")
        if not self.epsilon > 0.0:
            raise ValueError("epsilon must be positive")
        if self.weight_decay < 0.0:
            raise ValueError("weight_decay must be nonnegative")
        if self.max_grad_norm is not None and not self.max_grad_norm > 0.0:
            raise ValueError("max_grad_norm must be positive when set")


@dataclass
class OptimizerState:
    """Step counter plus per-parameter first/second moment buffers."""

    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params):
        state = cls()
        for name, p in params.items():
            state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        return state

    def copy(self):
        dup = OptimizerState(step=self.step)
        dup.m = {k: a.copy() for k, a in self.m.items()}
        dup.v = {k: a.copy() for k, a in self.v.items()}
        return dup


def _gather_grads(params):
    grads = {}
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteError(f"parameter {name!r} has a non-finite gradient")
        if p.grad.shape != p.data.shape:
            raise ValueError(f"parameter {name!r}: gradient shape mismatch")
        grads[name] = p.grad
    return grads


def clip_grad_norm(grads, max_norm):
    """Scale the whole gradient set so its global L2 norm is <= max_norm."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        grads = {name: g * scale for name, g in grads.items()}
    return grads


def gd_step(params, config):
    """x_i <- x_i - lr * dJ/dx_i, componentwise."""
    grads = _gather_grads(params)
    if config.max_grad_norm is not None:
        grads = clip_grad_norm(grads, config.max_grad_norm)
    for name, p in params.items():
        p.data = p.data - config.learning_rate * grads[name]


def _moment_update(params, config, state):
    grads = _gather_grads(params)
    if config.max_grad_norm is not None:
        grads = clip_grad_norm(grads, config.max_grad_norm)
    for name, p in params.items():
        if name not in state.m or state.m[name].shape != p.data.shape:
            raise ValueError(f"optimizer state for {name!r} is missing or "
                             "shaped wrong; initialize with "
                             "OptimizerState.for_params")
    state.step += 1
    t = state.step
    corr1 = 1.0 - config.beta1 ** t
    corr2 = 1.0 - config.beta2 ** t
    adaptive = {}
    for name in params:
        g = grads[name]
        state.m[name] = config.beta1 * state.m[name] + (1.0 - config.beta1) * g
        state.v[name] = config.beta2 * state.v[name] + (1.0 - config.beta2) * (g * g)
        m_hat = state.m[name] / corr1
        v_hat = state.v[name] / corr2
        adaptive[name] = m_hat / (np.sqrt(v_hat) + config.epsilon)
    return adaptive


def adam_step(params, config, state):
    """Bias-corrected first/second-moment adaptive update."""
    adaptive = _moment_update(params, config, state)
    for name, p in params.items():
        p.data = p.data - config.learning_rate * adaptive[name]
    return state


def adamw_step(params, config, state):
    """Adam plus decoupled weight decay applied after the adaptive term."""
    adaptive = _moment_update(params, config, state)
    for name, p in params.items():
        p.data = p.data - config.learning_rate * adaptive[name] \
                        - config.learning_rate * config.weight_decay * p.data
    return state


def apply_step(params, config, state):
    """Dispatch one update of the configured kind; advances the counter."""
    if config.kind == "gd":
        gd_step(params, config)
        state.step += 1
    elif config.kind == "adam":
        adam_step(params, config, state)
    else:
        adamw_step(params, config, state)
    return state
