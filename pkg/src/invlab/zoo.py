"""Frozen toy models behind a uniform adapter interface.

Four desk-scale pipelines are provided, one per direction of the
text-image / text-audio square:

* ``toy_captioner`` -- image -> token logits (teacher-forced, autoregressive)
* ``toy_generator`` -- token embeddings + pooled vector -> image
* ``toy_asr``       -- log-mel spectrogram -> token logits
* ``toy_tts``       -- token embeddings -> waveform

All weights are drawn once from a seeded generator and never updated;
an adapter's ``forward`` is a pure function of its inputs.  External
models can participate in inversion runs by constructing an
:class:`AdapterModel` directly (see ``linear_adapter`` for the minimal
example).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arrayio import read_array, write_array
from .autodiff import ShapeError, Tensor

__all__ = [
    "VocabTable",
    "AdapterModel",
    "PIPELINE_KINDS",
    "EOS_ID",
    "make_vocab",
    "save_vocab",
    "load_vocab",
    "toy_captioner",
    "toy_generator",
    "toy_asr",
    "toy_tts",
    "linear_adapter",
    "greedy_decode",
    "exemplar_images",
    "exemplar_spectrograms",
    "nearest_exemplar_mse",
    "pairwise_median_mse",
]

PIPELINE_KINDS = ("captioner", "generator", "asr", "tts")
TOKEN_OUTPUT_KINDS = ("captioner", "asr")

# id 0 terminates every decoded sequence
EOS_ID = 0

# small word list for default vocabularies; ids beyond it fall back to tok###
_WORDS = [
    "a", "the", "an", "on", "in", "under", "over", "by",
    "red", "green", "blue", "yellow", "black", "white", "grey", "brown",
    "small", "big", "round", "flat", "tall", "short", "bright", "dark",
    "apple", "pear", "plum", "grape", "lemon", "melon", "berry", "fig",
    "box", "bowl", "cup", "plate", "table", "bench", "chair", "shelf",
    "stone", "wood", "glass", "metal", "cloth", "paper", "sand", "clay",
    "bird", "cat", "dog", "fish", "tree", "leaf", "flower", "grass",
    "sun", "moon", "star", "cloud", "river", "hill", "road", "door",
]


@dataclass
class VocabTable:
    """Token strings paired with their embedding rows."""

    tokens: list
    embeddings: np.ndarray

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if len(self.tokens) != self.embeddings.shape[0]:
            raise ValueError("token count does not match embedding rows")
        if len(self.tokens) < 2:
            raise ValueError("vocabulary needs at least 2 tokens")
        if not np.all(np.isfinite(self.embeddings)):
            raise ValueError("vocabulary embeddings must be finite")
        if np.any(np.linalg.norm(self.embeddings, axis=1) == 0.0):
            raise ValueError("vocabulary embeddings must have nonzero rows")

    @property
    def size(self):
        return len(self.tokens)

    @property
    def dim(self):
        return self.embeddings.shape[1]

    def ids_for(self, words):
        """Map token strings to ids; unknown words raise KeyError."""
        index = {tok: i for i, tok in enumerate(self.tokens)}
        return [index[w] for w in words]


def make_vocab(vocab_size, embed_dim, seed):
    rng = np.random.default_rng(seed)
    tokens = ["</s>"]
    for i in range(1, vocab_size):
        tokens.append(_WORDS[i - 1] if i - 1 < len(_WORDS) else f"tok{i:03d}")
    emb = rng.standard_normal((vocab_size, embed_dim)) / np.sqrt(embed_dim)
    return VocabTable(tokens=tokens, embeddings=emb)


def save_vocab(vocab, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "tokens.txt").write_text("\n".join(vocab.tokens) + "\n")
    write_array(directory / "embeddings.f64", vocab.embeddings)


def load_vocab(directory):
    directory = Path(directory)
    tokens = (directory / "tokens.txt").read_text().splitlines()
    return VocabTable(tokens=tokens, embeddings=read_array(directory / "embeddings.f64"))


@dataclass
class AdapterModel:
    """A frozen differentiable map with declared input/output geometry.

    ``forward_fn(weights, inputs, teacher_tokens)`` must be pure: same
    inputs, same output, weights never mutated.  Token-output kinds
    (captioner, asr) are teacher-forced and return (T, vocab) logits;
    fixed-output kinds return a tensor of ``output_shape``.
    """

    name: str
    kind: str
    input_shapes: dict
    output_shape: tuple | None
    weights: dict
    forward_fn: object
    vocab: VocabTable | None = None
    config: dict = field(default_factory=dict)
    decode_max_len: int = 16

    def __post_init__(self):
        if self.kind not in PIPELINE_KINDS:
            raise ValueError(f"unknown pipeline kind {self.kind!r}")
        if self.kind in TOKEN_OUTPUT_KINDS and self.vocab is None:
            raise ValueError(f"{self.kind} adapters need a vocabulary")

    def forward(self, inputs, teacher_tokens=None):
        inputs = self._as_input_dict(inputs)
        for name, shape in self.input_shapes.items():
            if name not in inputs:
                raise ShapeError(f"{self.name}: missing input group {name!r}")
            if tuple(inputs[name].shape) != tuple(shape):
                raise ShapeError(f"{self.name}: input {name!r} has shape "
                                 f"{inputs[name].shape}, expected {shape}")
        if self.kind in TOKEN_OUTPUT_KINDS:
            if not teacher_tokens:
                raise ValueError(f"{self.name}: teacher_tokens required")
            out = self.forward_fn(self.weights, inputs, list(teacher_tokens))
        else:
            out = self.forward_fn(self.weights, inputs, None)
            if tuple(out.shape) != tuple(self.output_shape):
                raise ShapeError(f"{self.name}: forward produced {out.shape}, "
                                 f"declared {self.output_shape}")
        return out

    def _as_input_dict(self, inputs):
        if isinstance(inputs, dict):
            return {k: (v if isinstance(v, Tensor) else Tensor(v))
                    for k, v in inputs.items()}
        only = self.single_input_name()
        return {only: inputs if isinstance(inputs, Tensor) else Tensor(inputs)}

    def single_input_name(self):
        if len(self.input_shapes) != 1:
            raise ValueError(f"{self.name} has {len(self.input_shapes)} input "
                             "groups; pass a dict")
        return next(iter(self.input_shapes))

    def weight_hash(self):
        digest = hashlib.sha256()
        for name in sorted(self.weights):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(self.weights[name]).tobytes())
        if self.vocab is not None:
            digest.update(np.ascontiguousarray(self.vocab.embeddings).tobytes())
        return digest.hexdigest()


def _gaussian_matrix(rng, rows, cols):
    # fan_in scaling keeps activations O(1) at any width
    return rng.standard_normal((rows, cols)) / np.sqrt(cols)


def _prefix_rows(weights, vocab, teacher_tokens):
    """Row t = mean embedding of tokens[:t] plus a positional vector."""
    t_len = len(teacher_tokens)
    pos = weights["pos"]
    if t_len > pos.shape[0]:
        raise ValueError(f"sequence length {t_len} exceeds the positional "
                         f"table ({pos.shape[0]} rows)")
    out = pos[:t_len].copy()
    for t in range(1, t_len):
        out[t] += vocab.embeddings[teacher_tokens[:t]].mean(axis=0)
    return out


def _token_readout(weights, feat, vocab, teacher_tokens):
    """Shared autoregressive head: features + prefix summary -> (T, V) logits.

    ``feat`` is an unbounded linear projection of the input; the tanh
    mixing layer couples it with the prefix, and the scaled readout leaves
    logit margins large enough for decisive argmax alignment.
    """
    prefix = Tensor(_prefix_rows(weights, vocab, teacher_tokens).T)  # (E, T)
    mixed = (weights_t(weights, "w_mid") @ feat.reshape(-1, 1)
             + weights_t(weights, "w_prefix") @ prefix
             + weights_t(weights, "b_mid").reshape(-1, 1)).tanh()    # (H, T)
    return (weights_t(weights, "w_out") @ mixed).T + Tensor(weights["b_out"])


def weights_t(weights, name):
    return Tensor(weights[name])


def _token_model_weights(rng, d_in, hidden, vocab_size, embed_dim,
                         readout_gain, max_positions=64):
    return {
        "w_in": _gaussian_matrix(rng, hidden, d_in),
        "b_in": np.zeros(hidden),
        "w_mid": _gaussian_matrix(rng, hidden, hidden),
        "w_prefix": _gaussian_matrix(rng, hidden, embed_dim),
        "b_mid": np.zeros(hidden),
        "w_out": readout_gain * _gaussian_matrix(rng, vocab_size, hidden),
        "b_out": np.zeros(vocab_size),
        "pos": rng.standard_normal((max_positions, embed_dim)),
    }


def toy_captioner(image_size=32, hidden=64, vocab_size=64, embed_dim=48,
                  readout_gain=8.0, decode_max_len=16, seed=0):
    """Image -> caption logits at desk scale (patch-flatten + 2-layer map)."""
    rng = np.random.default_rng(seed)
    d_in = image_size * image_size
    weights = _token_model_weights(rng, d_in, hidden, vocab_size, embed_dim,
                                   readout_gain)
    vocab = make_vocab(vocab_size, embed_dim, seed=seed + 1)

    def forward(w, inputs, teacher_tokens):
        image = inputs["image"].reshape(d_in)
        feat = weights_t(w, "w_in") @ image + weights_t(w, "b_in")
        return _token_readout(w, feat, vocab, teacher_tokens)

    return AdapterModel(
        name="toy_captioner", kind="captioner",
        input_shapes={"image": (image_size, image_size)},
        output_shape=None, weights=weights, forward_fn=forward, vocab=vocab,
        decode_max_len=decode_max_len,
        config={"image_size": image_size, "hidden": hidden,
                "vocab_size": vocab_size, "embed_dim": embed_dim,
                "readout_gain": readout_gain,
                "decode_max_len": decode_max_len, "seed": seed},
    )


def toy_asr(n_mels=16, frames=100, hidden=64, vocab_size=64, embed_dim=48,
            readout_gain=8.0, decode_max_len=16, seed=0):
    """Log-mel spectrogram -> transcription logits at desk scale."""
    rng = np.random.default_rng(seed)
    d_in = n_mels * frames
    weights = _token_model_weights(rng, d_in, hidden, vocab_size, embed_dim,
                                   readout_gain)
    vocab = make_vocab(vocab_size, embed_dim, seed=seed + 1)

    def forward(w, inputs, teacher_tokens):
        spec = inputs["spectrogram"].reshape(d_in)
        feat = weights_t(w, "w_in") @ spec + weights_t(w, "b_in")
        return _token_readout(w, feat, vocab, teacher_tokens)

    return AdapterModel(
        name="toy_asr", kind="asr",
        input_shapes={"spectrogram": (n_mels, frames)},
        output_shape=None, weights=weights, forward_fn=forward, vocab=vocab,
        decode_max_len=decode_max_len,
        config={"n_mels": n_mels, "frames": frames, "hidden": hidden,
                "vocab_size": vocab_size, "embed_dim": embed_dim,
                "readout_gain": readout_gain,
                "decode_max_len": decode_max_len, "seed": seed},
    )


def toy_generator(n_tokens=4, token_dim=32, pooled_dim=16, image_size=16,
                  hidden=64, vocab_size=64, head="tanh", seed=0):
    """Token embeddings + pooled vector -> image, single application.

    The two blocks are separate named input groups ("tokens", "pooled")
    optimized jointly by one optimizer.  ``head="tanh"`` (default) bounds
    pixels to (-1, 1); ``head="linear"`` drops both nonlinearities, giving
    an exactly linear map whose inversion is a convex least-squares
    problem (and which genuinely diverges at unstable step sizes).
    """
    if head not in ("tanh", "linear"):
        raise ValueError(f"unknown generator head {head!r}")
    rng = np.random.default_rng(seed)
    d_tok = n_tokens * token_dim
    d_out = image_size * image_size
    weights = {
        "w_tok": _gaussian_matrix(rng, hidden, d_tok),
        "w_pool": _gaussian_matrix(rng, hidden, pooled_dim),
        "b_hid": np.zeros(hidden),
        "w_img": _gaussian_matrix(rng, d_out, hidden),
        "b_img": np.zeros(d_out),
    }
    vocab = make_vocab(vocab_size, token_dim, seed=seed + 1)

    def forward(w, inputs, _teacher):
        tok = inputs["tokens"].reshape(d_tok)
        hid = (weights_t(w, "w_tok") @ tok
               + weights_t(w, "w_pool") @ inputs["pooled"]
               + weights_t(w, "b_hid"))
        if head == "tanh":
            hid = hid.tanh()
            flat = (weights_t(w, "w_img") @ hid + weights_t(w, "b_img")).tanh()
        else:
            flat = weights_t(w, "w_img") @ hid + weights_t(w, "b_img")
        return flat.reshape(image_size, image_size)

    return AdapterModel(
        name="toy_generator", kind="generator",
        input_shapes={"tokens": (n_tokens, token_dim), "pooled": (pooled_dim,)},
        output_shape=(image_size, image_size),
        weights=weights, forward_fn=forward, vocab=vocab,
        config={"n_tokens": n_tokens, "token_dim": token_dim,
                "pooled_dim": pooled_dim, "image_size": image_size,
                "hidden": hidden, "vocab_size": vocab_size, "head": head,
                "seed": seed},
    )


def toy_tts(n_tokens=8, token_dim=64, n_samples=4096, sample_rate=8000,
            hidden=32, vocab_size=64, seed=0):
    """Token embeddings -> waveform; amplitude bounded to (-0.5, 0.5)."""
    rng = np.random.default_rng(seed)
    d_tok = n_tokens * token_dim
    weights = {
        "w_tok": _gaussian_matrix(rng, hidden, d_tok),
        "b_hid": np.zeros(hidden),
        "w_wave": _gaussian_matrix(rng, n_samples, hidden),
        "b_wave": np.zeros(n_samples),
    }
    vocab = make_vocab(vocab_size, token_dim, seed=seed + 1)

    def forward(w, inputs, _teacher):
        tok = inputs["tokens"].reshape(d_tok)
        hid = (weights_t(w, "w_tok") @ tok + weights_t(w, "b_hid")).tanh()
        return (weights_t(w, "w_wave") @ hid + weights_t(w, "b_wave")).tanh() * 0.5

    return AdapterModel(
        name="toy_tts", kind="tts",
        input_shapes={"tokens": (n_tokens, token_dim)},
        output_shape=(n_samples,),
        weights=weights, forward_fn=forward, vocab=vocab,
        config={"n_tokens": n_tokens, "token_dim": token_dim,
                "n_samples": n_samples, "sample_rate": sample_rate,
                "hidden": hidden, "vocab_size": vocab_size, "seed": seed},
    )


def linear_adapter(matrix, name="linear"):
    """Wrap a fixed matrix A as an adapter computing f(x) = A x.

    The minimal example of plugging an external model into the engine.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    k, d = matrix.shape

    def forward(w, inputs, _teacher):
        return weights_t(w, "a") @ inputs["input"]

    return AdapterModel(
        name=name, kind="generator",
        input_shapes={"input": (d,)}, output_shape=(k,),
        weights={"a": matrix}, forward_fn=forward, vocab=None,
        config={"rows": k, "cols": d},
    )


def greedy_decode(model, inputs, max_len=None):
    """Argmax decoding until EOS (id 0) or the length bound.

    Position t is conditioned on the tokens already emitted; ties go to
    the lower id.  Returns (ids, strings), EOS excluded.
    """
    if model.kind not in TOKEN_OUTPUT_KINDS:
        raise ValueError(f"{model.name} does not emit tokens")
    limit = model.decode_max_len if max_len is None else max_len
    if isinstance(inputs, dict):
        frozen = {k: Tensor(v.data if isinstance(v, Tensor) else v)
                  for k, v in inputs.items()}
    else:
        frozen = Tensor(inputs.data if isinstance(inputs, Tensor) else inputs)
    ids = []
    for _ in range(limit):
        logits = model.forward(frozen, teacher_tokens=ids + [EOS_ID])
        next_id = int(np.argmax(logits.data[-1]))
        if next_id == EOS_ID:
            break
        ids.append(next_id)
    return ids, [model.vocab.tokens[i] for i in ids]


# ---------------------------------------------------------------------------
# toy corpus of "natural" exemplars
# ---------------------------------------------------------------------------

def exemplar_images(n, image_size=32, seed=0):
    """Smooth disk-on-gradient images: a coherent class of natural exemplars.

    Members differ only by small jitter in disk position, radius and
    contrast, so within-class distances are small -- the backdrop against
    which optimized inversion inputs register as far-from-natural.
    """
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:image_size, 0:image_size]
    base = ys / (image_size - 1) * 0.5
    out = np.empty((n, image_size, image_size))
    for i in range(n):
        cx = image_size / 2 + rng.uniform(-2, 2)
        cy = image_size / 2 + rng.uniform(-2, 2)
        radius = image_size / 4 + rng.uniform(-1.5, 1.5)
        disk = ((xs - cx) ** 2 + (ys - cy) ** 2) <= radius ** 2
        out[i] = base + disk * (0.45 + rng.uniform(-0.05, 0.05))
    return out


def exemplar_spectrograms(n, n_mels=16, frames=100, seed=0):
    """Smooth harmonic-ribbon spectrograms, the audio analogue."""
    rng = np.random.default_rng(seed)
    mel_axis = np.linspace(0.0, 1.0, n_mels)[:, None]
    time_axis = np.linspace(0.0, 1.0, frames)[None, :]
    out = np.empty((n, n_mels, frames))
    for i in range(n):
        center = 0.4 + rng.uniform(-0.08, 0.08)
        width = 0.18 + rng.uniform(-0.03, 0.03)
        wobble = 0.05 * np.sin(2 * np.pi * (1.0 + rng.uniform(-0.2, 0.2)) * time_axis)
        ribbon = np.exp(-((mel_axis - center - wobble) / width) ** 2)
        envelope = 0.6 + 0.4 * np.sin(np.pi * time_axis)
        out[i] = ribbon * envelope
    return out


def nearest_exemplar_mse(x, corpus):
    """Distance from x to its closest corpus member, in mean squared error."""
    x = np.asarray(x, dtype=np.float64)
    return min(float(np.mean((x - member) ** 2)) for member in corpus)


def pairwise_median_mse(corpus):
    """Median within-corpus distance, the natural-variation yardstick."""
    dists = []
    n = len(corpus)
    for i in range(n):
        for j in range(i + 1, n):
            dists.append(float(np.mean((corpus[i] - corpus[j]) ** 2)))
    return float(np.median(dists))
