"""Reproducible experiment driver.

Declarative flat-text run configs, the four pipeline presets, artifact
emission (decoded text, images, spectrograms, audio, token tables, CSVs),
and a run registry.  Everything a run writes is inspectable without the
tool: PNG, WAV, CSV, flat text, and float64 blobs.
"""

from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np

from . import dsp, engine, interpret, metrics
from .arrayio import read_array, write_array
from .losses import LossSpec
from .optimizers import OptimizerConfig
from .zoo import TOKEN_OUTPUT_KINDS, toy_asr, toy_captioner, toy_generator, toy_tts

__all__ = [
    "ConfigError",
    "parse_config_text",
    "load_config",
    "build_model",
    "build_problem",
    "run_from_config",
    "emit_artifacts",
    "load_run",
    "compute_run_metrics",
    "append_index",
    "rebuild_index",
    "read_index",
    "output_root",
]

ENV_OUT_ROOT = "INVLAB_OUT_ROOT"

_COMMON_KEYS = {
    "pipeline", "seed", "model_seed", "optimizer", "learning_rate",
    "beta1", "beta2", "epsilon", "weight_decay", "grad_clip",
    "steps", "schedule", "init", "base_path", "category", "out",
}

_PIPELINE_KEYS = {
    "captioner": {"image_size", "hidden", "vocab_size", "embed_dim",
                  "readout_gain", "decode_max_len", "target"},
    "asr": {"n_mels", "frames", "hidden", "vocab_size", "embed_dim",
            "readout_gain", "decode_max_len", "target",
            "mel_sample_rate", "mel_n_fft", "mel_hop"},
    "generator": {"n_tokens", "token_dim", "pooled_dim", "image_size",
                  "hidden", "vocab_size", "head", "target_path"},
    "tts": {"n_tokens", "token_dim", "n_samples", "sample_rate", "hidden",
            "vocab_size", "target_path",
            "mel_n_fft", "mel_hop", "mel_bins", "mel_norm"},
}

# learning-rate defaults: dense image-like inputs take larger steps than
# embedding inputs
_DEFAULT_LR = {"captioner": 0.1, "asr": 0.1, "generator": 0.01, "tts": 0.01}

_DEFAULT_SCHEDULE = {
    "captioner": (0, 10, 100, 1000, 10000),
    "generator": (0, 25, 50, 75, 100, 125, 150, 175, 200),
    "asr": (0, 750, 1500, 2250, 3000),
    "tts": (0, 250, 500, 750, 1000),
}


class ConfigError(ValueError):
    """The run configuration is malformed or inconsistent."""


def parse_config_text(text):
    """Parse flat ``key = value`` lines; '#' starts a comment."""
    cfg = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in cfg:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        cfg[key] = value.strip()
    return cfg


def load_config(path):
    return parse_config_text(Path(path).read_text())


def _known_keys(pipeline):
    return _COMMON_KEYS | _PIPELINE_KEYS[pipeline]


def _get_int(cfg, key, default):
    try:
        return int(cfg.get(key, default))
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {cfg[key]!r}") from None


def _get_float(cfg, key, default):
    try:
        return float(cfg.get(key, default))
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {cfg[key]!r}") from None


def validate_keys(cfg):
    pipeline = cfg.get("pipeline")
    if pipeline not in _PIPELINE_KEYS:
        raise ConfigError(f"pipeline must be one of {sorted(_PIPELINE_KEYS)}, "
                          f"got {pipeline!r}")
    unknown = set(cfg) - _known_keys(pipeline)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return pipeline


def build_model(cfg):
    """Construct the frozen toy adapter the config describes."""
    pipeline = validate_keys(cfg)
    model_seed = _get_int(cfg, "model_seed", 0)
    if pipeline == "captioner":
        return toy_captioner(
            image_size=_get_int(cfg, "image_size", 32),
            hidden=_get_int(cfg, "hidden", 64),
            vocab_size=_get_int(cfg, "vocab_size", 64),
            embed_dim=_get_int(cfg, "embed_dim", 48),
            readout_gain=_get_float(cfg, "readout_gain", 8.0),
            decode_max_len=_get_int(cfg, "decode_max_len", 16),
            seed=model_seed)
    if pipeline == "asr":
        return toy_asr(
            n_mels=_get_int(cfg, "n_mels", 16),
            frames=_get_int(cfg, "frames", 100),
            hidden=_get_int(cfg, "hidden", 64),
            vocab_size=_get_int(cfg, "vocab_size", 64),
            embed_dim=_get_int(cfg, "embed_dim", 48),
            readout_gain=_get_float(cfg, "readout_gain", 8.0),
            decode_max_len=_get_int(cfg, "decode_max_len", 16),
            seed=model_seed)
    if pipeline == "generator":
        head = cfg.get("head", "tanh")
        if head not in ("tanh", "linear"):
            raise ConfigError(f"head must be 'tanh' or 'linear', got {head!r}")
        return toy_generator(
            n_tokens=_get_int(cfg, "n_tokens", 4),
            token_dim=_get_int(cfg, "token_dim", 32),
            pooled_dim=_get_int(cfg, "pooled_dim", 16),
            image_size=_get_int(cfg, "image_size", 16),
            hidden=_get_int(cfg, "hidden", 64),
            vocab_size=_get_int(cfg, "vocab_size", 64),
            head=head,
            seed=model_seed)
    return toy_tts(
        n_tokens=_get_int(cfg, "n_tokens", 8),
        token_dim=_get_int(cfg, "token_dim", 64),
        n_samples=_get_int(cfg, "n_samples", 4096),
        sample_rate=_get_int(cfg, "sample_rate", 8000),
        hidden=_get_int(cfg, "hidden", 32),
        vocab_size=_get_int(cfg, "vocab_size", 64),
        seed=model_seed)


def _load_target_array(path, expected_shape):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"target file {path} does not exist")
    if path.suffix == ".f64":
        arr = read_array(path)
    elif path.suffix == ".wav":
        arr, _rate = dsp.wav_read(path)
    elif path.suffix == ".png":
        import matplotlib.image
        arr = np.asarray(matplotlib.image.imread(path), dtype=np.float64)
        if arr.ndim == 3:
            arr = arr[..., :3].mean(axis=2)
    else:
        raise ConfigError(f"unsupported target format {path.suffix!r}")
    if tuple(arr.shape) != tuple(expected_shape):
        raise ConfigError(f"target shape {arr.shape} does not match the "
                          f"model output {expected_shape}")
    return arr


def mel_config_for(cfg, pipeline, model):
    """The mel geometry used by the tts loss and asr reconstruction."""
    if pipeline == "tts":
        return dsp.MelConfig(
            sample_rate=model.config["sample_rate"],
            n_fft=_get_int(cfg, "mel_n_fft", 256),
            hop=_get_int(cfg, "mel_hop", 64),
            n_mels=_get_int(cfg, "mel_bins", 16))
    # asr inputs are mel-domain by construction; geometry only matters for
    # waveform reconstruction
    return dsp.MelConfig(
        sample_rate=_get_int(cfg, "mel_sample_rate", 8000),
        n_fft=_get_int(cfg, "mel_n_fft", 256),
        hop=_get_int(cfg, "mel_hop", 64),
        n_mels=model.config["n_mels"])


def build_problem(cfg):
    """Turn a validated config into an InversionProblem plus its echo."""
    pipeline = validate_keys(cfg)
    model = build_model(cfg)

    if pipeline in TOKEN_OUTPUT_KINDS:
        words = cfg.get("target", "").split()
        if not words:
            raise ConfigError("token pipelines need a 'target' word list")
        try:
            target = model.vocab.ids_for(words)
        except KeyError as exc:
            raise ConfigError(f"target word not in vocabulary: {exc}") from None
        loss = LossSpec(kind="xent_autoregressive")
    elif pipeline == "generator":
        if "target_path" not in cfg:
            raise ConfigError("generator runs need 'target_path'")
        target = _load_target_array(cfg["target_path"], model.output_shape)
        loss = LossSpec(kind="mse")
    else:
        if "target_path" not in cfg:
            raise ConfigError("tts runs need 'target_path'")
        target = _load_target_array(cfg["target_path"], model.output_shape)
        mel_norm = cfg.get("mel_norm", "l1")
        loss = LossSpec(kind="mel_spec", mel_config=mel_config_for(cfg, "tts", model),
                        mel_norm=mel_norm)

    init_kind = cfg.get("init", "gaussian")
    seed = _get_int(cfg, "seed", 0)
    if init_kind == "gaussian":
        init = engine.Initialization(kind="gaussian", seed=seed)
    elif init_kind == "base_input":
        if "base_path" not in cfg:
            raise ConfigError("base_input initialization needs 'base_path'")
        base = _load_base(cfg["base_path"], model)
        init = engine.Initialization(kind="base_input", seed=seed, base=base)
    else:
        raise ConfigError(f"unknown init {init_kind!r}")

    try:
        optimizer = OptimizerConfig(
            kind=cfg.get("optimizer", "adam"),
            learning_rate=_get_float(cfg, "learning_rate", _DEFAULT_LR[pipeline]),
            beta1=_get_float(cfg, "beta1", 0.9),
            beta2=_get_float(cfg, "beta2", 0.999),
            epsilon=_get_float(cfg, "epsilon", 1e-8),
            weight_decay=_get_float(cfg, "weight_decay", 0.0),
            max_grad_norm=(_get_float(cfg, "grad_clip", 0.0) or None)
            if "grad_clip" in cfg else None)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    default_schedule = _DEFAULT_SCHEDULE[pipeline]
    if "schedule" in cfg:
        try:
            schedule = tuple(int(s) for s in cfg["schedule"].split(","))
        except ValueError:
            raise ConfigError(f"malformed schedule {cfg['schedule']!r}") from None
    else:
        schedule = default_schedule
    max_steps = _get_int(cfg, "steps", default_schedule[-1])
    if "schedule" not in cfg:
        schedule = tuple(s for s in schedule if s <= max_steps)

    try:
        problem = engine.InversionProblem(
            model=model, target=target, loss=loss, init=init,
            optimizer=optimizer, schedule=schedule, max_steps=max_steps)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    echo = dict(cfg)
    echo["pipeline"] = pipeline
    echo["steps"] = str(max_steps)
    echo["schedule"] = ",".join(str(s) for s in schedule)
    return problem, echo


def _load_base(base_path, model):
    base_path = Path(base_path)
    if len(model.input_shapes) == 1:
        name = model.single_input_name()
        if base_path.is_dir():
            return {name: read_array(base_path / f"{name}.f64")}
        return {name: read_array(base_path)}
    if not base_path.is_dir():
        raise ConfigError("multi-group models need a base directory of "
                          "<group>.f64 blobs")
    return {name: read_array(base_path / f"{name}.f64")
            for name in model.input_shapes}


def output_root(cfg=None, override=None):
    """Precedence: CLI flag, then environment variable, then config, then ./runs."""
    if override:
        return Path(override)
    env = os.environ.get(ENV_OUT_ROOT)
    if env:
        return Path(env)
    if cfg and cfg.get("out"):
        return Path(cfg["out"])
    return Path("runs")


def run_from_config(cfg, out_override=None):
    """Execute a config end to end; returns (record, run directory)."""
    problem, echo = build_problem(cfg)
    record = engine.run_inversion(problem)
    root = output_root(cfg, out_override)
    run_dir = root / record.run_id

    # make the run self-contained: persist resolved target/base arrays
    run_dir.mkdir(parents=True, exist_ok=True)
    if isinstance(problem.target, np.ndarray):
        write_array(run_dir / "target.f64", problem.target)
        echo["target_path"] = str(run_dir / "target.f64")
    if problem.init.base is not None:
        base_dir = run_dir / "base"
        base_dir.mkdir(exist_ok=True)
        for name, arr in problem.init.base.items():
            write_array(base_dir / f"{name}.f64", arr)
        if len(problem.init.base) > 1:
            echo["base_path"] = str(base_dir)
        else:
            only = next(iter(problem.init.base))
            echo["base_path"] = str(base_dir / f"{only}.f64")

    engine.save_run(record, run_dir, config_echo=echo)
    emit_artifacts(record, run_dir, cfg)
    append_index(root, record, echo)
    return record, run_dir


def load_run(run_dir):
    """Rebuild a persisted run; verifies the manifest digest.

    Target and base arrays are read from the copies inside the run
    directory, so a run stays loadable after being moved or archived.
    """
    run_dir = Path(run_dir)

    def build(cfg):
        cfg = dict(cfg)
        target_blob = run_dir / "target.f64"
        if target_blob.exists():
            cfg["target_path"] = str(target_blob)
        base_dir = run_dir / "base"
        if base_dir.is_dir():
            blobs = sorted(base_dir.glob("*.f64"))
            cfg["base_path"] = str(base_dir if len(blobs) > 1 else blobs[0])
        return build_problem(cfg)[0]

    return engine.load_run(run_dir, build)


# ---------------------------------------------------------------------------
# artifact emission
# ---------------------------------------------------------------------------

def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _write_decoded_csv(record, run_dir):
    with open(run_dir / "decoded.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "tokens", "text"])
        for step in sorted(record.checkpoints):
            ckpt = record.checkpoints[step]
            writer.writerow([step, len(ckpt.decoded_ids),
                             " ".join(ckpt.decoded_text)])


def _write_image_grid(record, run_dir, source):
    plt = _pyplot()
    steps = sorted(record.checkpoints)
    fig, axes = plt.subplots(1, len(steps), figsize=(2.2 * len(steps), 2.6))
    if len(steps) == 1:
        axes = [axes]
    for ax, step in zip(axes, steps):
        ckpt = record.checkpoints[step]
        img = ckpt.output if source == "output" else next(iter(ckpt.inputs.values()))
        ax.imshow(img, cmap="gray")
        ax.set_title(f"step {step}", fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(run_dir / "images.png", dpi=110)
    plt.close(fig)


def _render_spectrogram(arr, path, title):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 2.6))
    ax.imshow(arr, origin="lower", aspect="auto", cmap="magma")
    ax.set_title(title, fontsize=9)
    ax.set_xlabel("frame")
    ax.set_ylabel("mel bin")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def _render_waveform(wave, rate, path, title):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 2.0))
    ax.plot(np.arange(len(wave)) / rate, wave, linewidth=0.4)
    ax.set_title(title, fontsize=9)
    ax.set_xlabel("seconds")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def _emit_token_tables(record, run_dir):
    vocab = record.problem.model.vocab
    estimates = {}
    for step in sorted(record.checkpoints):
        ckpt = record.checkpoints[step]
        for name, arr in ckpt.inputs.items():
            rows = np.atleast_2d(arr.reshape(-1, arr.shape[-1]))
            if rows.shape[1] == vocab.dim:
                estimates[step] = interpret.nearest_tokens(rows, vocab, k=1)
    if estimates:
        interpret.write_token_csv(run_dir / "tokens.csv", estimates)


def emit_artifacts(record, run_dir, cfg):
    """Write the per-checkpoint artifacts appropriate to the pipeline."""
    run_dir = Path(run_dir)
    pipeline = record.problem.model.kind
    if pipeline in TOKEN_OUTPUT_KINDS:
        _write_decoded_csv(record, run_dir)
    if pipeline == "captioner":
        _write_image_grid(record, run_dir, source="input")
    elif pipeline == "generator":
        _write_image_grid(record, run_dir, source="output")
        _emit_token_tables(record, run_dir)
    elif pipeline == "asr":
        mel_cfg = mel_config_for(cfg, "asr", record.problem.model)
        for step in sorted(record.checkpoints):
            ckpt = record.checkpoints[step]
            spec = next(iter(ckpt.inputs.values()))
            _render_spectrogram(spec, run_dir / f"spectrogram_step_{step:08d}.png",
                                f"optimized log-mel input, step {step}")
            wave = dsp.griffin_lim(
                dsp.Spectrogram(values=spec, config=mel_cfg, domain="log_mel"),
                iterations=32)
            peak = np.max(np.abs(wave))
            if peak > 1.0:
                wave = wave / peak
            dsp.wav_write(run_dir / f"wave_step_{step:08d}.wav", wave,
                          mel_cfg.sample_rate)
            _render_waveform(wave, mel_cfg.sample_rate,
                             run_dir / f"waveform_step_{step:08d}.png",
                             f"Griffin-Lim reconstruction, step {step}")
    elif pipeline == "tts":
        mel_cfg = record.problem.loss.mel_config
        rate = record.problem.model.config["sample_rate"]
        for step in sorted(record.checkpoints):
            ckpt = record.checkpoints[step]
            wave = ckpt.output
            dsp.wav_write(run_dir / f"wave_step_{step:08d}.wav", wave, rate)
            _render_waveform(wave, rate, run_dir / f"waveform_step_{step:08d}.png",
                             f"synthesized waveform, step {step}")
            spec = dsp.log_mel(wave, mel_cfg).array
            _render_spectrogram(spec, run_dir / f"spectrogram_step_{step:08d}.png",
                                f"output log-mel, step {step}")
        _emit_token_tables(record, run_dir)


# ---------------------------------------------------------------------------
# run metrics
# ---------------------------------------------------------------------------

_ALLOWED_METRICS = {
    "captioner": ("bert", "clip"),
    "asr": ("bert", "clip"),
    "generator": ("clip",),
    "tts": ("lsd", "clip"),
}


def _mean_token_embedding(vocab, ids):
    if not ids:
        return None
    return vocab.embeddings[ids].mean(axis=0)


def compute_run_metrics(record, metric="auto", category="default"):
    """Per-checkpoint consistency rows in (step, metric, category, value) form.

    Token pipelines score decoded tokens against the target tokens through
    the model's own vocabulary embeddings; the generator scores output
    images against the target image with the clamped-cosine pair score;
    tts uses the perceptual-audio slot (log-spectral-distance proxy).
    """
    pipeline = record.problem.model.kind
    allowed = _ALLOWED_METRICS[pipeline]
    if metric == "auto":
        metric = allowed[0]
    if metric not in allowed:
        raise ConfigError(f"metric {metric!r} not available for {pipeline} "
                          f"(choose from {allowed})")
    vocab = record.problem.model.vocab
    rows = []
    for step in sorted(record.checkpoints):
        ckpt = record.checkpoints[step]
        if pipeline in TOKEN_OUTPUT_KINDS:
            ref = vocab.embeddings[list(record.problem.target)]
            cand_ids = ckpt.decoded_ids
            if metric == "bert":
                if cand_ids:
                    p, r, f1 = metrics.bert_style_f1(vocab.embeddings[cand_ids], ref)
                else:
                    p = r = f1 = 0.0
                rows += [(step, "bert_precision", category, p),
                         (step, "bert_recall", category, r),
                         (step, "bert_f1", category, f1)]
            else:
                cand = _mean_token_embedding(vocab, cand_ids)
                value = 0.0 if cand is None else metrics.clip_style_score(
                    cand, ref.mean(axis=0))
                rows.append((step, "clip_score", category, value))
        elif pipeline == "generator":
            value = metrics.clip_style_score(ckpt.output.ravel(),
                                             record.problem.target.ravel())
            rows.append((step, "clip_score", category, value))
        else:  # tts
            if metric == "lsd":
                value = metrics.log_spectral_distance(
                    record.problem.target, ckpt.output,
                    record.problem.loss.mel_config)
                rows.append((step, "lsd", category, value))
            else:
                value = metrics.clip_style_score(ckpt.output,
                                                 record.problem.target)
                rows.append((step, "clip_score", category, value))
    return rows


# ---------------------------------------------------------------------------
# run registry
# ---------------------------------------------------------------------------

_INDEX_FIELDS = ["run_id", "pipeline", "digest", "steps", "diverged"]


def append_index(root, record, echo):
    # append-only; one process appends sequentially, multi-worker sweeps
    # must serialize externally (the index is rebuildable either way)
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    index = root / "index.csv"
    fresh = not index.exists()
    with open(index, "a", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(_INDEX_FIELDS)
        writer.writerow([record.run_id, echo.get("pipeline", ""),
                         record.digest, record.steps_done,
                         str(record.diverged).lower()])


def read_index(root):
    index = Path(root) / "index.csv"
    if not index.exists():
        return []
    with open(index, newline="") as fh:
        return sorted(csv.DictReader(fh), key=lambda row: row["run_id"])


def rebuild_index(root):
    """Reconstruct the registry purely from the run directories on disk."""
    root = Path(root)
    rows = []
    for manifest_path in sorted(root.glob("*/manifest.txt")):
        manifest = engine.read_manifest(manifest_path)
        rows.append({
            "run_id": manifest["run_id"],
            "pipeline": manifest.get("cfg.pipeline", ""),
            "digest": manifest["digest"],
            "steps": manifest["steps_done"],
            "diverged": manifest["diverged"],
        })
    return sorted(rows, key=lambda row: row["run_id"])
