"""The outer inversion loop: initialize the input, iterate optimizer steps
on J(x) = L(f(x), y), checkpoint on a schedule, and record the trajectory.

A run is strictly sequential (the optimizer state is a chain); many runs
with private records may execute concurrently.  Records persist as one
directory per run: a flat-text manifest, a loss CSV, and float64 blobs
for every checkpointed input and the resume state.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arrayio import read_array, write_array
from .autodiff import NonFiniteError, Tensor, backward
from .losses import LossSpec, mel_spec_loss, mse, xent_autoregressive
from .optimizers import OptimizerConfig, OptimizerState, apply_step
from .zoo import EOS_ID, TOKEN_OUTPUT_KINDS, AdapterModel, greedy_decode

__all__ = [
    "Initialization",
    "InversionProblem",
    "Checkpoint",
    "RunRecord",
    "DigestError",
    "run_inversion",
    "resume",
    "evaluate_objective",
    "problem_digest",
    "save_run",
    "load_run",
    "read_loss_csv",
]

# loss values beyond this (or non-finite) halt the run as diverged
DIVERGENCE_LIMIT = 1e12

_LEGAL_LOSS = {
    "captioner": "xent_autoregressive",
    "asr": "xent_autoregressive",
    "generator": "mse",
    "tts": "mel_spec",
}


class DigestError(RuntimeError):
    """The persisted problem does not match its recorded digest."""


@dataclass
class Initialization:
    """Where the search starts: unit Gaussian noise or a supplied base input."""

    kind: str = "gaussian"
    seed: int = 0
    base: dict | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "base_input"):
            raise ValueError(f"unknown initialization kind {self.kind!r}")
        if (self.kind == "base_input") != (self.base is not None):
            raise ValueError("base must be present exactly when kind='base_input'")

    def materialize(self, input_shapes):
        params = {}
        if self.kind == "gaussian":
            rng = np.random.default_rng(self.seed)
            for name, shape in input_shapes.items():
                params[name] = Tensor(rng.standard_normal(shape), requires_grad=True)
            return params
        base = self.base
        if not isinstance(base, dict):
            if len(input_shapes) != 1:
                raise ValueError("multi-group models need a dict base input")
            base = {next(iter(input_shapes)): base}
        for name, shape in input_shapes.items():
            if name not in base:
                raise ValueError(f"base input missing group {name!r}")
            arr = np.asarray(base[name], dtype=np.float64)
            if tuple(arr.shape) != tuple(shape):
                raise ValueError(f"base input {name!r} has shape {arr.shape}, "
                                 f"expected {shape}")
            params[name] = Tensor(arr.copy(), requires_grad=True)
        return params


@dataclass
class InversionProblem:
    """One instance of the inversion objective: argmin_x L(f(x), y)."""

    model: AdapterModel
    target: object  # token id list for token kinds, ndarray otherwise
    loss: LossSpec
    init: Initialization
    optimizer: OptimizerConfig
    schedule: tuple
    max_steps: int

    def __post_init__(self):
        self.schedule = tuple(int(s) for s in self.schedule)
        if sorted(set(self.schedule)) != list(self.schedule):
            raise ValueError("schedule must be sorted and duplicate-free")
        if 0 not in self.schedule:
            raise ValueError("schedule must contain step 0")
        if self.schedule[-1] > self.max_steps or self.schedule[0] < 0:
            raise ValueError("schedule must lie within [0, max_steps]")
        expected = _LEGAL_LOSS[self.model.kind]
        if self.loss.kind != expected:
            raise ValueError(f"{self.model.kind} pipelines require the "
                             f"{expected} loss, got {self.loss.kind}")
        if self.model.kind in TOKEN_OUTPUT_KINDS:
            ids = [int(t) for t in self.target]
            if not ids:
                raise ValueError("empty target token sequence")
            if any(t < 1 or t >= self.model.vocab.size for t in ids):
                raise ValueError("target token ids must lie in [1, vocab); "
                                 "the end token is appended automatically")
            self.target = ids
        else:
            arr = np.asarray(self.target, dtype=np.float64)
            if tuple(arr.shape) != tuple(self.model.output_shape):
                raise ValueError(f"target shape {arr.shape} does not match "
                                 f"model output {self.model.output_shape}")
            self.target = arr


@dataclass
class Checkpoint:
    step: int
    inputs: dict
    output: np.ndarray | None = None
    decoded_ids: list | None = None
    decoded_text: list | None = None


@dataclass
class RunRecord:
    """Everything a finished (or resumable) run produced."""

    problem: InversionProblem
    run_id: str
    digest: str
    loss_history: list = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)
    steps_done: int = 0
    diverged: bool = False
    wall_time: float = 0.0
    opt_state: OptimizerState | None = None
    inputs: dict | None = None


def evaluate_objective(problem, inputs):
    """Build the loss graph J(x) = L(f(x), y) for the current inputs."""
    model = problem.model
    if model.kind in TOKEN_OUTPUT_KINDS:
        supervision = list(problem.target) + [EOS_ID]
        logits = model.forward(inputs, teacher_tokens=supervision)
        return xent_autoregressive(logits, supervision,
                                   reduction=problem.loss.reduction)
    if model.kind == "generator":
        pred = model.forward(inputs)
        return mse(pred, Tensor(problem.target),
                   reduction=problem.loss.reduction)
    pred_wave = model.forward(inputs)
    return mel_spec_loss(pred_wave, Tensor(problem.target),
                         cfg=problem.loss.mel_config,
                         norm=problem.loss.mel_norm,
                         reduction=problem.loss.reduction)


def problem_digest(problem):
    """Stable content hash of everything that determines the trajectory."""
    h = hashlib.sha256()

    def put(key, value):
        h.update(f"{key}={value}\n".encode())

    put("model.name", problem.model.name)
    put("model.kind", problem.model.kind)
    for key in sorted(problem.model.config):
        put(f"model.{key}", problem.model.config[key])
    h.update(problem.model.weight_hash().encode())
    if isinstance(problem.target, np.ndarray):
        put("target.shape", problem.target.shape)
        h.update(np.ascontiguousarray(problem.target).tobytes())
    else:
        put("target.tokens", ",".join(str(t) for t in problem.target))
    put("loss.kind", problem.loss.kind)
    put("loss.reduction", problem.loss.reduction)
    put("loss.mel_norm", problem.loss.mel_norm)
    if problem.loss.mel_config is not None:
        mc = problem.loss.mel_config
        put("loss.mel", (mc.sample_rate, mc.n_fft, mc.hop, mc.n_mels,
                         mc.fmin, mc.fmax, mc.log_floor))
    put("init.kind", problem.init.kind)
    put("init.seed", problem.init.seed)
    if problem.init.base is not None:
        base = problem.init.base
        if not isinstance(base, dict):
            base = {"input": base}
        for name in sorted(base):
            put("init.base", name)
            h.update(np.ascontiguousarray(
                np.asarray(base[name], dtype=np.float64)).tobytes())
    opt = problem.optimizer
    put("opt", (opt.kind, opt.learning_rate, opt.beta1, opt.beta2,
                opt.epsilon, opt.weight_decay, opt.max_grad_norm))
    put("schedule", ",".join(str(s) for s in problem.schedule))
    put("max_steps", problem.max_steps)
    return h.hexdigest()


def _snapshot(record, step):
    problem = record.problem
    inputs_copy = {k: v.data.copy() for k, v in record.inputs.items()}
    ckpt = Checkpoint(step=step, inputs=inputs_copy)
    model = problem.model
    if model.kind in TOKEN_OUTPUT_KINDS:
        ids, words = greedy_decode(model, record.inputs)
        ckpt.decoded_ids, ckpt.decoded_text = ids, words
    else:
        detached = {k: Tensor(v) for k, v in inputs_copy.items()}
        ckpt.output = model.forward(detached).data.copy()
    record.checkpoints[step] = ckpt


def _is_diverged(value):
    return not np.isfinite(value) or abs(value) > DIVERGENCE_LIMIT


def _drive(record, target_steps):
    """Advance the record to ``target_steps`` total optimizer steps.

    Invariant on entry and exit (unless diverged): loss_history holds one
    entry per step index 0..steps_done.
    """
    problem = record.problem
    schedule = set(problem.schedule)
    started = time.perf_counter()
    try:
        while record.steps_done < target_steps and not record.diverged:
            t = record.steps_done
            loss = evaluate_objective(problem, record.inputs)
            value = loss.item()
            if len(record.loss_history) == t:
                record.loss_history.append(value)
            if _is_diverged(value):
                record.diverged = True
                break
            if t in schedule and t not in record.checkpoints:
                _snapshot(record, t)
            backward(loss)
            apply_step(record.inputs, problem.optimizer, record.opt_state)
            for p in record.inputs.values():
                p.zero_grad()
            record.steps_done = t + 1
        if not record.diverged and len(record.loss_history) == record.steps_done:
            final = evaluate_objective(problem, record.inputs).item()
            record.loss_history.append(final)
            if _is_diverged(final):
                record.diverged = True
            elif (record.steps_done in schedule
                  and record.steps_done not in record.checkpoints):
                _snapshot(record, record.steps_done)
    except NonFiniteError:
        record.diverged = True
    record.wall_time += time.perf_counter() - started
    return record


def _new_run_id(digest):
    # digest prefix keeps related runs adjacent; nanosecond stamp keeps
    # ids sortable and collision-free even for identical back-to-back runs
    now = time.time_ns()
    stamp = time.strftime("%Y%m%d%H%M%S", time.gmtime(now // 1_000_000_000))
    return f"{digest[:12]}-{stamp}{now % 1_000_000_000:09d}"


def run_inversion(problem):
    """Execute the full optimization loop described by the problem."""
    digest = problem_digest(problem)
    record = RunRecord(problem=problem, run_id=_new_run_id(digest), digest=digest)
    record.inputs = problem.init.materialize(problem.model.input_shapes)
    record.opt_state = OptimizerState.for_params(record.inputs)
    return _drive(record, problem.max_steps)


def resume(record, additional_steps):
    """Continue a run; bitwise-identical to never having stopped.

    Verifies the problem still matches the recorded digest, then extends
    the trajectory by ``additional_steps`` optimizer steps.
    """
    if additional_steps < 0:
        raise ValueError("additional_steps must be nonnegative")
    if record.diverged:
        raise RuntimeError("cannot resume a diverged run")
    if problem_digest(record.problem) != record.digest:
        raise DigestError("problem no longer matches the recorded digest")
    return _drive(record, record.steps_done + additional_steps)


# ---------------------------------------------------------------------------
# persistence: manifest + loss CSV + checkpoint/state blobs
# ---------------------------------------------------------------------------

def write_manifest(path, entries):
    lines = [f"{key} = {value}" for key, value in entries]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path):
    entries = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"malformed manifest line: {line!r}")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


def write_loss_csv(path, loss_history):
    lines = ["step,loss"]
    lines += [f"{step},{value!r}" for step, value in enumerate(loss_history)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_loss_csv(path):
    lines = Path(path).read_text().splitlines()
    return [float(line.split(",")[1]) for line in lines[1:]]


def save_run(record, out_dir, config_echo=None):
    """Persist a record as a run directory; returns its path."""
    run_dir = Path(out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    entries = [
        ("run_id", record.run_id),
        ("digest", record.digest),
        ("steps_done", record.steps_done),
        ("diverged", str(record.diverged).lower()),
        ("wall_time", f"{record.wall_time:.6f}"),
        ("schedule", ",".join(str(s) for s in record.problem.schedule)),
        ("max_steps", record.problem.max_steps),
    ]
    for key in sorted(config_echo or {}):
        entries.append((f"cfg.{key}", config_echo[key]))
    write_manifest(run_dir / "manifest.txt", entries)
    write_loss_csv(run_dir / "loss.csv", record.loss_history)

    for step, ckpt in sorted(record.checkpoints.items()):
        step_dir = run_dir / "checkpoints" / f"step_{step:08d}"
        step_dir.mkdir(parents=True, exist_ok=True)
        for name, arr in ckpt.inputs.items():
            write_array(step_dir / f"{name}.f64", arr)
        if ckpt.output is not None:
            write_array(step_dir / "output.f64", ckpt.output)
        if ckpt.decoded_ids is not None:
            (step_dir / "decoded.txt").write_text(
                " ".join(str(i) for i in ckpt.decoded_ids) + "\n"
                + " ".join(ckpt.decoded_text) + "\n")

    state_dir = run_dir / "state"
    state_dir.mkdir(exist_ok=True)
    for name, tensor in record.inputs.items():
        write_array(state_dir / f"input.{name}.f64", tensor.data)
    for name, arr in record.opt_state.m.items():
        write_array(state_dir / f"m.{name}.f64", arr)
    for name, arr in record.opt_state.v.items():
        write_array(state_dir / f"v.{name}.f64", arr)
    (state_dir / "step.txt").write_text(str(record.opt_state.step) + "\n")
    return run_dir


def load_run(run_dir, problem_builder):
    """Rebuild a resumable record from disk.

    ``problem_builder`` maps the manifest's cfg.* entries back to an
    :class:`InversionProblem`; the rebuilt problem must hash to the
    recorded digest, otherwise :class:`DigestError` is raised.
    """
    run_dir = Path(run_dir)
    manifest = read_manifest(run_dir / "manifest.txt")
    cfg = {key[4:]: value for key, value in manifest.items()
           if key.startswith("cfg.")}
    problem = problem_builder(cfg)
    digest = problem_digest(problem)
    if digest != manifest["digest"]:
        raise DigestError(f"{run_dir}: digest mismatch (manifest "
                          f"{manifest['digest'][:12]}..., rebuilt {digest[:12]}...)")
    record = RunRecord(problem=problem, run_id=manifest["run_id"], digest=digest)
    record.steps_done = int(manifest["steps_done"])
    record.diverged = manifest["diverged"] == "true"
    record.wall_time = float(manifest["wall_time"])
    record.loss_history = read_loss_csv(run_dir / "loss.csv")

    ckpt_root = run_dir / "checkpoints"
    if ckpt_root.is_dir():
        for step_dir in sorted(ckpt_root.iterdir()):
            step = int(step_dir.name.split("_")[1])
            inputs = {}
            for blob in step_dir.glob("*.f64"):
                if blob.stem != "output":
                    inputs[blob.stem] = read_array(blob)
            ckpt = Checkpoint(step=step, inputs=inputs)
            if (step_dir / "output.f64").exists():
                ckpt.output = read_array(step_dir / "output.f64")
            decoded = step_dir / "decoded.txt"
            if decoded.exists():
                id_line, text_line = decoded.read_text().splitlines()
                ckpt.decoded_ids = [int(i) for i in id_line.split()] if id_line else []
                ckpt.decoded_text = text_line.split() if text_line else []
            record.checkpoints[step] = ckpt

    state_dir = run_dir / "state"
    record.inputs = {}
    record.opt_state = OptimizerState(step=int((state_dir / "step.txt").read_text()))
    for name in problem.model.input_shapes:
        record.inputs[name] = Tensor(read_array(state_dir / f"input.{name}.f64"),
                                     requires_grad=True)
        record.opt_state.m[name] = read_array(state_dir / f"m.{name}.f64")
        record.opt_state.v[name] = read_array(state_dir / f"v.{name}.f64")
    return record
