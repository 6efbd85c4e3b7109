"""Command-line driver for inversion runs and their post-hoc artifacts.

Subcommands: invert, decode-tokens, reconstruct-audio, metrics,
project-trajectory, list-runs.  Exit codes: 0 ok, 2 config error,
3 diverged run (partial artifacts kept).  The INVLAB_OUT_ROOT environment
variable overrides the output root only.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import dsp, engine, harness, interpret
from .arrayio import read_array
from .harness import ConfigError
from .metrics import write_metrics_csv
from .zoo import load_vocab

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="invlab",
        description="Invert frozen differentiable models by optimizing their inputs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("invert", help="run an inversion described by a config file")
    p.add_argument("--config", required=True, help="flat key=value run config")
    p.add_argument("--out", help="output root (overrides config and env)")
    p.add_argument("--seed", type=int, help="override the initialization seed")
    p.add_argument("--steps", type=int, help="override the step budget")
    p.add_argument("--schedule", help="override the checkpoint schedule (comma list)")

    p = sub.add_parser("decode-tokens",
                       help="nearest-vocabulary tokens for a checkpoint blob")
    p.add_argument("--checkpoint", required=True, help="embedding blob (.f64)")
    p.add_argument("--vocab", required=True, help="vocabulary directory")
    p.add_argument("--k", type=int, default=1, help="matches per position")
    p.add_argument("--step", type=int, default=0, help="step label for the CSV")
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = sub.add_parser("reconstruct-audio",
                       help="Griffin-Lim waveform from a log-mel checkpoint")
    p.add_argument("--spectrogram", required=True, help="log-mel blob (.f64)")
    p.add_argument("--out", required=True, help="output WAV path")
    p.add_argument("--iterations", type=int, default=32)
    p.add_argument("--preset", choices=["whisper"], help="named mel geometry")
    p.add_argument("--sample-rate", type=int, default=8000)
    p.add_argument("--n-fft", type=int, default=256)
    p.add_argument("--hop", type=int, default=64)

    p = sub.add_parser("metrics", help="per-checkpoint consistency metrics")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--metric", default="auto",
                   choices=["auto", "bert", "clip", "lsd"])
    p.add_argument("--out", help="CSV path (default: <run>/metrics.csv)")

    p = sub.add_parser("project-trajectory",
                       help="2-D PCA of checkpointed embeddings")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--group", help="input group name (default: sole group)")
    p.add_argument("--out", help="CSV path (default: <run>/trajectory_<group>.csv)")

    p = sub.add_parser("list-runs", help="show the run registry")
    p.add_argument("--root", help="registry root (default: resolved output root)")
    return parser


def _cmd_invert(args):
    cfg = harness.load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = str(args.seed)
    if args.steps is not None:
        cfg["steps"] = str(args.steps)
    if args.schedule is not None:
        cfg["schedule"] = args.schedule
    record, run_dir = harness.run_from_config(cfg, out_override=args.out)
    print(run_dir)
    if record.diverged:
        print(f"run diverged after {record.steps_done} steps; "
              "partial artifacts kept", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _cmd_decode_tokens(args):
    vocab = load_vocab(Path(args.vocab))
    emb = read_array(args.checkpoint)
    rows = np.atleast_2d(emb.reshape(-1, emb.shape[-1]))
    if rows.shape[1] != vocab.dim:
        raise ConfigError(f"embedding width {rows.shape[1]} does not match "
                          f"vocabulary width {vocab.dim}")
    estimates = interpret.nearest_tokens(rows, vocab, k=args.k)
    if args.out:
        interpret.write_token_csv(args.out, {args.step: estimates})
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow(["step", "position", "token", "score"])
        for per_position in estimates:
            for est in per_position:
                writer.writerow([args.step, est.position, est.token,
                                 f"{est.score:.4f}"])
    return EXIT_OK


def _cmd_reconstruct_audio(args):
    values = read_array(args.spectrogram)
    if values.ndim != 2:
        raise ConfigError("spectrogram blob must be rank 2 (mels, frames)")
    if args.preset == "whisper":
        cfg = dsp.whisper_mel_config()
    else:
        cfg = dsp.MelConfig(sample_rate=args.sample_rate, n_fft=args.n_fft,
                            hop=args.hop, n_mels=values.shape[0])
    if values.shape[0] != cfg.n_mels:
        raise ConfigError(f"{values.shape[0]} mel rows do not match the "
                          f"{cfg.n_mels}-mel geometry")
    mag = dsp.mel_to_linear(10.0 ** values, cfg)
    wave = dsp.griffin_lim(mag, cfg, iterations=args.iterations)
    err = dsp.spectral_convergence(mag, wave, cfg)
    peak = np.max(np.abs(wave))
    if peak > 1.0:
        wave = wave / peak
    dsp.wav_write(args.out, wave, cfg.sample_rate)
    print(f"wrote {args.out} ({len(wave)} samples at {cfg.sample_rate} Hz); "
          f"spectral convergence error {err:.4f}")
    return EXIT_OK


def _cmd_metrics(args):
    run_dir = Path(args.run)
    if not (run_dir / "manifest.txt").exists():
        raise ConfigError(f"{run_dir} is not a run directory")
    record = harness.load_run(run_dir)
    manifest = engine.read_manifest(run_dir / "manifest.txt")
    category = manifest.get("cfg.category", "default")
    rows = harness.compute_run_metrics(record, metric=args.metric,
                                       category=category)
    out = Path(args.out) if args.out else run_dir / "metrics.csv"
    write_metrics_csv(out, rows)
    print(out)
    return EXIT_OK


def _cmd_project_trajectory(args):
    run_dir = Path(args.run)
    if not (run_dir / "manifest.txt").exists():
        raise ConfigError(f"{run_dir} is not a run directory")
    record = harness.load_run(run_dir)
    groups = list(record.problem.model.input_shapes)
    group = args.group or (groups[0] if len(groups) == 1 else None)
    if group is None or group not in groups:
        raise ConfigError(f"choose an input group with --group (one of {groups})")
    steps = sorted(record.checkpoints)
    if len(steps) < 2:
        raise ConfigError("need at least 2 checkpoints to project a trajectory")
    emb = [record.checkpoints[s].inputs[group].ravel() for s in steps]
    projection = interpret.project_trajectory(emb, steps=steps)
    out = Path(args.out) if args.out else run_dir / f"trajectory_{group}.csv"
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "x", "y"])
        for point in projection.points:
            writer.writerow([point.step, repr(float(point.coords[0])),
                             repr(float(point.coords[1]))])
    if projection.degenerate:
        print("trajectory is degenerate (all checkpoints identical)",
              file=sys.stderr)
    print(out)
    return EXIT_OK


def _cmd_list_runs(args):
    root = Path(args.root) if args.root else harness.output_root()
    rows = harness.read_index(root)
    if not rows:
        rows = harness.rebuild_index(root)
    for row in rows:
        print(f"{row['run_id']}  {row['pipeline']:<10}  steps={row['steps']:<6}  "
              f"diverged={row['diverged']:<5}  {row['digest'][:12]}")
    return EXIT_OK


_COMMANDS = {
    "invert": _cmd_invert,
    "decode-tokens": _cmd_decode_tokens,
    "reconstruct-audio": _cmd_reconstruct_audio,
    "metrics": _cmd_metrics,
    "project-trajectory": _cmd_project_trajectory,
    "list-runs": _cmd_list_runs,
}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, engine.DigestError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
