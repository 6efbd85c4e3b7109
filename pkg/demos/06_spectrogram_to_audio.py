"""Drive a frozen speech recognizer to transcribe a chosen phrase, then
listen to what the optimized spectrogram actually sounds like.

The input variable is a log-mel spectrogram.  Once the transcription
matches, Griffin-Lim lifts each checkpointed spectrogram back to a
waveform (WAV files in the run directory): the transcript aligns, the
audio is noise.  Also shown: the 30-second full-scale analysis geometry.
"""

import csv
from pathlib import Path

import numpy as np

from invlab import dsp, harness

# full-scale geometry check: 30 s at the 16 kHz/128-mel preset -> 3000 frames
preset = dsp.whisper_mel_config()
spec = dsp.log_mel(np.zeros(30 * preset.sample_rate), preset)
print(f"30 s at the 128-mel preset -> log-mel shape {spec.array.shape}\n")

out_root = Path(__file__).parent / "out" / "spectrogram_inversion"
cfg = {
    "pipeline": "asr",
    "target": "a small bird under a tree",
    "seed": "2",
    "optimizer": "adamw",
    "steps": "750",
    "schedule": "0,250,500,750",
    "out": str(out_root),
}
record, run_dir = harness.run_from_config(cfg)

print(f"run directory: {run_dir}\n")
print(f"{'step':>5}  tokens  transcription")
with open(run_dir / "decoded.csv", newline="") as fh:
    for row in csv.DictReader(fh):
        print(f"{row['step']:>5}  {row['tokens']:>6}  {row['text']}")

wavs = sorted(run_dir.glob("wave_step_*.wav"))
print(f"\n{len(wavs)} Griffin-Lim reconstructions written:")
for wav in wavs:
    wave, rate = dsp.wav_read(wav)
    print(f"  {wav.name}: {len(wave)} samples at {rate} Hz, "
          f"peak {np.max(np.abs(wave)):.3f}")
print("spectrogram renderings alongside: spectrogram_step_*.png")
