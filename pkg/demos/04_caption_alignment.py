"""Optimize an image until a frozen captioner reads a chosen phrase off it.

Two runs against the same target phrase: one from pure Gaussian noise,
one from a natural-looking base image (a disk on a gradient).  Both
descend the caption cross-entropy and pull the decoded caption toward
the target; the noise run typically locks on exactly within a few
hundred steps, while the base-image run may settle on a near-miss
phrasing -- alignment pressure is real but not guaranteed.  Either way
the optimized image stays incoherent to the eye.  Artifacts per run:
decoded.csv, images.png, loss.csv.
"""

import csv
from pathlib import Path

from invlab import harness, zoo
from invlab.arrayio import write_array

out_root = Path(__file__).parent / "out" / "caption_alignment"
out_root.mkdir(parents=True, exist_ok=True)

base_image = zoo.exemplar_images(1, image_size=32, seed=3)[0]
write_array(out_root / "base.f64", base_image)

target = "a green pear on a stone bench"
common = {
    "pipeline": "captioner",
    "target": target,
    "optimizer": "adamw",
    "steps": "1000",
    "schedule": "0,10,100,500,1000",
    "out": str(out_root),
}

for label, extra in (("gaussian noise", {"init": "gaussian", "seed": "4"}),
                     ("base image", {"init": "base_input", "seed": "4",
                                     "base_path": str(out_root / "base.f64")})):
    record, run_dir = harness.run_from_config({**common, **extra})
    print(f"=== init: {label}   ({run_dir.name})")
    print(f"{'step':>6}  {'loss':>10}  decoded caption")
    with open(run_dir / "decoded.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            step = int(row["step"])
            print(f"{step:>6}  {record.loss_history[step]:10.4f}  {row['text']}")
    matched = [s for s, c in sorted(record.checkpoints.items())
               if " ".join(c.decoded_text) == target]
    if matched:
        print(f"first exact match at step {matched[0]}\n")
    else:
        print("no exact match within the budget (a near-miss plateau)\n")

print("the optimized images are in each run's images.png: noise-like either way")
