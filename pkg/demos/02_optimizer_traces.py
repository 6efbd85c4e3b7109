"""The three update rules on one bowl-shaped objective.

Plain gradient descent, Adam, and AdamW minimize J(x) = ||x - c||^2 from
the same start.  The traces land in demos/out/optimizers/traces.png;
the printed table shows the distances to the optimum along the way.
"""

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from invlab.autodiff import Tensor
from invlab.optimizers import OptimizerConfig, OptimizerState, apply_step

out_dir = Path(__file__).parent / "out" / "optimizers"
out_dir.mkdir(parents=True, exist_ok=True)

center = np.array([1.5, -0.75])
start = np.array([-2.0, 2.0])
configs = {
    "gd": OptimizerConfig(kind="gd", learning_rate=0.1),
    "adam": OptimizerConfig(kind="adam", learning_rate=0.1),
    "adamw": OptimizerConfig(kind="adamw", learning_rate=0.1, weight_decay=0.01),
}

traces = {}
for name, cfg in configs.items():
    x = Tensor(start.copy(), requires_grad=True)
    state = OptimizerState.for_params({"x": x})
    path = [x.data.copy()]
    for _ in range(60):
        diff = x - Tensor(center)
        (diff * diff).sum().backward()
        apply_step({"x": x}, cfg, state)
        x.zero_grad()
        path.append(x.data.copy())
    traces[name] = np.stack(path)

print(f"{'step':>4}  " + "  ".join(f"{n:>10}" for n in traces))
for step in (0, 5, 20, 60):
    row = "  ".join(f"{np.linalg.norm(traces[n][step] - center):10.2e}"
                    for n in traces)
    print(f"{step:>4}  {row}")

grid = np.linspace(-2.5, 2.5, 120)
gx, gy = np.meshgrid(grid, grid)
level = (gx - center[0]) ** 2 + (gy - center[1]) ** 2
fig, ax = plt.subplots(figsize=(5, 5))
ax.contour(gx, gy, level, levels=12, linewidths=0.5, colors="grey")
for name, path in traces.items():
    ax.plot(path[:, 0], path[:, 1], marker=".", markersize=3, label=name)
ax.plot(*center, "k*", markersize=12)
ax.legend()
ax.set_title("descent traces on a convex bowl")
fig.tight_layout()
fig.savefig(out_dir / "traces.png", dpi=120)
print(f"\nwrote {out_dir / 'traces.png'}")
