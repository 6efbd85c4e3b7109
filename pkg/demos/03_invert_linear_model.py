"""Sanity anchor: inverting a linear model recovers the algebraic answer.

For f(x) = Ax with a mean-squared objective, the engine is solving least
squares by iteration, so the recovered input must match the
normal-equations solution.  Any custom model can be plugged in the same
way the linear adapter is built here.
"""

import numpy as np

from invlab import engine, zoo
from invlab.losses import LossSpec
from invlab.optimizers import OptimizerConfig

rng = np.random.default_rng(7)
a = rng.standard_normal((6, 4))
y = rng.standard_normal(6)

# safe step size from the quadratic's curvature: J = mean((Ax-y)^2)
lmax = float(np.linalg.eigvalsh(2.0 * a.T @ a / a.shape[0]).max())

problem = engine.InversionProblem(
    model=zoo.linear_adapter(a),
    target=y,
    loss=LossSpec(kind="mse"),
    init=engine.Initialization(kind="gaussian", seed=0),
    optimizer=OptimizerConfig(kind="gd", learning_rate=0.9 / lmax),
    schedule=(0, 100, 1000),
    max_steps=3000,
)
record = engine.run_inversion(problem)

x_star = np.linalg.solve(a.T @ a, a.T @ y)
x_hat = record.inputs["input"].data
print("loss trajectory:", " -> ".join(f"{record.loss_history[s]:.3e}"
                                      for s in (0, 100, 1000, 3000)))
print(f"|x_hat - x_star|_inf = {np.max(np.abs(x_hat - x_star)):.2e}")
print("monotone descent:", bool(np.all(np.diff(record.loss_history) <= 1e-12)))
print("digest:", record.digest[:16], "...")
