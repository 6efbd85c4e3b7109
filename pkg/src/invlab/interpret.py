"""Interpretation of optimized latent inputs.

Two tools: nearest-vocabulary-token estimation by cosine similarity
(what word, if any, does an optimized embedding resemble?) and a 2-D
PCA projection of checkpointed embeddings (how did the latent point
move during optimization?).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor

__all__ = [
    "TokenEstimate",
    "TrajectoryPoint",
    "TrajectoryProjection",
    "cosine",
    "nearest_tokens",
    "project_trajectory",
    "write_token_csv",
]


@dataclass
class TokenEstimate:
    position: int
    token_id: int
    token: str
    score: float


@dataclass
class TrajectoryPoint:
    step: int
    coords: np.ndarray


@dataclass
class TrajectoryProjection:
    points: list
    degenerate: bool


def cosine(a, b):
    """A.B / (||A|| ||B||); zero-norm inputs are an error, never a silent 0."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine of a zero-norm vector is undefined")
    return float(np.dot(a, b) / (na * nb))


def nearest_tokens(embeddings, vocab, k=1):
    """Exact top-k vocabulary matches per embedding row, by cosine score.

    Ties break toward the lower token id.  Equivalent to the brute-force
    double loop over (row, vocabulary entry) pairs.
    """
    if isinstance(embeddings, Tensor):
        embeddings = embeddings.data
    embeddings = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if embeddings.shape[1] != vocab.dim:
        raise ValueError(f"embedding width {embeddings.shape[1]} does not "
                         f"match vocabulary width {vocab.dim}")
    if not 1 <= k <= vocab.size:
        raise ValueError("k out of range")
    row_norms = np.linalg.norm(embeddings, axis=1)
    if np.any(row_norms == 0.0):
        raise ValueError("cosine of a zero-norm embedding is undefined")
    vocab_norms = np.linalg.norm(vocab.embeddings, axis=1)
    scores = (embeddings / row_norms[:, None]) @ (vocab.embeddings / vocab_norms[:, None]).T
    ids = np.arange(vocab.size)
    results = []
    for pos in range(embeddings.shape[0]):
        order = np.lexsort((ids, -scores[pos]))[:k]
        results.append([TokenEstimate(position=pos, token_id=int(j),
                                      token=vocab.tokens[int(j)],
                                      score=float(scores[pos, j]))
                        for j in order])
    return results


def project_trajectory(embeddings, steps=None, method="pca"):
    """Project checkpointed embeddings onto their top-2 principal directions.

    Deterministic sign convention: each component's first nonzero loading
    is positive.  If every checkpoint is identical the data has rank 0;
    all points land at the origin and the result is flagged degenerate.
    """
    if method != "pca":
        raise ValueError(f"unknown projection method {method!r}")
    rows = [np.asarray(e, dtype=np.float64).ravel() for e in embeddings]
    if len(rows) < 2:
        raise ValueError("need at least 2 checkpoints to project")
    dim = rows[0].size
    if dim < 2:
        raise ValueError("embedding dimension must be at least 2")
    if any(r.size != dim for r in rows):
        raise ValueError("checkpoints must share one embedding dimension")
    if steps is None:
        steps = list(range(len(rows)))
    x = np.stack(rows)
    centered = x - x.mean(axis=0)
    degenerate = not np.any(centered)
    if degenerate:
        coords = np.zeros((len(rows), 2))
    else:
        # principal directions via SVD of the centered matrix
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        comps = np.zeros((2, dim))
        comps[: min(2, vt.shape[0])] = vt[:2]
        for c in comps:
            nz = np.nonzero(np.abs(c) > 1e-12)[0]
            if nz.size and c[nz[0]] < 0.0:
                c *= -1.0
        coords = centered @ comps.T
    points = [TrajectoryPoint(step=int(s), coords=coords[i])
              for i, s in enumerate(steps)]
    return TrajectoryProjection(points=points, degenerate=degenerate)


def write_token_csv(path, estimates_by_step):
    """Emit (step, position, token, score) rows, scores at 4 decimals.

    ``estimates_by_step`` maps a checkpoint step to the nested list that
    :func:`nearest_tokens` returns.  Full-precision scores stay on the
    TokenEstimate objects; the table renders at 4 decimals.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "position", "token", "score"])
        for step in sorted(estimates_by_step):
            for per_position in estimates_by_step[step]:
                for est in per_position:
                    writer.writerow([step, est.position, est.token,
                                     f"{est.score:.4f}"])
