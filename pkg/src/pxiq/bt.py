"""Bradley-Terry strength estimation from paired-comparison counts.

Maximum-likelihood strengths are found with the classic minorization-
maximization updates, normalized to geometric mean one, and reported in
the log domain as mean-opinion-score surrogates.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import csgraph, csr_matrix

__all__ = ["BTError", "PairedComparisonMatrix", "bt_scores"]


class BTError(Exception):
    pass


@dataclass(frozen=True)
class PairedComparisonMatrix:
    """Square count matrix; entry (i, j) is how often i was preferred over j."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise BTError(f"comparison matrix must be square, got shape {counts.shape}")
        if np.any(counts < 0):
            raise BTError("comparison counts must be non-negative")
        if np.any(counts != np.floor(counts)):
            raise BTError("comparison counts must be integers")
        if np.any(np.diag(counts) != 0):
            raise BTError("comparison matrix diagonal must be zero")
        object.__setattr__(self, "counts", counts.astype(np.float64))

    @property
    def n(self) -> int:
        return self.counts.shape[0]

    @classmethod
    def from_csv(cls, path: str | Path) -> "PairedComparisonMatrix":
        """Read (i, j, count) rows; an ``i,j,count`` header line is optional."""
        rows = []
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or (lineno == 1 and row[0].strip().lower() == "i"):
                    continue
                if len(row) != 3:
                    raise BTError(f"{path}:{lineno}: expected 3 columns (i,j,count), got {len(row)}")
                try:
                    rows.append((int(row[0]), int(row[1]), int(row[2])))
                except ValueError as exc:
                    raise BTError(f"{path}:{lineno}: {exc}") from None
        if not rows:
            raise BTError(f"{path}: no comparison rows")
        n = max(max(i, j) for i, j, _ in rows) + 1
        counts = np.zeros((n, n), dtype=np.int64)
        for i, j, c in rows:
            if i == j:
                raise BTError(f"{path}: self-comparison ({i},{j}) not allowed")
            counts[i, j] += c
        return cls(counts)


def _components(adj: np.ndarray, connection: str) -> list[list[int]]:
    n_comp, labels = csgraph.connected_components(csr_matrix(adj), directed=True,
                                                  connection=connection)
    return [sorted(np.flatnonzero(labels == k).tolist()) for k in range(n_comp)]


def bt_scores(matrix: PairedComparisonMatrix, tol: float = 1e-8, max_iter: int = 10000) -> np.ndarray:
    """Log-domain Bradley-Terry strengths, gauge-fixed to geometric mean 1.

    Raises if the comparison graph is disconnected or if some group of
    items never loses to the rest (the MLE diverges).
    """
    w = matrix.counts
    n = matrix.n
    if n < 2:
        raise BTError("need at least two items to compare")
    pairs = w + w.T
    comps = _components(pairs > 0, connection="weak")
    if len(comps) > 1:
        raise BTError(f"comparison graph is disconnected; components: {comps}")
    strong = _components(w > 0, connection="strong")
    if len(strong) > 1:
        raise BTError(
            "one-sided wins make the maximum likelihood diverge; "
            f"win-graph components: {strong}")

    wins = w.sum(axis=1)
    pi = np.ones(n, dtype=np.float64)
    for _ in range(max_iter):
        denom = pairs / (pi[:, None] + pi[None, :])
        np.fill_diagonal(denom, 0.0)
        new_pi = wins / denom.sum(axis=1)
        new_pi /= np.exp(np.mean(np.log(new_pi)))
        delta = np.max(np.abs(np.log(new_pi) - np.log(pi)))
        pi = new_pi
        if delta < tol:
            break
    else:
        raise BTError(f"Bradley-Terry updates did not converge within {max_iter} iterations")
    return np.log(pi)
