"""Dataset ingestion, partitioning, and LibSVM text I/O.

LibSVM lines are ``<label> <idx>:<val> ...`` with 1-based feature indices.
Labels are remapped to contiguous {0,..,K-1} in first-seen order and the
feature dimension defaults to the largest index in the file (override with
``dim`` when train/validation splits must agree).
"""

from dataclasses import dataclass

import numpy as np

from .losses import Problem, Sample

__all__ = ["DataFormatError", "load_libsvm", "write_libsvm", "Partitioning", "partition"]


class DataFormatError(Exception):
    pass


def _parse_line(line: str, lineno: int) -> Sample:
    parts = line.split()
    try:
        label = float(parts[0])
    except ValueError:
        raise DataFormatError(f"line {lineno}: bad label {parts[0]!r}")
    indices = []
    values = []
    for tok in parts[1:]:
        try:
            idx_s, val_s = tok.split(":", 1)
            idx = int(idx_s)
            val = float(val_s)
        except ValueError:
            raise DataFormatError(f"line {lineno}: bad feature token {tok!r}")
        if idx < 1:
            raise DataFormatError(f"line {lineno}: feature indices are 1-based, got {idx}")
        indices.append(idx - 1)
        values.append(val)
    try:
        return Sample(indices, values, label)
    except ValueError as exc:
        raise DataFormatError(f"line {lineno}: {exc}")


def load_libsvm(path, *, lam: float = 0.0, dim: int | None = None,
                kind: str | None = None) -> Problem:
    """Load a LibSVM-format classification file into a Problem.

    K = number of distinct labels; binary files become ``l2-logistic``
    (parameter length d), others ``multiclass-logistic`` (length K*d).
    """
    samples: list[Sample] = []
    label_map: dict[float, int] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            s = _parse_line(line, lineno)
            if s.label not in label_map:
                label_map[s.label] = len(label_map)
            samples.append(s)
    if not samples:
        raise DataFormatError(f"{path}: no samples")
    max_dim = max((int(s.indices[-1]) + 1 for s in samples if s.indices.size), default=0)
    if dim is None:
        dim = max_dim
    elif dim < max_dim:
        raise DataFormatError(f"--dim {dim} smaller than max feature index {max_dim}")
    if dim < 1:
        raise DataFormatError(f"{path}: could not infer a feature dimension")
    X = np.zeros((len(samples), dim))
    y = np.empty(len(samples), dtype=np.int64)
    for i, s in enumerate(samples):
        X[i, s.indices] = s.values
        y[i] = label_map[s.label]
    k = len(label_map)
    if kind is None:
        kind = "l2-logistic" if k == 2 else "multiclass-logistic"
    return Problem(kind, X, y, lam=lam, num_classes=k,
                   mu=(lam if lam > 0 else None))


def write_libsvm(problem: Problem, path):
    """Write a problem back out in LibSVM text form (zeros skipped)."""
    with open(path, "w") as fh:
        for i in range(problem.n):
            row = problem.features[i]
            nz = np.nonzero(row)[0]
            feats = " ".join(f"{j + 1}:{row[j]:.17g}" for j in nz)
            if problem.kind == "quadratic":
                label = f"{problem.targets[i]:.17g}"
            else:
                label = str(int(problem.targets[i]))
            fh.write(f"{label} {feats}\n".rstrip() + "\n")


@dataclass(frozen=True)
class Partitioning:
    """Disjoint cover of sample indices: one subset D_p per worker."""

    assignments: np.ndarray     # sample index -> worker id
    counts: np.ndarray          # n_p
    weights: np.ndarray         # q_p = n_p / N

    @property
    def num_workers(self) -> int:
        return self.counts.shape[0]

    def indices_for(self, p: int) -> np.ndarray:
        return np.nonzero(self.assignments == p)[0]


def partition(problem: Problem, P: int, strategy: str = "contiguous", *,
              seed: int = 0) -> Partitioning:
    """Split the samples into P disjoint subsets.

    ``contiguous`` deals blocks in index order; ``shuffled`` permutes with the
    seed first.  Remainder samples go to the lowest-id workers, so sizes are
    ceil(N/P) then floor(N/P).
    """
    n = problem.n
    if P < 1 or P > n:
        raise ValueError(f"need 1 <= P <= N, got P={P}, N={n}")
    if strategy not in ("contiguous", "shuffled"):
        raise ValueError(f"unknown partition strategy {strategy!r}")
    order = np.arange(n)
    if strategy == "shuffled":
        order = np.random.default_rng(seed).permutation(n)
    base, extra = divmod(n, P)
    counts = np.array([base + (1 if p < extra else 0) for p in range(P)], dtype=np.int64)
    assignments = np.empty(n, dtype=np.int64)
    start = 0
    for p, c in enumerate(counts):
        assignments[order[start:start + c]] = p
        start += c
    return Partitioning(assignments=assignments, counts=counts, weights=counts / n)
