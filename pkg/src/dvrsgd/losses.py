"""Finite-sum objectives F(w) = (1/N) sum_i f_i(w) with per-sample gradients.

Three problem kinds are supported:

* ``quadratic``            f_i(w) = 0.5*(a_i.w - b_i)^2 + 0.5*lam*|w|^2
* ``l2-logistic``          binary logistic loss with labels {0,1} plus ridge
* ``multiclass-logistic``  K-class softmax cross-entropy plus ridge

The ridge term is folded into every f_i, so the finite-sum form is preserved
and each f_i keeps its own smoothness constant.  Multiclass parameters are
stored as one flat vector of length K*d (class-major blocks), so the whole
system moves a single dense parameter vector regardless of problem kind.

Reduction order matters here: ``mean_gradient``/``loss_sum`` accumulate
per-sample contributions strictly in index order, and every inner product is
evaluated with non-optimized ``np.einsum``.  This makes single-sample and
batched evaluations bitwise identical, which the rest of the package (and its
tests) rely on.
"""

import numpy as np

__all__ = [
    "Sample",
    "Problem",
    "sample_loss",
    "loss_sum",
    "objective",
    "sample_gradient",
    "mean_gradient",
    "full_gradient",
    "make_synthetic",
]

KINDS = ("quadratic", "l2-logistic", "multiclass-logistic")


class Sample:
    """One training sample in sparse form: (indices, values, label).

    Feature indices must be strictly increasing; ``label`` is a class index
    for logistic problems and a real target for quadratic ones.
    """

    __slots__ = ("indices", "values", "label")

    def __init__(self, indices, values, label):
        indices = np.asarray(indices, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if indices.shape != values.shape:
            raise ValueError("indices and values must have equal length")
        if indices.size and (np.any(np.diff(indices) <= 0) or indices[0] < 0):
            raise ValueError("feature indices must be nonnegative and strictly increasing")
        self.indices = indices
        self.values = values
        self.label = label

    def dense(self, dim: int) -> np.ndarray:
        x = np.zeros(dim)
        x[self.indices] = self.values
        return x


class Problem:
    """Immutable finite-sum problem over a dense feature matrix.

    Attributes
    ----------
    kind : one of KINDS
    features : (N, d) float64 matrix, one sample per row
    targets : (N,) labels (int for logistic kinds, float for quadratic)
    lam : ridge coefficient lam >= 0
    num_classes : K (1 for quadratic, 2 for binary logistic)
    mu, smoothness : strong-convexity / max per-sample smoothness constants
        when known (exact for quadratic, bounds for logistic), else None
    """

    def __init__(self, kind, features, targets, lam=0.0, num_classes=None,
                 mu=None, smoothness=None):
        if kind not in KINDS:
            raise ValueError(f"unknown problem kind {kind!r}")
        features = np.ascontiguousarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] < 1:
            raise ValueError("features must be a nonempty (N, d) matrix")
        if lam < 0:
            raise ValueError("lam must be >= 0")
        self.kind = kind
        self.features = features
        self.lam = float(lam)
        if kind == "quadratic":
            self.targets = np.asarray(targets, dtype=np.float64)
            self.num_classes = 1
        else:
            self.targets = np.asarray(targets, dtype=np.int64)
            k = int(self.targets.max()) + 1 if num_classes is None else int(num_classes)
            if np.any(self.targets < 0) or np.any(self.targets >= k):
                raise ValueError("labels must lie in {0,..,K-1}")
            if kind == "l2-logistic" and k != 2:
                raise ValueError("l2-logistic requires binary labels")
            self.num_classes = k
        if self.targets.shape[0] != features.shape[0]:
            raise ValueError("targets length must match sample count")
        self.mu = mu
        self.smoothness = smoothness
        features.setflags(write=False)
        self.targets.setflags(write=False)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def dim(self) -> int:
        """Length of the parameter vector this problem optimizes."""
        if self.kind == "multiclass-logistic":
            return self.num_classes * self.num_features
        return self.num_features


def _check_param(problem: Problem, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (problem.dim,):
        raise ValueError(f"parameter vector must have shape ({problem.dim},), got {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("parameter vector contains non-finite entries")
    return w


def _check_indices(problem: Problem, idx) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise ValueError("sample index set must be a nonempty 1-D sequence")
    if np.any(idx < 0) or np.any(idx >= problem.n):
        raise ValueError("sample index out of range")
    return idx


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # evaluated piecewise so exp never sees positive arguments
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _loss_rows(problem: Problem, w: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Per-sample loss values f_i(w) for i in idx (ridge included)."""
    X = problem.features[idx]
    reg = 0.5 * problem.lam * float(np.einsum("d,d->", w, w))
    if problem.kind == "quadratic":
        r = np.einsum("nd,d->n", X, w) - problem.targets[idx]
        return 0.5 * r * r + reg
    if problem.kind == "l2-logistic":
        s = 2.0 * problem.targets[idx] - 1.0
        margin = s * np.einsum("nd,d->n", X, w)
        # log(1 + exp(-margin)) without overflow
        return np.log1p(np.exp(-np.abs(margin))) + np.maximum(-margin, 0.0) + reg
    k = problem.num_classes
    W = w.reshape(k, problem.num_features)
    Z = np.einsum("nd,kd->nk", X, W)
    zmax = Z.max(axis=1)
    lse = zmax + np.log(np.exp(Z - zmax[:, None]).sum(axis=1))
    picked = Z[np.arange(idx.size), problem.targets[idx]]
    return lse - picked + reg


def _gradient_rows(problem: Problem, w: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Per-sample gradients grad f_i(w), one row per index (ridge included)."""
    X = problem.features[idx]
    if problem.kind == "quadratic":
        r = np.einsum("nd,d->n", X, w) - problem.targets[idx]
        return r[:, None] * X + problem.lam * w[None, :]
    if problem.kind == "l2-logistic":
        s = 2.0 * problem.targets[idx] - 1.0
        margin = s * np.einsum("nd,d->n", X, w)
        coef = -s * _sigmoid(-margin)
        return coef[:, None] * X + problem.lam * w[None, :]
    k = problem.num_classes
    W = w.reshape(k, problem.num_features)
    Z = np.einsum("nd,kd->nk", X, W)
    Z -= Z.max(axis=1)[:, None]
    P = np.exp(Z)
    P /= P.sum(axis=1)[:, None]
    P[np.arange(idx.size), problem.targets[idx]] -= 1.0
    rows = np.einsum("nk,nd->nkd", P, X) + problem.lam * W[None, :, :]
    return rows.reshape(idx.size, problem.dim)


def _ordered_sum(rows: np.ndarray) -> np.ndarray:
    acc = rows[0].copy()
    for k in range(1, rows.shape[0]):
        acc += rows[k]
    return acc


def sample_loss(problem: Problem, w, i: int) -> float:
    """f_i(w), the loss of sample i including the ridge term."""
    w = _check_param(problem, w)
    idx = _check_indices(problem, [i])
    return float(_loss_rows(problem, w, idx)[0])


def loss_sum(problem: Problem, w, indices) -> float:
    """Sum of f_i(w) over the given indices, accumulated in index order."""
    w = _check_param(problem, w)
    idx = _check_indices(problem, indices)
    rows = _loss_rows(problem, w, idx)
    total = float(rows[0])
    for k in range(1, rows.shape[0]):
        total += float(rows[k])
    return total


def objective(problem: Problem, w) -> float:
    """F(w) = (1/N) sum_i f_i(w)."""
    value = loss_sum(problem, w, np.arange(problem.n)) / problem.n
    if not np.isfinite(value):
        raise FloatingPointError("objective overflowed; loss formulation is broken")
    return value


def sample_gradient(problem: Problem, w, i: int) -> np.ndarray:
    """grad f_i(w), including the ridge term when lam > 0."""
    return mean_gradient(problem, w, [i])


def mean_gradient(problem: Problem, w, indices) -> np.ndarray:
    """Mean of grad f_i(w) over ``indices``, accumulated in index order."""
    w = _check_param(problem, w)
    idx = _check_indices(problem, indices)
    return _ordered_sum(_gradient_rows(problem, w, idx)) / idx.size


def full_gradient(problem: Problem, w) -> np.ndarray:
    """grad F(w): the exact index-ordered mean of all sample gradients."""
    return mean_gradient(problem, w, np.arange(problem.n))


def make_synthetic(kind, n, d, *, num_classes=2, lam=0.0, seed=0,
                   mu=1.0, smoothness=10.0) -> Problem:
    """Generate a reproducible synthetic problem of the given kind.

    quadratic:
        ``mu`` and ``smoothness`` are exact by construction: rows share the
        squared norm smoothness-mu and span a rank-deficient subspace, so the
        ridge (set to mu) alone carries the strong convexity, and the largest
        per-sample smoothness constant is exactly ``smoothness``.  ``lam`` is
        ignored for this kind.
    l2-logistic / multiclass-logistic:
        gaussian features, labels drawn from a planted linear model; records
        mu = lam (lower bound) and the standard curvature upper bound
        lam + c * max_i |x_i|^2 with c = 1/4 (binary) or 1/2 (softmax).
    """
    if kind not in KINDS:
        raise ValueError(f"unknown problem kind {kind!r}")
    if n < 1 or d < 1:
        raise ValueError("need n >= 1 and d >= 1")
    rng = np.random.default_rng(seed)

    if kind == "quadratic":
        if d < 2:
            raise ValueError("quadratic generator needs d >= 2")
        if not smoothness > mu > 0:
            raise ValueError("need smoothness > mu > 0")
        A = rng.normal(size=(n, d))
        A[:, -1] = 0.0  # rank <= d-1, so min curvature comes from the ridge alone
        A *= np.sqrt(smoothness - mu) / np.linalg.norm(A, axis=1, keepdims=True)
        b = rng.normal(size=n)
        return Problem("quadratic", A, b, lam=mu, mu=float(mu), smoothness=float(smoothness))

    X = rng.normal(size=(n, d)) / np.sqrt(d)
    row_norm_sq = float(np.max(np.einsum("nd,nd->n", X, X)))
    if kind == "l2-logistic":
        w_true = rng.normal(size=d) * 3.0
        y = (rng.random(n) < _sigmoid(X @ w_true)).astype(np.int64)
        return Problem("l2-logistic", X, y, lam=lam, num_classes=2,
                       mu=(lam if lam > 0 else None),
                       smoothness=lam + 0.25 * row_norm_sq)

    k = int(num_classes)
    if k < 2:
        raise ValueError("multiclass generator needs num_classes >= 2")
    W_true = rng.normal(size=(k, d)) * 2.0
    Z = X @ W_true.T
    P = np.exp(Z - Z.max(axis=1)[:, None])
    P /= P.sum(axis=1)[:, None]
    y = (P.cumsum(axis=1) < rng.random(n)[:, None]).sum(axis=1).astype(np.int64)
    y = np.minimum(y, k - 1)
    return Problem("multiclass-logistic", X, y, lam=lam, num_classes=k,
                   mu=(lam if lam > 0 else None),
                   smoothness=lam + 0.5 * row_norm_sq)
