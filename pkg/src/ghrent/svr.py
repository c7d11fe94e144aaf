"""Epsilon-insensitive support vector regression trained by SMO.

The dual is solved in the usual 2n-variable form: ``a = [alpha; alpha*]``,
labels ``z = [+1; -1]``, minimise ``0.5 a'Qa + p'a`` with
``Q_st = z_s z_t K(x_s, x_t)``, ``p = [eps - y; eps + y]``, ``0 <= a <= C``
and ``z'a = 0``. Each step updates the maximal violating pair; the loop
stops once the violation gap ``m - M`` drops to ``tol``. The model keeps
``beta = alpha - alpha*`` for the support vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import DataError, NoConvergence, ShapeMismatch

KERNELS = ("rbf", "linear")
_FULL_KERNEL_MAX_ROWS = 4000
_TAU = 1e-12
_CACHE_BYTES = 512 * 2**20  # kernel row cache when the full matrix is not stored


@dataclass(frozen=True)
class SvrParams:
    C: float = 1.0
    epsilon: float = 0.1
    kernel: str = "rbf"
    gamma: float | None = None  # None -> 1 / n_features
    tol: float = 1e-3
    max_passes: int = 10_000_000

    def __post_init__(self):
        problems = []
        if not self.C > 0:
            problems.append("C must be > 0")
        if not self.epsilon >= 0:
            problems.append("epsilon must be >= 0")
        if self.kernel not in KERNELS:
            problems.append(f"kernel must be one of {KERNELS}")
        if self.gamma is not None and not self.gamma > 0:
            problems.append("gamma must be > 0")
        if not self.tol > 0:
            problems.append("tol must be > 0")
        if self.max_passes < 1:
            problems.append("max_passes must be >= 1")
        if problems:
            raise DataError("; ".join(problems))


@dataclass(frozen=True, eq=False)
class SvrModel:
    support_vectors: np.ndarray  # standardized rows
    dual_coefs: np.ndarray
    bias: float
    kernel: str
    gamma: float
    x_mean: np.ndarray
    x_scale: np.ndarray
    support_indices: np.ndarray  # training-row positions of the support vectors

    @property
    def n_features(self) -> int:
        return self.x_mean.shape[0]


@numba.njit(cache=True, nogil=True)
def _kernel_row(XT, i, kind, gamma, sqnorm, out):
    """Row ``i`` of the kernel matrix; ``XT`` is the transposed design, so the
    inner loop runs over contiguous memory."""
    d, n = XT.shape
    out[:] = 0.0
    for j in range(d):
        xij = XT[j, i]
        col = XT[j]
        for k in range(n):
            out[k] += xij * col[k]
    if kind == 0:
        for k in range(n):
            out[k] = np.exp(-gamma * max(sqnorm[i] + sqnorm[k] - 2.0 * out[k], 0.0))


@numba.njit(cache=True, nogil=True)
def _cached_row(XT, i, kind, gamma, sqnorm, rows, slot_of, owner, last_used, clock):
    """Kernel row ``i`` from a least-recently-used row cache."""
    s = slot_of[i]
    if s < 0:
        s = 0
        for q in range(owner.shape[0]):
            if owner[q] < 0:
                s = q
                break
            if last_used[q] < last_used[s]:
                s = q
        if owner[s] >= 0:
            slot_of[owner[s]] = -1
        owner[s] = i
        slot_of[i] = s
        _kernel_row(XT, i, kind, gamma, sqnorm, rows[s])
    last_used[s] = clock
    return rows[s]


@numba.njit(cache=True, nogil=True)
def _smo(X, y, C, eps, kind, gamma, tol, max_iter, Kfull, use_full, cache_rows):
    n = X.shape[0]
    n2 = 2 * n
    a = np.zeros(n2)
    G = np.empty(n2)
    for t in range(n):
        G[t] = eps - y[t]
        G[t + n] = eps + y[t]
    sqnorm = np.empty(n)
    for t in range(n):
        s = 0.0
        for j in range(X.shape[1]):
            s += X[t, j] * X[t, j]
        sqnorm[t] = s
    XT = np.ascontiguousarray(X.T)
    n_slots = 1 if use_full else max(2, min(n, cache_rows))
    rows = np.empty((n_slots, n if not use_full else 1))
    slot_of = np.full(n, -1, np.int64)
    owner = np.full(n_slots, -1, np.int64)
    last_used = np.zeros(n_slots, np.int64)
    it = 0
    gap = np.inf
    while True:
        # maximal violating pair; strict comparisons keep the lowest index on ties
        m_up = -np.inf
        i = -1
        M_low = np.inf
        j = -1
        for t in range(n2):
            z = 1.0 if t < n else -1.0
            u = -z * G[t]
            if (z > 0 and a[t] < C) or (z < 0 and a[t] > 0):
                if u > m_up:
                    m_up = u
                    i = t
            if (z > 0 and a[t] > 0) or (z < 0 and a[t] < C):
                if u < M_low:
                    M_low = u
                    j = t
        gap = m_up - M_low
        if gap <= tol or i < 0 or j < 0:
            break
        if it >= max_iter:
            break
        it += 1
        ii = i if i < n else i - n
        jj = j if j < n else j - n
        if use_full:
            Ki = Kfull[ii]
            Kj = Kfull[jj]
        else:
            Ki = _cached_row(XT, ii, kind, gamma, sqnorm, rows, slot_of, owner, last_used, 2 * it)
            Kj = _cached_row(XT, jj, kind, gamma, sqnorm, rows, slot_of, owner, last_used, 2 * it + 1)
        zi = 1.0 if i < n else -1.0
        zj = 1.0 if j < n else -1.0
        Qii = Ki[ii]
        Qjj = Kj[jj]
        Qij = zi * zj * Ki[jj]
        ai_old = a[i]
        aj_old = a[j]
        if zi != zj:
            quad = Qii + Qjj + 2.0 * Qij
            if quad <= 0:
                quad = _TAU
            delta = (-G[i] - G[j]) / quad
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = diff
            else:
                if a[i] < 0:
                    a[i] = 0.0
                    a[j] = -diff
            if diff > 0:  # C_i - C_j == 0
                if a[i] > C:
                    a[i] = C
                    a[j] = C - diff
            else:
                if a[j] > C:
                    a[j] = C
                    a[i] = C + diff
        else:
            quad = Qii + Qjj - 2.0 * Qij
            if quad <= 0:
                quad = _TAU
            delta = (G[i] - G[j]) / quad
            s = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if s > C:
                if a[i] > C:
                    a[i] = C
                    a[j] = s - C
            else:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = s
            if s > C:
                if a[j] > C:
                    a[j] = C
                    a[i] = s - C
            else:
                if a[i] < 0:
                    a[i] = 0.0
                    a[j] = s
        dai = a[i] - ai_old
        daj = a[j] - aj_old
        for k in range(n):
            qi = zi * Ki[k] * dai
            qj = zj * Kj[k] * daj
            G[k] += qi + qj
            G[k + n] -= qi + qj
    # bias: mean of implied values over free variables, else the bracket midpoint
    total = 0.0
    nfree = 0
    for t in range(n2):
        if 0 < a[t] < C:
            z = 1.0 if t < n else -1.0
            total += -z * G[t]
            nfree += 1
    if nfree > 0:
        b = total / nfree
    else:
        b = 0.5 * (m_up + M_low)
    beta = a[:n] - a[n:]
    return beta, b, gap, it


def _standardize(X):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return mean, scale


def _kernel_matrix(A, B, kernel: str, gamma: float) -> np.ndarray:
    dot = A @ B.T
    if kernel == "linear":
        return dot
    sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * dot
    return np.exp(-gamma * np.maximum(sq, 0.0))


def fit_svr(X, y, params: SvrParams = SvrParams()) -> SvrModel:
    """Fit on standardized features (train mean/std baked into the model).

    Raises :class:`NoConvergence` carrying the last iterate when the gap is
    still above ``tol`` after ``max_passes`` pair updates.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] < 1:
        raise ShapeMismatch(f"X {X.shape} and y {y.shape} are not aligned")
    mean, scale = _standardize(X)
    Xs = np.ascontiguousarray((X - mean) / scale)
    gamma = params.gamma if params.gamma is not None else 1.0 / max(X.shape[1], 1)
    kind = 0 if params.kernel == "rbf" else 1
    use_full = X.shape[0] <= _FULL_KERNEL_MAX_ROWS
    Kfull = _kernel_matrix(Xs, Xs, params.kernel, gamma) if use_full else np.zeros((1, 1))
    beta, b, gap, _ = _smo(
        Xs, y, float(params.C), float(params.epsilon), kind, float(gamma),
        float(params.tol), int(params.max_passes), Kfull, use_full, _CACHE_BYTES // (8 * X.shape[0]),
    )
    sv = np.flatnonzero(beta != 0)
    model = SvrModel(
        support_vectors=Xs[sv].copy(),
        dual_coefs=beta[sv].copy(),
        bias=float(b),
        kernel=params.kernel,
        gamma=float(gamma),
        x_mean=mean,
        x_scale=scale,
        support_indices=sv.astype(np.int64),
    )
    if gap > params.tol:
        raise NoConvergence(f"SMO stopped after {params.max_passes} updates with gap {gap:.3g}", model, gap)
    return model


def _decision(model: SvrModel, Xs: np.ndarray) -> np.ndarray:
    if model.dual_coefs.size == 0:
        return np.full(Xs.shape[0], model.bias)
    out = np.empty(Xs.shape[0])
    step = 2048
    for start in range(0, Xs.shape[0], step):
        K = _kernel_matrix(Xs[start : start + step], model.support_vectors, model.kernel, model.gamma)
        out[start : start + step] = K @ model.dual_coefs + model.bias
    return out


def predict_svr(model: SvrModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ShapeMismatch(f"model expects {model.n_features} columns, got shape {X.shape}")
    return _decision(model, (X - model.x_mean) / model.x_scale)


def dense_coefficients(model: SvrModel, n: int) -> np.ndarray:
    """Length-``n`` beta vector over the training rows, zero off the support set."""
    if model.support_indices.size and model.support_indices.max() >= n:
        raise ShapeMismatch(f"support index {model.support_indices.max()} out of range for {n} rows")
    beta = np.zeros(n)
    beta[model.support_indices] = model.dual_coefs
    return beta


def dual_objective(model: SvrModel, X, y, epsilon: float) -> float:
    """``y'b - eps*sum|b| - 0.5 b'Kb`` on the standardized training rows."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    beta = dense_coefficients(model, X.shape[0])
    Xs = (X - model.x_mean) / model.x_scale
    K = _kernel_matrix(Xs, Xs, model.kernel, model.gamma)
    return float(y @ beta - epsilon * np.abs(beta).sum() - 0.5 * beta @ K @ beta)


def kkt_report(model: SvrModel, X, y, params: SvrParams) -> float:
    """Largest per-point KKT violation on the training set.

    With ``r = y - f(x)``: a zero coefficient needs ``|r| <= eps``; a free
    coefficient needs ``r = +eps`` (positive) or ``r = -eps`` (negative); a
    coefficient at ``+C`` needs ``r >= eps`` and at ``-C`` needs ``r <= -eps``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"X {X.shape} and y {y.shape} are not aligned")
    Xs = (X - model.x_mean) / model.x_scale
    r = y - _decision(model, Xs)
    beta = dense_coefficients(model, X.shape[0])
    eps, C = params.epsilon, params.C
    viol = np.where(
        beta == 0,
        np.maximum(np.abs(r) - eps, 0.0),
        np.where(
            beta >= C,
            np.maximum(eps - r, 0.0),
            np.where(beta <= -C, np.maximum(r + eps, 0.0), np.where(beta > 0, np.abs(r - eps), np.abs(r + eps))),
        ),
    )
    return float(viol.max()) if viol.size else 0.0
