"""RBF support vector machine baseline on mean-pooled MFCCs.

The binary solver is SMO on the soft-margin dual

    min_a  1/2 a'Qa - sum(a)   s.t.  0 <= a_i <= C,  y'a = 0,

with ``Q_ij = y_i y_j K(x_i, x_j)``. Working pairs are chosen by the
maximal-violating-pair rule with second-order selection of the partner,
and iteration stops once the violation gap ``m(a) - M(a)`` drops below
``tol``. That gap bounds every KKT residual ``|y_i f(x_i) - 1|`` that
should be zero, so a converged model satisfies KKT within ``tol``.

Multiclass prediction is one-vs-one voting over all class pairs.
"""

from __future__ import annotations

import itertools
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVariance, EmptyMatrix, MissingClass, NoConvergence, SingleClassInput

STD_FLOOR = 1e-12
SV_THRESHOLD = 1e-12
TAU = 1e-12


@dataclass
class ScalerParams:
    mean: np.ndarray
    std: np.ndarray


def fit_scaler(X) -> ScalerParams:
    """Column means and population standard deviations (near-zero std becomes 1)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyMatrix("fit_scaler needs at least one row")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std < STD_FLOOR, 1.0, std)
    return ScalerParams(mean, std)


def transform(X, scaler: ScalerParams) -> np.ndarray:
    return (np.asarray(X, dtype=np.float64) - scaler.mean) / scaler.std


def gamma_scale(X_scaled) -> float:
    """``1 / (n_features * var(X))`` with the variance taken over every entry."""
    X = np.asarray(X_scaled, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise EmptyMatrix("gamma_scale needs at least two rows")
    var = X.var()
    if var == 0:
        raise DegenerateVariance("all feature values are identical")
    return 1.0 / (X.shape[1] * var)


def rbf_kernel(x, y, gamma: float) -> float:
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_matrix(A, B, gamma: float) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


@dataclass
class SvmBinary:
    support_vectors: np.ndarray  # n_sv x d
    dual_coefs: np.ndarray  # alpha_i * y_i
    b: float
    gamma: float
    C: float
    converged: bool = True

    def decision(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if len(self.dual_coefs) == 0:
            return np.full(len(X), self.b)
        return rbf_matrix(X, self.support_vectors, self.gamma) @ self.dual_coefs + self.b


@dataclass
class SmoResult:
    """Full solver output; ``model`` keeps only the support vectors."""

    model: SvmBinary
    alpha: np.ndarray
    iterations: int


def dual_objective(alpha, y, K) -> float:
    """The maximization form ``sum(a) - 1/2 sum_ij a_i a_j y_i y_j K_ij``."""
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


def smo_solve(X, y, C: float = 10.0, gamma: float = 0.025, tol: float = 1e-3, max_iter: int | None = None) -> SmoResult:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if n < 2 or not np.all(np.isin(y, (-1.0, 1.0))):
        raise SingleClassInput("need at least two samples labelled +1/-1")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise SingleClassInput("both classes must be present")
    if max_iter is None:
        max_iter = max(10_000_000, 100 * n)

    K = rbf_matrix(X, X, gamma)
    Q = (y[:, None] * y[None, :]) * K
    QD = np.diag(Q).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    pos = y > 0

    it = 0
    converged = False
    while it < max_iter:
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        score = -y * G
        if not up.any() or not low.any():
            converged = True
            break
        i = int(np.argmax(np.where(up, score, -np.inf)))
        m = score[i]
        M = np.min(np.where(low, score, np.inf))
        if m - M < tol:
            converged = True
            break

        # second-order choice of the partner among violating low indices
        grad_gap = m - score
        cand = low & (grad_gap > 0)
        curv = QD[i] + QD - 2.0 * y[i] * y * Q[i]
        curv = np.where(curv > 0, curv, TAU)
        gain = np.where(cand, -(grad_gap**2) / curv, np.inf)
        j = int(np.argmin(gain))

        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(QD[i] + QD[j] + 2.0 * Q[i, j], TAU)
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            quad = max(QD[i] + QD[j] - 2.0 * Q[i, j], TAU)
            delta = (G[i] - G[j]) / quad
            total = ai + aj
            ai -= delta
            aj += delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
            elif aj < 0:
                aj, ai = 0.0, total
            if total > C:
                if aj > C:
                    aj, ai = C, total - C
            elif ai < 0:
                ai, aj = 0.0, total

        d_i, d_j = ai - alpha[i], aj - alpha[j]
        alpha[i], alpha[j] = ai, aj
        G += Q[:, i] * d_i + Q[:, j] * d_j
        it += 1

    if not converged:
        warnings.warn(
            NoConvergence(f"SMO stopped after {max_iter} iterations with KKT violations above tol={tol}")
        )

    # fresh gradient so the bias does not inherit accumulated rounding
    G = Q @ alpha - 1.0
    score = -y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        b = float(score[free].mean())
    else:
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        hi = score[up].max() if up.any() else score.max()
        lo = score[low].min() if low.any() else score.min()
        b = float((hi + lo) / 2)

    keep = alpha > SV_THRESHOLD
    model = SvmBinary(X[keep].copy(), (alpha * y)[keep], b, gamma, C, converged)
    return SmoResult(model, alpha, it)


def smo_train_binary(X, y, C: float = 10.0, gamma: float = 0.025, tol: float = 1e-3,
                     max_iter: int | None = None) -> SvmBinary:
    return smo_solve(X, y, C, gamma, tol, max_iter).model


@dataclass
class SvmModel:
    scaler: ScalerParams
    pairs: list[tuple[int, int]]
    classifiers: list[SvmBinary]
    labels: list[str]
    gamma: float
    C: float

    def __post_init__(self):
        k = len(self.labels)
        if len(self.classifiers) != k * (k - 1) // 2 or len(self.pairs) != len(self.classifiers):
            raise ValueError(f"{k} classes need {k * (k - 1) // 2} one-vs-one classifiers")


def _fit_pair(args):
    X, y, C, gamma, tol = args
    return smo_train_binary(X, y, C, gamma, tol)


def svm_fit(features, labels, class_names, C: float = 10.0, tol: float = 1e-3, jobs: int = 1) -> SvmModel:
    """Standardize on the training rows, pick gamma='scale', train every class pair."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    k = len(class_names)
    missing = sorted(set(range(k)) - set(y.tolist()))
    if missing:
        raise MissingClass(f"training data lacks classes {[class_names[c] for c in missing]}")
    scaler = fit_scaler(X)
    Xs = transform(X, scaler)
    gamma = gamma_scale(Xs)
    pairs = list(itertools.combinations(range(k), 2))
    tasks = []
    for a, b in pairs:
        rows = (y == a) | (y == b)
        tasks.append((Xs[rows], np.where(y[rows] == a, 1.0, -1.0), C, gamma, tol))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            classifiers = list(pool.map(_fit_pair, tasks))
    else:
        classifiers = [_fit_pair(t) for t in tasks]
    return SvmModel(scaler, pairs, classifiers, list(class_names), gamma, C)


def svm_vote(model: SvmModel, X) -> np.ndarray:
    """Class indices by one-vs-one vote on already-standardized rows.

    Ties on votes go to the larger summed decision value (oriented toward
    each class), then to the lowest class index.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    k = len(model.labels)
    votes = np.zeros((len(X), k), dtype=np.int64)
    scores = np.zeros((len(X), k))
    for (a, b), clf in zip(model.pairs, model.classifiers):
        d = clf.decision(X)
        first = d > 0
        votes[first, a] += 1
        votes[~first, b] += 1
        scores[:, a] += d
        scores[:, b] -= d
    out = np.empty(len(X), dtype=np.int64)
    for r in range(len(X)):
        tied = np.flatnonzero(votes[r] == votes[r].max())
        out[r] = tied[np.argmax(scores[r, tied])]
    return out


def svm_predict_indices(model: SvmModel, X) -> np.ndarray:
    return svm_vote(model, transform(np.atleast_2d(X), model.scaler))


def svm_predict(model: SvmModel, x) -> str:
    return model.labels[int(svm_predict_indices(model, x)[0])]
