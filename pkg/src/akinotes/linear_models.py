"""Multinomial naive Bayes and regularized linear classifiers.

Linear models minimize

    (1/n) * sum_i loss(y_i, w.x_i + b) + lam * penalty(w)

with logistic or hinge loss and an L1 (``|w|_1``) or L2 (``|w|^2 / 2``)
penalty; the intercept is never penalized.  The solver is accelerated
proximal gradient (FISTA) with backtracking and function-value restarts.
Hinge loss is handled by a smoothing continuation: a Huber-smoothed hinge
is minimized for a decreasing sequence of smoothing widths, each stage
warm-started from the previous one.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit, logsumexp

from .features import FeatureMatrix
from .textprep import SparseVector

PROBA_EPS = 1e-12
HINGE_SMOOTHING = (1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5)
PROX_RTOL = 1e-12       # roundoff slack so lambda == lambda_max thresholds to exact zeros


class Loss(str, enum.Enum):
    LOGISTIC = "Logistic"
    HINGE = "Hinge"


class Penalty(str, enum.Enum):
    L1 = "L1"
    L2 = "L2"


class DivergedError(FloatingPointError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 5000
    tol: float = 1e-8
    seed: int = 0


@dataclass
class LinearModel:
    weights: np.ndarray
    intercept: float
    loss: Loss
    penalty: Penalty
    lam: float
    n_iter: int = 0
    objective: float = float("nan")

    @property
    def n_zero(self) -> int:
        return int(np.count_nonzero(self.weights == 0.0))

    def decision_function(self, X) -> np.ndarray:
        X = _as_matrix(X, self.weights.size)
        return np.asarray(X @ self.weights).ravel() + self.intercept

    def predict_proba(self, X) -> np.ndarray:
        """Probability of the positive class.

        Logistic models return the fitted sigmoid.  SVM margins go through
        the same fixed sigmoid; the scores rank correctly but are not
        calibrated probabilities.
        """
        return np.clip(expit(self.decision_function(X)), PROBA_EPS, 1.0 - PROBA_EPS)

    def to_dict(self) -> dict:
        nz = np.flatnonzero(self.weights)
        return {
            "loss": self.loss.value,
            "penalty": self.penalty.value,
            "lambda": self.lam,
            "intercept": self.intercept,
            "dim": int(self.weights.size),
            "weights": {str(int(i)): float(self.weights[i]) for i in nz},
            "n_iter": self.n_iter,
            "objective": self.objective,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        w = np.zeros(d["dim"])
        for k, v in d["weights"].items():
            w[int(k)] = v
        return cls(w, float(d["intercept"]), Loss(d["loss"]), Penalty(d["penalty"]),
                   float(d["lambda"]), int(d.get("n_iter", 0)), float(d.get("objective", "nan")))


@dataclass
class NbModel:
    class_log_prior: np.ndarray       # shape (2,)
    feature_log_prob: np.ndarray      # shape (2, dim)
    alpha: float = 1.0

    def joint_log_likelihood(self, X) -> np.ndarray:
        X = _as_matrix(X, self.feature_log_prob.shape[1])
        return np.asarray(X @ self.feature_log_prob.T) + self.class_log_prior

    def predict_proba(self, X) -> np.ndarray:
        jll = self.joint_log_likelihood(X)
        p = np.exp(jll[:, 1] - logsumexp(jll, axis=1))
        return np.clip(p, PROBA_EPS, 1.0 - PROBA_EPS)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "class_log_prior": self.class_log_prior.tolist(),
            "feature_log_prob": self.feature_log_prob.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NbModel":
        return cls(np.array(d["class_log_prior"]), np.array(d["feature_log_prob"]), float(d["alpha"]))


def _as_matrix(X, dim):
    if isinstance(X, FeatureMatrix):
        X = X.X
    elif isinstance(X, SparseVector):
        X = sp.csr_matrix((X.values, X.indices, [0, len(X)]), shape=(1, X.dim))
    elif not sp.issparse(X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != dim:
        raise ValueError(f"dimension mismatch: model has {dim} features, input has {X.shape[1]}")
    return X


def _check_two_classes(y):
    if y.size == 0 or y.min() == y.max():
        raise ValueError("labels must contain both classes")


def train_nb(matrix: FeatureMatrix, alpha: float = 1.0) -> NbModel:
    """Multinomial NB with Laplace smoothing.

    Feature values are summed as (possibly fractional) counts, so tf-idf
    rows are accepted as-is.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    y = matrix.labels
    _check_two_classes(y)
    X = matrix.X
    counts = np.vstack([np.asarray(X[y == c].sum(axis=0)).ravel() for c in (0, 1)])
    smoothed = counts + alpha
    log_prob = np.log(smoothed) - np.log(smoothed.sum(axis=1, keepdims=True))
    prior = np.log(np.array([np.mean(y == 0), np.mean(y == 1)]))
    return NbModel(prior, log_prob, alpha)


# --- objectives -----------------------------------------------------------

def _smooth_loss(z, sign, loss, mu):
    """Mean loss and d(mean loss)/dz."""
    n = z.size
    if loss is Loss.LOGISTIC:
        m = sign * z
        val = np.logaddexp(0.0, -m).sum() / n
        grad = -sign * expit(-m) / n
        return val, grad
    u = 1.0 - sign * z
    if mu == 0.0:
        return np.maximum(u, 0.0).sum() / n, None
    val = np.where(u <= 0.0, 0.0, np.where(u <= mu, u * u / (2.0 * mu), u - mu / 2.0)).sum() / n
    grad = -sign * np.clip(u / mu, 0.0, 1.0) / n
    return val, grad


def objective(w, b, X, y, loss: Loss, penalty: Penalty, lam: float) -> float:
    """Exact training objective (unsmoothed hinge)."""
    sign = 2.0 * np.asarray(y, dtype=np.float64) - 1.0
    z = np.asarray(X @ w).ravel() + b
    val, _ = _smooth_loss(z, sign, Loss(loss), 0.0)
    return val + lam * _penalty_value(w, Penalty(penalty))


def _penalty_value(w, penalty):
    if penalty is Penalty.L1:
        return float(np.abs(w).sum())
    return 0.5 * float(w @ w)


def logistic_objective_grad(w, b, X, y, lam, penalty=Penalty.L2):
    """Smooth part of the logistic objective and its gradient in (w, b).

    For L1 the penalty term is excluded (it is handled by the prox step).
    """
    sign = 2.0 * np.asarray(y, dtype=np.float64) - 1.0
    z = np.asarray(X @ w).ravel() + b
    val, gz = _smooth_loss(z, sign, Loss.LOGISTIC, 0.0)
    gw = np.asarray(X.T @ gz).ravel()
    if Penalty(penalty) is Penalty.L2:
        val += 0.5 * lam * float(w @ w)
        gw = gw + lam * w
    return val, gw, float(gz.sum())


def _fista(X, sign, loss, penalty, lam, w, b, mu, max_iter, tol, start_iter=0):
    """Minimize the (smoothed) objective; returns (w, b, iterations used)."""
    l2 = lam if penalty is Penalty.L2 else 0.0
    l1 = lam if penalty is Penalty.L1 else 0.0

    def smooth(wv, bv):
        z = np.asarray(X @ wv).ravel() + bv
        val, gz = _smooth_loss(z, sign, loss, mu)
        gw = np.asarray(X.T @ gz).ravel() + l2 * wv
        return val + 0.5 * l2 * float(wv @ wv), gw, float(gz.sum())

    def full(wv, fv):
        return fv + l1 * float(np.abs(wv).sum())

    lip = 1.0
    f_x, _, _ = smooth(w, b)
    F_x = full(w, f_x)
    yw, yb = w.copy(), b
    t_mom = 1.0
    calm = 0
    it = 0
    for it in range(1, max_iter + 1):
        f_y, gw, gb = smooth(yw, yb)
        while True:
            step = 1.0 / lip
            nw = yw - step * gw
            if l1:
                nw = np.sign(nw) * np.maximum(np.abs(nw) - step * l1 * (1.0 + PROX_RTOL), 0.0)
            nb = yb - step * gb
            dw, db = nw - yw, nb - yb
            f_n, _, _ = smooth(nw, nb)
            if not np.isfinite(f_n):
                if lip > 1e300:
                    raise DivergedError(f"diverged at iteration {start_iter + it}")
                lip *= 2.0
                continue
            bound = f_y + float(gw @ dw) + gb * db + 0.5 * lip * (float(dw @ dw) + db * db)
            if f_n <= bound + 1e-12 * abs(f_y):
                break
            lip *= 2.0
        F_n = full(nw, f_n)
        if not np.isfinite(F_n):
            raise DivergedError(f"diverged at iteration {start_iter + it}")
        if F_n > F_x:
            # restart momentum from the last accepted point
            yw, yb, t_mom = w.copy(), b, 1.0
            calm = 0
            continue
        decrease = (F_x - F_n) / max(abs(F_n), 1e-300)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom * t_mom))
        beta = (t_mom - 1.0) / t_next
        yw = nw + beta * (nw - w)
        yb = nb + beta * (nb - b)
        w, b, F_x, t_mom = nw, nb, F_n, t_next
        lip *= 0.9
        calm = calm + 1 if decrease < tol else 0
        if calm >= 3 or F_x == 0.0:
            break
    return w, b, it


def train_linear(matrix: FeatureMatrix, loss=Loss.LOGISTIC, penalty=Penalty.L2, lam: float = 1e-3,
                 opts: SolverOptions = SolverOptions()) -> LinearModel:
    loss, penalty = Loss(loss), Penalty(penalty)
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    X, y = matrix.X, matrix.labels
    sign = 2.0 * y.astype(np.float64) - 1.0
    w = np.zeros(matrix.dimension)
    rate = float(np.clip(y.mean(), 1e-12, 1 - 1e-12)) if y.size else 0.5
    if loss is Loss.LOGISTIC:
        b = float(np.log(rate / (1.0 - rate)))
        w, b, used = _fista(X, sign, loss, penalty, lam, w, b, 0.0, opts.max_iter, opts.tol)
    else:
        b = float(np.sign(rate - 0.5))
        used = 0
        stages = len(HINGE_SMOOTHING)
        for k, mu in enumerate(HINGE_SMOOTHING):
            budget = max(1, (opts.max_iter - used) // (stages - k))
            w, b, it = _fista(X, sign, loss, penalty, lam, w, b, mu, budget, opts.tol, used)
            used += it
    obj = objective(w, b, X, y, loss, penalty, lam)
    if not np.isfinite(obj):
        raise DivergedError(f"diverged at iteration {used}")
    return LinearModel(w, float(b), loss, penalty, float(lam), used, float(obj))


def top_features(weights, names: Sequence[str], k: int = 30) -> list[tuple[str, float]]:
    """The ``k`` largest positive weights, descending; ties in name order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if isinstance(weights, LinearModel):
        weights = weights.weights
    weights = np.asarray(weights, dtype=np.float64)
    if weights.size != len(names):
        raise ValueError("weights and names differ in length")
    pos = [(names[i], float(weights[i])) for i in np.flatnonzero(weights > 0)]
    pos.sort(key=lambda tw: (-tw[1], tw[0]))
    return pos[:k]
