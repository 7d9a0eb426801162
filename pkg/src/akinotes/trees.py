"""Random forest and gradient-boosted trees with exact split search.

Features are densified per fit (absent sparse entries become exactly 0.0).
Candidate thresholds are midpoints between consecutive distinct observed
values of a feature within the node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .features import FeatureMatrix

PROBA_EPS = 1e-12
_GAIN_EPS = 1e-12


@dataclass
class Tree:
    """Flat binary tree; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max()) if depth.size else 0

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row of dense ``X``."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.arange(X.shape[0])
        while active.size:
            f = self.feature[node[active]]
            internal = f >= 0
            active = active[internal]
            if not active.size:
                break
            cur = node[active]
            go_left = X[active, self.feature[cur]] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def split_thresholds(self) -> dict[int, list[float]]:
        out: dict[int, list[float]] = {}
        for f, t in zip(self.feature, self.threshold):
            if f >= 0:
                out.setdefault(int(f), []).append(float(t))
        return out

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(np.array(d["feature"], dtype=np.int64), np.array(d["threshold"], dtype=np.float64),
                   np.array(d["left"], dtype=np.int64), np.array(d["right"], dtype=np.int64),
                   np.array(d["value"], dtype=np.float64))


def _both(X):
    if isinstance(X, FeatureMatrix):
        X = X.X
    Xcsr = sp.csr_matrix(X, dtype=np.float64)
    Xcsr.eliminate_zeros()
    return Xcsr.toarray(), Xcsr


def _dense(X) -> np.ndarray:
    if isinstance(X, FeatureMatrix):
        X = X.X
    if sp.issparse(X):
        return X.toarray()
    return np.atleast_2d(np.asarray(X, dtype=np.float64))


class _Builder:
    """Greedy depth-first tree growth on weighted rows.

    ``mode == "gini"`` grows a classification tree on 0/1 targets;
    ``mode == "mse"`` a least-squares regression tree on real targets.
    """

    def __init__(self, X, Xcsr, target, weight, mode, max_depth, min_leaf, mtry, rng, leaf_fn):
        self.X = X
        self.Xcsr = Xcsr
        self.target = target
        self.weight = weight
        self.mode = mode
        self.max_depth = max_depth if max_depth is not None else math.inf
        self.min_leaf = min_leaf
        self.mtry = mtry
        self.rng = rng
        self.leaf_fn = leaf_fn
        self.nodes: list[list] = []

    def build(self) -> Tree:
        rows = np.flatnonzero(self.weight > 0)
        self._grow(rows, 0)
        feat, thr, left, right, val = zip(*self.nodes)
        return Tree(np.array(feat, dtype=np.int64), np.array(thr, dtype=np.float64),
                    np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                    np.array(val, dtype=np.float64))

    def _grow(self, rows, depth):
        node_id = len(self.nodes)
        self.nodes.append([-1, 0.0, -1, -1, float(self.leaf_fn(rows))])
        if depth >= self.max_depth:
            return node_id
        split = self._best_split(rows)
        if split is None:
            return node_id
        f, thr = split
        go_left = self.X[rows, f] <= thr
        left = self._grow(rows[go_left], depth + 1)
        right = self._grow(rows[~go_left], depth + 1)
        self.nodes[node_id][:4] = [f, thr, left, right]
        return node_id

    def _candidates(self, rows):
        # A column varies within the node iff it is nonzero on some but not
        # all rows, or nonzero everywhere with more than one value.
        m, d = rows.size, self.X.shape[1]
        nnz = np.bincount(self.Xcsr[rows].indices, minlength=d)
        varying = np.flatnonzero((nnz > 0) & (nnz < m))
        full = np.flatnonzero(nnz == m)
        if full.size:
            sub = self.X[np.ix_(rows, full)]
            varying = np.union1d(varying, full[sub.max(axis=0) > sub.min(axis=0)])
        if self.mtry is not None and varying.size > self.mtry:
            varying = np.sort(self.rng.choice(varying, size=self.mtry, replace=False))
        return varying

    def _best_split(self, rows):
        w = self.weight[rows]
        total_w = w.sum()
        if total_w < 2 * self.min_leaf:
            return None
        wt = w * self.target[rows]
        total_t = wt.sum()
        if self.mode == "gini" and (total_t <= 0 or total_t >= total_w):
            return None
        feats = self._candidates(rows)
        if feats.size == 0:
            return None

        # Sweep each candidate column in value order.  The column's zeros
        # are one tied block, so cost scales with the node's nonzeros.
        m, nf = rows.size, feats.size
        sub = self.Xcsr[rows][:, feats].tocoo()
        er, ec, ev = sub.row, sub.col, sub.data
        nz_n = np.bincount(ec, minlength=nf)
        zc = np.flatnonzero(nz_n < m)
        col = np.concatenate([ec, zc])
        val = np.concatenate([ev, np.zeros(zc.size)])
        ew = np.concatenate([w[er], total_w - np.bincount(ec, weights=w[er], minlength=nf)[zc]])
        et = np.concatenate([wt[er], total_t - np.bincount(ec, weights=wt[er], minlength=nf)[zc]])
        order = np.lexsort((val, col))
        col, val, ew, et = col[order], val[order], ew[order], et[order]

        seg_start = np.flatnonzero(np.r_[True, col[1:] != col[:-1]])
        seg_len = np.diff(np.r_[seg_start, col.size])
        first = np.repeat(seg_start, seg_len)
        cw_all, ct_all = np.cumsum(ew), np.cumsum(et)
        cw = cw_all - (cw_all[first] - ew[first])
        ct = ct_all - (ct_all[first] - et[first])
        rw = total_w - cw
        rt = total_t - ct

        nxt_same = np.r_[col[1:] == col[:-1], False]
        nxt_val = np.r_[val[1:], np.inf]
        tol = 1e-9
        valid = nxt_same & (nxt_val > val) & (cw >= self.min_leaf - tol) & (rw >= self.min_leaf - tol)
        if not valid.any():
            return None
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.mode == "gini":
                cn, rn = cw - ct, rw - rt
                score = (ct * ct + cn * cn) / cw + (rt * rt + rn * rn) / rw
                parent = (total_t ** 2 + (total_w - total_t) ** 2) / total_w
            else:
                score = ct * ct / cw + rt * rt / rw
                parent = total_t * total_t / total_w
        score = np.where(valid, score, -np.inf)
        i = int(np.argmax(score))
        if not np.isfinite(score[i]) or score[i] <= parent + _GAIN_EPS * max(abs(parent), 1.0):
            return None
        return int(feats[col[i]]), float(0.5 * (val[i] + val[i + 1]))


# --- random forest --------------------------------------------------------

@dataclass
class ForestModel:
    trees: list[Tree]

    def predict_proba(self, X) -> np.ndarray:
        Xd = _dense(X)
        p = np.mean([t.predict(Xd) for t in self.trees], axis=0)
        return np.clip(p, PROBA_EPS, 1.0 - PROBA_EPS)

    def to_dict(self) -> dict:
        return {"trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        return cls([Tree.from_dict(t) for t in d["trees"]])


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 200
    max_depth: Optional[int] = 12
    min_leaf: int = 1
    mtry: Optional[int] = None      # None -> ceil(sqrt(dim)); 0 -> all features
    bootstrap: bool = True
    seed: int = 0


def train_random_forest(matrix: FeatureMatrix, params: ForestParams = ForestParams()) -> ForestModel:
    """Bagged Gini trees; each split scores ``mtry`` randomly drawn features.

    Features constant within a node are never drawn.  Per-tree generators
    are spawned from the master seed, so tree ``i`` does not depend on how
    many trees precede it.
    """
    if params.n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    X, Xcsr = _both(matrix)
    y = matrix.labels.astype(np.float64)
    n, d = X.shape
    mtry = params.mtry
    if mtry is None:
        mtry = max(1, math.ceil(math.sqrt(d)))
    elif mtry == 0:
        mtry = None
    trees = []
    for rng in (np.random.default_rng(s) for s in np.random.SeedSequence(params.seed).spawn(params.n_trees)):
        if params.bootstrap:
            weight = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(np.float64)
        else:
            weight = np.ones(n)

        def leaf(rows, weight=weight):
            w = weight[rows]
            return float((w * y[rows]).sum() / w.sum())

        trees.append(_Builder(X, Xcsr, y, weight, "gini", params.max_depth, params.min_leaf, mtry, rng, leaf).build())
    return ForestModel(trees)


# --- gradient boosting ----------------------------------------------------

@dataclass
class GbdtModel:
    f0: float
    eta: float
    trees: list[Tree]
    train_loss: list[float] = field(default_factory=list)

    def decision_function(self, X) -> np.ndarray:
        Xd = _dense(X)
        F = np.full(Xd.shape[0], self.f0)
        for t in self.trees:
            F += self.eta * t.predict(Xd)
        return F

    def predict_proba(self, X) -> np.ndarray:
        return np.clip(expit(self.decision_function(X)), PROBA_EPS, 1.0 - PROBA_EPS)

    def to_dict(self) -> dict:
        return {"f0": self.f0, "eta": self.eta, "trees": [t.to_dict() for t in self.trees],
                "train_loss": self.train_loss}

    @classmethod
    def from_dict(cls, d: dict) -> "GbdtModel":
        return cls(float(d["f0"]), float(d["eta"]), [Tree.from_dict(t) for t in d["trees"]],
                   list(d.get("train_loss", [])))


@dataclass(frozen=True)
class GbdtParams:
    n_rounds: int = 100
    max_depth: int = 3
    eta: float = 0.1
    min_leaf: int = 1
    subsample: float = 1.0
    seed: int = 0


def log_loss(y, F) -> float:
    """Mean logistic loss of raw scores ``F``."""
    s = 2.0 * np.asarray(y, dtype=np.float64) - 1.0
    return float(np.logaddexp(0.0, -s * F).mean())


def train_gbdt(matrix: FeatureMatrix, params: GbdtParams = GbdtParams()) -> GbdtModel:
    """Logistic-loss boosting with Newton leaf values.

    Each round fits a least-squares tree to the residuals ``y - p`` and sets
    every leaf to ``sum(residual) / sum(p * (1 - p))``.  If a round would
    raise the training loss its leaf values are halved until it does not.
    """
    if params.n_rounds < 1:
        raise ValueError("n_rounds must be >= 1")
    if not (0.0 < params.eta <= 1.0):
        raise ValueError("eta must be in (0, 1]")
    X, Xcsr = _both(matrix)
    y = matrix.labels.astype(np.float64)
    n = y.size
    p_bar = y.mean() if n else 0.0
    if p_bar <= 0.0 or p_bar >= 1.0:
        raise ValueError("single-class labels")
    f0 = float(np.log(p_bar / (1.0 - p_bar)))
    F = np.full(n, f0)
    losses = [log_loss(y, F)]
    rng = np.random.default_rng(params.seed)
    trees = []
    for _ in range(params.n_rounds):
        p = expit(F)
        resid = y - p
        hess = p * (1.0 - p)
        if params.subsample < 1.0:
            weight = (rng.random(n) < params.subsample).astype(np.float64)
            if not weight.any():
                weight[rng.integers(n)] = 1.0
        else:
            weight = np.ones(n)

        def leaf(rows):
            return float(resid[rows].sum() / max(hess[rows].sum(), 1e-12))

        tree = _Builder(X, Xcsr, resid, weight, "mse", params.max_depth, params.min_leaf, None, rng, leaf).build()
        step = tree.predict(X)
        new_loss = log_loss(y, F + params.eta * step)
        halvings = 0
        while new_loss > losses[-1] and halvings < 60:
            tree.value *= 0.5
            step *= 0.5
            new_loss = log_loss(y, F + params.eta * step)
            halvings += 1
        if new_loss > losses[-1]:
            tree.value[:] = 0.0
            step[:] = 0.0
            new_loss = losses[-1]
        F = F + params.eta * step
        losses.append(new_loss)
        trees.append(tree)
    return GbdtModel(f0, params.eta, trees, losses)
