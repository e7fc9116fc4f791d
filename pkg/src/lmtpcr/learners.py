"""Regression and classification learners, fold assignment and discrete selection.

Learners are immutable configurations. ``fit(X, y, weights, seed)`` returns an
immutable fitted model exposing ``predict(X)``. Binomial learners accept
responses anywhere in [0, 1] and return predictions clipped to
[1e-6, 1 - 1e-6], except that a constant training response is reproduced
exactly.
"""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import expit, logit

__all__ = [
    "LearnerError",
    "FoldAssignment",
    "make_folds",
    "ConstantLearner",
    "GLM",
    "Boosting",
    "KNN",
    "Selector",
    "select_learner",
    "make_learner",
    "cv_risk",
    "PROB_CLIP",
]

log = logging.getLogger(__name__)

PROB_CLIP = 1e-6
FAMILIES = ("binomial", "continuous")


class LearnerError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# folds

@dataclass(frozen=True)
class FoldAssignment:
    """Per-unit fold labels ``fold[i]`` in 0..J-1."""

    fold: np.ndarray
    J: int

    def validation(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.fold == j)

    def training(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.fold != j)

    def __iter__(self):
        for j in range(self.J):
            yield self.training(j), self.validation(j)


def make_folds(n: int, J: int, strata=None, seed=None) -> FoldAssignment:
    """Random partition of 0..n-1 into J validation sets of near-equal size.

    With ``strata``, units of each stratum are dealt round-robin with a running
    offset, so every fold receives its share of each stratum within one unit
    and overall fold sizes still differ by at most one. Strata with fewer than
    J members are pooled and dealt without stratification.
    """
    if J < 2 or J > n:
        raise ValueError(f"need 2 <= J <= n, got J={J}, n={n}")
    rng = np.random.default_rng(seed)
    if strata is None:
        groups = [rng.permutation(n)]
    else:
        strata = np.asarray(strata)
        if strata.shape != (n,):
            raise ValueError("strata must have one label per unit")
        groups, pooled = [], []
        for s in np.unique(strata):
            members = rng.permutation(np.flatnonzero(strata == s))
            if members.size < J:
                pooled.append(members)
            else:
                groups.append(members)
        if pooled:
            warnings.warn(f"{len(pooled)} strata smaller than J={J}; assigned without stratification",
                          stacklevel=2)
            groups.append(rng.permutation(np.concatenate(pooled)))
    fold = np.empty(n, dtype=np.int64)
    offset = 0
    for members in groups:
        fold[members] = (offset + np.arange(members.size)) % J
        offset += members.size
    fold.setflags(write=False)
    return FoldAssignment(fold, J)


# ---------------------------------------------------------------------------
# helpers

def _check_xy(X, y=None, weights=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if not np.isfinite(X).all():
        raise LearnerError("non-finite values in design matrix")
    if y is None:
        return X
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != X.shape[0]:
        raise LearnerError("design and response lengths differ")
    if not np.isfinite(y).all():
        raise LearnerError("non-finite values in response")
    if weights is None:
        w = np.ones_like(y)
    else:
        w = np.asarray(weights, dtype=float).ravel()
        if w.shape != y.shape or not np.isfinite(w).all() or (w < 0).any():
            raise LearnerError("weights must be finite, non-negative and aligned with y")
    return X, y, w


def _clip(p, family):
    if family == "binomial":
        return np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)
    return p


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


class _Base:
    family: str = "binomial"

    def _prepare(self, X, y, weights):
        if self.family not in FAMILIES:
            raise LearnerError(f"unknown family {self.family!r}")
        X, y, w = _check_xy(X, y, weights)
        if X.shape[0] == 0:
            raise LearnerError("cannot fit on zero rows")
        if self.family == "binomial" and ((y < 0) | (y > 1)).any():
            raise LearnerError("binomial responses must lie in [0, 1]")
        return X, y, w

    def fit(self, X, y, weights=None, seed=None):
        X, y, w = self._prepare(X, y, weights)
        wsum = w.sum()
        if wsum <= 0:
            raise LearnerError("all observation weights are zero")
        # a constant response is reproduced exactly (no probability clipping), so that
        # e.g. an always-uncensored risk set gives censoring probabilities of exactly 1
        if np.all(y == y[0]):
            return FittedConstant(float(y[0]), self.family)
        if X.shape[0] == 1:
            warnings.warn("single training row; falling back to a constant fit", stacklevel=2)
            return FittedConstant(float(_clip(y[0], self.family)), self.family)
        return self._fit(X, y, w, seed)

    def _fit(self, X, y, w, seed):
        raise NotImplementedError

    def with_family(self, family: str):
        import dataclasses
        return dataclasses.replace(self, family=family)


# ---------------------------------------------------------------------------
# constant

@dataclass(frozen=True)
class FittedConstant:
    value: float
    family: str

    def predict(self, X):
        n = np.shape(X)[0]
        return np.full(n, self.value)


@dataclass(frozen=True)
class ConstantLearner(_Base):
    """Weighted mean of the response."""

    family: str = "binomial"
    name = "constant"

    def _fit(self, X, y, w, seed):
        return FittedConstant(float(_clip(np.average(y, weights=w), self.family)), self.family)


# ---------------------------------------------------------------------------
# GLM

def _expand(X, interactions):
    if not interactions:
        return X
    p = X.shape[1]
    order = p if interactions == "all" else int(interactions)
    if interactions == "all" and p > 12:
        raise LearnerError("saturated interactions are limited to 12 columns")
    cols = [X]
    for k in range(2, min(order, p) + 1):
        for combo in itertools.combinations(range(p), k):
            cols.append(np.prod(X[:, combo], axis=1, keepdims=True))
    return np.hstack(cols)


@dataclass(frozen=True)
class FittedGLM:
    coef: np.ndarray          # intercept first, on the standardized scale
    center: np.ndarray
    scale: np.ndarray
    keep: np.ndarray
    interactions: object
    family: str

    def linear_predictor(self, X):
        Z = _expand(_check_xy(X), self.interactions)[:, self.keep]
        Z = (Z - self.center) / self.scale
        return self.coef[0] + Z @ self.coef[1:]

    def predict(self, X):
        eta = self.linear_predictor(X)
        if self.family == "binomial":
            return _clip(expit(eta), "binomial")
        return eta


@dataclass(frozen=True)
class GLM(_Base):
    """Canonical-link GLM fitted by ridge-stabilised IRLS.

    ``interactions`` adds products of distinct columns up to the given order
    (``"all"`` for the saturated model).
    """

    family: str = "binomial"
    interactions: object = None
    ridge: float = 1e-8
    tol: float = 1e-8
    max_iter: int = 50
    name = "glm"

    def _fit(self, X, y, w, seed):
        Z = _expand(X, self.interactions)
        center = np.average(Z, axis=0, weights=w) if Z.shape[1] else np.zeros(0)
        scale = np.sqrt(np.average((Z - center) ** 2, axis=0, weights=w)) if Z.shape[1] else np.zeros(0)
        keep = scale > 1e-12 * np.maximum(1.0, np.abs(center))
        Z = (Z[:, keep] - center[keep]) / scale[keep]
        D = np.hstack([np.ones((Z.shape[0], 1)), Z])
        pen = np.full(D.shape[1], self.ridge)
        pen[0] = 0.0
        if self.family == "continuous":
            beta = self._wls(D, y, w, pen)
        else:
            beta = self._irls(D, y, w, pen)
        keep = _frozen(keep).astype(bool)
        keep.setflags(write=False)
        return FittedGLM(_frozen(beta), _frozen(center[keep]), _frozen(scale[keep]),
                         keep, self.interactions, self.family)

    @staticmethod
    def _wls(D, z, w, pen):
        A = D.T @ (D * w[:, None]) + np.diag(pen)
        b = D.T @ (w * z)
        try:
            return np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            return np.linalg.lstsq(A, b, rcond=None)[0]

    def _irls(self, D, y, w, pen):
        ybar = np.clip(np.average(y, weights=w), 1e-4, 1 - 1e-4)
        beta = np.zeros(D.shape[1])
        beta[0] = logit(ybar)

        def deviance(eta):
            # binomial deviance up to a constant, valid for fractional y
            return 2 * np.sum(w * (np.logaddexp(0, eta) - y * eta))

        eta = D @ beta
        dev = deviance(eta) + np.sum(pen * beta**2)
        for _ in range(self.max_iter):
            mu = expit(eta)
            v = np.maximum(mu * (1 - mu), 1e-12)
            z = eta + (y - mu) / v
            new = self._wls(D, z, w * v, pen)
            new_eta = D @ new
            new_dev = deviance(new_eta) + np.sum(pen * new**2)
            # step halving guards against the rare IRLS overshoot
            halvings = 0
            while new_dev > dev + 1e-12 * abs(dev) and halvings < 20:
                new = (new + beta) / 2
                new_eta = D @ new
                new_dev = deviance(new_eta) + np.sum(pen * new**2)
                halvings += 1
            change = abs(dev - new_dev) / (abs(new_dev) + 0.1)
            beta, eta, dev = new, new_eta, new_dev
            if change < self.tol:
                break
        return beta


# ---------------------------------------------------------------------------
# gradient boosted trees

@dataclass(frozen=True)
class _Tree:
    feature: np.ndarray      # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X):
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return self.value[node]
            idx = np.flatnonzero(inner)
            go_left = X[idx, f[idx]] <= self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])


def _grow_tree(X, order, g, h, max_depth, min_leaf, lam):
    """Second-order regression tree on gradients g and hessians h."""
    n, p = X.shape
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        for lst, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (value, 0.0)):
            lst.append(v)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.ones(n, dtype=bool), 0)]
    while stack:
        node, member, depth = stack.pop()
        G, H = g[member].sum(), h[member].sum()
        value[node] = -G / (H + lam)
        count = int(member.sum())
        if depth >= max_depth or count < 2 * min_leaf:
            continue
        parent = G * G / (H + lam)
        best = (1e-12 * max(1.0, abs(parent)), -1, 0.0)
        for f in range(p):
            idx = order[:, f][member[order[:, f]]]
            xs = X[idx, f]
            gl, hl = np.cumsum(g[idx])[:-1], np.cumsum(h[idx])[:-1]
            gain = gl**2 / (hl + lam) + (G - gl) ** 2 / (H - hl + lam) - parent
            k = np.arange(1, count)
            valid = (xs[1:] > xs[:-1]) & (k >= min_leaf) & (count - k >= min_leaf)
            if not valid.any():
                continue
            gain = np.where(valid, gain, -np.inf)
            i = int(np.argmax(gain))
            if gain[i] > best[0]:
                best = (gain[i], f, 0.5 * (xs[i] + xs[i + 1]))
        if best[1] < 0:
            continue
        f, thr = best[1], best[2]
        feature[node], threshold[node] = f, thr
        go_left = member & (X[:, f] <= thr)
        go_right = member & ~go_left
        left[node], right[node] = new_node(), new_node()
        stack.append((right[node], go_right, depth + 1))
        stack.append((left[node], go_left, depth + 1))
    return _Tree(np.array(feature), np.array(threshold), np.array(left),
                 np.array(right), np.array(value))


@dataclass(frozen=True)
class FittedBoosting:
    init: float
    trees: tuple
    shrinkage: float
    family: str

    def decision_function(self, X):
        X = _check_xy(X)
        F = np.full(X.shape[0], self.init)
        for tree in self.trees:
            F += self.shrinkage * tree.predict(X)
        return F

    def predict(self, X):
        F = self.decision_function(X)
        return _clip(expit(F), "binomial") if self.family == "binomial" else F


@dataclass(frozen=True)
class Boosting(_Base):
    """Gradient-boosted regression trees (log loss for binomial, squared loss otherwise)."""

    family: str = "binomial"
    n_rounds: int = 100
    shrinkage: float = 0.1
    max_depth: int = 2
    min_samples_leaf: int = 5
    subsample: float = 1.0
    l2: float = 1e-3
    name = "boost"

    def __post_init__(self):
        if not 1 <= self.max_depth <= 3:
            raise LearnerError("boosting depth must be between 1 and 3")
        if not 0 < self.subsample <= 1:
            raise LearnerError("subsample must lie in (0, 1]")

    def _fit(self, X, y, w, seed):
        rng = np.random.default_rng(seed)
        order = np.argsort(X, axis=0, kind="stable")
        ybar = np.average(y, weights=w)
        if self.family == "binomial":
            init = float(logit(np.clip(ybar, 1e-6, 1 - 1e-6)))
        else:
            init = float(ybar)
        F = np.full(y.shape, init)
        trees = []
        for _ in range(self.n_rounds):
            if self.family == "binomial":
                p = expit(F)
                g, h = w * (p - y), w * np.maximum(p * (1 - p), 1e-12)
            else:
                g, h = w * (F - y), w.copy()
            if self.subsample < 1:
                drop = rng.random(y.size) >= self.subsample
                g, h = np.where(drop, 0.0, g), np.where(drop, 0.0, h)
            tree = _grow_tree(X, order, g, h, self.max_depth, self.min_samples_leaf, self.l2)
            trees.append(tree)
            F = F + self.shrinkage * tree.predict(X)
        return FittedBoosting(init, tuple(trees), self.shrinkage, self.family)


# ---------------------------------------------------------------------------
# nearest neighbours

@dataclass(frozen=True)
class FittedKNN:
    tree: cKDTree = field(repr=False)
    y: np.ndarray
    w: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    k: int
    family: str

    def predict(self, X):
        Z = (_check_xy(X) - self.center) / self.scale
        _, idx = self.tree.query(Z, k=self.k)
        idx = idx.reshape(Z.shape[0], self.k)
        wn = self.w[idx]
        tot = wn.sum(axis=1)
        est = np.where(tot > 0, (wn * self.y[idx]).sum(axis=1) / np.where(tot > 0, tot, 1.0),
                       self.y[idx].mean(axis=1))
        return _clip(est, self.family)


@dataclass(frozen=True)
class KNN(_Base):
    """k-nearest-neighbour average on standardized features."""

    family: str = "binomial"
    k: int = 25
    name = "knn"

    def _fit(self, X, y, w, seed):
        center = X.mean(axis=0)
        scale = X.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        Z = (X - center) / scale
        return FittedKNN(cKDTree(Z), _frozen(y), _frozen(w), _frozen(center), _frozen(scale),
                         min(self.k, X.shape[0]), self.family)


# ---------------------------------------------------------------------------
# selection

def cv_risk(family: str, y, pred, weights=None) -> float:
    """Weighted log loss (binomial) or squared error (continuous)."""
    y = np.asarray(y, float)
    pred = np.asarray(pred, float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, float)
    if family == "binomial":
        p = np.clip(pred, PROB_CLIP, 1 - PROB_CLIP)
        loss = -(y * np.log(p) + (1 - y) * np.log1p(-p))
    else:
        loss = (y - pred) ** 2
    return float(np.sum(w * loss) / np.sum(w)) if np.sum(w) > 0 else float(np.mean(loss))


def select_learner(candidates: Sequence, X, y, family: str | None = None, folds=None,
                   seed=None, weights=None):
    """Discrete super learner: refit the candidate with the smallest cross-validated risk.

    Returns ``(fitted, table)`` where ``table`` lists ``(candidate, risk)``
    pairs in candidate order (risk is ``inf`` for a candidate that failed).
    """
    if not candidates:
        raise LearnerError("no candidate learners")
    if family is not None:
        candidates = [c.with_family(family) for c in candidates]
    family = candidates[0].family
    X, y, w = _check_xy(X, y, weights)
    n = X.shape[0]
    if folds is None:
        folds = make_folds(n, min(5, n), seed=seed) if n >= 2 else None
    table, errors = [], []
    for c in candidates:
        try:
            if folds is None:
                risk = cv_risk(family, y, c.fit(X, y, w, seed).predict(X), w)
            else:
                pred = np.empty(n)
                for j, (tr, va) in enumerate(folds):
                    pred[va] = c.fit(X[tr], y[tr], w[tr], seed).predict(X[va])
                risk = cv_risk(family, y, pred, w)
        except (LearnerError, np.linalg.LinAlgError, ValueError) as exc:
            errors.append(f"{c!r}: {exc}")
            risk = np.inf
        table.append((c, risk))
    risks = np.array([r for _, r in table])
    if not np.isfinite(risks).any():
        raise LearnerError("every candidate failed: " + "; ".join(errors))
    best = int(np.argmin(risks))  # first minimiser wins ties
    log.debug("selected %r (risk %.6g)", candidates[best], risks[best])
    return candidates[best].fit(X, y, w, seed), table


@dataclass(frozen=True)
class Selector(_Base):
    """Learner wrapper running :func:`select_learner` at fit time."""

    candidates: tuple = ()
    family: str = "binomial"
    name = "selector"

    def with_family(self, family):
        return Selector(tuple(c.with_family(family) for c in self.candidates), family)

    def fit(self, X, y, weights=None, seed=None):
        X, y, w = self._prepare(X, y, weights)
        if np.all(y == y[0]) or X.shape[0] < 2:
            return ConstantLearner(self.family).fit(X, y, w, seed)
        return select_learner(self.candidates, X, y, folds=None, seed=seed, weights=w)[0]


_REGISTRY = {"constant": ConstantLearner, "glm": GLM, "boost": Boosting, "knn": KNN}


def make_learner(spec, family: str = "binomial"):
    """Build a learner from a name, a ``{"name": ..., **params}`` dict, or a list of those."""
    if isinstance(spec, _Base):
        return spec.with_family(family)
    if isinstance(spec, (list, tuple)):
        items = [make_learner(s, family) for s in spec]
        if not items:
            raise LearnerError("empty learner list")
        return items[0] if len(items) == 1 else Selector(tuple(items), family)
    if isinstance(spec, str):
        spec = {"name": spec}
    spec = dict(spec)
    name = spec.pop("name", None)
    if name not in _REGISTRY:
        raise LearnerError(f"unknown learner {name!r}; choose from {sorted(_REGISTRY)}")
    try:
        return _REGISTRY[name](family=family, **spec)
    except TypeError as exc:
        raise LearnerError(f"bad parameters for {name}: {exc}") from None
