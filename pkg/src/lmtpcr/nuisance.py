"""Cross-fitted censoring probabilities, density ratios and the assembled weights.

For every time t the weight is

    w_t = r_t * c_t * R_t / g_C,t,    r_t = g^d_A,t(A_t | H_t) / g_A,t(A_t | H_t),

truncated at ``c_max``. The ratio is estimated without any density estimate:
each at-risk training row is duplicated, one copy carrying the policy image
d(A_t, H_t, eps_t) (label 1) and one the natural A_t (label 0); the odds of the
fitted classifier at (a, h) estimate g^d(a | h) / g(a | h).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .data import LongitudinalDataset, design_matrix, risk_indicators
from .learners import FoldAssignment, LearnerError, make_learner
from .policy import Policy, discrete_post_intervention_pmf, draw_randomizer

__all__ = [
    "NuisanceError",
    "KnownLaws",
    "WeightFit",
    "fit_censoring",
    "fit_density_ratio",
    "assemble_weights",
    "fit_weights",
    "subseed",
    "fold_map",
]

log = logging.getLogger(__name__)


class NuisanceError(RuntimeError):
    pass


def subseed(seed, *keys) -> int:
    """Deterministic child seed for (seed, *keys)."""
    ss = np.random.SeedSequence([int(seed) % 2**63, *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def fold_map(fn, items, executor=None):
    """Map preserving input order, optionally on an executor."""
    if executor is None:
        return [fn(x) for x in items]
    return list(executor.map(fn, items))


def _at_risk(data: LongitudinalDataset, t: int) -> np.ndarray:
    """Rows entering the nuisance fits at t: R_t = 1 and C_{t-1} = 1."""
    R = risk_indicators(data)
    return (R[:, t - 1] == 1) & (data.censoring(t - 1) == 1)


@dataclass(frozen=True)
class KnownLaws:
    """Known exposure and censoring laws, used instead of learners (oracle mode).

    ``exposure_pmf(t, data)`` returns an (n, K) matrix over ``support`` and
    ``censoring_prob(t, data)`` returns P(C_t = 1 | A_t, H_t) per unit.
    """

    exposure_pmf: Callable | None = None
    support: tuple | None = None
    censoring_prob: Callable | None = None


def _crossfit(X_train_fn, y, rows, folds, learner, seed, t, role, executor, predict_fn):
    """Fit on training rows of each fold and predict for that fold's validation units."""

    def one(j):
        tr = np.intersect1d(folds.training(j), rows)
        va = folds.validation(j)
        if tr.size == 0:
            raise NuisanceError(f"{role}: no training rows at t={t} in fold {j}")
        Xtr, ytr = X_train_fn(tr)
        try:
            model = learner.fit(Xtr, ytr, seed=subseed(seed, t, j))
        except (LearnerError, ValueError, np.linalg.LinAlgError) as exc:
            raise NuisanceError(f"{role} fit failed at t={t}, fold {j}: {exc}") from exc
        return va, predict_fn(model, va)

    out = np.full(folds.fold.shape[0], np.nan)
    for va, pred in fold_map(one, range(folds.J), executor):
        out[va] = pred
    return out


def fit_censoring(data: LongitudinalDataset, t: int, learner, folds: FoldAssignment, *,
                  markov_lag=None, g_floor: float = 0.01, seed: int = 0, executor=None):
    """Cross-fitted P(C_t = 1 | A_t, H_t) on the risk set, floored at ``g_floor``.

    Units outside the risk set {R_t = 1, C_{t-1} = 1} get NaN.
    """
    learner = make_learner(learner, "binomial")
    rows = np.flatnonzero(_at_risk(data, t))
    if rows.size == 0:
        raise NuisanceError(f"empty risk set at t={t}")
    X = design_matrix(data, t, markov_lag, exposure=data.A[:, t - 1])
    C = data.C[:, t - 1]
    g = _crossfit(lambda tr: (X[tr], C[tr]), C, rows, folds, learner, seed, t, "censoring",
                  executor, lambda m, va: m.predict(X[va]))
    out = np.full(data.n_units, np.nan)
    out[rows] = np.clip(g[rows], g_floor, 1.0)
    return out


def fit_density_ratio(data: LongitudinalDataset, t: int, policy: Policy, learner,
                      folds: FoldAssignment, *, eps=None, markov_lag=None, seed: int = 0,
                      executor=None):
    """Cross-fitted r_t at the observed (A_t, H_t) via duplicated-data classification.

    ``eps`` is the (n,) vector of cached randomizer draws for time t. Units
    outside the risk set get NaN. The identity policy returns exactly 1.
    """
    rows = np.flatnonzero(_at_risk(data, t))
    if rows.size == 0:
        raise NuisanceError(f"empty risk set at t={t}")
    out = np.full(data.n_units, np.nan)
    if policy.is_identity:
        out[rows] = 1.0
        return out
    learner = make_learner(learner, "binomial")
    a = data.A[:, t - 1]
    hist = data.history_at(t)
    ad = policy.apply(t, a, hist, eps)
    X_nat = design_matrix(data, t, markov_lag, exposure=a)
    X_pol = design_matrix(data, t, markov_lag, exposure=ad)

    def train(tr):
        X = np.vstack([X_pol[tr], X_nat[tr]])
        lab = np.concatenate([np.ones(tr.size), np.zeros(tr.size)])
        return X, lab

    def predict(model, va):
        p = model.predict(X_nat[va])
        return p / (1.0 - p)

    r = _crossfit(train, None, rows, folds, learner, seed, t, "density ratio", executor, predict)
    out[rows] = r[rows]
    return out


def _known_ratio(data, t, policy, laws: KnownLaws):
    if laws.exposure_pmf is None or laws.support is None:
        raise NuisanceError("oracle ratio needs an exposure pmf and its support")
    if data.exposure_width != 1:
        raise NuisanceError("oracle ratio is implemented for scalar exposures")
    support = np.asarray(laws.support, float)
    hist = data.history_at(t)
    base = np.asarray(laws.exposure_pmf(t, data), float)
    pol = discrete_post_intervention_pmf(policy, base, support, t, hist)
    a = data.A[:, t - 1, 0]
    k = np.searchsorted(support, a)
    k = np.clip(k, 0, support.size - 1)
    idx = np.arange(data.n_units)
    g = base[idx, k]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(g > 0, pol[idx, k] / g, 0.0)


def assemble_weights(ratio, g_censor, C, R, c_max: float = 50.0) -> np.ndarray:
    """w = ratio * C * R / g_censor truncated at ``c_max``; exactly 0 when C * R = 0."""
    ratio, g_censor, C, R = (np.asarray(x, float) for x in (ratio, g_censor, C, R))
    keep = (C * R) != 0
    w = np.zeros(np.broadcast(ratio, g_censor, C, R).shape)
    num = np.broadcast_to(ratio * C * R, w.shape)
    den = np.broadcast_to(g_censor, w.shape)
    w[keep] = num[keep] / den[keep]
    return np.minimum(w, c_max)


@dataclass(frozen=True)
class WeightFit:
    """Per-(unit, time) nuisance values; column t-1 holds time t.

    ``failed`` maps a time to the error that prevented fitting it; weights
    from that time on are unavailable.
    """

    ratio: np.ndarray
    g_censor: np.ndarray
    weights: np.ndarray
    folds: FoldAssignment | None
    eps: np.ndarray | None
    c_max: float = 50.0
    g_floor: float = 0.01
    failed: dict = field(default_factory=dict)

    @property
    def tau(self) -> int:
        return self.weights.shape[1]

    def available(self, horizon: int) -> str | None:
        """Error message if some t <= horizon failed, else None."""
        bad = [t for t in self.failed if t <= horizon]
        return self.failed[min(bad)] if bad else None

    def scaled(self, factor: float) -> "WeightFit":
        """Weights multiplied by ``factor`` and re-truncated (a deliberate corruption)."""
        return replace(self, weights=np.minimum(self.weights * factor, self.c_max))


def fit_weights(data: LongitudinalDataset, policy: Policy, folds: FoldAssignment | None, *,
                ratio_learner="glm", censoring_learner="glm", markov_lag=None,
                c_max: float = 50.0, g_floor: float = 0.01, seed: int = 0,
                known: KnownLaws | None = None, eps=None, executor=None) -> WeightFit:
    """Fit r_t, g_C,t and w_t for t = 1..tau.

    ``known`` replaces the learned exposure and/or censoring models with the
    supplied laws. Randomizer draws are taken from ``eps`` or generated from
    ``seed``.
    """
    n, tau = data.n_units, data.tau
    if eps is None and policy.needs_randomizer:
        eps = draw_randomizer(seed, n, tau)
    ratio = np.full((n, tau), np.nan)
    gc = np.full((n, tau), np.nan)
    failed = {}
    R = risk_indicators(data)
    for t in range(1, tau + 1):
        if failed:
            failed[t] = failed[min(failed)]
            continue
        try:
            rows = _at_risk(data, t)
            if not rows.any():
                raise NuisanceError(f"empty risk set at t={t}")
            if known is not None and known.exposure_pmf is not None:
                r = _known_ratio(data, t, policy, known)
            else:
                r = fit_density_ratio(data, t, policy, ratio_learner, folds,
                                      eps=None if eps is None else eps[:, t - 1],
                                      markov_lag=markov_lag, seed=subseed(seed, 1, t),
                                      executor=executor)
            if known is not None and known.censoring_prob is not None:
                g = np.clip(np.asarray(known.censoring_prob(t, data), float), g_floor, 1.0)
            else:
                g = fit_censoring(data, t, censoring_learner, folds, markov_lag=markov_lag,
                                  g_floor=g_floor, seed=subseed(seed, 2, t), executor=executor)
        except NuisanceError as exc:
            log.warning("nuisance fit failed at t=%d: %s", t, exc)
            failed[t] = str(exc)
            continue
        ratio[rows, t - 1] = r[rows]
        gc[rows, t - 1] = g[rows]
    w = np.zeros((n, tau))
    for t in range(1, tau + 1):
        if t in failed:
            continue
        ok = ~np.isnan(ratio[:, t - 1])
        w[ok, t - 1] = assemble_weights(ratio[ok, t - 1], gc[ok, t - 1], data.C[ok, t - 1],
                                        R[ok, t - 1], c_max)
    for arr in (ratio, gc, w):
        arr.setflags(write=False)
    return WeightFit(ratio, gc, w, folds, eps, c_max, g_floor, failed)
