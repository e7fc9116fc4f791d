"""Sequentially doubly robust (SDR) and targeted (TMLE) estimators with Wald inference.

Both estimators run a backward loop over t = tau'..1 on the panel truncated at
the horizon tau'. With pseudo-outcome

    Rcheck_{t+1} = R_{t+1} phi_{t+1} + (1 - R_{t+1}) Y_{t+1}

(units whose event of interest occurred at t+1 keep Y_{t+1} = 1, units with an
earlier competing event keep 0), the influence-function values obey

    phi_t = w_t (Rcheck_{t+1} - q_t(A_t, H_t)) + q_t(A^d_t, H_t),   phi_{tau'+1} = Y_{tau'+1},

and theta-hat is the sample mean of phi_1.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit
from scipy.stats import norm

from .data import LongitudinalDataset, design_matrix, risk_indicators
from .learners import FoldAssignment, LearnerError, make_folds, make_learner
from .nuisance import KnownLaws, NuisanceError, WeightFit, fit_weights, fold_map, subseed
from .policy import Policy

__all__ = [
    "EstimationError",
    "EstimateReport",
    "CurveResult",
    "eif_transform",
    "wald_interval",
    "sdr_estimate",
    "tmle_estimate",
    "estimate_curve",
    "tilt",
    "Z95",
]

log = logging.getLogger(__name__)

Z95 = float(norm.ppf(0.975))


class EstimationError(RuntimeError):
    pass


@dataclass
class EstimateReport:
    horizon: int
    estimator: str
    theta: float
    se: float
    ci_low: float
    ci_high: float
    n_at_risk: int
    weight_max: float
    weight_mean: float
    seed: int
    eif: np.ndarray = field(repr=False)
    pseudo: np.ndarray | None = field(default=None, repr=False)
    diagnostics: dict = field(default_factory=dict, repr=False)
    config_digest: str = ""

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon, "estimator": self.estimator, "theta": self.theta,
            "se": self.se, "ci_low": self.ci_low, "ci_high": self.ci_high,
            "n_at_risk": self.n_at_risk, "weight_max": self.weight_max,
            "weight_mean": self.weight_mean, "seed": self.seed,
            "config_digest": self.config_digest,
        }


def wald_interval(theta: float, se: float, z: float = Z95):
    return theta - z * se, theta + z * se


def eif_transform(weights, q_obs, q_pol, R, Y):
    """phi_1..phi_{T+1} from nuisance values by the backward recursion.

    Parameters
    ----------
    weights, q_obs, q_pol : (n, T) arrays
        w_t, q_t(A_t, H_t) and q_t(A^d_t, H_t) for t = 1..T.
    R : (n, T+1) array
        Risk indicators R_1..R_{T+1} (the last column is 1).
    Y : (n, T+1) array
        Outcomes Y_1..Y_{T+1}.

    Returns
    -------
    phi : (n, T+1) array
        Column t-1 holds phi_t; the last column is Y_{T+1}.
    pseudo : (n, T) array
        Column t-1 holds the pseudo-outcome Rcheck_{t+1}.
    """
    w = np.atleast_2d(np.asarray(weights, float))
    qo = np.atleast_2d(np.asarray(q_obs, float))
    qp = np.atleast_2d(np.asarray(q_pol, float))
    R = np.atleast_2d(np.asarray(R, float))
    Y = np.atleast_2d(np.asarray(Y, float))
    n, T = w.shape
    phi = np.empty((n, T + 1))
    pseudo = np.empty((n, T))
    phi[:, T] = Y[:, T]
    for t in range(T, 0, -1):
        r_next = R[:, t]
        pseudo[:, t - 1] = r_next * phi[:, t] + (1 - r_next) * Y[:, t]
        phi[:, t - 1] = w[:, t - 1] * (pseudo[:, t - 1] - qo[:, t - 1]) + qp[:, t - 1]
    return phi, pseudo


# ---------------------------------------------------------------------------
# shared plumbing

@dataclass(frozen=True)
class _Setup:
    data: LongitudinalDataset
    policy: Policy
    folds: FoldAssignment
    weights: WeightFit
    learner: object
    markov_lag: int | None
    seed: int
    executor: object


def _policy_design(setup: _Setup, t: int):
    """[(design at the policy image, probability)] integrating the randomizer analytically."""
    data, pol = setup.data, setup.policy
    a = data.A[:, t - 1]
    if pol.is_identity:
        return [(design_matrix(data, t, setup.markov_lag, exposure=a), 1.0)]
    hist = data.history_at(t)
    if pol.needs_randomizer:
        images = pol.image_distribution(t, a, hist)
    else:
        eps = None if setup.weights.eps is None else setup.weights.eps[:, t - 1]
        images = [(pol.apply(t, a, hist, eps), 1.0)]
    return [(design_matrix(data, t, setup.markov_lag, exposure=v), p) for v, p in images]


def _regress(setup: _Setup, t: int, response, rows, clip=None):
    """Cross-fitted q_t at (A_t, H_t) and at the policy image for every unit."""
    data = setup.data
    X_obs = design_matrix(data, t, setup.markov_lag, exposure=data.A[:, t - 1])
    X_pol = _policy_design(setup, t)

    def one(j):
        tr = np.intersect1d(setup.folds.training(j), rows)
        va = setup.folds.validation(j)
        if tr.size == 0:
            raise EstimationError(f"no training rows at t={t} in fold {j}")
        if tr.size == 1:
            warnings.warn(f"single training row at t={t}, fold {j}; using a constant fit",
                          stacklevel=2)
        try:
            model = setup.learner.fit(X_obs[tr], response[tr], seed=subseed(setup.seed, 3, t, j))
        except (LearnerError, ValueError, np.linalg.LinAlgError) as exc:
            raise EstimationError(f"outcome regression failed at t={t}, fold {j}: {exc}") from exc

        def pred(X):
            p = model.predict(X[va])
            return p if clip is None else np.clip(p, *clip)

        return va, pred(X_obs), [(pred(X), p) for X, p in X_pol]

    n = data.n_units
    q_obs = np.empty(n)
    q_pol = [np.empty(n) for _ in X_pol]
    for va, po, pp in fold_map(one, range(setup.folds.J), setup.executor):
        q_obs[va] = po
        for k, (v, _) in enumerate(pp):
            q_pol[k][va] = v
    return q_obs, q_pol, [p for _, p in X_pol]


def _prepare(data, policy, *, horizon, folds, weights, ratio_learner, censoring_learner,
             outcome_learner, markov_lag, seed, c_max, g_floor, known, executor):
    if horizon is None:
        horizon = data.tau
    if not 1 <= horizon <= data.tau:
        raise EstimationError(f"horizon {horizon} outside 1..{data.tau}")
    if folds is None:
        folds = 10
    if isinstance(folds, (int, np.integer)):
        folds = make_folds(data.n_units, min(int(folds), data.n_units),
                           strata=data.y_final, seed=subseed(seed, 0))
    if weights is None:
        weights = fit_weights(data, policy, folds, ratio_learner=ratio_learner,
                              censoring_learner=censoring_learner, markov_lag=markov_lag,
                              c_max=c_max, g_floor=g_floor, seed=seed, known=known,
                              executor=executor)
    msg = weights.available(horizon)
    if msg is not None:
        raise EstimationError(f"horizon {horizon}: {msg}")
    trunc = data.truncate(horizon)
    R = risk_indicators(trunc)
    for t in range(1, horizon + 1):
        if not np.any((R[:, t - 1] == 1) & (trunc.C[:, t - 1] == 1)):
            raise EstimationError(f"horizon {horizon}: empty risk set at t={t}")
    return _Setup(trunc, policy, folds, weights, make_learner(outcome_learner, "continuous"),
                  markov_lag, seed, executor)


def _report(setup: _Setup, name: str, theta: float, phi1: np.ndarray, pseudo, diag) -> EstimateReport:
    data = setup.data
    T = data.tau
    n = data.n_units
    se = float(np.sqrt(np.var(phi1) / n))
    lo, hi = wald_interval(theta, se)
    R = risk_indicators(data)
    live = (R[:, :T] == 1) & (data.C == 1)
    w = setup.weights.weights[:, :T][live]
    return EstimateReport(
        horizon=T, estimator=name, theta=float(theta), se=se, ci_low=float(lo), ci_high=float(hi),
        n_at_risk=int(live[:, T - 1].sum()),
        weight_max=float(w.max()) if w.size else 0.0,
        weight_mean=float(w.mean()) if w.size else 0.0,
        seed=int(setup.seed), eif=phi1, pseudo=pseudo, diagnostics=diag,
    )


def _outcomes(data):
    return np.column_stack([data.Y, data.y_final])


# ---------------------------------------------------------------------------
# SDR

def sdr_estimate(data: LongitudinalDataset, policy: Policy, *, horizon=None, folds=None,
                 weights: WeightFit | None = None, outcome_learner="glm", ratio_learner="glm",
                 censoring_learner="glm", markov_lag=None, seed: int = 0, c_max: float = 50.0,
                 g_floor: float = 0.01, known: KnownLaws | None = None,
                 executor=None) -> EstimateReport:
    """Cross-fitted sequentially doubly robust estimate of P[Y_{h+1}(d) = 1].

    ``weights`` may carry pre-fitted (or deliberately altered) weights, which
    are then used as given; otherwise they are fitted with the ratio and
    censoring learners (or taken from ``known``).
    """
    setup = _prepare(data, policy, horizon=horizon, folds=folds, weights=weights,
                     ratio_learner=ratio_learner, censoring_learner=censoring_learner,
                     outcome_learner=outcome_learner, markov_lag=markov_lag, seed=seed,
                     c_max=c_max, g_floor=g_floor, known=known, executor=executor)
    d = setup.data
    T = d.tau
    R = risk_indicators(d)
    Y = _outcomes(d)
    W = setup.weights.weights[:, :T]
    n = d.n_units
    phi_next = Y[:, T].copy()
    pseudo = np.empty((n, T))
    for t in range(T, 0, -1):
        r_next = R[:, t]
        pseudo[:, t - 1] = r_next * phi_next + (1 - r_next) * Y[:, t]
        rows = np.flatnonzero((R[:, t - 1] == 1) & (d.C[:, t - 1] == 1))
        q_obs, q_pol, probs = _regress(setup, t, pseudo[:, t - 1], rows)
        q_d = sum(p * q for q, p in zip(q_pol, probs))
        phi_next = W[:, t - 1] * (pseudo[:, t - 1] - q_obs) + q_d
    theta = float(np.mean(phi_next))
    return _report(setup, "sdr", theta, phi_next, pseudo, {})


# ---------------------------------------------------------------------------
# TMLE

def tilt(offset, y, weights, tol: float = 1e-14, max_iter: int = 200) -> float:
    """Solve sum_i w_i (y_i - expit(offset_i + e)) = 0 for e (weighted logistic intercept).

    Safeguarded Newton: the score is decreasing in e, so every evaluation
    narrows a bracket, and a bisection step replaces any Newton step that
    leaves the bracket or fails to halve the score.
    """
    offset, y, weights = (np.asarray(x, float) for x in (offset, y, weights))
    total = float(weights.sum())
    if total <= 0:
        return 0.0
    target = tol * max(1.0, total)

    def score(e):
        return float(np.sum(weights * (y - expit(offset + e))))

    e, lo, hi = 0.0, -np.inf, np.inf
    s = score(e)
    prev = np.inf
    for _ in range(max_iter):
        if abs(s) <= target:
            return e
        if s > 0:
            lo = e
        else:
            hi = e
        p = expit(offset + e)
        info = float(np.sum(weights * p * (1 - p)))
        new = e + s / info if info > 0 else np.nan
        if not lo < new < hi or abs(s) > 0.5 * prev:
            if np.isfinite(lo) and np.isfinite(hi):
                new = 0.5 * (lo + hi)
            elif not lo < new < hi:
                # expand geometrically towards the unbounded side
                new = e + np.sign(s) * max(1.0, 2.0 * abs(e))
        if new == e:
            break
        prev = abs(s)
        e = new
        s = score(e)
    if abs(s) > 1e-8 * max(1.0, total):
        raise EstimationError(f"targeting step did not converge (score {s:.3g})")
    return e


def tmle_estimate(data: LongitudinalDataset, policy: Policy, *, horizon=None, folds=None,
                  weights: WeightFit | None = None, outcome_learner="glm", ratio_learner="glm",
                  censoring_learner="glm", markov_lag=None, seed: int = 0, c_max: float = 50.0,
                  g_floor: float = 0.01, known: KnownLaws | None = None, gamma: float = 0.001,
                  executor=None) -> EstimateReport:
    """Cross-fitted TMLE with one weighted logistic tilt per time point.

    Initial regressions are the plain sequential regressions of the tilted
    q_{t+1}; responses are mapped to [gamma, 1 - gamma] before tilting and
    mapped back afterwards.
    """
    if not 0 < gamma < 0.5:
        raise EstimationError("gamma must lie in (0, 0.5)")
    setup = _prepare(data, policy, horizon=horizon, folds=folds, weights=weights,
                     ratio_learner=ratio_learner, censoring_learner=censoring_learner,
                     outcome_learner=outcome_learner, markov_lag=markov_lag, seed=seed,
                     c_max=c_max, g_floor=g_floor, known=known, executor=executor)
    d = setup.data
    T = d.tau
    n = d.n_units
    R = risk_indicators(d)
    Y = _outcomes(d)
    W = setup.weights.weights[:, :T]
    lam = np.cumprod(W, axis=1)
    span = 1.0 - 2.0 * gamma

    def to_unit(v):
        return v * span + gamma

    def from_unit(v):
        return (v - gamma) / span

    q_obs_t = np.empty((n, T))
    q_pol_t = np.empty((n, T))
    pseudo = np.empty((n, T))
    tilts = {}
    qd_next = None
    for t in range(T, 0, -1):
        r_next = R[:, t]
        nxt = Y[:, T] if t == T else qd_next
        pseudo[:, t - 1] = r_next * nxt + (1 - r_next) * Y[:, t]
        rows = np.flatnonzero((R[:, t - 1] == 1) & (d.C[:, t - 1] == 1))
        q_obs, q_pol, probs = _regress(setup, t, pseudo[:, t - 1], rows, clip=(0.0, 1.0))
        lam_rows = lam[rows, t - 1]
        if lam_rows.sum() <= 0:
            warnings.warn(f"all targeting weights are zero at t={t}; tilt left at 0", stacklevel=2)
            e = 0.0
        else:
            e = tilt(logit(to_unit(q_obs[rows])), to_unit(pseudo[rows, t - 1]), lam_rows)
        tilts[t] = e
        q_obs_t[:, t - 1] = from_unit(expit(logit(to_unit(q_obs)) + e))
        qd_next = sum(p * from_unit(expit(logit(to_unit(q)) + e)) for q, p in zip(q_pol, probs))
        q_pol_t[:, t - 1] = qd_next
    # tilted values may leave [0, 1] by at most gamma / span (and do so by rounding when the
    # tilt is ~0 on a boundary fit); the plug-in mean is bounded, and any clipping shows up
    # in the score residual below
    theta = float(np.clip(np.mean(q_pol_t[:, 0]), 0.0, 1.0))
    phi, _ = eif_transform(W, q_obs_t, q_pol_t, R, Y)
    residual = float(abs(np.mean(phi[:, 0]) - theta))
    return _report(setup, "tmle", theta, phi[:, 0], pseudo,
                   {"tilts": tilts, "score_residual": residual})


# ---------------------------------------------------------------------------
# curves

@dataclass
class CurveResult:
    """Per-horizon reports; ``eif`` is (n, K) with NaN columns for failed horizons."""

    horizons: list
    reports: dict
    errors: dict
    eif: np.ndarray
    weights: WeightFit | None = None

    @property
    def ok(self) -> bool:
        return not self.errors

    def theta(self):
        return np.array([self.reports[h].theta if h in self.reports else np.nan
                         for h in self.horizons])

    def se(self):
        return np.array([self.reports[h].se if h in self.reports else np.nan
                         for h in self.horizons])


def estimate_curve(data: LongitudinalDataset, policy: Policy, *, horizons=None,
                   estimator: str = "sdr", folds=None, weights: WeightFit | None = None,
                   ratio_learner="glm", censoring_learner="glm", markov_lag=None,
                   seed: int = 0, c_max: float = 50.0, g_floor: float = 0.01,
                   known: KnownLaws | None = None, executor=None, **kwargs) -> CurveResult:
    """One estimate per horizon with weights fitted once and shared.

    Failures at a horizon are recorded in ``errors`` and do not stop the others.
    """
    if horizons is None:
        horizons = list(range(1, data.tau + 1))
    horizons = [int(h) for h in horizons]
    if estimator not in ("sdr", "tmle"):
        raise EstimationError(f"unknown estimator {estimator!r}")
    if folds is None:
        folds = 10
    if isinstance(folds, (int, np.integer)):
        folds = make_folds(data.n_units, min(int(folds), data.n_units),
                           strata=data.y_final, seed=subseed(seed, 0))
    if weights is None:
        weights = fit_weights(data, policy, folds, ratio_learner=ratio_learner,
                              censoring_learner=censoring_learner, markov_lag=markov_lag,
                              c_max=c_max, g_floor=g_floor, seed=seed, known=known,
                              executor=executor)
    fn = sdr_estimate if estimator == "sdr" else tmle_estimate
    reports, errors = {}, {}
    eif = np.full((data.n_units, len(horizons)), np.nan)
    for k, h in enumerate(horizons):
        try:
            rep = fn(data, policy, horizon=h, folds=folds, weights=weights,
                     markov_lag=markov_lag, seed=seed, executor=executor, **kwargs)
        except (EstimationError, NuisanceError, ValueError) as exc:
            log.error("horizon %d failed: %s", h, exc)
            errors[h] = str(exc)
            continue
        reports[h] = rep
        eif[:, k] = rep.eif
    return CurveResult(horizons, reports, errors, eif, weights)
