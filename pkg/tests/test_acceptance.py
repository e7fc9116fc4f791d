"""End-to-end acceptance checks on the shipped D1 model.

Each test records a one-line verdict that is printed in the terminal summary.
"""

import json
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from conftest import record
from lmtpcr.cli import main
from lmtpcr.data import risk_indicators, write_csv
from lmtpcr.estimators import eif_transform, sdr_estimate, tmle_estimate
from lmtpcr.learners import ConstantLearner, make_folds
from lmtpcr.nuisance import assemble_weights, fit_density_ratio, fit_weights, subseed
from lmtpcr.policy import Identity, IPSIRiskRatio, Static, draw_randomizer
from lmtpcr.postprocess import isotonic_project, simultaneous_band

SAT = {"name": "glm", "interactions": "all"}
J = 5
POLICY = Static(1)

# every TMLE fit in this module appends (theta, score residual)
TMLE_RUNS = []


def _bias_gate(est, truth):
    est = np.asarray(est)
    bias = est.mean() - truth
    mcse = est.std(ddof=1) / np.sqrt(est.size)
    return abs(bias) < 3 * mcse, bias, mcse


def _folds(data, seed):
    return make_folds(data.n_units, J, strata=data.y_final, seed=subseed(seed, 0))


def _well_specified(d1, n, seed, with_tmle=False):
    data = d1.simulate(n, seed)
    folds = _folds(data, seed)
    w = fit_weights(data, POLICY, folds, ratio_learner=SAT, censoring_learner=SAT, seed=seed)
    sdr = sdr_estimate(data, POLICY, folds=folds, weights=w, outcome_learner=SAT, seed=seed)
    if not with_tmle:
        return sdr, None
    tm = tmle_estimate(data, POLICY, folds=folds, weights=w, outcome_learner=SAT, seed=seed)
    TMLE_RUNS.append((tm.theta, tm.diagnostics["score_residual"]))
    return sdr, tm


@pytest.fixture(scope="module")
def truth(d1):
    return d1.exact(POLICY).theta[2]


def test_criterion_1_oracle_consistency(d1, truth):
    start = time.perf_counter()
    sdr, tm = [], []
    for r in range(50):
        a, b = _well_specified(d1, 5000, 1000 + r, with_tmle=True)
        sdr.append(a.theta)
        tm.append(b.theta)
    elapsed = time.perf_counter() - start
    ok_s, bias_s, se_s = _bias_gate(sdr, truth)
    ok_t, bias_t, se_t = _bias_gate(tm, truth)
    ok = ok_s and ok_t and elapsed < 300
    record(1, "oracle consistency (D1, n=5000, 50 reps)", ok,
           f"SDR bias {bias_s:+.5f} (gate {3 * se_s:.5f}), TMLE bias {bias_t:+.5f} "
           f"(gate {3 * se_t:.5f}), {elapsed:.0f}s")
    assert ok


def test_criterion_2_double_robustness(d1, truth):
    laws = d1.known_laws()
    arms = {"oracle weights + constant q": [], "correct q + weights x1.5": []}
    for r in range(50):
        seed = 2000 + r
        data = d1.simulate(8000, seed)
        folds = _folds(data, seed)
        w = fit_weights(data, POLICY, folds, known=laws, seed=seed)
        a = sdr_estimate(data, POLICY, folds=folds, weights=w, outcome_learner=ConstantLearner(),
                         seed=seed)
        b = sdr_estimate(data, POLICY, folds=folds, weights=w.scaled(1.5), outcome_learner=SAT,
                         seed=seed)
        arms["oracle weights + constant q"].append(a.theta)
        arms["correct q + weights x1.5"].append(b.theta)
    parts, ok = [], True
    for name, est in arms.items():
        passed, bias, mcse = _bias_gate(est, truth)
        ok &= passed
        parts.append(f"{name}: bias {bias:+.5f} (gate {3 * mcse:.5f})")
    record(2, "double robustness (n=8000, 50 reps)", ok, "; ".join(parts))
    assert ok


def test_criterion_3_root_n_rate(d1):
    sd = {}
    for n in (2000, 8000):
        est = [_well_specified(d1, n, 3000 + 17 * n + r)[0].theta for r in range(100)]
        sd[n] = np.std(est, ddof=1)
    ratio = sd[2000] / sd[8000]
    ok = 1.6 <= ratio <= 2.5
    record(3, "root-n rate (SD ratio n=2000 vs 8000)", ok,
           f"ratio {ratio:.3f} (SD {sd[2000]:.5f} vs {sd[8000]:.5f})")
    assert ok


def test_criterion_4_coverage(d1, truth):
    hits = []
    for r in range(200):
        rep, _ = _well_specified(d1, 1000, 4000 + r)
        hits.append(rep.ci_low <= truth <= rep.ci_high)
    cov = float(np.mean(hits))
    ok = 0.90 <= cov <= 0.98
    record(4, "Wald coverage (n=1000, 200 reps)", ok, f"coverage {cov:.3f}")
    assert ok


def test_criterion_5_tmle_identities(d1, d1_uncensored):
    # extra TMLE runs over other policies and a censoring-free model
    for k, (model, pol) in enumerate([(d1, Identity()), (d1, IPSIRiskRatio(0.5)),
                                      (d1_uncensored, Static(0)), (d1, Static(1))]):
        for r in range(5):
            seed = 5000 + 10 * k + r
            data = model.simulate(1000, seed)
            for h in (1, 2):
                tm = tmle_estimate(data, pol, horizon=h, folds=J, outcome_learner=SAT,
                                   ratio_learner=SAT, censoring_learner=SAT, seed=seed)
                TMLE_RUNS.append((tm.theta, tm.diagnostics["score_residual"]))
    theta = np.array([t for t, _ in TMLE_RUNS])
    resid = np.array([s for _, s in TMLE_RUNS])
    ok = bool(np.all((theta >= 0) & (theta <= 1)) and np.all(resid < 1e-8))
    record(5, "TMLE range and score equation", ok,
           f"{theta.size} runs, theta in [{theta.min():.4f}, {theta.max():.4f}], "
           f"max residual {resid.max():.2e}")
    assert ok


LEARNER_CONFIGS = [
    ("constant", "constant"),
    ("glm", "glm"),
    ("saturated glm", SAT),
    ("boosting", {"name": "boost", "max_depth": 2}),
    ("knn", {"name": "knn", "k": 15}),
    ("selector", ["constant", "glm", {"name": "boost", "max_depth": 1, "n_rounds": 30}]),
]


def test_criterion_6_telescoping(d1_uncensored):
    worst = 0.0
    for k, (name, spec) in enumerate(LEARNER_CONFIGS):
        for lag in (None, 1):
            data = d1_uncensored.simulate(600, 6000 + k)
            rep = sdr_estimate(data, Identity(), folds=J, outcome_learner=spec, ratio_learner=spec,
                               censoring_learner=spec, markov_lag=lag, seed=k)
            worst = max(worst, abs(rep.theta - data.y_final.mean()))
    ok = worst < 1e-12
    record(6, "telescoping exactness", ok,
           f"{len(LEARNER_CONFIGS) * 2} learner/lag configs, max |theta - mean Y| {worst:.1e}")
    assert ok


def test_criterion_7_density_ratio_trick(d1):
    # Units where the true ratio is 0 (A_t outside the support of the intervened law)
    # have error equal to the probability clip at every n, so the gate uses units
    # with r > 0; the median over all units is reported alongside.
    policies = {"d=1": Static(1), "IPSI 0.5": IPSIRiskRatio(0.5)}
    med = {name: {} for name in policies}
    pooled = {name: {} for name in policies}
    for name, pol in policies.items():
        for n in (1000, 4000, 16000):
            errs, all_errs = [], []
            for r in range(20):
                seed = 7000 + n + r
                data = d1.simulate(n, seed)
                folds = _folds(data, seed)
                eps = draw_randomizer(seed, n, data.tau)
                for t in (1, 2):
                    est = fit_density_ratio(data, t, pol, SAT, folds, eps=eps[:, t - 1], seed=seed)
                    true = d1.density_ratio(t, data, pol)
                    live = ~np.isnan(est)
                    errs.append(np.abs(est - true)[live & (true > 0)])
                    all_errs.append(np.abs(est - true)[live])
            med[name][n] = float(np.median(np.concatenate(errs)))
            pooled[name][n] = float(np.median(np.concatenate(all_errs)))
    ok = all(m[4000] < 0.1 and m[1000] > m[4000] > m[16000] for m in med.values())
    detail = "; ".join(f"{name}: " + ", ".join(f"n={n} {v:.4f}" for n, v in m.items())
                       + " (all units: " + ", ".join(f"{v:.4f}" for v in pooled[name].values()) + ")"
                       for name, m in med.items())
    record(7, "density-ratio classification (median |r_hat - r| where r > 0)", ok, detail)
    assert ok


def _exact_nuisances(d1, data, pol, H):
    x = data.truncate(H)
    R = risk_indicators(x)
    Y = np.column_stack([x.Y, x.y_final])
    n = x.n_units
    W, QO, QP = (np.zeros((n, H)) for _ in range(3))
    for t in range(1, H + 1):
        live = (R[:, t - 1] == 1) & (x.censoring(t - 1) == 1)
        r = d1.density_ratio(t, x, pol)
        g = d1.censoring_prob(t, x)
        W[live, t - 1] = assemble_weights(r[live], g[live], x.C[live, t - 1], R[live, t - 1])
        a = x.A[:, t - 1, 0]
        QO[:, t - 1] = d1.q_function(t, x, a, pol, H)
        hist = x.history_at(t)
        if pol.needs_randomizer:
            QP[:, t - 1] = sum(p * d1.q_function(t, x, np.ravel(v), pol, H)
                               for v, p in pol.image_distribution(t, a[:, None], hist))
        else:
            QP[:, t - 1] = d1.q_function(t, x, pol.apply(t, a[:, None], hist)[:, 0], pol, H)
    return x, R, Y, W, QO, QP


@pytest.fixture(scope="module")
def enumerated(d1):
    return d1.enumerate_observed()


def test_criterion_8_exact_robustness(d1, enumerated):
    data, prob = enumerated
    worst = 0.0
    cells = 0
    for pol in (Static(1), IPSIRiskRatio(0.5)):
        for H in (1, 2):
            x, R, Y, W, QO, QP = _exact_nuisances(d1, data, pol, H)
            wrong_w = W * 1.5 + 0.2 * (W > 0)
            arms = [(W, 0.6 * QO + 0.1, 0.6 * QP + 0.1), (wrong_w, QO, QP)]
            for w, qo, qp in arms:
                _, pseudo = eif_transform(w, qo, qp, R, Y)
                for t in range(1, H + 1):
                    rows = (R[:, t - 1] == 1) & (x.C[:, t - 1] == 1) & (prob > 0)
                    key = np.column_stack([x.A[:, t - 1, 0]] + [x.L[:, s, 0] for s in range(t)]
                                          + [x.A[:, s, 0] for s in range(t - 1)])
                    uniq, inv = np.unique(key[rows], axis=0, return_inverse=True)
                    p, ps, q = prob[rows], pseudo[rows, t - 1], QO[rows, t - 1]
                    for k in range(len(uniq)):
                        m = inv.ravel() == k
                        cond = p[m] @ ps[m] / p[m].sum()
                        worst = max(worst, abs(cond - q[m][0]))
                        cells += 1
    ok = worst < 1e-10
    record(8, "exact robustness check by enumeration", ok,
           f"{cells} (policy, arm, t, cell) checks, max deviation {worst:.1e}")
    assert ok


def test_criterion_9_second_order_remainder(d1, enumerated):
    data, prob = enumerated
    hs = np.array([0.05, 0.1, 0.2, 0.4])
    slopes = []
    for pol in (Static(1), IPSIRiskRatio(0.5)):
        theta = d1.exact(pol).theta[2]
        x, R, Y, W, QO, QP = _exact_nuisances(d1, data, pol, 2)
        bias = []
        for h in hs:
            phi, _ = eif_transform(W * (1 + h), QO * (1 + h), QP * (1 + h), R, Y)
            bias.append(prob @ phi[:, 0] - theta)
        slopes.append(np.polyfit(np.log(hs), np.log(np.abs(bias)), 1)[0])
    ok = min(slopes) >= 1.7
    record(9, "second-order remainder (log-log slope)", ok,
           "slopes " + ", ".join(f"{s:.3f}" for s in slopes))
    assert ok


def test_criterion_10_postprocessing():
    rng = np.random.default_rng(10)
    idem = True
    optimal = True
    for _ in range(50):
        v = rng.uniform(-0.5, 1.5, size=rng.integers(2, 15))
        w = rng.uniform(0.2, 3.0, size=v.size)
        p = isotonic_project(v, w)
        idem &= np.array_equal(isotonic_project(p, w), p)
        sse = np.sum(w * (v - p) ** 2)
        cands = np.sort(rng.uniform(v.min() - 0.2, v.max() + 0.2, size=(1000, v.size)), axis=1)
        optimal &= bool(np.all(sse <= np.sum(w * (v - cands) ** 2, axis=1) + 1e-12))
    e = rng.standard_normal((5000, 2))
    z1 = simultaneous_band(e[:, :1], B=10_000, seed=1).z
    z2 = simultaneous_band(e, B=10_000, seed=2).z
    ok = bool(idem and optimal and abs(z1 - 1.96) <= 0.02 and abs(z2 - 2.236) <= 0.03)
    record(10, "post-processing", ok,
           f"idempotent={idem}, optimal={optimal}, z*(K=1)={z1:.4f}, z*(K=2 indep)={z2:.4f}")
    assert ok


def test_criterion_11_cli_determinism(d1, tmp_path):
    data = d1.simulate(1500, 11)
    write_csv(data, tmp_path / "data.csv")
    cfg = {"policy": {"kind": "ipsi_rr", "delta": 0.5}, "estimator": "tmle",
           "learners": {"outcome": [SAT], "ratio": [SAT], "censoring": ["glm", "constant"]},
           "folds": {"J": J}, "band": {"B": 2000}, "compare_to": "identity"}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    outputs = {}
    for threads in (1, 2, 8):
        out = tmp_path / f"out{threads}"
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            code = main(["estimate", "--config", str(tmp_path / "cfg.json"), "--input",
                         str(tmp_path / "data.csv"), "--out", str(out), "--seed", "11",
                         "--threads", str(threads)])
        assert code == 0
        outputs[threads] = {p.name: p.read_bytes() for p in sorted(Path(out).iterdir())}
    same = outputs[1] == outputs[2] == outputs[8]
    record(11, "CLI determinism across 1/2/8 threads", same,
           f"{len(outputs[1])} files compared byte-for-byte")
    assert same
