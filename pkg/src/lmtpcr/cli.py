"""Command-line front end: ``lmtpcr {estimate, simulate, benchmark, validate}``.

Configuration comes from a JSON file (``--config``) with flag overrides.
Logs go to stderr, results to files in ``--out``. Exit codes: 0 success,
2 invalid configuration or data, 3 estimation failure (partial outputs are
still written).
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .data import DataFormatError, read_csv, validate_dataset, write_csv
from .estimators import EstimationError, estimate_curve
from .learners import LearnerError, make_folds, make_learner
from .nuisance import NuisanceError, fit_weights, subseed
from .policy import PolicyError, policy_from_config
from .postprocess import contrast_curves, project_curve, write_curve_csv
from .simulate import DgpError, load_dgp

log = logging.getLogger("lmtpcr")

EXIT_OK, EXIT_INVALID, EXIT_ESTIMATION = 0, 2, 3

DEFAULTS = {
    "estimator": "sdr",
    "policy": {"kind": "identity"},
    "horizons": "all",
    "learners": {"outcome": ["glm"], "censoring": ["glm"], "ratio": ["glm"]},
    "folds": {"J": 10},
    "markov_lag": None,
    "ratio": {"c_max": 50.0},
    "censoring": {"g_floor": 0.01},
    "band": {"B": 10000, "level": 0.95},
    "tmle": {"gamma": 0.001},
    "seed": 0,
}


class ConfigError(ValueError):
    pass


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _parse_policy(text):
    text = text.strip()
    if text.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--policy is not valid JSON: {exc}") from None
    return {"kind": text}


def _parse_horizons(text):
    if text == "all":
        return "all"
    try:
        return [int(h) for h in text.split(",") if h.strip()]
    except ValueError:
        raise ConfigError(f"--horizons must be 'all' or a comma-separated list, got {text!r}") from None


def load_config(args) -> dict:
    cfg = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
    cfg = _merge(DEFAULTS, cfg)
    for flag in ("input", "out", "seed", "threads", "estimator", "truth", "n", "reps", "m"):
        v = getattr(args, flag, None)
        if v is not None:
            cfg[flag] = v
    if getattr(args, "policy", None):
        cfg["policy"] = _parse_policy(args.policy)
    if getattr(args, "horizons", None):
        cfg["horizons"] = _parse_horizons(args.horizons)
    return cfg


def config_digest(cfg: dict, extra: dict | None = None) -> str:
    """sha256 of the canonical config, ignoring thread count and output location."""
    core = {k: v for k, v in cfg.items() if k not in ("threads", "out")}
    if extra:
        core["_inputs"] = extra
    text = json.dumps(core, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _check_common(cfg):
    if cfg["estimator"] not in ("sdr", "tmle"):
        raise ConfigError(f"estimator must be 'sdr' or 'tmle', got {cfg['estimator']!r}")
    J = cfg["folds"].get("J", 10)
    if not isinstance(J, int) or J < 2:
        raise ConfigError("folds.J must be an integer >= 2")
    if float(cfg["ratio"].get("c_max", 50)) <= 0:
        raise ConfigError("ratio.c_max must be positive")
    g = float(cfg["censoring"].get("g_floor", 0.01))
    if not 0 < g <= 1:
        raise ConfigError("censoring.g_floor must lie in (0, 1]")
    if int(cfg["band"].get("B", 10000)) < 1:
        raise ConfigError("band.B must be positive")
    gamma = float(cfg["tmle"].get("gamma", 0.001))
    if not 0 < gamma < 0.5:
        raise ConfigError("tmle.gamma must lie in (0, 0.5)")
    lag = cfg.get("markov_lag")
    if lag is not None and (not isinstance(lag, int) or lag < 1):
        raise ConfigError("markov_lag must be null or a positive integer")
    threads = cfg.get("threads")
    if threads is not None and (not isinstance(threads, int) or threads < 1):
        raise ConfigError("threads must be a positive integer")
    try:
        for role in ("outcome", "censoring", "ratio"):
            make_learner(cfg["learners"].get(role, ["glm"]))
        policy = policy_from_config(cfg["policy"])
    except (LearnerError, PolicyError, KeyError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    return policy


def _executor(cfg):
    threads = cfg.get("threads") or os.cpu_count() or 1
    return ThreadPoolExecutor(max_workers=threads) if threads > 1 else nullcontext(None)


def _fmt(v) -> str:
    return repr(float(v))


def _run_curve(data, policy, cfg, horizons, folds, executor, known=None):
    L = cfg["learners"]
    weights = fit_weights(data, policy, folds, ratio_learner=L.get("ratio", ["glm"]),
                          censoring_learner=L.get("censoring", ["glm"]),
                          markov_lag=cfg.get("markov_lag"), c_max=float(cfg["ratio"]["c_max"]),
                          g_floor=float(cfg["censoring"]["g_floor"]), seed=int(cfg["seed"]),
                          known=known, executor=executor)
    extra = {"gamma": float(cfg["tmle"]["gamma"])} if cfg["estimator"] == "tmle" else {}
    return estimate_curve(data, policy, horizons=horizons, estimator=cfg["estimator"],
                          folds=folds, weights=weights, outcome_learner=L.get("outcome", ["glm"]),
                          markov_lag=cfg.get("markov_lag"), seed=int(cfg["seed"]),
                          executor=executor, **extra)


def _write_eif(path, horizons, eif):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit"] + [f"h{h}" for h in horizons])
        for i, row in enumerate(eif):
            w.writerow([i] + [_fmt(v) for v in row])


def cmd_estimate(cfg: dict) -> int:
    try:
        policy = _check_common(cfg)
        if not cfg.get("input"):
            raise ConfigError("no input dataset given")
        if not cfg.get("out"):
            raise ConfigError("no output directory given")
        data = read_csv(cfg["input"])
    except (ConfigError, DataFormatError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    check = validate_dataset(data)
    if not check.ok:
        log.error("dataset failed validation:\n%s", check.summary())
        return EXIT_INVALID
    horizons = list(range(1, data.tau + 1)) if cfg["horizons"] == "all" else list(cfg["horizons"])
    if not horizons or any(not 1 <= h <= data.tau for h in horizons):
        log.error("horizons must lie in 1..%d", data.tau)
        return EXIT_INVALID
    J = int(cfg["folds"].get("J", 10))
    if J > data.n_units:
        log.error("folds.J=%d exceeds the number of units (%d)", J, data.n_units)
        return EXIT_INVALID
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    seed = int(cfg["seed"])
    digest = config_digest(cfg, {"input_sha256": _file_digest(cfg["input"])})
    folds = make_folds(data.n_units, J, strata=data.y_final,
                       seed=cfg["folds"].get("seed", subseed(seed, 0)))
    try:
        with _executor(cfg) as ex:
            res = _run_curve(data, policy, cfg, horizons, folds, ex)
            ref = None
            if cfg.get("compare_to"):
                ref_policy = policy_from_config(cfg["compare_to"])
                ref = _run_curve(data, ref_policy, cfg, horizons, folds, ex)
    except (EstimationError, NuisanceError, LearnerError, PolicyError, ValueError) as exc:
        log.error("estimation failed: %s", exc)
        return EXIT_ESTIMATION

    band = cfg["band"]
    reports = []
    for h in horizons:
        if h in res.reports:
            r = res.reports[h]
            r.config_digest = digest
            reports.append(r.to_dict())
            log.info("horizon %d: theta=%.6f se=%.6f n_at_risk=%d weight_max=%.3f weight_mean=%.3f",
                     h, r.theta, r.se, r.n_at_risk, r.weight_max, r.weight_mean)
        else:
            reports.append({"horizon": h, "estimator": cfg["estimator"], "error": res.errors[h],
                            "seed": seed, "config_digest": digest})
    curve = project_curve(horizons, res.theta(), res.eif, level=float(band.get("level", 0.95)),
                          B=int(band.get("B", 10000)), seed=subseed(seed, 5))
    (out / "report.json").write_text(json.dumps(reports, indent=2) + "\n", encoding="utf-8")
    write_curve_csv(curve, out / "curve.csv")
    _write_eif(out / "eif.csv", horizons, res.eif)
    if ref is not None:
        diff = contrast_curves(horizons, res.theta(), res.eif, ref.theta(), ref.eif,
                               level=float(band.get("level", 0.95)), B=int(band.get("B", 10000)),
                               seed=subseed(seed, 6))
        write_curve_csv(diff, out / "contrast.csv")
    failed = dict(res.errors)
    if ref is not None:
        failed.update({h: f"reference arm: {m}" for h, m in ref.errors.items()})
    if failed:
        for h, msg in sorted(failed.items()):
            log.error("horizon %d failed: %s", h, msg)
        return EXIT_ESTIMATION
    return EXIT_OK


def cmd_simulate(cfg: dict) -> int:
    try:
        spec_path = cfg.get("spec") or cfg.get("input")
        if not spec_path:
            raise ConfigError("no DGP spec given")
        dgp = load_dgp(spec_path)
        n = int(cfg.get("n", 1000))
        if n < 1:
            raise ConfigError("n must be positive")
        if not cfg.get("out"):
            raise ConfigError("no output directory given")
        policy = policy_from_config(cfg["policy"])
        method = cfg.get("truth", "exact" if dgp.discrete else "mc")
        if method not in ("mc", "exact"):
            raise ConfigError("truth must be 'mc' or 'exact'")
        if method == "exact" and not dgp.discrete:
            raise ConfigError("exact truth needs a fully discrete spec")
    except (ConfigError, DgpError, PolicyError, TypeError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    seed = int(cfg["seed"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    data = dgp.simulate(n, seed)
    write_csv(data, out / "data.csv")
    if method == "exact":
        truth = dgp.exact(policy)
    else:
        truth = dgp.monte_carlo(policy, int(cfg.get("m", 1_000_000)), subseed(seed, 7))
    payload = {"policy": cfg["policy"], "n": n, "seed": seed, **truth.to_dict()}
    (out / "truth.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    log.info("wrote %d units and %s truth %s", n, method, truth.theta)
    return EXIT_OK


BENCH_FIELDS = ["estimator", "arm", "n", "reps", "truth", "mean_estimate", "bias", "sd", "mean_se",
                "coverage"]


def cmd_benchmark(cfg: dict) -> int:
    try:
        spec_path = cfg.get("spec") or cfg.get("input")
        if not spec_path:
            raise ConfigError("no DGP spec given")
        dgp = load_dgp(spec_path)
        if not dgp.discrete:
            raise ConfigError("benchmark needs a fully discrete spec (exact truth)")
        policy = _check_common(cfg)
        ns = cfg.get("n", [1000])
        ns = [int(v) for v in (ns if isinstance(ns, list) else [ns])]
        reps = int(cfg.get("reps", 10))
        if reps < 1 or any(v < 2 for v in ns):
            raise ConfigError("reps must be positive and every n at least 2")
        cells = cfg.get("cells") or [{"estimator": cfg["estimator"], "arm": "default"}]
        if not cfg.get("out"):
            raise ConfigError("no output directory given")
    except (ConfigError, DgpError, PolicyError, TypeError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    seed = int(cfg["seed"])
    horizon = int(cfg.get("horizon", dgp.tau))
    truth = dgp.exact(policy, [horizon]).theta[horizon]
    J = int(cfg["folds"].get("J", 10))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    rows, failures = [], 0
    with _executor(cfg) as ex:
        for cell in cells:
            est = cell.get("estimator", cfg["estimator"])
            learners = _merge(cfg["learners"], cell.get("learners", {}))
            for n in ns:
                thetas, ses, cover = [], [], []
                for r in range(reps):
                    rs = subseed(seed, n, r)
                    data = dgp.simulate(n, rs)
                    folds = make_folds(n, min(J, n), strata=data.y_final, seed=subseed(rs, 0))
                    known = dgp.known_laws() if cell.get("oracle_weights") else None
                    try:
                        w = fit_weights(data, policy, folds, ratio_learner=learners["ratio"],
                                        censoring_learner=learners["censoring"],
                                        markov_lag=cfg.get("markov_lag"),
                                        c_max=float(cfg["ratio"]["c_max"]),
                                        g_floor=float(cfg["censoring"]["g_floor"]),
                                        seed=rs, known=known, executor=ex)
                        scale = float(cell.get("weight_scale", 1.0))
                        if scale != 1.0:
                            w = w.scaled(scale)
                        res = estimate_curve(data, policy, horizons=[horizon], estimator=est,
                                             folds=folds, weights=w, outcome_learner=learners["outcome"],
                                             markov_lag=cfg.get("markov_lag"), seed=rs, executor=ex)
                    except (EstimationError, NuisanceError, LearnerError) as exc:
                        log.error("cell %s n=%d rep %d failed: %s", cell.get("arm"), n, r, exc)
                        failures += 1
                        continue
                    if horizon not in res.reports:
                        failures += 1
                        continue
                    rep = res.reports[horizon]
                    thetas.append(rep.theta)
                    ses.append(rep.se)
                    cover.append(rep.ci_low <= truth <= rep.ci_high)
                th = np.asarray(thetas)
                rows.append({
                    "estimator": est, "arm": cell.get("arm", est), "n": n, "reps": th.size,
                    "truth": truth,
                    "mean_estimate": th.mean() if th.size else np.nan,
                    "bias": th.mean() - truth if th.size else np.nan,
                    "sd": th.std(ddof=1) if th.size > 1 else np.nan,
                    "mean_se": float(np.mean(ses)) if ses else np.nan,
                    "coverage": float(np.mean(cover)) if cover else np.nan,
                })
                log.info("cell %s n=%d: bias=%.5f sd=%.5f coverage=%.3f", rows[-1]["arm"], n,
                         rows[-1]["bias"], rows[-1]["sd"], rows[-1]["coverage"])
    with (out / "summary.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=BENCH_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (v if isinstance(v, (int, str)) else _fmt(v)) for k, v in row.items()})
    return EXIT_ESTIMATION if failures else EXIT_OK


def cmd_validate(cfg: dict) -> int:
    if not cfg.get("input"):
        log.error("no input dataset given")
        return EXIT_INVALID
    try:
        data = read_csv(cfg["input"])
    except (DataFormatError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    res = validate_dataset(data)
    if cfg.get("out"):
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        items = [{"unit": v.unit, "t": v.t, "rule": v.rule, "message": v.message}
                 for v in res.structural + res.violations]
        (out / "validation.json").write_text(json.dumps({"ok": res.ok, "violations": items}, indent=2)
                                             + "\n", encoding="utf-8")
    if res.ok:
        log.info("dataset is valid: %d units, tau=%d", data.n_units, data.tau)
        return EXIT_OK
    log.error("dataset failed validation:\n%s", res.summary())
    return EXIT_INVALID


COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "benchmark": cmd_benchmark,
            "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lmtpcr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--input", help="dataset CSV (estimate, validate) or DGP spec (simulate, benchmark)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, help="worker threads (default: CPU count)")
        p.add_argument("--estimator", choices=["sdr", "tmle"])
        p.add_argument("--policy", help="policy kind or inline JSON object")
        p.add_argument("--horizons", help="'all' or comma-separated list")
        p.add_argument("--truth", choices=["mc", "exact"])
        p.add_argument("--n", type=int, help="sample size (simulate)")
        p.add_argument("--reps", type=int, help="replicates (benchmark)")
        p.add_argument("--m", type=int, help="Monte Carlo draws for the mc truth")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    return COMMANDS[args.command](cfg)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
