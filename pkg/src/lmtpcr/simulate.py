"""Synthetic data from structural equation models with known laws, and ground truth.

A DGP is a JSON document::

    {"tau": 2,
     "baseline": [{"name": "W_0", "law": {...}}],          # optional
     "times": [{"t": 1, "L": [law, ...], "A": law, "C": law},
               {"t": 2, "D": law, "Y": law, "L": [...], "A": law, "C": law},
               {"t": 3, "D": law, "Y": law}]}

Variables are named like CSV columns (``W_j``, ``L<t>_<j>``, ``A<t>``,
``C<t>``, ``D<t>``, ``Y<t>``). A law is one of

* ``{"type": "table", "parents": [...], "table": {"0,1": p, ...}}`` with
  P(X = 1) per parent configuration, or pmf lists plus ``"support"``;
* ``{"type": "logistic", "intercept": b0, "coef": {"L1_0": b1, ...}}``;
* ``{"type": "bernoulli", "p": p}``;
* ``{"type": "gaussian", "intercept": b0, "coef": {...}, "sd": s}``
  (continuous; Monte Carlo only).

Laws for D_t, Y_t and C_t describe units still at risk and uncensored; the
generator imposes the absorbing-event, competing-risk and null conventions
itself. The final block may carry a D law, in which case D_{tau+1} is drawn
but not recorded (Y_{tau+1} is then 0 whenever it is 1).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .data import History, LongitudinalDataset
from .nuisance import KnownLaws
from .policy import Policy, continuous_post_intervention_density, discrete_post_intervention_pmf, randomizer

__all__ = [
    "DgpError",
    "Law",
    "Dgp",
    "TruthReport",
    "load_dgp",
    "load_d1",
    "simulate_observed",
    "monte_carlo_truth",
    "exhaustive_truth",
    "forward_truth",
    "enumerate_observed",
]

MAX_PATHS = 1_000_000


class DgpError(ValueError):
    pass


def _key(values) -> str:
    return ",".join(str(int(v)) if float(v).is_integer() else repr(float(v)) for v in values)


@dataclass(frozen=True)
class Law:
    """Conditional law of one variable given its parents."""

    kind: str                      # table | logistic | gaussian
    parents: tuple
    support: tuple | None          # None for continuous laws
    table: dict = field(default_factory=dict)
    intercept: float = 0.0
    coef: tuple = ()
    sd: float = 1.0

    @classmethod
    def from_json(cls, obj, name: str) -> "Law":
        kind = obj.get("type")
        if kind == "bernoulli":
            obj = {"type": "table", "parents": [], "table": {"": obj["p"]}}
            kind = "table"
        if kind == "table":
            parents = tuple(obj.get("parents", []))
            support = tuple(float(s) for s in obj.get("support", (0, 1)))
            table = {}
            for k, v in obj["table"].items():
                pmf = np.atleast_1d(np.asarray(v, dtype=float))
                if pmf.size == 1 and len(support) == 2:
                    pmf = np.array([1.0 - pmf[0], pmf[0]])
                if pmf.size != len(support):
                    raise DgpError(f"{name}: entry {k!r} does not match support {support}")
                if (pmf < 0).any() or abs(pmf.sum() - 1.0) > 1e-9:
                    raise DgpError(f"{name}: entry {k!r} is not a probability vector")
                key = k.replace(" ", "")
                if (key.count(",") + 1 if key else 0) != len(parents):
                    raise DgpError(f"{name}: key {k!r} does not list {len(parents)} parent values")
                table[key] = pmf
            return cls("table", parents, support, table)
        if kind in ("logistic", "gaussian"):
            coef = obj.get("coef", {})
            parents = tuple(coef)
            law = cls(kind, parents, (0.0, 1.0) if kind == "logistic" else None,
                      intercept=float(obj.get("intercept", 0.0)),
                      coef=tuple(float(coef[p]) for p in parents), sd=float(obj.get("sd", 1.0)))
            if kind == "gaussian" and law.sd <= 0:
                raise DgpError(f"{name}: gaussian sd must be positive")
            return law
        raise DgpError(f"{name}: unknown law type {kind!r}")

    def to_json(self) -> dict:
        if self.kind == "table":
            binary = self.support == (0.0, 1.0)
            return {"type": "table", "parents": list(self.parents),
                    **({} if binary else {"support": list(self.support)}),
                    "table": {k: (float(v[1]) if binary else v.tolist()) for k, v in self.table.items()}}
        out = {"type": self.kind, "intercept": self.intercept, "coef": dict(zip(self.parents, self.coef))}
        if self.kind == "gaussian":
            out["sd"] = self.sd
        return out

    @property
    def discrete(self) -> bool:
        return self.support is not None

    def _linear(self, P):
        return self.intercept + (P @ np.asarray(self.coef) if self.coef else 0.0)

    def pmf(self, P) -> np.ndarray:
        """(n, K) probabilities over the support for parent rows ``P`` (n, n_parents)."""
        P = np.atleast_2d(np.asarray(P, float))
        if self.kind == "logistic":
            p1 = expit(self._linear(P))
            return np.column_stack([1 - p1, p1])
        if self.kind == "gaussian":
            raise DgpError("continuous law has no pmf")
        if not self.parents:
            return np.tile(self.table[""], (P.shape[0], 1))
        uniq, inv = np.unique(P, axis=0, return_inverse=True)
        rows = []
        for u in uniq:
            k = _key(u)
            if k not in self.table:
                raise DgpError(f"no table entry for parents {self.parents} = {k}")
            rows.append(self.table[k])
        return np.asarray(rows)[inv.ravel()]

    def density(self, x, P) -> np.ndarray:
        if self.kind != "gaussian":
            raise DgpError("density is defined for gaussian laws only")
        P = np.atleast_2d(np.asarray(P, float))
        return norm.pdf(x, loc=self._linear(P), scale=self.sd)

    def sample(self, P, u, z) -> np.ndarray:
        """Draw using uniform ``u`` (discrete) or standard normal ``z`` (continuous)."""
        if self.kind == "gaussian":
            P = np.atleast_2d(np.asarray(P, float))
            return self._linear(P) + self.sd * z
        cdf = np.cumsum(self.pmf(P), axis=1)
        idx = (u[:, None] >= cdf[:, :-1]).sum(axis=1)
        return np.asarray(self.support)[idx]


@dataclass(frozen=True)
class Node:
    name: str
    t: int
    role: str          # W, L, A, C, D, Y
    law: Law


@dataclass(frozen=True)
class TruthReport:
    method: str
    theta: dict
    m: int | None = None
    se: dict | None = None

    def to_dict(self) -> dict:
        out = {"method": self.method, "theta": {str(k): v for k, v in self.theta.items()}}
        if self.m is not None:
            out["m"] = self.m
            out["se"] = {str(k): v for k, v in self.se.items()}
        return out


class Dgp:
    """Validated structural model with NPSEM-ordered nodes."""

    def __init__(self, spec: dict):
        self.spec = spec
        try:
            self.tau = int(spec["tau"])
        except (KeyError, TypeError, ValueError):
            raise DgpError("spec needs an integer 'tau'") from None
        if self.tau < 1:
            raise DgpError("tau must be at least 1")
        nodes = [Node(b["name"], 0, "W", Law.from_json(b["law"], b["name"]))
                 for b in spec.get("baseline", [])]
        for b in nodes:
            if not b.name.startswith("W_"):
                raise DgpError(f"baseline variables are named W_<j>, got {b.name!r}")
        blocks = {int(b["t"]): b for b in spec.get("times", [])}
        if sorted(blocks) != list(range(1, self.tau + 2)):
            raise DgpError(f"'times' must cover t = 1..{self.tau + 1}")
        p = None
        for t in range(1, self.tau + 2):
            b = blocks[t]
            if t >= 2:
                if "D" in b:
                    nodes.append(Node(f"D{t}", t, "D", Law.from_json(b["D"], f"D{t}")))
                if "Y" not in b:
                    raise DgpError(f"block t={t} needs a Y law")
                nodes.append(Node(f"Y{t}", t, "Y", Law.from_json(b["Y"], f"Y{t}")))
            if t <= self.tau:
                Ls = b.get("L", [])
                if p is None:
                    p = len(Ls)
                elif len(Ls) != p:
                    raise DgpError("every time point needs the same number of L variables")
                nodes += [Node(f"L{t}_{j}", t, "L", Law.from_json(law, f"L{t}_{j}"))
                          for j, law in enumerate(Ls)]
                for role in ("A", "C"):
                    if role not in b:
                        raise DgpError(f"block t={t} needs an {role} law")
                    nodes.append(Node(f"{role}{t}", t, role, Law.from_json(b[role], f"{role}{t}")))
            elif set(b) - {"t", "D", "Y"}:
                raise DgpError("the final block carries only D and Y")
        self.p = p or 0
        self.nodes = tuple(nodes)
        self.index = {nd.name: i for i, nd in enumerate(nodes)}
        for i, nd in enumerate(nodes):
            for par in nd.law.parents:
                if par not in self.index or self.index[par] >= i:
                    raise DgpError(f"{nd.name}: parent {par!r} is not an earlier variable")
            if nd.role in "CDY" and nd.law.support != (0.0, 1.0):
                raise DgpError(f"{nd.name} must have a binary law")
        self.a_index = {nd.t: i for i, nd in enumerate(nodes) if nd.role == "A"}
        self.n_baseline = sum(nd.role == "W" for nd in nodes)

    # ------------------------------------------------------------------ basics

    @property
    def discrete(self) -> bool:
        return all(nd.law.discrete for nd in self.nodes)

    @cached_property
    def exposure_support(self) -> tuple | None:
        sup = {self.nodes[i].law.support for i in self.a_index.values()}
        if len(sup) != 1 or None in sup:
            return None
        return next(iter(sup))

    def to_json(self) -> dict:
        return self.spec

    def _parents(self, law: Law, cols: dict, n: int) -> np.ndarray:
        if not law.parents:
            return np.zeros((n, 0))
        return np.column_stack([cols[p] for p in law.parents])

    def _history(self, cols: dict, t: int, n: int) -> History:
        base = np.column_stack([cols[f"W_{j}"] for j in range(self.n_baseline)]) \
            if self.n_baseline else np.zeros((n, 0))
        L = np.zeros((n, t, self.p))
        for s in range(1, t + 1):
            for j in range(self.p):
                L[:, s - 1, j] = cols[f"L{s}_{j}"]
        A = np.zeros((n, t - 1, 1))
        for s in range(1, t):
            A[:, s - 1, 0] = cols[f"A{s}"]
        return History(t=t, baseline=base, L=L, A=A)

    def _to_dataset(self, cols: dict, n: int) -> LongitudinalDataset:
        tau = self.tau
        z = np.zeros(n)
        base = np.column_stack([cols[f"W_{j}"] for j in range(self.n_baseline)]) \
            if self.n_baseline else np.zeros((n, 0))
        L = np.zeros((n, tau, self.p))
        for t in range(1, tau + 1):
            for j in range(self.p):
                L[:, t - 1, j] = cols[f"L{t}_{j}"]
        A = np.column_stack([cols[f"A{t}"] for t in range(1, tau + 1)])
        C = np.column_stack([cols[f"C{t}"] for t in range(1, tau + 1)])
        D = np.column_stack([cols.get(f"D{t}", z) for t in range(1, tau + 1)])
        Y = np.column_stack([cols.get(f"Y{t}", z) for t in range(1, tau + 1)])
        return LongitudinalDataset.from_arrays(A, C, D, Y, cols[f"Y{tau + 1}"], L=L, baseline=base)

    # ------------------------------------------------------------- simulation

    def _run(self, n: int, rng, policy: Policy | None = None, eps_seed: int = 0) -> dict:
        """Vectorised NPSEM pass; with ``policy`` the exposure is intervened and C = 1."""
        cols = {}
        active = np.ones(n, bool)          # R_t = 1 and not censored
        prev_D = np.zeros(n)
        prev_Y = np.zeros(n)
        units = np.arange(n)
        for nd in self.nodes:
            u = rng.random(n)
            z = rng.standard_normal(n) if not nd.law.discrete else None
            if nd.role == "W":
                cols[nd.name] = nd.law.sample(self._parents(nd.law, cols, n), u, z)
                continue
            if nd.role == "D":
                draw = nd.law.sample(self._parents(nd.law, cols, n), u, z)
                val = np.where(active, draw, prev_D)
                cols[nd.name] = val
                prev_D = val
                continue
            if nd.role == "Y":
                draw = nd.law.sample(self._parents(nd.law, cols, n), u, z)
                dt = cols.get(f"D{nd.t}", np.zeros(n))
                val = np.where(active, np.where(dt == 1, 0.0, draw), prev_Y)
                cols[nd.name] = val
                prev_Y = val
                if f"D{nd.t}" not in cols:
                    cols[f"D{nd.t}"] = prev_D.copy()
                active &= (cols[f"D{nd.t}"] == 0) & (val == 0)
                continue
            if nd.role == "C" and policy is not None:
                cols[nd.name] = np.where(active, 1.0, 0.0)
                continue
            draw = nd.law.sample(self._parents(nd.law, cols, n), u, z)
            if nd.role == "A" and policy is not None:
                hist = self._history(cols, nd.t, n)
                eps = randomizer(eps_seed, units, nd.t) if policy.needs_randomizer else None
                draw = policy.apply(nd.t, draw[:, None], hist, eps)[:, 0]
            cols[nd.name] = np.where(active, draw, 0.0)
            if nd.role == "C":
                active &= draw == 1
        # D_{tau+1} is never recorded
        cols.pop(f"D{self.tau + 1}", None)
        return cols

    def simulate(self, n: int, seed: int) -> LongitudinalDataset:
        if n < 1:
            raise DgpError("n must be positive")
        cols = self._run(n, np.random.default_rng(seed))
        return self._to_dataset(cols, n)

    def monte_carlo(self, policy: Policy, m: int, seed: int, horizons=None,
                    chunk: int = 200_000) -> TruthReport:
        if m < 1:
            raise DgpError("m must be positive")
        horizons = list(range(1, self.tau + 1)) if horizons is None else [int(h) for h in horizons]
        hits = {h: 0 for h in horizons}
        rng = np.random.default_rng(seed)
        done = 0
        while done < m:
            k = min(chunk, m - done)
            cols = self._run(k, rng, policy, eps_seed=int(rng.integers(2**62)))
            for h in horizons:
                hits[h] += int(np.sum(cols[f"Y{h + 1}"] == 1))
            done += k
        theta = {h: hits[h] / m for h in horizons}
        se = {h: float(np.sqrt(theta[h] * (1 - theta[h]) / m)) for h in horizons}
        return TruthReport("mc", theta, m, se)

    # ------------------------------------------------------------ enumeration

    def _require_discrete(self):
        if not self.discrete:
            raise DgpError("exact enumeration needs every law to be discrete")

    def _probs(self, nd: Node, vals: list) -> np.ndarray:
        P = [vals[self.index[p]] for p in nd.law.parents]
        return nd.law.pmf(np.asarray([P], float))[0]

    def _images(self, policy: Policy, t: int, a: float, vals: list):
        hist = self._history({nd.name: np.array([v]) for nd, v in zip(self.nodes, vals)}, t, 1)
        if policy.needs_randomizer:
            return [(float(np.ravel(v)[0]), p) for v, p in
                    policy.image_distribution(t, np.array([[a]]), hist)]
        return [(float(policy.apply(t, np.array([[a]]), hist)[0, 0]), 1.0)]

    def _q(self, policy, horizon, t, prefix, memo):
        """q_t(a_t, h_t) for the prefix of values up to and including A_t."""
        key = (t, prefix)
        if key in memo:
            return memo[key]
        vals = list(prefix) + [0.0] * (len(self.nodes) - len(prefix))

        def walk(k):
            nd = self.nodes[k]
            if nd.role == "C":
                vals[k] = 1.0
                return walk(k + 1)
            if nd.role == "A":
                total = 0.0
                for s, ps in zip(nd.law.support, self._probs(nd, vals)):
                    if ps == 0:
                        continue
                    for ad, pe in self._images(policy, nd.t, s, vals):
                        vals[k] = ad
                        total += ps * pe * self._q(policy, horizon, nd.t, tuple(vals[:k + 1]), memo)
                return total
            total = 0.0
            for v, pv in zip(nd.law.support, self._probs(nd, vals)):
                if pv == 0:
                    continue
                vals[k] = v
                if nd.role == "D" and v == 1:
                    continue                               # competing event: Y stays 0
                if nd.role == "Y":
                    if v == 1:
                        total += pv
                        continue
                    if nd.t == horizon + 1:
                        continue
                total += pv * walk(k + 1)
            return total

        out = walk(self.a_index[t] + 1)
        memo[key] = out
        return out

    def exact(self, policy: Policy, horizons=None) -> TruthReport:
        """theta per horizon by the backward recursion theta = E[q_1(A^d_1, H_1)]."""
        self._require_discrete()
        horizons = list(range(1, self.tau + 1)) if horizons is None else [int(h) for h in horizons]
        theta = {}
        for h in horizons:
            memo = {}
            vals = [0.0] * len(self.nodes)

            def walk(k, vals=vals, memo=memo, h=h):
                nd = self.nodes[k]
                if nd.role == "A":
                    total = 0.0
                    for s, ps in zip(nd.law.support, self._probs(nd, vals)):
                        for ad, pe in self._images(policy, 1, s, vals):
                            vals[k] = ad
                            total += ps * pe * self._q(policy, h, 1, tuple(vals[:k + 1]), memo)
                    return total
                total = 0.0
                for v, pv in zip(nd.law.support, self._probs(nd, vals)):
                    vals[k] = v
                    total += pv * walk(k + 1)
                return total

            theta[h] = float(walk(0))
        return TruthReport("exact", theta)

    def forward(self, policy: Policy, horizon: int) -> float:
        """theta by summing path probabilities of the intervened, uncensored world."""
        self._require_discrete()
        vals = [0.0] * len(self.nodes)
        stop = horizon + 1
        count = [0]

        def walk(k, prob):
            if prob == 0:
                return 0.0
            nd = self.nodes[k]
            if nd.role == "C":
                vals[k] = 1.0
                return walk(k + 1, prob)
            branches = []
            probs = self._probs(nd, vals)
            if nd.role == "A":
                for s, ps in zip(nd.law.support, probs):
                    for ad, pe in self._images(policy, nd.t, s, vals):
                        branches.append((ad, ps * pe))
            else:
                branches = list(zip(nd.law.support, probs))
            total = 0.0
            for v, p in branches:
                vals[k] = v
                count[0] += 1
                if count[0] > MAX_PATHS:
                    raise DgpError("state space exceeds the enumeration limit")
                if nd.role == "D" and v == 1:
                    continue
                if nd.role == "Y" and (v == 1 or nd.t == stop):
                    total += prob * p * v
                    continue
                total += walk(k + 1, prob * p)
            return total

        return float(walk(0, 1.0))

    def enumerate_observed(self) -> tuple[LongitudinalDataset, np.ndarray]:
        """Every observed trajectory with positive probability as (dataset, probabilities)."""
        self._require_discrete()
        rows, probs = [], []
        nn = len(self.nodes)

        def walk(k, vals, prob, active, state):
            if k == nn:
                rows.append(list(vals))
                probs.append(prob)
                if len(rows) > MAX_PATHS:
                    raise DgpError("state space exceeds the enumeration limit")
                return
            nd = self.nodes[k]
            if not active and nd.role != "W":
                # event or censoring already happened: deterministic continuation
                if nd.role == "D":
                    vals[k] = state["D"]
                elif nd.role == "Y":
                    vals[k] = state["Y"]
                else:
                    vals[k] = 0.0
                walk(k + 1, vals, prob, active, state)
                return
            branches = zip(nd.law.support, self._probs(nd, vals))
            if nd.role == "Y" and state["D"] == 1:
                branches = [(0.0, 1.0)]
            for v, p in branches:
                if p == 0:
                    continue
                vals[k] = v
                st = dict(state)
                act = active
                if nd.role == "D":
                    st["D"] = v
                elif nd.role == "Y":
                    st["Y"] = v
                    act = st["D"] == 0 and v == 0
                elif nd.role == "C":
                    act = v == 1
                walk(k + 1, vals, prob * p, act, st)

        walk(0, [0.0] * nn, 1.0, True, {"D": 0.0, "Y": 0.0})
        M = np.asarray(rows)
        cols = {nd.name: M[:, i] for i, nd in enumerate(self.nodes)}
        cols.pop(f"D{self.tau + 1}", None)
        return self._to_dataset(cols, M.shape[0]), np.asarray(probs)

    # --------------------------------------------------------- exact nuisances

    def _data_cols(self, data: LongitudinalDataset) -> dict:
        cols = data.columns()
        if f"A{1}" not in cols:
            raise DgpError("exact nuisances are implemented for scalar exposures")
        return cols

    def _at_risk(self, data, t):
        from .data import risk_indicators
        R = risk_indicators(data)
        return (R[:, t - 1] == 1) & (data.censoring(t - 1) == 1)

    def exposure_pmf(self, t: int, data: LongitudinalDataset) -> np.ndarray:
        """g_A,t(. | H_t) over the exposure support, one row per unit."""
        law = self.nodes[self.a_index[t]].law
        return law.pmf(self._parents(law, self._data_cols(data), data.n_units))

    def censoring_prob(self, t: int, data: LongitudinalDataset) -> np.ndarray:
        """P(C_t = 1 | A_t, H_t) per unit."""
        law = self.nodes[self.index[f"C{t}"]].law
        return law.pmf(self._parents(law, self._data_cols(data), data.n_units))[:, 1]

    def known_laws(self) -> KnownLaws:
        return KnownLaws(self.exposure_pmf, self.exposure_support, self.censoring_prob)

    def density_ratio(self, t: int, data: LongitudinalDataset, policy: Policy) -> np.ndarray:
        """True g^d_A,t / g_A,t at the observed (A_t, H_t)."""
        law = self.nodes[self.a_index[t]].law
        cols = self._data_cols(data)
        n = data.n_units
        a = data.A[:, t - 1, 0]
        hist = data.history_at(t)
        P = self._parents(law, cols, n)
        if law.discrete:
            base = law.pmf(P)
            sup = np.asarray(law.support)
            pol = discrete_post_intervention_pmf(policy, base, sup, t, hist)
            k = np.searchsorted(sup, a).clip(0, sup.size - 1)
            g = base[np.arange(n), k]
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(g > 0, pol[np.arange(n), k] / g, 0.0)
        gd = continuous_post_intervention_density(policy, lambda u, t, h: law.density(u, P),
                                                  t, hist, a)
        return gd / law.density(a, P)

    def q_function(self, t: int, data: LongitudinalDataset, a, policy: Policy,
                   horizon: int | None = None) -> np.ndarray:
        """Exact q_t(a, H_t) per unit; 0 for units outside the risk set at t."""
        self._require_discrete()
        horizon = self.tau if horizon is None else horizon
        cols = self._data_cols(data)
        n = data.n_units
        a = np.broadcast_to(np.asarray(a, float).reshape(-1), (n,))
        k = self.a_index[t]
        names = [nd.name for nd in self.nodes[:k]]
        M = np.column_stack([cols[nm] for nm in names] + [a]) if names else a[:, None]
        live = self._at_risk(data, t)
        out = np.zeros(n)
        memo = self._memo.setdefault((policy, horizon), {})
        uniq, inv = np.unique(M[live], axis=0, return_inverse=True)
        vals = np.array([self._q(policy, horizon, t, tuple(float(x) for x in row), memo)
                         for row in uniq])
        out[live] = vals[inv.ravel()]
        return out

    @cached_property
    def _memo(self):
        return {}


# ---------------------------------------------------------------------------
# functional API

def load_dgp(path_or_obj) -> Dgp:
    if isinstance(path_or_obj, Dgp):
        return path_or_obj
    if isinstance(path_or_obj, dict):
        return Dgp(path_or_obj)
    try:
        spec = json.loads(Path(path_or_obj).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DgpError(f"cannot read DGP spec: {exc}") from None
    return Dgp(spec)


def load_d1() -> Dgp:
    """The shipped two-period binary test model."""
    text = resources.files("lmtpcr").joinpath("data/d1.json").read_text(encoding="utf-8")
    return Dgp(json.loads(text))


def simulate_observed(spec, n: int, seed: int) -> LongitudinalDataset:
    return load_dgp(spec).simulate(n, seed)


def monte_carlo_truth(spec, policy: Policy, m: int, seed: int, horizons=None) -> TruthReport:
    return load_dgp(spec).monte_carlo(policy, m, seed, horizons)


def exhaustive_truth(spec, policy: Policy, horizon=None) -> TruthReport:
    horizons = None if horizon is None else np.atleast_1d(horizon).tolist()
    return load_dgp(spec).exact(policy, horizons)


def forward_truth(spec, policy: Policy, horizon: int) -> float:
    return load_dgp(spec).forward(policy, horizon)


def enumerate_observed(spec):
    return load_dgp(spec).enumerate_observed()

