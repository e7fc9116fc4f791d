"""Modified treatment policies d(a_t, h_t, eps_t) and their post-intervention laws.

Policies are vectorised over units: ``apply(t, a, hist, eps)`` takes the natural
exposures of a batch (shape ``(n,)`` or ``(n, q)``), the matching
:class:`~lmtpcr.data.History` and the randomizer draws, and returns an array of
the same shape. A policy only reads the history it is handed; under
estimation that is the observed history, inside the truth engines it is the
intervened history.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import History

__all__ = [
    "PolicyError",
    "Policy",
    "Identity",
    "Static",
    "AdditiveShift",
    "MultiplicativeShift",
    "IPSIRiskRatio",
    "GracePeriod",
    "DelayIntubation",
    "TabularPolicy",
    "Piece",
    "constant_bound",
    "randomizer",
    "draw_randomizer",
    "apply",
    "multiplicative_shift",
    "additive_shift",
    "ipsi_risk_ratio",
    "grace_period",
    "delay_intubation",
    "discrete_post_intervention_pmf",
    "continuous_post_intervention_density",
    "history_value",
    "policy_from_config",
]


class PolicyError(ValueError):
    pass


# ---------------------------------------------------------------------------
# counter-based randomizer

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z):
    with np.errstate(over="ignore"):
        z = z + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def randomizer(seed: int, units, t: int) -> np.ndarray:
    """Uniform(0, 1) draws keyed by (seed, unit, t) via splitmix64 hashing.

    The value for a key does not depend on which other keys are requested, so
    draws are independent of iteration order and worker count.
    """
    units = np.asarray(units, dtype=np.uint64)
    s = _mix(np.array([seed % 2**64], dtype=np.uint64))
    h = _mix(_mix(s ^ units) ^ np.uint64(t))
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def draw_randomizer(seed: int, n_units: int, tau: int) -> np.ndarray:
    """(n, tau) matrix of cached draws, column t-1 for time t."""
    units = np.arange(n_units)
    return np.column_stack([randomizer(seed, units, t) for t in range(1, tau + 1)])


# ---------------------------------------------------------------------------
# history access

def history_value(hist: History, name: str) -> np.ndarray | None:
    """Column ``name`` (``W_j``, ``L<s>_j``, ``A<s>`` or ``A<s>_j``) of H_t, or None if absent."""
    if name.startswith("W_"):
        j = int(name[2:])
        return hist.baseline[:, j] if j < hist.baseline.shape[1] else None
    kind, rest = name[0], name[1:]
    if kind not in "LA":
        return None
    s, _, j = rest.partition("_")
    s = int(s)
    j = int(j) if j else 0
    block = hist.L if kind == "L" else hist.A
    if not 1 <= s <= block.shape[1] or j >= block.shape[2]:
        return None
    return block[:, s - 1, j]


def _col(mask, a):
    return np.reshape(mask, mask.shape + (1,) * (np.ndim(a) - 1))


def constant_bound(value: float) -> Callable[[int, History], float]:
    """Bound function returning the same value for every history."""
    value = float(value)

    def bound(t, hist):
        return value

    bound.value = value
    return bound


@dataclass(frozen=True)
class Piece:
    """One invertible piece of a policy on a continuous exposure.

    ``inverse(a, t, hist)`` maps a post-intervention value back to the natural
    value, ``jacobian`` gives |d inverse / d a| and ``contains(u, t, hist)``
    says whether a natural value u lies in this piece.
    """

    contains: Callable
    inverse: Callable
    jacobian: Callable


class Policy:
    """Base class; subclasses implement :meth:`apply`."""

    name = "policy"
    kind = "any"            # "discrete", "continuous" or "any"
    support: tuple | None = None
    needs_randomizer = False
    is_identity = False

    def apply(self, t: int, a, hist: History, eps=None) -> np.ndarray:
        raise NotImplementedError

    def image_distribution(self, t: int, a, hist: History):
        """Law of d(a, h, eps) over eps as a list of (values, probability) pairs."""
        if self.needs_randomizer:
            raise NotImplementedError(f"{self.name} does not integrate its randomizer")
        return [(self.apply(t, a, hist), 1.0)]

    def pieces(self, t: int, hist: History) -> list[Piece]:
        raise PolicyError(f"{self.name} has no piecewise inverse")

    def check(self, a) -> None:
        a = np.asarray(a, dtype=float)
        if self.support is not None and not np.isin(a, self.support).all():
            bad = np.unique(a[~np.isin(a, self.support)])[:5]
            raise PolicyError(f"{self.name} expects exposure values in {self.support}, got {bad.tolist()}")

    def describe(self) -> dict:
        return {"kind": self.name}

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.describe().items() if k != "kind")
        return f"{type(self).__name__}({args})"


class Identity(Policy):
    name = "identity"
    is_identity = True

    def apply(self, t, a, hist, eps=None):
        return np.array(a, dtype=float, copy=True)

    def pieces(self, t, hist):
        return [Piece(lambda u, t, h: np.ones(np.shape(u), bool), lambda a, t, h: a,
                      lambda a, t, h: np.ones(np.shape(a)))]


class Static(Policy):
    """d(a, h) = value."""

    name = "static"

    def __init__(self, value: float):
        self.value = float(value)

    def apply(self, t, a, hist, eps=None):
        return np.full(np.shape(a), self.value)

    def describe(self):
        return {"kind": self.name, "value": self.value}


def _bound_value(bound, t, hist, a):
    b = bound(t, hist)
    b = np.asarray(b, dtype=float)
    if b.ndim == 1 and np.ndim(a) == 2:
        b = b[:, None]
    return b


class AdditiveShift(Policy):
    """a + delta when a + delta <= u(h) (all components), else a."""

    name = "additive"

    def __init__(self, delta, upper: Callable | float | None = None):
        self.delta = np.asarray(delta, dtype=float)
        if upper is None:
            upper = np.inf
        self.upper = upper if callable(upper) else constant_bound(upper)

    def _shifted(self, t, a, hist):
        a = np.asarray(a, dtype=float)
        ok = (a + self.delta) <= _bound_value(self.upper, t, hist, a)
        if a.ndim == 2:
            ok = np.all(ok, axis=1, keepdims=True)
        return ok

    def apply(self, t, a, hist, eps=None):
        a = np.asarray(a, dtype=float)
        return np.where(self._shifted(t, a, hist), a + self.delta, a)

    def pieces(self, t, hist):
        if self.delta.ndim:
            raise PolicyError("piecewise inverse is only provided for scalar shifts")
        d = float(self.delta)
        up = self.upper

        def shifted(u, t, h):
            return u + d <= _bound_value(up, t, h, u)

        return [
            Piece(shifted, lambda a, t, h: a - d, lambda a, t, h: np.ones(np.shape(a))),
            Piece(lambda u, t, h: ~shifted(u, t, h), lambda a, t, h: a,
                  lambda a, t, h: np.ones(np.shape(a))),
        ]

    def describe(self):
        return {"kind": self.name, "delta": self.delta.tolist(),
                "upper": getattr(self.upper, "value", "callable")}


class MultiplicativeShift(Policy):
    """a * delta when a * delta >= l(h), else a; 0 < delta < 1."""

    name = "multiplicative"

    def __init__(self, delta: float, lower: Callable | float | None = None):
        if not 0 < delta < 1:
            raise PolicyError(f"multiplicative shift needs 0 < delta < 1, got {delta}")
        self.delta = float(delta)
        if lower is None:
            lower = -np.inf
        self.lower = lower if callable(lower) else constant_bound(lower)

    def apply(self, t, a, hist, eps=None):
        a = np.asarray(a, dtype=float)
        ok = a * self.delta >= _bound_value(self.lower, t, hist, a)
        if a.ndim == 2:
            ok = np.all(ok, axis=1, keepdims=True)
        return np.where(ok, a * self.delta, a)

    def pieces(self, t, hist):
        d, lo = self.delta, self.lower

        def scaled(u, t, h):
            return u * d >= _bound_value(lo, t, h, u)

        return [
            Piece(scaled, lambda a, t, h: a / d, lambda a, t, h: np.full(np.shape(a), 1.0 / d)),
            Piece(lambda u, t, h: ~scaled(u, t, h), lambda a, t, h: a,
                  lambda a, t, h: np.ones(np.shape(a))),
        ]

    def describe(self):
        return {"kind": self.name, "delta": self.delta, "lower": getattr(self.lower, "value", "callable")}


class IPSIRiskRatio(Policy):
    """Keep the natural binary exposure when eps < delta, otherwise set it to 0."""

    name = "ipsi_rr"
    kind = "discrete"
    support = (0.0, 1.0)
    needs_randomizer = True

    def __init__(self, delta: float):
        if not 0 < delta <= 1:
            # eps ~ U(0,1) saturates at delta = 1; delta > 1 has no draw-based form
            raise PolicyError(f"risk-ratio IPSI supports 0 < delta <= 1, got {delta}")
        self.delta = float(delta)

    def apply(self, t, a, hist, eps=None):
        if eps is None:
            raise PolicyError("ipsi_rr needs randomizer draws")
        self.check(a)
        a = np.asarray(a, dtype=float)
        keep = _col(np.asarray(eps) < self.delta, a)
        return np.where(keep, a, 0.0)

    def image_distribution(self, t, a, hist):
        self.check(a)
        a = np.asarray(a, dtype=float)
        return [(a.copy(), self.delta), (np.zeros_like(a), 1.0 - self.delta)]

    def describe(self):
        return {"kind": self.name, "delta": self.delta}


class GracePeriod(Policy):
    """Force treatment when the binary covariate ``column`` was 1 at t - m."""

    name = "grace"
    kind = "discrete"
    support = (0.0, 1.0)

    def __init__(self, m: int, column: int = 0):
        if m < 0:
            raise PolicyError("grace period m must be non-negative")
        self.m = int(m)
        self.column = int(column)

    def apply(self, t, a, hist, eps=None):
        self.check(a)
        a = np.asarray(a, dtype=float)
        if self.column >= hist.L.shape[2]:
            raise PolicyError(f"condition column {self.column} absent from history "
                              f"({hist.L.shape[2]} covariates)")
        s = t - self.m
        if s < 1:
            return a.copy()
        met = hist.L[:, s - 1, self.column] == 1
        return np.where(_col(met, a), 1.0, a)

    def describe(self):
        return {"kind": self.name, "m": self.m, "column": self.column}


class DelayIntubation(Policy):
    """Downgrade the first occurrence of level 2 to level 1 on a {0, 1, 2} exposure."""

    name = "delay_intubation"
    kind = "discrete"
    support = (0.0, 1.0, 2.0)

    def apply(self, t, a, hist, eps=None):
        self.check(a)
        a = np.asarray(a, dtype=float)
        past = hist.A.reshape(hist.A.shape[0], -1)
        first = np.all(past <= 1, axis=1) if past.shape[1] else np.ones(past.shape[0], bool)
        return np.where(_col(first, a) & (a == 2), 1.0, a)


class TabularPolicy(Policy):
    """Rule table for discrete exposures; the first matching row wins, no match keeps a.

    Each rule is a dict with ``a`` and ``a_d`` plus optional ``t`` and history
    columns (``W_j``, ``L<s>_j``, ``A<s>``); a missing key or ``"*"`` matches
    anything. A rule naming a column absent from H_t never matches.
    """

    name = "custom"
    kind = "discrete"

    def __init__(self, rules: Sequence[dict], support: Sequence[float] | None = None):
        self.rules = [dict(r) for r in rules]
        for r in self.rules:
            if "a" not in r or "a_d" not in r:
                raise PolicyError("every rule needs 'a' and 'a_d'")
        if support is not None:
            self.support = tuple(float(s) for s in support)

    @classmethod
    def from_csv(cls, path, support=None) -> "TabularPolicy":
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rules = [{k.strip(): v.strip() for k, v in row.items()} for row in csv.DictReader(fh)]
        return cls(rules, support)

    def apply(self, t, a, hist, eps=None):
        self.check(a)
        a = np.asarray(a, dtype=float)
        flat = a.reshape(a.shape[0], -1)[:, 0]
        out = flat.copy()
        done = np.zeros(flat.shape[0], bool)
        for r in self.rules:
            rt = r.get("t", "*")
            if rt not in ("*", "", None) and int(float(rt)) != t:
                continue
            m = ~done & (flat == float(r["a"]))
            for k, v in r.items():
                if k in ("t", "a", "a_d") or v in ("*", "", None):
                    continue
                col = history_value(hist, k)
                if col is None:
                    m[:] = False
                    break
                m &= col == float(v)
            out[m] = float(r["a_d"])
            done |= m
        return out.reshape(a.shape)

    def describe(self):
        return {"kind": self.name, "rules": self.rules}


# ---------------------------------------------------------------------------
# functional constructors

def additive_shift(delta, upper=None) -> AdditiveShift:
    return AdditiveShift(delta, upper)


def multiplicative_shift(delta: float, lower=None) -> MultiplicativeShift:
    return MultiplicativeShift(delta, lower)


def ipsi_risk_ratio(delta: float) -> IPSIRiskRatio:
    return IPSIRiskRatio(delta)


def grace_period(m: int, column: int = 0) -> GracePeriod:
    return GracePeriod(m, column)


def delay_intubation() -> DelayIntubation:
    return DelayIntubation()


def apply(policy: Policy, t: int, a, hist: History, eps=None) -> np.ndarray:
    return policy.apply(t, a, hist, eps)


def discrete_post_intervention_pmf(policy: Policy, base_pmf, support, t: int,
                                   hist: History) -> np.ndarray:
    """g^d(a | h) for every support point: sum over natural values s and randomizer outcomes.

    ``base_pmf`` is (n, K) with column k giving g(support[k] | h_i).
    """
    if support is None:
        raise PolicyError("exact pmf needs a finite support; use the classification trick "
                          "for continuous exposures")
    support = np.asarray(support, dtype=float)
    base = np.atleast_2d(np.asarray(base_pmf, dtype=float))
    n, K = base.shape
    if K != support.size:
        raise PolicyError("base pmf width does not match support")
    out = np.zeros_like(base)
    for k, s in enumerate(support):
        for values, prob in policy.image_distribution(t, np.full(n, s), hist):
            hit = np.asarray(values).reshape(n, 1) == support[None, :]
            if not np.all(hit.any(axis=1)):
                raise PolicyError(f"{policy.name} maps {s} outside the declared support")
            out += hit * (prob * base[:, k])[:, None]
    return out


def continuous_post_intervention_density(policy: Policy, base_density: Callable, t: int,
                                         hist: History, a) -> np.ndarray:
    """g^d(a | h) = sum_j 1{b_j(a) in I_j} g(b_j(a) | h) |b_j'(a)| for a deterministic policy.

    ``base_density(u, t, hist)`` evaluates g(u | h_i) unit-wise.
    """
    if policy.needs_randomizer:
        raise PolicyError("continuous densities are only supported for deterministic policies")
    a = np.asarray(a, dtype=float)
    total = np.zeros(a.shape)
    for piece in policy.pieces(t, hist):
        u = piece.inverse(a, t, hist)
        inside = np.asarray(piece.contains(u, t, hist), bool)
        dens = np.where(inside, base_density(u, t, hist), 0.0)
        total += dens * np.abs(piece.jacobian(a, t, hist))
    return total


def policy_from_config(cfg: dict | str) -> Policy:
    """Build a policy from ``{"kind": ..., ...}`` (or a bare kind name)."""
    if isinstance(cfg, str):
        cfg = {"kind": cfg}
    kind = cfg.get("kind", "identity")
    if kind == "identity":
        return Identity()
    if kind == "static":
        return Static(cfg["value"])
    if kind == "additive":
        return AdditiveShift(cfg["delta"], cfg.get("upper"))
    if kind == "multiplicative":
        return MultiplicativeShift(cfg["delta"], cfg.get("lower"))
    if kind == "ipsi_rr":
        return IPSIRiskRatio(cfg["delta"])
    if kind == "grace":
        return GracePeriod(cfg["m"], cfg.get("column", 0))
    if kind == "delay_intubation":
        return DelayIntubation()
    if kind == "custom":
        if "path" in cfg:
            return TabularPolicy.from_csv(cfg["path"], cfg.get("support"))
        return TabularPolicy(cfg["rules"], cfg.get("support"))
    raise PolicyError(f"unknown policy kind {kind!r}")
