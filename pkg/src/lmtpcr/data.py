"""Longitudinal competing-risks panel: storage, validation, histories and CSV I/O.

Time is indexed from 1 as in the usual notation; arrays are stored 0-based, so
``A[:, t - 1]`` holds A_t. ``y_final`` holds Y_{tau+1}.

Null convention: after genuine loss to follow-up (C_t = 0 while R_t = 1) every
later cell is 0. After an event at t (R_t = 0), A, L and C at t and later are 0
while D and Y carry forward.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "DataFormatError",
    "LongitudinalDataset",
    "History",
    "HistoryView",
    "Violation",
    "ValidationResult",
    "validate_dataset",
    "risk_indicators",
    "history",
    "design_matrix",
    "read_csv",
    "write_csv",
]


class DataFormatError(ValueError):
    """Raised when an input file cannot be parsed into a rectangular panel."""


def _frozen(x, ndim, dtype=np.float64):
    arr = np.array(x, dtype=dtype, copy=True)
    if arr.ndim != ndim:
        raise DataFormatError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LongitudinalDataset:
    """Wide panel of n units over tau exposure times.

    Parameters
    ----------
    baseline : (n, p0) array
        Static covariates, kept in every history.
    L : (n, tau, p) array
        Time-varying covariates L_1..L_tau.
    A : (n, tau, q) array
        Exposures A_1..A_tau (integer-coded if categorical).
    C, D, Y : (n, tau) arrays
        Remain-on-study, competing event and event-of-interest indicators.
    y_final : (n,) array
        Y_{tau+1}.
    """

    baseline: np.ndarray
    L: np.ndarray
    A: np.ndarray
    C: np.ndarray
    D: np.ndarray
    Y: np.ndarray
    y_final: np.ndarray

    def __post_init__(self):
        for name, ndim in [("baseline", 2), ("L", 3), ("A", 3), ("C", 2),
                           ("D", 2), ("Y", 2), ("y_final", 1)]:
            object.__setattr__(self, name, _frozen(getattr(self, name), ndim))
        n, tau = self.C.shape
        if tau < 1:
            raise DataFormatError("need at least one time point")
        shapes = {
            "baseline": (self.baseline.shape[0],),
            "L": self.L.shape[:2],
            "A": self.A.shape[:2],
            "D": self.D.shape,
            "Y": self.Y.shape,
            "y_final": self.y_final.shape,
        }
        expected = {"baseline": (n,), "L": (n, tau), "A": (n, tau), "D": (n, tau),
                    "Y": (n, tau), "y_final": (n,)}
        for name, shape in shapes.items():
            if shape != expected[name]:
                raise DataFormatError(f"{name} has shape {shape}, expected {expected[name]}")
        if self.A.shape[2] < 1:
            raise DataFormatError("exposure block must have at least one column")

    @classmethod
    def from_arrays(cls, A, C, D, Y, y_final, L=None, baseline=None):
        """Build a dataset, accepting 2-d ``A``/``L`` for single-column blocks."""
        A = np.asarray(A, dtype=float)
        if A.ndim == 2:
            A = A[:, :, None]
        n, tau = A.shape[:2]
        if L is None:
            L = np.zeros((n, tau, 0))
        L = np.asarray(L, dtype=float)
        if L.ndim == 2:
            L = L[:, :, None]
        if baseline is None:
            baseline = np.zeros((n, 0))
        baseline = np.asarray(baseline, dtype=float)
        if baseline.ndim == 1:
            baseline = baseline[:, None]
        return cls(baseline=baseline, L=L, A=A, C=C, D=D, Y=Y, y_final=y_final)

    @property
    def n_units(self) -> int:
        return self.C.shape[0]

    @property
    def tau(self) -> int:
        return self.C.shape[1]

    @property
    def n_covariates(self) -> int:
        return self.L.shape[2]

    @property
    def exposure_width(self) -> int:
        return self.A.shape[2]

    def outcome(self, t: int) -> np.ndarray:
        """Y_t for t in 1..tau+1."""
        if t == self.tau + 1:
            return self.y_final
        return self.Y[:, t - 1]

    def competing(self, t: int) -> np.ndarray:
        """D_t for t in 1..tau; D_{tau+1} is not observed and is returned as 0."""
        if t == self.tau + 1:
            return np.zeros(self.n_units)
        return self.D[:, t - 1]

    def censoring(self, t: int) -> np.ndarray:
        """C_t with the convention C_0 = 1."""
        if t == 0:
            return np.ones(self.n_units)
        return self.C[:, t - 1]

    def truncate(self, horizon: int) -> "LongitudinalDataset":
        """Panel restricted to exposure times 1..horizon with final outcome Y_{horizon+1}."""
        if not 1 <= horizon <= self.tau:
            raise ValueError(f"horizon {horizon} outside 1..{self.tau}")
        if horizon == self.tau:
            return self
        h = horizon
        return LongitudinalDataset(
            baseline=self.baseline, L=self.L[:, :h], A=self.A[:, :h], C=self.C[:, :h],
            D=self.D[:, :h], Y=self.Y[:, :h], y_final=self.Y[:, h],
        )

    def subset(self, idx) -> "LongitudinalDataset":
        idx = np.asarray(idx)
        return LongitudinalDataset(
            baseline=self.baseline[idx], L=self.L[idx], A=self.A[idx], C=self.C[idx],
            D=self.D[idx], Y=self.Y[idx], y_final=self.y_final[idx],
        )

    def history_at(self, t: int) -> "History":
        """Full (unlagged) history H_t for every unit, as policies see it."""
        if not 1 <= t <= self.tau:
            raise ValueError(f"t={t} outside 1..{self.tau}")
        return History(t=t, baseline=self.baseline, L=self.L[:, :t], A=self.A[:, : t - 1])

    def columns(self) -> dict[str, np.ndarray]:
        """Named columns in NPSEM order, as used by the CSV format."""
        cols: dict[str, np.ndarray] = {}
        for j in range(self.baseline.shape[1]):
            cols[f"W_{j}"] = self.baseline[:, j]
        q = self.exposure_width
        for t in range(1, self.tau + 1):
            cols[f"D{t}"] = self.D[:, t - 1]
            cols[f"Y{t}"] = self.Y[:, t - 1]
            for j in range(self.n_covariates):
                cols[f"L{t}_{j}"] = self.L[:, t - 1, j]
            if q == 1:
                cols[f"A{t}"] = self.A[:, t - 1, 0]
            else:
                for j in range(q):
                    cols[f"A{t}_{j}"] = self.A[:, t - 1, j]
            cols[f"C{t}"] = self.C[:, t - 1]
        cols[f"Y{self.tau + 1}"] = self.y_final
        return cols


@dataclass(frozen=True)
class History:
    """Histories H_t = (baseline, L_1..L_t, A_1..A_{t-1}) for a batch of units."""

    t: int
    baseline: np.ndarray
    L: np.ndarray
    A: np.ndarray

    @property
    def n_units(self) -> int:
        return self.baseline.shape[0]


@dataclass(frozen=True)
class HistoryView:
    unit: int
    t: int
    markov_lag: int | None
    values: np.ndarray
    columns: tuple[str, ...]


@dataclass(frozen=True)
class Violation:
    unit: int
    t: int
    rule: str
    message: str


@dataclass
class ValidationResult:
    structural: list[Violation] = field(default_factory=list)
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.structural and not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def summary(self, limit: int = 20) -> str:
        lines = []
        for v in (self.structural + self.violations)[:limit]:
            lines.append(f"unit {v.unit}, t={v.t}: {v.message}")
        extra = len(self.structural) + len(self.violations) - limit
        if extra > 0:
            lines.append(f"... and {extra} more")
        return "\n".join(lines)


def _emit(out, mask2d, t_offset, rule, fmt):
    units, cols = np.nonzero(mask2d)
    for i, c in zip(units.tolist(), cols.tolist()):
        t = c + t_offset
        out.append(Violation(unit=i, t=t, rule=rule, message=fmt.format(t=t)))


def validate_dataset(data: LongitudinalDataset) -> ValidationResult:
    """Check every structural rule and invariant; all failures are reported."""
    res = ValidationResult()
    n, tau = data.n_units, data.tau

    blocks = {"baseline": data.baseline.reshape(n, -1), "L": data.L.reshape(n, -1),
              "A": data.A.reshape(n, -1), "C": data.C, "D": data.D, "Y": data.Y,
              "Y_final": data.y_final[:, None]}
    for name, arr in blocks.items():
        bad = ~np.isfinite(arr)
        for i in np.unique(np.nonzero(bad)[0]).tolist():
            res.structural.append(Violation(i, 0, "missing", f"missing or non-finite value in {name}"))
    for name in ("C", "D", "Y", "Y_final"):
        arr = blocks[name]
        bad = np.isfinite(arr) & (arr != 0) & (arr != 1)
        for i in np.unique(np.nonzero(bad)[0]).tolist():
            res.structural.append(Violation(i, 0, "non_binary", f"non-binary value in {name}"))
    if res.structural:
        return res

    # time-indexed views over 1..tau+1; D_{tau+1} is unobserved and is not checked
    Yx = np.column_stack([data.Y, data.y_final])
    C, D = data.C, data.D
    v = res.violations

    _emit(v, (D[:, :1] != 0) | (Yx[:, :1] != 0), 1, "baseline_event",
          "event recorded at t={t}; D_1 = Y_1 = 0 is required")
    _emit(v, (Yx[:, :-1] == 1) & (Yx[:, 1:] == 0), 2, "absorbing_outcome",
          "absorbing outcome broken at t={t}")
    _emit(v, (D[:, :-1] == 1) & (D[:, 1:] == 0), 2, "absorbing_competing",
          "absorbing competing event broken at t={t}")
    _emit(v, (D == 1) & (Yx[:, :-1] == 1) & (np.column_stack([np.zeros(n), Yx[:, :-2]]) == 0),
          1, "competing_precludes", "outcome and competing event both start at t={t}")
    # D_{tau+1} is unobserved, so D_tau = 1 with Y_tau = 0 must force Y_{tau+1} = 0
    _emit(v, ((D[:, -1] == 1) & (Yx[:, -2] == 0) & (Yx[:, -1] == 1))[:, None], tau + 1,
          "competing_precludes", "event of interest after competing event at t={t}")

    R = (D == 0) & (Yx[:, :-1] == 0)
    _emit(v, (C[:, :-1] == 0) & (C[:, 1:] == 1), 2, "monotone_censoring",
          "censoring reversed at t={t}")

    A = data.A.reshape(n, tau, -1)
    Lb = data.L.reshape(n, tau, -1)
    per_time_nonzero = (np.any(A != 0, axis=2) | np.any(Lb != 0, axis=2))

    # genuine loss to follow-up: R_t = 1 and C_t = 0
    lost = R & (C == 0)
    lost_before = np.cumsum(lost, axis=1) > 0
    lost_before = np.column_stack([np.zeros(n, bool), lost_before[:, :-1]])
    after_cens = per_time_nonzero | (C != 0) | (D != 0) | (data.Y != 0)
    _emit(v, lost_before & after_cens, 1, "null_after_censoring",
          "non-null value after censoring at t={t}")
    lost_any = lost.any(axis=1)
    _emit(v, (lost_any & (data.y_final != 0))[:, None], tau + 1, "null_after_censoring",
          "non-null value after censoring at t={t}")

    # after an event: A, L, C null from the event time on
    event_seen = np.cumsum(~R, axis=1) > 0
    _emit(v, event_seen & (per_time_nonzero | (C != 0)), 1, "null_after_event",
          "non-null value after event at t={t}")

    res.violations.sort(key=lambda x: (x.unit, x.t, x.rule))
    return res


def risk_indicators(data: LongitudinalDataset) -> np.ndarray:
    """R as an (n, tau+1) 0/1 array; column tau holds the convention R_{tau+1} = 1."""
    R = ((data.D == 0) & (data.Y == 0)).astype(np.float64)
    out = np.column_stack([R, np.ones(data.n_units)])
    out.setflags(write=False)
    return out


def _retained(t: int, markov_lag: int | None):
    if markov_lag is None:
        return list(range(1, t + 1)), list(range(1, t))
    if markov_lag < 1:
        raise ValueError("markov_lag must be a positive integer or None")
    ls = list(range(max(1, t - markov_lag + 1), t + 1))
    as_ = list(range(max(1, t - markov_lag), t))
    return ls, as_


def history_columns(data: LongitudinalDataset, t: int, markov_lag: int | None = None):
    ls, as_ = _retained(t, markov_lag)
    cols = [f"W_{j}" for j in range(data.baseline.shape[1])]
    cols += [f"L{s}_{j}" for s in ls for j in range(data.n_covariates)]
    q = data.exposure_width
    cols += [f"A{s}" if q == 1 else f"A{s}_{j}" for s in as_ for j in range(q)]
    return tuple(cols)


def design_matrix(data: LongitudinalDataset, t: int, markov_lag: int | None = None,
                  exposure: np.ndarray | None = None) -> np.ndarray:
    """Rows (exposure, H_t) for all units; ``exposure=None`` drops the exposure block.

    History columns are ordered baseline, retained L blocks, retained A blocks.
    """
    if not 1 <= t <= data.tau:
        raise ValueError(f"t={t} outside 1..{data.tau}")
    n = data.n_units
    ls, as_ = _retained(t, markov_lag)
    parts = [data.baseline]
    parts += [data.L[:, s - 1, :] for s in ls]
    parts += [data.A[:, s - 1, :] for s in as_]
    if exposure is not None:
        parts.insert(0, np.asarray(exposure, dtype=float).reshape(n, -1))
    return np.hstack(parts) if parts else np.zeros((n, 0))


def history(data: LongitudinalDataset, unit: int, t: int,
            markov_lag: int | None = None) -> HistoryView:
    if not 1 <= t <= data.tau:
        raise ValueError(f"t={t} outside 1..{data.tau}")
    if not 0 <= unit < data.n_units:
        raise IndexError(f"unit {unit} out of range")
    row = design_matrix(data.subset([unit]), t, markov_lag)[0]
    return HistoryView(unit=unit, t=t, markov_lag=markov_lag, values=row,
                       columns=history_columns(data, t, markov_lag))


_COL = re.compile(r"^(?:(W)_(\d+)|([LA])(\d+)_(\d+)|([ACDY])(\d+))$")


def read_csv(path) -> LongitudinalDataset:
    """Read the wide one-row-per-unit CSV format.

    Columns: ``W_<j>`` baseline, per t ``D<t> Y<t> L<t>_<j> A<t> C<t>`` (or
    ``A<t>_<j>`` for vector exposures), and the final ``Y<tau+1>``. Column
    order is free; empty cells become NaN and are rejected by validation.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataFormatError(f"{path}: empty file, header row is mandatory")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    for k, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise DataFormatError(f"{path}: line {k} has {len(r)} fields, header has {len(header)}")
    if len(set(header)) != len(header):
        raise DataFormatError(f"{path}: duplicate column names")

    def cell(s):
        s = s.strip()
        if s == "" or s.upper() in {"NA", "NAN"}:
            return np.nan
        try:
            return float(s)
        except ValueError:
            raise DataFormatError(f"{path}: cannot parse {s!r} as a number") from None

    values = np.array([[cell(s) for s in r] for r in body], dtype=float).reshape(len(body), len(header))
    col = {h: values[:, k] for k, h in enumerate(header)}

    W, L, A, scalar = {}, {}, {}, {}
    for h in header:
        m = _COL.match(h)
        if not m:
            raise DataFormatError(f"{path}: unrecognised column {h!r}")
        if m.group(1):
            W[int(m.group(2))] = col[h]
        elif m.group(3):
            store = L if m.group(3) == "L" else A
            store[(int(m.group(4)), int(m.group(5)))] = col[h]
        else:
            if m.group(6) == "A":
                A[(int(m.group(7)), None)] = col[h]
            else:
                scalar[(m.group(6), int(m.group(7)))] = col[h]

    times = sorted({t for t, _ in A})
    if not times:
        raise DataFormatError(f"{path}: no exposure columns")
    tau = times[-1]
    if times != list(range(1, tau + 1)):
        raise DataFormatError(f"{path}: exposure columns must cover 1..{tau}")
    n = len(body)

    def block(store, t, name):
        keys = sorted(k for (s, k) in store if s == t)
        if keys == [None]:
            return np.column_stack([store[(t, None)]])
        if None in keys:
            raise DataFormatError(f"{path}: mixed scalar/vector {name}{t} columns")
        if keys != list(range(len(keys))):
            raise DataFormatError(f"{path}: {name}{t}_<j> columns must be numbered 0..k-1")
        return np.column_stack([store[(t, j)] for j in keys]) if keys else np.zeros((n, 0))

    A_blocks = [block(A, t, "A") for t in range(1, tau + 1)]
    L_blocks = [block(L, t, "L") for t in range(1, tau + 1)]
    if len({b.shape[1] for b in A_blocks}) != 1 or len({b.shape[1] for b in L_blocks}) != 1:
        raise DataFormatError(f"{path}: A and L blocks must have the same width at every t")
    if any(s > tau for s, _ in L):
        raise DataFormatError(f"{path}: covariate columns beyond t={tau}")

    def need(name, t):
        if (name, t) not in scalar:
            raise DataFormatError(f"{path}: missing column {name}{t}")
        return scalar[(name, t)]

    C = np.column_stack([need("C", t) for t in range(1, tau + 1)])
    D = np.column_stack([need("D", t) for t in range(1, tau + 1)])
    Y = np.column_stack([need("Y", t) for t in range(1, tau + 1)])
    y_final = need("Y", tau + 1)
    wk = sorted(W)
    if wk != list(range(len(wk))):
        raise DataFormatError(f"{path}: W_<j> columns must be numbered 0..k-1")
    baseline = np.column_stack([W[j] for j in wk]) if wk else np.zeros((n, 0))
    return LongitudinalDataset(
        baseline=baseline, L=np.stack(L_blocks, axis=1), A=np.stack(A_blocks, axis=1),
        C=C, D=D, Y=Y, y_final=y_final,
    )


def _fmt(x: float) -> str:
    if float(x).is_integer():
        return str(int(x))
    return repr(float(x))


def write_csv(data: LongitudinalDataset, path) -> None:
    cols = data.columns()
    names = list(cols)
    mat = np.column_stack([cols[k] for k in names]) if names else np.zeros((data.n_units, 0))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in mat:
            w.writerow([_fmt(x) for x in row])
