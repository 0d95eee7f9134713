"""Datasets, synthetic data generation, the covariate-dependent treatment
missingness mechanism, splitting and CSV (de)serialization.

Conventions: `t` is a float vector with NaN where the treatment label is
missing; `r` is the 0/1 observedness indicator; `t_true` (when present)
keeps the pre-masking assignment for evaluation only and is never shown
to estimators.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import CsvParseError, TooFewRowsError

OPTIONAL_COLUMNS = ("y0", "y1", "tau", "e", "t_true")


@dataclass
class Dataset:
    x: np.ndarray  # (n, d) covariates
    t: np.ndarray  # (n,) treatment, NaN where missing
    r: np.ndarray  # (n,) 0/1 observedness of t
    y: np.ndarray  # (n,) factual outcome
    y0: np.ndarray | None = None
    y1: np.ndarray | None = None
    tau: np.ndarray | None = None
    e: np.ndarray | None = None  # randomized-subset flag
    t_true: np.ndarray | None = None  # hidden ground-truth assignment

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.t = np.asarray(self.t, dtype=np.float64)
        self.r = np.asarray(self.r, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.float64)
        for name in OPTIONAL_COLUMNS:
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v, dtype=np.float64))
        self.validate()

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def validate(self) -> None:
        n = self.n
        if self.x.ndim != 2:
            raise ValueError("x must be 2-d")
        for name in ("t", "r", "y"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have shape ({n},)")
        if not np.all((self.r == 0) | (self.r == 1)):
            raise ValueError("r must be 0/1")
        obs = self.r == 1
        if np.any(np.isnan(self.t[obs])):
            raise ValueError("t missing on a row with r=1")
        if not np.all(np.isnan(self.t[~obs])):
            raise ValueError("t present on a row with r=0")
        tv = self.t[obs]
        if not np.all((tv == 0.0) | (tv == 1.0)):
            raise ValueError("observed t must be 0/1")
        if not np.all(np.isfinite(self.x)) or not np.all(np.isfinite(self.y)):
            raise ValueError("x and y must be finite")
        for name in OPTIONAL_COLUMNS:
            v = getattr(self, name)
            if v is not None and v.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},)")
        for name in ("e", "t_true"):
            v = getattr(self, name)
            if v is not None and not np.all((v == 0.0) | (v == 1.0)):
                raise ValueError(f"{name} must be 0/1")
        if self.t_true is not None and np.any(self.t[obs] != self.t_true[obs]):
            raise ValueError("t and t_true disagree on observed rows")

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        kw = {
            name: getattr(self, name)[idx]
            for name in OPTIONAL_COLUMNS
            if getattr(self, name) is not None
        }
        return Dataset(self.x[idx], self.t[idx], self.r[idx], self.y[idx], **kw)

    def n_observed(self) -> int:
        return int(self.r.sum())


def concat(a: Dataset, b: Dataset) -> Dataset:
    """Row-wise concatenation; optional fields must be present in both or neither."""
    if a.d != b.d:
        raise ValueError("column counts differ")
    kw = {}
    for name in OPTIONAL_COLUMNS:
        va, vb = getattr(a, name), getattr(b, name)
        if (va is None) != (vb is None):
            raise ValueError(f"field {name} present in only one dataset")
        if va is not None:
            kw[name] = np.concatenate([va, vb])
    return Dataset(
        np.concatenate([a.x, b.x]), np.concatenate([a.t, b.t]),
        np.concatenate([a.r, b.r]), np.concatenate([a.y, b.y]), **kw,
    )


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    if a.n != b.n or a.d != b.d:
        return False
    if not (
        np.array_equal(a.x, b.x)
        and np.array_equal(a.t, b.t, equal_nan=True)
        and np.array_equal(a.r, b.r)
        and np.array_equal(a.y, b.y)
    ):
        return False
    for name in OPTIONAL_COLUMNS:
        va, vb = getattr(a, name), getattr(b, name)
        if (va is None) != (vb is None):
            return False
        if va is not None and not np.array_equal(va, vb):
            return False
    return True


# ---------------------------------------------------------------------------
# Synthetic data generating process


@dataclass(frozen=True)
class OutcomeSpec:
    """One response surface: linear, linear+quadratic, or linear+step ("piecewise")."""

    kind: str  # linear | quadratic | piecewise
    intercept: float = 0.0
    linear: tuple[float, ...] = ()
    quadratic: tuple[float, ...] = ()  # coefficients on x_j^2 (kind=quadratic)
    jump: float = 0.0  # added where w.x > threshold (kind=piecewise)
    jump_direction: tuple[float, ...] = ()
    jump_threshold: float = 0.0

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        if self.kind not in ("linear", "quadratic", "piecewise"):
            raise ValueError(f"unknown outcome kind {self.kind!r}")
        out = self.intercept + x @ np.asarray(self.linear, dtype=np.float64)
        if self.kind == "quadratic":
            out = out + (x * x) @ np.asarray(self.quadratic, dtype=np.float64)
        elif self.kind == "piecewise":
            w = np.asarray(self.jump_direction, dtype=np.float64)
            out = out + self.jump * (x @ w > self.jump_threshold)
        return out

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "intercept": self.intercept,
            "linear": list(self.linear),
            "quadratic": list(self.quadratic),
            "jump": self.jump,
            "jump_direction": list(self.jump_direction),
            "jump_threshold": self.jump_threshold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OutcomeSpec":
        return cls(
            kind=d["kind"],
            intercept=float(d.get("intercept", 0.0)),
            linear=tuple(d.get("linear", ())),
            quadratic=tuple(d.get("quadratic", ())),
            jump=float(d.get("jump", 0.0)),
            jump_direction=tuple(d.get("jump_direction", ())),
            jump_threshold=float(d.get("jump_threshold", 0.0)),
        )


@dataclass(frozen=True)
class SyntheticDGPSpec:
    n: int
    d: int
    propensity: tuple[float, ...]  # p(T=1|x) = sigmoid(gamma . x)
    outcome0: OutcomeSpec
    outcome1: OutcomeSpec
    noise_sd: float = 0.0
    mixing: tuple[tuple[float, ...], ...] | None = None  # optional covariate mixer
    rct: bool = False  # randomize T via Bernoulli(0.5) and flag all rows
    seed: int = 0

    def validate(self) -> None:
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be >= 1")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if len(self.propensity) != self.d:
            raise ValueError("propensity must have length d")

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "d": self.d,
            "propensity": list(self.propensity),
            "outcome0": self.outcome0.to_dict(),
            "outcome1": self.outcome1.to_dict(),
            "noise_sd": self.noise_sd,
            "mixing": None if self.mixing is None else [list(row) for row in self.mixing],
            "rct": self.rct,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticDGPSpec":
        mixing = d.get("mixing")
        return cls(
            n=int(d["n"]),
            d=int(d["d"]),
            propensity=tuple(d["propensity"]),
            outcome0=OutcomeSpec.from_dict(d["outcome0"]),
            outcome1=OutcomeSpec.from_dict(d["outcome1"]),
            noise_sd=float(d.get("noise_sd", 0.0)),
            mixing=None if mixing is None else tuple(tuple(row) for row in mixing),
            rct=bool(d.get("rct", False)),
            seed=int(d.get("seed", 0)),
        )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def generate(spec: SyntheticDGPSpec) -> Dataset:
    """Draw a fully observed dataset (r = 1 everywhere) with ground truth attached."""
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 101]))
    z = rng.standard_normal((spec.n, spec.d))
    if spec.mixing is not None:
        mix = np.asarray(spec.mixing, dtype=np.float64)
        x = z @ mix.T
    else:
        x = z
    if spec.rct:
        p_treat = np.full(spec.n, 0.5)
    else:
        p_treat = _sigmoid(x @ np.asarray(spec.propensity, dtype=np.float64))
    t = (rng.random(spec.n) < p_treat).astype(np.float64)
    mu0 = spec.outcome0.evaluate(x)
    mu1 = spec.outcome1.evaluate(x)
    y0 = mu0 + spec.noise_sd * rng.standard_normal(spec.n)
    y1 = mu1 + spec.noise_sd * rng.standard_normal(spec.n)
    y = np.where(t == 1.0, y1, y0)
    e = np.ones(spec.n) if spec.rct else np.zeros(spec.n)
    return Dataset(
        x=x, t=t, r=np.ones(spec.n, dtype=np.int64), y=y,
        y0=y0, y1=y1, tau=mu1 - mu0, e=e, t_true=t.copy(),
    )


# ---------------------------------------------------------------------------
# Treatment missingness


@dataclass(frozen=True)
class MissingnessSpec:
    m: float  # target missing fraction
    q: float  # shift magnitude
    seed: int = 0

    def validate(self) -> None:
        if not (0.0 < self.m < 1.0):
            raise ValueError(f"m must be in (0,1), got {self.m}")
        if not (0.0 < self.q < 1.0):
            raise ValueError(f"q must be in (0,1), got {self.q}")

    def to_dict(self) -> dict:
        return {"m": self.m, "q": self.q, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "MissingnessSpec":
        return cls(m=float(d["m"]), q=float(d["q"]), seed=int(d.get("seed", 0)))


def missingness_probability(x_row: np.ndarray, column_means: np.ndarray, q: float) -> float:
    """Probability that the treatment label of this row goes missing.

    Closed form of the per-covariate multiply-then-normalize scheme: with
    a = #{j: x_j > mean_j}, p_m = q^a (1-q)^(d-a) / (q^a (1-q)^(d-a) +
    (1-q)^a q^(d-a)). Evaluated as sigmoid((2a-d) logit(q)) so large d
    cannot underflow.
    """
    return float(missingness_probabilities(np.atleast_2d(x_row), column_means, q)[0])


def missingness_probabilities(x: np.ndarray, column_means: np.ndarray, q: float) -> np.ndarray:
    if not (0.0 < q < 1.0):
        raise ValueError(f"q must be in (0,1), got {q}")
    a = (np.asarray(x) > np.asarray(column_means)).sum(axis=1)
    d = np.asarray(x).shape[1]
    return _sigmoid((2.0 * a - d) * np.log(q / (1.0 - q)))


def apply_missingness(data: Dataset, spec: MissingnessSpec) -> Dataset:
    """Mask treatments with covariate-dependent probability, then flip uniformly
    chosen rows in the majority direction until #{r=0} == round(m*n) exactly."""
    spec.validate()
    if np.any(data.r == 0):
        raise ValueError("apply_missingness expects a fully observed dataset")
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 202]))
    means = data.x.mean(axis=0)
    p_miss = missingness_probabilities(data.x, means, spec.q)
    r = (rng.random(data.n) >= p_miss).astype(np.int64)

    target_missing = int(round(spec.m * data.n))
    current_missing = int((r == 0).sum())
    if current_missing < target_missing:
        candidates = np.flatnonzero(r == 1)
        flip = rng.choice(candidates, size=target_missing - current_missing, replace=False)
        r[flip] = 0
    elif current_missing > target_missing:
        candidates = np.flatnonzero(r == 0)
        flip = rng.choice(candidates, size=current_missing - target_missing, replace=False)
        r[flip] = 1

    t_true = data.t.copy()
    t_public = data.t.copy()
    t_public[r == 0] = np.nan
    return Dataset(
        x=data.x, t=t_public, r=r, y=data.y,
        y0=data.y0, y1=data.y1, tau=data.tau, e=data.e, t_true=t_true,
    )


# ---------------------------------------------------------------------------
# Splitting


def split(data: Dataset, fractions=(0.70, 0.20, 0.10), seed: int = 0):
    """Disjoint uniform random (train, validation, test) partition."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    if data.n < 10:
        raise TooFewRowsError(f"need at least 10 rows to split, got {data.n}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 303]))
    perm = rng.permutation(data.n)
    n_train = int(round(fractions[0] * data.n))
    n_val = int(round(fractions[1] * data.n))
    n_test = data.n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise TooFewRowsError(f"split sizes degenerate: {(n_train, n_val, n_test)}")
    return (
        data.subset(perm[:n_train]),
        data.subset(perm[n_train:n_train + n_val]),
        data.subset(perm[n_train + n_val:]),
    )


# ---------------------------------------------------------------------------
# CSV round trip


def _format(v: float) -> str:
    return repr(float(v))


def save_csv(data: Dataset, path) -> None:
    """Columns: y, t (empty cell = missing), r, x1..xd, then any of y0, y1,
    tau, e, t_true the dataset carries."""
    opt = [name for name in OPTIONAL_COLUMNS if getattr(data, name) is not None]
    header = ["y", "t", "r"] + [f"x{j + 1}" for j in range(data.d)] + opt
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.n):
            row = [
                _format(data.y[i]),
                "" if np.isnan(data.t[i]) else str(int(data.t[i])),
                str(int(data.r[i])),
            ]
            row += [_format(v) for v in data.x[i]]
            for name in opt:
                v = getattr(data, name)[i]
                row.append(str(int(v)) if name in ("e", "t_true") else _format(v))
            writer.writerow(row)


def _parse_float(cell: str, line: int, col: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise CsvParseError(line, f"column {col!r}: not a number: {cell!r}")
    if not np.isfinite(v):
        raise CsvParseError(line, f"column {col!r}: non-finite value")
    return v


def _parse_binary(cell: str, line: int, col: str) -> float:
    v = _parse_float(cell, line, col)
    if v not in (0.0, 1.0):
        raise CsvParseError(line, f"column {col!r}: expected 0 or 1, got {cell!r}")
    return v


def load_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(1, "empty file")
        rows = list(reader)

    x_cols = [c for c in header if c.startswith("x")]
    d = len(x_cols)
    expected = ["y", "t", "r"] + [f"x{j + 1}" for j in range(d)]
    if header[: 3 + d] != expected:
        raise CsvParseError(1, f"header must start with {expected}, got {header[:3 + d]}")
    opt = header[3 + d:]
    unknown = [c for c in opt if c not in OPTIONAL_COLUMNS]
    if unknown:
        raise CsvParseError(1, f"unknown columns {unknown}")

    n = len(rows)
    x = np.empty((n, d))
    t = np.empty(n)
    r = np.empty(n, dtype=np.int64)
    y = np.empty(n)
    extra = {name: np.empty(n) for name in opt}
    for i, row in enumerate(rows):
        line = i + 2
        if len(row) != len(header):
            raise CsvParseError(line, f"expected {len(header)} cells, got {len(row)}")
        y[i] = _parse_float(row[0], line, "y")
        r[i] = int(_parse_binary(row[2], line, "r"))
        if row[1] == "":
            if r[i] == 1:
                raise CsvParseError(line, "t is empty but r=1")
            t[i] = np.nan
        else:
            if r[i] == 0:
                raise CsvParseError(line, "t is present but r=0")
            t[i] = _parse_binary(row[1], line, "t")
        for j in range(d):
            x[i, j] = _parse_float(row[3 + j], line, f"x{j + 1}")
        for k, name in enumerate(opt):
            cell = row[3 + d + k]
            if name in ("e", "t_true"):
                extra[name][i] = _parse_binary(cell, line, name)
            else:
                extra[name][i] = _parse_float(cell, line, name)
    try:
        return Dataset(x=x, t=t, r=r, y=y, **extra)
    except ValueError as exc:
        raise CsvParseError(1, f"inconsistent dataset: {exc}")
