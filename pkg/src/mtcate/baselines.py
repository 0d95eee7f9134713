"""Baseline CATE estimators (per-arm least squares, TARNet, CFR-MMD) crossed
with the three missing-treatment strategies: delete rows, impute labels, or
reweight observed rows by inverse observedness probability."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import mtrnet
from .autodiff import mmd2_rbf
from .data import Dataset
from .errors import DegenerateLabelsError, EmptyDataError, SingularDesignError
from .nn import AdamState, adam_step

STRATEGIES = ("delete", "impute", "reweight")
ESTIMATORS = ("ols", "tarnet", "cfrmmd")

PROPENSITY_CLAMP = (0.01, 0.99)


# ---------------------------------------------------------------------------
# Logistic classifier (shared by imputation and reweighting)


@dataclass(frozen=True)
class LogisticConfig:
    iterations: int = 400
    learning_rate: float = 0.1
    clamp: tuple[float, float] = PROPENSITY_CLAMP


@dataclass
class ObservednessModel:
    """Logistic head on standardized covariates; predictions are clamped so
    inverse-probability weights stay bounded."""

    weights: np.ndarray
    bias: float
    feat_mean: np.ndarray
    feat_scale: np.ndarray
    clamp: tuple[float, float] = PROPENSITY_CLAMP

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        z = (np.asarray(x) - self.feat_mean) / self.feat_scale
        logits = z @ self.weights + self.bias
        p = np.empty_like(logits)
        pos = logits >= 0
        p[pos] = 1.0 / (1.0 + np.exp(-logits[pos]))
        ez = np.exp(logits[~pos])
        p[~pos] = ez / (1.0 + ez)
        return np.clip(p, self.clamp[0], self.clamp[1])


def _fit_logistic(x: np.ndarray, labels: np.ndarray, config: LogisticConfig) -> ObservednessModel:
    labels = np.asarray(labels, dtype=np.float64)
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise ValueError("labels must be 0/1")
    if labels.min() == labels.max():
        raise DegenerateLabelsError("labels contain a single class")
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale < 1e-12] = 1.0
    z = (x - mean) / scale

    n, d = z.shape
    w = np.zeros(d)
    b = np.zeros(1)
    state_w = AdamState.like(w)
    state_b = AdamState.like(b)
    for _ in range(config.iterations):
        logits = z @ w + b[0]
        p = np.empty_like(logits)
        pos = logits >= 0
        p[pos] = 1.0 / (1.0 + np.exp(-logits[pos]))
        ez = np.exp(logits[~pos])
        p[~pos] = ez / (1.0 + ez)
        resid = (p - labels) / n
        adam_step(w, z.T @ resid, state_w, config.learning_rate)
        adam_step(b, np.array([resid.sum()]), state_b, config.learning_rate)
    return ObservednessModel(w, float(b[0]), mean, scale, config.clamp)


def fit_observedness(data: Dataset, config: LogisticConfig = LogisticConfig()) -> ObservednessModel:
    """p(R=1 | x) classifier; requires both observed and missing rows."""
    return _fit_logistic(data.x, data.r.astype(np.float64), config)


def fit_treatment_classifier(data: Dataset, config: LogisticConfig = LogisticConfig()) -> ObservednessModel:
    """p(T=1 | x, R=1) classifier fit on the observed-treatment rows."""
    obs = data.r == 1
    return _fit_logistic(data.x[obs], data.t[obs], config)


# ---------------------------------------------------------------------------
# Missing-data strategies


def _as_complete(data: Dataset, t: np.ndarray) -> Dataset:
    # A strategy output is treated as fully observed; the hidden assignment
    # is dropped because imputation may disagree with it.
    return Dataset(
        x=data.x, t=t, r=np.ones(data.n, dtype=np.int64), y=data.y,
        y0=data.y0, y1=data.y1, tau=data.tau, e=data.e,
    )


def apply_strategy(data: Dataset, strategy: str, seed: int = 0):
    """Turn a missing-treatment dataset into (complete dataset, row weights).

    delete: keep r=1 rows, unit weights. impute: fill missing t by
    thresholding p(T=1|x) at 0.5 (ties treat), unit weights. reweight: keep
    r=1 rows weighted by 1 / clamp(p(R=1|x)). `seed` is accepted for
    interface parity; all three strategies are deterministic."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}, expected one of {STRATEGIES}")
    if data.n_observed() == 0:
        raise EmptyDataError("no observed-treatment rows")

    if strategy == "delete":
        kept = np.flatnonzero(data.r == 1)
        sub = data.subset(kept)
        return _as_complete(sub, sub.t), np.ones(kept.size)

    if strategy == "impute":
        clf = fit_treatment_classifier(data)
        t = data.t.copy()
        missing = data.r == 0
        if np.any(missing):
            t[missing] = (clf.predict_proba(data.x[missing]) >= 0.5).astype(np.float64)
        return _as_complete(data, t), np.ones(data.n)

    clf = fit_observedness(data)
    kept = np.flatnonzero(data.r == 1)
    sub = data.subset(kept)
    weights = 1.0 / clf.predict_proba(sub.x)
    return _as_complete(sub, sub.t), weights


# ---------------------------------------------------------------------------
# Per-arm weighted least squares

OLS_JITTER = 1e-8


@dataclass
class OlsModel:
    beta0: np.ndarray  # intercept first
    beta1: np.ndarray

    def predict_outcome(self, x: np.ndarray, t: int) -> np.ndarray:
        beta = (self.beta0, self.beta1)[t]
        return beta[0] + np.asarray(x) @ beta[1:]

    def predict_cate(self, x: np.ndarray) -> np.ndarray:
        return self.predict_outcome(x, 1) - self.predict_outcome(x, 0)


def ols_fit(data: Dataset, weights=None) -> OlsModel:
    """Weighted least squares per treatment arm with a small ridge jitter.

    Weights are normalized to mean one so scaling them has no effect."""
    if np.any(np.isnan(data.t)):
        raise ValueError("ols_fit needs complete treatments (apply a strategy first)")
    weights = np.ones(data.n) if weights is None else np.asarray(weights, dtype=np.float64)
    if weights.shape != (data.n,):
        raise ValueError("weights must have one entry per row")
    betas = []
    for arm in (0.0, 1.0):
        rows = data.t == arm
        n_eff = int(np.count_nonzero(weights[rows] > 0))
        if n_eff < data.d + 1:
            raise SingularDesignError(
                f"arm {int(arm)} has {n_eff} effective rows for {data.d + 1} coefficients"
            )
        xa = np.hstack([np.ones((int(rows.sum()), 1)), data.x[rows]])
        wa = weights[rows]
        wa = wa / wa.mean()
        a = xa.T @ (xa * wa[:, None]) + OLS_JITTER * np.eye(data.d + 1)
        b = xa.T @ (wa * data.y[rows])
        try:
            beta = np.linalg.solve(a, b)
        except np.linalg.LinAlgError as exc:
            raise SingularDesignError(f"arm {int(arm)}: {exc}")
        if not np.all(np.isfinite(beta)):
            raise SingularDesignError(f"arm {int(arm)}: non-finite solution")
        betas.append(beta)
    return OlsModel(betas[0], betas[1])


def ols_predict_cate(model: OlsModel, x: np.ndarray) -> np.ndarray:
    return model.predict_cate(x)


# ---------------------------------------------------------------------------
# Neural baselines


def tarnet_train(data: Dataset, weights, config: mtrnet.MTRNetConfig):
    """The adversary-free cut of the network: identical engine with
    alpha = beta = 0, strategy weights multiplying the per-row outcome loss."""
    cfg = replace(config, alpha=0.0, beta=0.0)
    return mtrnet.train(data, cfg, row_weights=weights)


def cfrmmd_train(data: Dataset, weights, config: mtrnet.MTRNetConfig):
    """TARNet plus a per-batch kernel two-sample penalty between arm-wise
    representations, jointly minimized; config.alpha is the penalty weight."""
    cfg = replace(config, alpha=0.0, beta=0.0)
    return mtrnet.train(data, cfg, row_weights=weights, mmd_weight=config.alpha)


def mmd_rbf_squared(a: np.ndarray, b: np.ndarray, bandwidth: float) -> float:
    """Biased V-statistic of squared MMD with an RBF kernel."""
    return float(mmd2_rbf(np.asarray(a, dtype=np.float64),
                          np.asarray(b, dtype=np.float64), bandwidth).value)


# ---------------------------------------------------------------------------
# Baseline naming and specs

_ESTIMATOR_LABEL = {"ols": "OLS", "tarnet": "TARNet", "cfrmmd": "CFRMMD"}
_STRATEGY_LABEL = {"delete": "del", "impute": "imp", "reweight": "rew"}


@dataclass(frozen=True)
class BaselineSpec:
    estimator: str
    strategy: str
    config: mtrnet.MTRNetConfig = field(default_factory=mtrnet.MTRNetConfig)

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")

    @property
    def name(self) -> str:
        return f"{_ESTIMATOR_LABEL[self.estimator]}_{_STRATEGY_LABEL[self.strategy]}"

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "strategy": self.strategy,
            "config": self.config.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineSpec":
        return cls(
            estimator=d["estimator"],
            strategy=d["strategy"],
            config=mtrnet.MTRNetConfig.from_dict(d.get("config", {})),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def fit_baseline(spec: BaselineSpec, data: Dataset):
    """Apply the missing-data strategy, then fit the estimator on the
    resulting complete data. Returns an object with .predict_cate."""
    complete, weights = apply_strategy(data, spec.strategy, seed=spec.config.seed)
    if spec.estimator == "ols":
        return ols_fit(complete, weights)
    if spec.estimator == "tarnet":
        model, _ = tarnet_train(complete, weights, spec.config)
    else:
        model, _ = cfrmmd_train(complete, weights, spec.config)
    return model
