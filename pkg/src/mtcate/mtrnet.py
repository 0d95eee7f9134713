"""The missing-treatment representation network and its training loop.

One shared representation feeds four heads: per-arm outcome regressors
h0/h1, a treatment discriminator and an observedness discriminator. The
discriminators descend on their own cross-entropy losses while the
representation ascends on them through a gradient-reversal node, which
pushes the representation towards being uninformative of both treatment
and missingness. The same engine also trains the TARNet and CFR-MMD
baselines (adversaries off, optional per-row weights / kernel penalty).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import (
    Tensor, add, astensor, asum, backward, bce_loss, elu, gather_rows,
    grad_reverse, mmd2_rbf, mul, unit_normalize_rows,
)
from .data import Dataset
from .errors import DegenerateArmError, TrainingDivergedError
from .nn import AdamState, DenseLayer, adam_step, dense_forward, dropout_mask, init_dense, l2_penalty

ELU_ALPHA = 1.0
NORM_EPS = 1e-8

# SeedSequence domain tags so model init / batching / dropout use
# independent streams even when other components share the integer seed.
_INIT_STREAM = 404
_BATCH_STREAM = 505
_DROPOUT_STREAM = 606

MAX_BATCH_RESAMPLES = 100


@dataclass(frozen=True)
class MTRNetConfig:
    rep_layer_size: int = 50
    hyp_layer_size: int = 50
    num_rep_layers: int = 3
    num_hyp_layers: int = 3
    iterations: int = 300
    batch_size: int = 100
    learning_rate: float = 1e-3
    dropout_rate: float = 0.1
    l2_lambda: float = 1e-4
    alpha: float = 1.0
    beta: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        counts = (
            self.rep_layer_size, self.hyp_layer_size,
            self.num_rep_layers, self.num_hyp_layers, self.batch_size,
        )
        if any(c < 1 for c in counts):
            raise ValueError(f"layer sizes, layer counts and batch size must be >= 1: {self}")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.l2_lambda < 0 or self.alpha < 0 or self.beta < 0:
            raise ValueError("l2_lambda, alpha, beta must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MTRNetConfig":
        return cls(**d)


@dataclass
class TrainingBatch:
    x: np.ndarray
    t: np.ndarray  # NaN where missing
    r: np.ndarray
    y: np.ndarray
    row_weights: np.ndarray | None = None


@dataclass
class MTRNetModel:
    config: MTRNetConfig
    input_dim: int
    phi: list[DenseLayer]
    h0: list[DenseLayer]
    h1: list[DenseLayer]
    k_t: DenseLayer
    k_r: DenseLayer
    adam: dict[str, AdamState]

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for group, layers in (("phi", self.phi), ("h0", self.h0), ("h1", self.h1)):
            for i, layer in enumerate(layers):
                out[f"{group}.{i}.w"] = layer.weights
                out[f"{group}.{i}.b"] = layer.bias
        for group, layer in (("k_t", self.k_t), ("k_r", self.k_r)):
            out[f"{group}.w"] = layer.weights
            out[f"{group}.b"] = layer.bias
        return out

    def hypothesis_weights(self) -> list[Tensor]:
        return [layer.weights for layer in self.h0 + self.h1]

    def predict_cate(self, x) -> np.ndarray:
        return predict_cate(self, x)


def init_model(config: MTRNetConfig, input_dim: int) -> MTRNetModel:
    """Representation stack, two outcome heads ending in a scalar layer,
    and one single-layer logit head per discriminator."""
    config.validate()
    if input_dim < 1:
        raise ValueError("input_dim must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, _INIT_STREAM]))
    rep, hyp = config.rep_layer_size, config.hyp_layer_size

    phi = []
    d_in = input_dim
    for _ in range(config.num_rep_layers):
        phi.append(init_dense(rng, rep, d_in))
        d_in = rep

    def make_head() -> list[DenseLayer]:
        layers = []
        d = rep
        for _ in range(config.num_hyp_layers):
            layers.append(init_dense(rng, hyp, d))
            d = hyp
        layers.append(init_dense(rng, 1, d))
        return layers

    h0 = make_head()
    h1 = make_head()
    k_t = init_dense(rng, 1, rep)
    k_r = init_dense(rng, 1, rep)
    model = MTRNetModel(config, input_dim, phi, h0, h1, k_t, k_r, adam={})
    model.adam = {name: AdamState.like(t.value) for name, t in model.parameters().items()}
    return model


def compute_weights(t, r):
    """Balancing weights t/(2u) + (1-t)/(2(1-u)) over observed rows.

    Returns (w, u, n_o) with w aligned to the observed rows in batch order,
    u the observed treated fraction and n_o the observed-row count."""
    t = np.asarray(t, dtype=np.float64)
    r = np.asarray(r)
    if t.shape != r.shape:
        raise ValueError(f"t and r shapes differ: {t.shape} vs {r.shape}")
    obs = r == 1
    n_o = int(obs.sum())
    if n_o == 0:
        raise DegenerateArmError("no observed-treatment rows in batch")
    t_obs = t[obs]
    if np.any(np.isnan(t_obs)) or not np.all((t_obs == 0.0) | (t_obs == 1.0)):
        raise ValueError("observed t must be 0/1")
    u = float(t_obs.mean())
    if u == 0.0 or u == 1.0:
        raise DegenerateArmError(f"single treatment arm among observed rows (u={u})")
    w = t_obs / (2.0 * u) + (1.0 - t_obs) / (2.0 * (1.0 - u))
    return w, u, n_o


def _default_rng(config: MTRNetConfig):
    return np.random.default_rng(np.random.SeedSequence([config.seed, _DROPOUT_STREAM]))


def _rep_forward(model: MTRNetModel, x, train_mode: bool, rng) -> Tensor:
    drop = model.config.dropout_rate if train_mode else 0.0
    h = astensor(x)
    for layer in model.phi:
        h = elu(dense_forward(layer, h), ELU_ALPHA)
        if drop > 0:
            h = mul(h, dropout_mask(h.shape, drop, rng))
    return unit_normalize_rows(h, NORM_EPS)


def _head_forward(layers, z, drop: float, rng) -> Tensor:
    for layer in layers[:-1]:
        z = elu(dense_forward(layer, z), ELU_ALPHA)
        if drop > 0:
            z = mul(z, dropout_mask(z.shape, drop, rng))
    return dense_forward(layers[-1], z)


@dataclass
class _Forward:
    outcome: Tensor
    treatment: Tensor
    missingness: Tensor
    rep_obs: Tensor
    arm0: np.ndarray  # positions of control rows within the observed block
    arm1: np.ndarray
    n_o: int
    u: float


def _forward(model: MTRNetModel, batch: TrainingBatch, train_mode: bool, rng) -> _Forward:
    drop = model.config.dropout_rate if train_mode else 0.0
    rep = _rep_forward(model, batch.x, train_mode, rng)

    w, u, n_o = compute_weights(batch.t, batch.r)
    obs = np.flatnonzero(batch.r == 1)
    t_obs = batch.t[obs]
    y_obs = batch.y[obs]
    if batch.row_weights is not None:
        w = w * np.asarray(batch.row_weights, dtype=np.float64)[obs]
    arm0 = np.flatnonzero(t_obs == 0.0)
    arm1 = np.flatnonzero(t_obs == 1.0)

    rep_obs = gather_rows(rep, obs)
    terms = []
    for arm, layers in ((arm0, model.h0), (arm1, model.h1)):
        pred = _head_forward(layers, gather_rows(rep_obs, arm), drop, rng)
        diff = add(pred, Tensor(-y_obs[arm][:, None]))
        terms.append(asum(mul(mul(diff, diff), Tensor(w[arm][:, None]))))
    outcome = mul(add(terms[0], terms[1]), 1.0 / n_o)

    adv = grad_reverse(rep, 1.0)
    logit_t = dense_forward(model.k_t, gather_rows(adv, obs))
    treatment = bce_loss(logit_t, Tensor(t_obs[:, None]))
    logit_r = dense_forward(model.k_r, adv)
    missingness = bce_loss(logit_r, Tensor(batch.r.astype(np.float64)[:, None]))
    return _Forward(outcome, treatment, missingness, rep_obs, arm0, arm1, n_o, u)


def forward_losses(model: MTRNetModel, batch: TrainingBatch, train_mode: bool, rng=None):
    """(weighted outcome loss, treatment BCE over observed rows, observedness
    BCE over all rows) for one batch; dropout is active iff train_mode."""
    if rng is None:
        rng = _default_rng(model.config)
    fw = _forward(model, batch, train_mode, rng)
    return fw.outcome, fw.treatment, fw.missingness


def training_step(model: MTRNetModel, batch: TrainingBatch, *, rng=None,
                  iteration: int = 0, mmd_weight: float | None = None,
                  mmd_bandwidth: float | None = None) -> dict:
    """One adversarial update. The representation descends on the outcome
    loss and ascends on alpha*L_T + beta*L_R (gradient reversal); the
    hypothesis heads additionally feel the L2 penalty; the discriminators
    descend on their own losses. Everything updates via Adam."""
    cfg = model.config
    if rng is None:
        rng = _default_rng(cfg)
    fw = _forward(model, batch, train_mode=True, rng=rng)

    total = fw.outcome
    if cfg.l2_lambda > 0:
        total = add(total, mul(l2_penalty(model.hypothesis_weights()), cfg.l2_lambda))
    total = add(total, mul(fw.treatment, cfg.alpha))
    total = add(total, mul(fw.missingness, cfg.beta))
    record = {
        "iteration": iteration,
        "outcome": float(fw.outcome.value),
        "treatment_bce": float(fw.treatment.value),
        "missingness_bce": float(fw.missingness.value),
    }
    if mmd_weight:
        if mmd_bandwidth is None:
            raise ValueError("mmd_weight given without a bandwidth")
        mmd = mmd2_rbf(
            gather_rows(fw.rep_obs, fw.arm0),
            gather_rows(fw.rep_obs, fw.arm1),
            mmd_bandwidth,
        )
        total = add(total, mul(mmd, mmd_weight))
        record["mmd2"] = float(mmd.value)
    record["total"] = float(total.value)

    if not np.isfinite(record["total"]):
        raise TrainingDivergedError(iteration)

    backward(total)
    for name, tensor in model.parameters().items():
        adam_step(tensor.value, tensor.grad, model.adam[name], cfg.learning_rate)
    return record


def _sample_batch_indices(rng, data: Dataset, batch_size: int) -> np.ndarray:
    """Uniform with replacement; redrawn (up to a limit) until the observed
    rows of the batch contain both treatment arms."""
    for _ in range(MAX_BATCH_RESAMPLES):
        idx = rng.integers(0, data.n, size=batch_size)
        t_obs = data.t[idx][data.r[idx] == 1]
        if t_obs.size and 0.0 < t_obs.mean() < 1.0:
            return idx
    raise DegenerateArmError(
        f"could not sample a batch with both arms in {MAX_BATCH_RESAMPLES} attempts"
    )


def _median_bandwidth(model: MTRNetModel, batch: TrainingBatch) -> float:
    """Median pairwise distance between initial representations of the first
    batch's observed rows."""
    rep = _rep_forward(model, batch.x, train_mode=False, rng=None).value
    rep = rep[batch.r == 1]
    diff = rep[:, None, :] - rep[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    iu = np.triu_indices(rep.shape[0], k=1)
    return float(max(np.median(dist[iu]), 1e-3))


def train(data: Dataset, config: MTRNetConfig, *, row_weights=None,
          mmd_weight: float | None = None):
    """Run `config.iterations` mini-batch steps; returns (model, history)."""
    config.validate()
    t_obs = data.t[data.r == 1]
    if t_obs.size == 0 or not (0.0 < t_obs.mean() < 1.0):
        raise DegenerateArmError("training data needs observed rows from both arms")
    if row_weights is not None:
        row_weights = np.asarray(row_weights, dtype=np.float64)
        if row_weights.shape != (data.n,):
            raise ValueError("row_weights must have one entry per row")

    model = init_model(config, data.d)
    batch_rng = np.random.default_rng(np.random.SeedSequence([config.seed, _BATCH_STREAM]))
    drop_rng = np.random.default_rng(np.random.SeedSequence([config.seed, _DROPOUT_STREAM]))
    bandwidth = None
    history = []
    for it in range(config.iterations):
        idx = _sample_batch_indices(batch_rng, data, config.batch_size)
        batch = TrainingBatch(
            data.x[idx], data.t[idx], data.r[idx], data.y[idx],
            None if row_weights is None else row_weights[idx],
        )
        if mmd_weight and bandwidth is None:
            bandwidth = _median_bandwidth(model, batch)
        record = training_step(
            model, batch, rng=drop_rng, iteration=it,
            mmd_weight=mmd_weight, mmd_bandwidth=bandwidth,
        )
        history.append(record)
    return model, history


# ---------------------------------------------------------------------------
# Prediction


def _check_input(model: MTRNetModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ValueError(f"expected (n, {model.input_dim}) input, got {x.shape}")
    return x


def predict_outcomes(model: MTRNetModel, x):
    """(f0(x), f1(x)) in evaluation mode (no dropout)."""
    x = _check_input(model, x)
    rep = _rep_forward(model, x, train_mode=False, rng=None)
    f0 = _head_forward(model.h0, rep, 0.0, None)
    f1 = _head_forward(model.h1, rep, 0.0, None)
    return f0.value[:, 0], f1.value[:, 0]


def predict_outcome(model: MTRNetModel, x, t: int) -> np.ndarray:
    if t not in (0, 1):
        raise ValueError(f"t must be 0 or 1, got {t}")
    return predict_outcomes(model, x)[t]


def predict_cate(model: MTRNetModel, x) -> np.ndarray:
    f0, f1 = predict_outcomes(model, x)
    return f1 - f0


# ---------------------------------------------------------------------------
# Serialization

FORMAT_VERSION = 1


def model_to_dict(model: MTRNetModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "mtrnet",
        "input_dim": model.input_dim,
        "config": model.config.to_dict(),
        "shapes": {name: list(t.value.shape) for name, t in model.parameters().items()},
        "parameters": {name: t.value.tolist() for name, t in model.parameters().items()},
    }


def model_from_dict(d: dict) -> MTRNetModel:
    if d.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported format version {d.get('format_version')}")
    config = MTRNetConfig.from_dict(d["config"])
    model = init_model(config, int(d["input_dim"]))
    for name, tensor in model.parameters().items():
        value = np.asarray(d["parameters"][name], dtype=np.float64)
        if list(value.shape) != d["shapes"][name] or value.shape != tensor.value.shape:
            raise ValueError(f"shape mismatch for parameter {name}")
        tensor.value = value
    model.adam = {name: AdamState.like(t.value) for name, t in model.parameters().items()}
    return model


def save_model(model: MTRNetModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, sort_keys=True)


def load_model(path) -> MTRNetModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
