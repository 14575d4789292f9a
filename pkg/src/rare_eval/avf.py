"""Learned failure-probability predictors.

Three predictor families are trained from a :class:`~rare_eval.traces.TrainingTrace`:

``tabular``
    Laplace-smoothed failure frequency per (initial condition, agent bucket)
    cell.  Agent buckets default to deciles of training progress crossed with
    the exact noise levels seen in the trace; ``u_bins=1`` together with
    ``pool_sigma=True`` pools all agents into a single per-state table, which
    is the right setting when only the ranking over initial conditions
    matters (weak agents supply the signal that the final agent's episodes
    cannot).

``parametric``
    A small feedforward classifier over (state, progress, noise) features,
    trained with Adam on cross-entropy.

``dnd``
    A kernel-weighted nearest-neighbor classifier in a learned embedding
    space with a learned pseudocount ``b``; prediction is
    ``(b + sum of failing-neighbor weights) / (2b + sum of all weights)``,
    which tends to 1/2 when the query is far from all training points.

All predictors clamp outputs into ``[f_min, 1]`` so that downstream
importance weights stay bounded, and are immutable once trained.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .envs import SIGMA_MAX, AgentParams, EnvSpec, support
from .rngs import stream
from .traces import TrainingTrace

MODEL_FORMAT_VERSION = 1
DEFAULT_F_MIN = 1e-6


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


@dataclass(frozen=True)
class AvfTrainConfig:
    kind: str = "tabular"
    iterations: int = 4000
    step_size: float = 3e-3
    batch_size: int = 256
    hidden: int = 32
    u_bins: int = 10
    pool_sigma: bool = False
    k_neighbors: int = 32
    embedding_width: int = 16
    initial_pseudocount: float = 1.0
    f_min: float = DEFAULT_F_MIN
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("tabular", "parametric", "dnd"):
            raise ValueError(f"unknown predictor kind {self.kind!r}")
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if self.f_min <= 0.0:
            raise ValueError("f_min must be positive")
        if self.u_bins < 1:
            raise ValueError("u_bins must be >= 1")
        if self.initial_pseudocount <= 0.0:
            raise ValueError("initial_pseudocount must be positive")


class AvfModel:
    """Shared surface of all trained predictors."""

    kind: str = ""
    f_min: float = DEFAULT_F_MIN
    m: int = 0
    x_lo: int = 0

    def predict_many(self, xs, us, sigmas) -> np.ndarray:
        raise NotImplementedError

    def predict(self, x: int, theta: AgentParams) -> float:
        out = self.predict_many(
            np.asarray([x], dtype=np.float64),
            np.asarray([theta.u]),
            np.asarray([theta.sigma]),
        )
        return float(out[0])

    def state_table(self, spec: EnvSpec, theta: AgentParams) -> np.ndarray:
        """Predictions for every initial condition of ``spec`` at a fixed agent."""
        states = support(spec)
        if spec.m != self.m or int(states[0]) != self.x_lo:
            raise ValueError("model was trained for a different initial-condition space")
        n = states.shape[0]
        return self.predict_many(
            states.astype(np.float64), np.full(n, theta.u), np.full(n, theta.sigma)
        )

    def _clamp(self, raw: np.ndarray) -> np.ndarray:
        return np.clip(raw, self.f_min, 1.0)

    def to_dict(self) -> dict:
        raise NotImplementedError


def _x_feature(xs, x_lo: int, m: int) -> np.ndarray:
    span = max(1, m - 1)
    return (np.asarray(xs, dtype=np.float64) - x_lo) / span


def _features(xs, us, sigmas, x_lo: int, m: int) -> np.ndarray:
    return np.column_stack(
        [_x_feature(xs, x_lo, m), np.asarray(us, dtype=np.float64),
         np.asarray(sigmas, dtype=np.float64) / SIGMA_MAX]
    )


# ---------------------------------------------------------------------------
# Tabular


class TabularAvf(AvfModel):
    kind = "tabular"

    def __init__(self, m, x_lo, u_bins, sigma_levels, fail_counts, total_counts, f_min):
        self.m = int(m)
        self.x_lo = int(x_lo)
        self.u_bins = int(u_bins)
        self.sigma_levels = np.asarray(sigma_levels, dtype=np.float64)
        self.fail_counts = np.asarray(fail_counts, dtype=np.int64)
        self.total_counts = np.asarray(total_counts, dtype=np.int64)
        self.f_min = float(f_min)

    def _bucket(self, us, sigmas):
        u_idx = np.minimum((np.asarray(us) * self.u_bins).astype(np.int64), self.u_bins - 1)
        u_idx = np.maximum(u_idx, 0)
        if self.sigma_levels.shape[0] == 1:
            s_idx = np.zeros(len(np.asarray(sigmas)), dtype=np.int64)
        else:
            # nearest trained noise level
            mid = (self.sigma_levels[1:] + self.sigma_levels[:-1]) / 2.0
            s_idx = np.searchsorted(mid, np.asarray(sigmas))
        return u_idx, s_idx

    def predict_many(self, xs, us, sigmas) -> np.ndarray:
        x_idx = np.asarray(xs, dtype=np.int64) - self.x_lo
        if x_idx.size and (x_idx.min() < 0 or x_idx.max() >= self.m):
            raise ValueError("initial condition outside the trained support")
        u_idx, s_idx = self._bucket(us, sigmas)
        k = self.fail_counts[x_idx, u_idx, s_idx]
        n = self.total_counts[x_idx, u_idx, s_idx]
        return self._clamp((k + 1.0) / (n + 2.0))

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": self.kind,
            "f_min": self.f_min,
            "m": self.m,
            "x_lo": self.x_lo,
            "u_bins": self.u_bins,
            "sigma_levels": self.sigma_levels.tolist(),
            "fail_counts": self.fail_counts.tolist(),
            "total_counts": self.total_counts.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TabularAvf":
        return cls(d["m"], d["x_lo"], d["u_bins"], d["sigma_levels"],
                   d["fail_counts"], d["total_counts"], d["f_min"])


def _train_tabular(trace: TrainingTrace, config: AvfTrainConfig) -> TabularAvf:
    spec = trace.spec
    x_lo = int(support(spec)[0])
    if config.pool_sigma:
        levels = np.array([0.0])
        s_idx = np.zeros(len(trace), dtype=np.int64)
    else:
        levels = np.unique(trace.sigma)
        mid = (levels[1:] + levels[:-1]) / 2.0
        s_idx = np.searchsorted(mid, trace.sigma)
    u_idx = np.minimum((trace.u * config.u_bins).astype(np.int64), config.u_bins - 1)
    x_idx = trace.x - x_lo
    shape = (spec.m, config.u_bins, levels.shape[0])
    fails = np.zeros(shape, dtype=np.int64)
    totals = np.zeros(shape, dtype=np.int64)
    np.add.at(totals, (x_idx, u_idx, s_idx), 1)
    np.add.at(fails, (x_idx, u_idx, s_idx), trace.failed.astype(np.int64))
    return TabularAvf(spec.m, x_lo, config.u_bins, levels, fails, totals, config.f_min)


# ---------------------------------------------------------------------------
# Parametric (feedforward classifier)


class ParametricAvf(AvfModel):
    kind = "parametric"

    def __init__(self, m, x_lo, params, f_min):
        self.m = int(m)
        self.x_lo = int(x_lo)
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        self.f_min = float(f_min)

    def _logits(self, feats: np.ndarray) -> np.ndarray:
        p = self.params
        a1 = np.tanh(feats @ p["w1"] + p["b1"])
        a2 = np.tanh(a1 @ p["w2"] + p["b2"])
        return (a2 @ p["w3"] + p["b3"])[:, 0]

    def predict_many(self, xs, us, sigmas) -> np.ndarray:
        feats = _features(xs, us, sigmas, self.x_lo, self.m)
        return self._clamp(_sigmoid(self._logits(feats)))

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": self.kind,
            "f_min": self.f_min,
            "m": self.m,
            "x_lo": self.x_lo,
            "params": {k: v.tolist() for k, v in self.params.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParametricAvf":
        return cls(d["m"], d["x_lo"], d["params"], d["f_min"])


class _Adam:
    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.mean = {k: np.zeros_like(v) for k, v in params.items()}
        self.var = {k: np.zeros_like(v) for k, v in params.items()}
        self.step = 0

    def update(self, params: dict, grads: dict) -> None:
        self.step += 1
        b1c = 1.0 - self.beta1**self.step
        b2c = 1.0 - self.beta2**self.step
        for k, g in grads.items():
            self.mean[k] = self.beta1 * self.mean[k] + (1 - self.beta1) * g
            self.var[k] = self.beta2 * self.var[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.mean[k] / b1c) / (np.sqrt(self.var[k] / b2c) + self.eps)


def _train_parametric(trace: TrainingTrace, config: AvfTrainConfig) -> ParametricAvf:
    rng = stream(config.seed, "train-avf", "parametric")
    spec = trace.spec
    x_lo = int(support(spec)[0])
    feats = _features(trace.x, trace.u, trace.sigma, x_lo, spec.m)
    labels = trace.failed.astype(np.float64)
    n = feats.shape[0]
    h = config.hidden

    def init(shape, fan_in):
        return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)

    params = {
        "w1": init((3, h), 3), "b1": np.zeros(h),
        "w2": init((h, h), h), "b2": np.zeros(h),
        "w3": init((h, 1), h), "b3": np.zeros(1),
    }
    opt = _Adam(params, config.step_size)
    batch = min(config.batch_size, n)
    for _ in range(config.iterations):
        idx = rng.integers(0, n, size=batch)
        xb, yb = feats[idx], labels[idx]
        a1 = np.tanh(xb @ params["w1"] + params["b1"])
        a2 = np.tanh(a1 @ params["w2"] + params["b2"])
        logit = (a2 @ params["w3"] + params["b3"])[:, 0]
        dlogit = (_sigmoid(logit) - yb)[:, None] / batch
        grads = {
            "w3": a2.T @ dlogit,
            "b3": dlogit.sum(axis=0),
        }
        da2 = (dlogit @ params["w3"].T) * (1.0 - a2 * a2)
        grads["w2"] = a1.T @ da2
        grads["b2"] = da2.sum(axis=0)
        da1 = (da2 @ params["w2"].T) * (1.0 - a1 * a1)
        grads["w1"] = xb.T @ da1
        grads["b1"] = da1.sum(axis=0)
        opt.update(params, grads)
    return ParametricAvf(spec.m, x_lo, params, config.f_min)


# ---------------------------------------------------------------------------
# DND (kernel-weighted neighbors in a learned embedding)


def dnd_score(neighbor_weights, b: float) -> float:
    """Pseudocount-smoothed neighbor vote: ``(b + sum_{y=1} w) / (2b + sum w)``.

    ``neighbor_weights`` is an iterable of ``(weight, label)`` pairs.  With all
    weights zero the score is exactly 1/2 for any ``b > 0``.
    """
    if b <= 0.0:
        raise ValueError("pseudocount b must be positive")
    total = 0.0
    positive = 0.0
    for w, y in neighbor_weights:
        if w < 0.0:
            raise ValueError("neighbor weights must be non-negative")
        total += w
        if y:
            positive += w
    return (b + positive) / (2.0 * b + total)


class DndAvf(AvfModel):
    kind = "dnd"

    def __init__(self, m, x_lo, params, log_b, memory_features, memory_labels, k, f_min):
        self.m = int(m)
        self.x_lo = int(x_lo)
        self.params = {key: np.asarray(v, dtype=np.float64) for key, v in params.items()}
        self.log_b = float(log_b)
        self.memory_features = np.asarray(memory_features, dtype=np.float64)
        self.memory_labels = np.asarray(memory_labels, dtype=np.float64)
        self.k = int(k)
        self.f_min = float(f_min)

    @property
    def pseudocount(self) -> float:
        return float(np.exp(self.log_b))

    def _embed(self, feats: np.ndarray) -> np.ndarray:
        p = self.params
        return np.tanh(feats @ p["w1"] + p["b1"]) @ p["w2"] + p["b2"]

    def predict_many(self, xs, us, sigmas) -> np.ndarray:
        feats = _features(xs, us, sigmas, self.x_lo, self.m)
        mem = self._embed(self.memory_features)
        qry = self._embed(feats)
        b = self.pseudocount
        k = min(self.k, mem.shape[0])
        out = np.empty(feats.shape[0])
        chunk = 256
        mem_sq = (mem * mem).sum(axis=1)
        for lo in range(0, feats.shape[0], chunk):
            hi = min(lo + chunk, feats.shape[0])
            q = qry[lo:hi]
            d2 = np.maximum((q * q).sum(axis=1)[:, None] + mem_sq[None, :] - 2.0 * q @ mem.T, 0.0)
            idx = np.argpartition(d2, k - 1, axis=1)[:, :k]
            dk = np.take_along_axis(d2, idx, axis=1)
            w = np.exp(-dk / 2.0)
            yk = self.memory_labels[idx]
            out[lo:hi] = (b + (w * yk).sum(axis=1)) / (2.0 * b + w.sum(axis=1))
        return self._clamp(out)

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": self.kind,
            "f_min": self.f_min,
            "m": self.m,
            "x_lo": self.x_lo,
            "k": self.k,
            "log_b": self.log_b,
            "params": {k: v.tolist() for k, v in self.params.items()},
            "memory_features": self.memory_features.tolist(),
            "memory_labels": self.memory_labels.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DndAvf":
        return cls(d["m"], d["x_lo"], d["params"], d["log_b"], d["memory_features"],
                   d["memory_labels"], d["k"], d["f_min"])


def _train_dnd(trace: TrainingTrace, config: AvfTrainConfig) -> DndAvf:
    rng = stream(config.seed, "train-avf", "dnd")
    spec = trace.spec
    x_lo = int(support(spec)[0])
    feats = _features(trace.x, trace.u, trace.sigma, x_lo, spec.m)
    labels = trace.failed.astype(np.float64)
    n = feats.shape[0]
    h, e = config.hidden, config.embedding_width
    k = min(config.k_neighbors, n - 1)
    if k < 1:
        raise ValueError("trace too small for neighbor retrieval")

    def init(shape, fan_in):
        return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)

    params = {
        "w1": init((3, h), 3), "b1": np.zeros(h),
        "w2": init((h, e), h), "b2": np.zeros(e),
        "log_b": np.array([np.log(config.initial_pseudocount)]),
    }
    opt = _Adam(params, config.step_size)
    batch = min(config.batch_size, n)
    rows = np.arange(batch)
    for _ in range(config.iterations):
        hidden = np.tanh(feats @ params["w1"] + params["b1"])
        emb = hidden @ params["w2"] + params["b2"]
        bidx = rng.integers(0, n, size=batch)
        q = emb[bidx]
        d2 = np.maximum(
            (q * q).sum(axis=1)[:, None] + (emb * emb).sum(axis=1)[None, :] - 2.0 * q @ emb.T,
            0.0,
        )
        d2[rows, bidx] = np.inf  # leave-self-out
        idx = np.argpartition(d2, k - 1, axis=1)[:, :k]
        dk = np.take_along_axis(d2, idx, axis=1)
        w = np.exp(-dk / 2.0)
        yk = labels[idx]
        b = float(np.exp(params["log_b"][0]))
        num = b + (w * yk).sum(axis=1)
        den = 2.0 * b + w.sum(axis=1)
        p = num / den
        y = labels[bidx]
        gp = (p - y) / (p * (1.0 - p) * batch)
        gw = gp[:, None] * (yk - p[:, None]) / den[:, None]
        g_b = float((gp * (1.0 - 2.0 * p) / den).sum()) * b
        gd = gw * (-w / 2.0)
        diff = q[:, None, :] - emb[idx]
        g_emb = np.zeros_like(emb)
        np.add.at(g_emb, bidx, (2.0 * gd[:, :, None] * diff).sum(axis=1))
        np.add.at(
            g_emb,
            idx.reshape(-1),
            (-2.0 * gd[:, :, None] * diff).reshape(-1, e),
        )
        grads = {
            "w2": hidden.T @ g_emb,
            "b2": g_emb.sum(axis=0),
            "log_b": np.array([g_b]),
        }
        dh = (g_emb @ params["w2"].T) * (1.0 - hidden * hidden)
        grads["w1"] = feats.T @ dh
        grads["b1"] = dh.sum(axis=0)
        opt.update(params, grads)

    net = {key: params[key] for key in ("w1", "b1", "w2", "b2")}
    return DndAvf(spec.m, x_lo, net, float(params["log_b"][0]), feats, labels, k, config.f_min)


# ---------------------------------------------------------------------------
# Fixed per-state table (handy for oracle-derived or synthetic predictors)


class TableAvf(AvfModel):
    """Agent-independent predictor given directly as one value per state."""

    kind = "table"

    def __init__(self, values, x_lo=0, f_min=DEFAULT_F_MIN):
        self.values = np.asarray(values, dtype=np.float64)
        self.m = int(self.values.shape[0])
        self.x_lo = int(x_lo)
        self.f_min = float(f_min)

    def predict_many(self, xs, us, sigmas) -> np.ndarray:
        x_idx = np.asarray(xs, dtype=np.int64) - self.x_lo
        if x_idx.size and (x_idx.min() < 0 or x_idx.max() >= self.m):
            raise ValueError("initial condition outside the table")
        return self._clamp(self.values[x_idx])

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": self.kind,
            "f_min": self.f_min,
            "m": self.m,
            "x_lo": self.x_lo,
            "values": self.values.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TableAvf":
        return cls(d["values"], d["x_lo"], d["f_min"])


def exact_failure_model(spec: EnvSpec, theta: AgentParams, f_min: float = DEFAULT_F_MIN) -> TableAvf:
    """Predictor returning the environment's true failure probabilities (clamped).

    The best predictor an estimator or adversary could hope for; useful as a
    ceiling in experiments.
    """
    from .envs import failure_prob_table

    return TableAvf(failure_prob_table(spec, theta), x_lo=int(support(spec)[0]), f_min=f_min)


# ---------------------------------------------------------------------------
# Training entry point, evaluation, serialization


def train_avf(trace: TrainingTrace, config: AvfTrainConfig) -> AvfModel:
    """Fit a predictor of the configured kind to a trace."""
    if len(trace) == 0:
        raise ValueError("cannot train on an empty trace")
    if config.kind in ("parametric", "dnd") and trace.failure_count == 0:
        raise ValueError(
            "trace contains no failures; use a longer run or include weaker "
            "agents (smaller u / more noise) so the predictor has signal"
        )
    if config.kind == "tabular":
        return _train_tabular(trace, config)
    if config.kind == "parametric":
        return _train_parametric(trace, config)
    return _train_dnd(trace, config)


def predict(model: AvfModel, x: int, theta: AgentParams) -> float:
    """Predicted failure probability, always in ``[f_min, 1]``."""
    return model.predict(x, theta)


@dataclass(frozen=True)
class CalibrationRow:
    count: int
    mean_predicted: float
    failure_rate: float


@dataclass(frozen=True)
class AvfEvaluation:
    cross_entropy: float
    calibration: list
    n: int


def evaluate_avf(model: AvfModel, holdout: TrainingTrace, buckets: int = 10) -> AvfEvaluation:
    """Held-out mean cross-entropy plus a predicted-vs-empirical calibration table."""
    if len(holdout) == 0:
        raise ValueError("holdout trace is empty")
    preds = model.predict_many(holdout.x, holdout.u, holdout.sigma)
    y = holdout.failed.astype(np.float64)
    # keep the log finite when a predictor saturates at 1
    q = np.clip(preds, model.f_min, 1.0 - 1e-12)
    ce = float(np.mean(-(y * np.log(q) + (1.0 - y) * np.log1p(-q))))
    order = np.argsort(preds, kind="stable")
    rows = []
    for chunk in np.array_split(order, min(buckets, len(holdout))):
        if chunk.size == 0:
            continue
        rows.append(CalibrationRow(
            count=int(chunk.size),
            mean_predicted=float(preds[chunk].mean()),
            failure_rate=float(y[chunk].mean()),
        ))
    return AvfEvaluation(cross_entropy=ce, calibration=rows, n=len(holdout))


_MODEL_CLASSES = {c.kind: c for c in (TabularAvf, ParametricAvf, DndAvf, TableAvf)}


def model_from_dict(d: dict) -> AvfModel:
    version = d.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version!r}")
    kind = d.get("kind")
    if kind not in _MODEL_CLASSES:
        raise ValueError(f"unknown model kind {kind!r}")
    return _MODEL_CLASSES[kind].from_dict(d)


def save_model(model: AvfModel, path) -> None:
    from .outputs import atomic_write_text

    atomic_write_text(path, json.dumps(model.to_dict()))


def load_model(path) -> AvfModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
