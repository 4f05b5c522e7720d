"""Weighted fuzzy conjunctive rules and their hand-derived gradients.

A model holds ``m`` rules over ``2n`` literals (n features followed by their
negations).  Literal j contributes ``1 - sigmoid(W[i, j]) * (1 - mu_j)`` to
rule i, the rule's fit aggregates those terms (min by default) and the
prediction is ``b + sum_i fit_i * r_i``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy.special import expit as sigmoid

from .loss import LossConfig, base_loss_with_grad, penalties_with_grad, weighted_penalty_sum

SCHEMA_VERSION = 1
AGGREGATORS = ("min", "product", "max")


class ModelError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    """A non-finite value appeared while computing gradients."""

    def __init__(self, message: str, parameter: str, index: tuple):
        super().__init__(f"{message}: {parameter}{list(index)}")
        self.parameter = parameter
        self.index = index


@dataclass
class RuleModel:
    W: np.ndarray
    r: np.ndarray
    b: float = 0.0
    feature_names: list[str] = field(default_factory=list)
    aggregator: str = "min"

    def __post_init__(self):
        self.W = np.array(self.W, dtype=float, ndmin=2)
        self.r = np.array(self.r, dtype=float).ravel()
        self.b = float(self.b)
        m, two_n = self.W.shape
        if two_n % 2:
            raise ModelError(f"literal weight matrix needs an even column count, got {two_n}")
        if self.r.size != m:
            raise ModelError(f"{m} rules but {self.r.size} rule weights")
        if not self.feature_names:
            self.feature_names = [f"f{j}" for j in range(two_n // 2)]
        if len(self.feature_names) != two_n // 2:
            raise ModelError("feature_names must list the n positive features")
        if self.aggregator not in AGGREGATORS:
            raise ModelError(f"unknown aggregator {self.aggregator!r}")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.r)) and np.isfinite(self.b)):
            raise ModelError("model parameters must be finite")

    @property
    def m(self) -> int:
        return self.W.shape[0]

    @property
    def n(self) -> int:
        return self.W.shape[1] // 2

    @property
    def literal_names(self) -> list[str]:
        return list(self.feature_names) + [f"not {name}" for name in self.feature_names]

    def copy(self) -> "RuleModel":
        return RuleModel(self.W.copy(), self.r.copy(), self.b, list(self.feature_names), self.aggregator)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "m": self.m,
            "n": self.n,
            "feature_names": list(self.feature_names),
            "W": self.W.ravel().tolist(),
            "r": self.r.tolist(),
            "b": self.b,
            "aggregator": self.aggregator,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RuleModel":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ModelError(f"unsupported model schema version {d.get('schema_version')!r}")
        m, n = int(d["m"]), int(d["n"])
        W = np.asarray(d["W"], dtype=float).reshape(m, 2 * n)
        return cls(W, d["r"], d.get("b", 0.0), list(d["feature_names"]), d.get("aggregator", "min"))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "RuleModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def literals(x) -> np.ndarray:
    """Literal memberships [x, 1 - x] for one row or a batch of rows."""
    x = np.asarray(x, dtype=float)
    return np.concatenate([x, 1.0 - x], axis=-1)


def literal_term(w, mu):
    """Masked literal: mu when sigmoid(w) -> 1, the neutral 1 when sigmoid(w) -> 0."""
    return 1.0 - sigmoid(w) * (1.0 - np.asarray(mu, dtype=float))


@numba.njit(cache=True)
def _extreme_terms(S, L, use_min):
    # fused literal_term + min/max over literals; ties keep the lowest index
    N, k = L.shape
    m = S.shape[0]
    fits = np.empty((N, m))
    idx = np.empty((N, m), dtype=np.int64)
    for a in range(N):
        for i in range(m):
            best = 1.0 - S[i, 0] * (1.0 - L[a, 0])
            arg = 0
            for j in range(1, k):
                t = 1.0 - S[i, j] * (1.0 - L[a, j])
                if (t < best) if use_min else (t > best):
                    best = t
                    arg = j
            fits[a, i] = best
            idx[a, i] = arg
    return fits, idx


def _fits_and_index(model: "RuleModel", L: np.ndarray):
    if model.aggregator == "product":
        return _aggregate(_terms(model, L), "product"), None
    S = np.ascontiguousarray(sigmoid(model.W))
    return _extreme_terms(S, np.ascontiguousarray(L), model.aggregator == "min")


def _aggregate(T: np.ndarray, aggregator: str) -> np.ndarray:
    if aggregator == "min":
        return T.min(axis=-1)
    if aggregator == "max":
        return T.max(axis=-1)
    return T.prod(axis=-1)


def rule_fit(weights_row, lits, aggregator: str = "min") -> float:
    T = literal_term(np.asarray(weights_row, dtype=float), lits)
    return float(_aggregate(T, aggregator))


def _terms(model: RuleModel, L: np.ndarray) -> np.ndarray:
    # (rows, rules, literals)
    S = sigmoid(model.W)
    return 1.0 - S[None, :, :] * (1.0 - L[:, None, :])


def rule_fits(model: RuleModel, X) -> np.ndarray:
    """Fit of every rule on every row, shape (rows, rules)."""
    X = _check_width(model, X)
    return _fits_and_index(model, literals(X))[0]


def predict(model: RuleModel, lits) -> float:
    lits = np.asarray(lits, dtype=float)
    if lits.shape != (2 * model.n,):
        raise ModelError(f"expected {2 * model.n} literal memberships, got {lits.shape}")
    fits = _fits_and_index(model, lits[None, :])[0][0]
    return float(model.b + fits @ model.r)


def _check_width(model: RuleModel, X) -> np.ndarray:
    X = np.asarray(getattr(X, "values", X), dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, model.n) if X.size else np.zeros((0, model.n))
    if X.shape[1] != model.n:
        raise ModelError(f"feature matrix has {X.shape[1]} columns, model expects {model.n}")
    return X


def predict_batch(model: RuleModel, X, chunk: int = 4096) -> np.ndarray:
    X = _check_width(model, X)
    out = np.empty(X.shape[0])
    for start in range(0, X.shape[0], chunk):
        fits = rule_fits(model, X[start:start + chunk])
        out[start:start + chunk] = model.b + fits @ model.r
    return out


@dataclass
class Gradients:
    W: np.ndarray
    r: np.ndarray
    b: float
    loss: float
    base: float
    penalties: dict


def _fit_backward(L: np.ndarray, S: np.ndarray, g_fit: np.ndarray, idx: np.ndarray | None,
                  aggregator: str) -> np.ndarray:
    """d loss / d S given d loss / d fit, for every aggregator."""
    N, k = L.shape
    m = S.shape[0]
    one_minus_L = 1.0 - L
    if aggregator in ("min", "max"):
        # the extremum index is the only literal the fit depends on locally
        chosen = np.take_along_axis(one_minus_L, idx, axis=1)  # (N, m)
        contrib = -g_fit * chosen
        flat = (np.arange(m)[None, :] * k + idx).ravel()
        return np.bincount(flat, weights=contrib.ravel(), minlength=m * k).reshape(m, k)
    # product: d fit / d T_j = product of the other terms
    T = 1.0 - S[None, :, :] * one_minus_L[:, None, :]
    left = np.cumprod(np.concatenate([np.ones((N, m, 1)), T[:, :, :-1]], axis=2), axis=2)
    right = np.cumprod(np.concatenate([np.ones((N, m, 1)), T[:, :, :0:-1]], axis=2), axis=2)[:, :, ::-1]
    others = left * right
    return -np.einsum("nm,nmk,nk->mk", g_fit, others, one_minus_L)


def model_gradients(model: RuleModel, X, y, loss_cfg: LossConfig, constraints=None,
                    alpha: float = 0.0) -> Gradients:
    """Loss value and analytic gradients with respect to W, r and b."""
    # overflow is reported through NonFiniteError rather than numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        return _model_gradients(model, X, y, loss_cfg, constraints, alpha)


def _model_gradients(model, X, y, loss_cfg, constraints, alpha) -> Gradients:
    if alpha < 0:
        raise ModelError("alpha must be >= 0")
    X = _check_width(model, X)
    y = np.asarray(y, dtype=float)
    L = literals(X)
    S = sigmoid(model.W)
    fits, idx = _fits_and_index(model, L)
    y_pred = model.b + fits @ model.r

    base, g_y = base_loss_with_grad(y_pred, y, loss_cfg)
    g_b = float(g_y.sum())
    g_r = fits.T @ g_y
    g_fit = g_y[:, None] * model.r[None, :]
    g_S = _fit_backward(L, S, g_fit, idx, model.aggregator)
    g_W = g_S * S * (1.0 - S)

    values, g_pen = penalties_with_grad(model.W, constraints, loss_cfg)
    loss = base
    if alpha:
        loss = base + alpha * weighted_penalty_sum(values, loss_cfg)
        g_W = g_W + alpha * g_pen

    for name, arr in (("W", g_W), ("r", g_r), ("b", np.array([g_b]))):
        bad = np.argwhere(~np.isfinite(arr))
        if bad.size:
            raise NonFiniteError("non-finite gradient", name, tuple(int(i) for i in bad[0]))
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite loss", "loss", ())
    return Gradients(g_W, g_r, g_b, float(loss), float(base), values)


def loss_value(model: RuleModel, X, y, loss_cfg: LossConfig, constraints=None,
               alpha: float = 0.0) -> tuple[float, dict]:
    """Total loss and penalty values without gradients."""
    y_pred = predict_batch(model, X)
    base, _ = base_loss_with_grad(y_pred, np.asarray(y, dtype=float), loss_cfg)
    values, _ = penalties_with_grad(model.W, constraints, loss_cfg)
    total = base + alpha * weighted_penalty_sum(values, loss_cfg) if alpha else base
    return float(total), values
