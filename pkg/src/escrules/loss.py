"""Semantic penalties, the alpha fade-in schedule and the composite loss."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit as sigmoid

PENALTY_NAMES = ("long", "fuzzy", "implied", "exclusive")


class LossError(ValueError):
    pass


@dataclass
class LossConfig:
    theta: float = 3.0
    # mse by default: see the training notes in the README for why bce is not
    base_loss: str = "mse"
    target_scale: float = 100.0
    clamp_eps: float = 1e-6
    alpha_max: float = 1.0
    alpha_start_epoch: int = 300
    alpha_end_epoch: int = 600
    # per-penalty multipliers on top of the shared alpha, order of PENALTY_NAMES
    penalty_weights: tuple = (1.0, 1.0, 1.0, 1.0)
    # False restricts the length and crispness penalties to positive literals
    penalize_negated: bool = True

    def __post_init__(self):
        self.penalty_weights = tuple(float(w) for w in self.penalty_weights)
        if self.theta < 0:
            raise LossError("theta must be >= 0")
        if self.base_loss not in ("bce", "mse"):
            raise LossError(f"unknown base loss {self.base_loss!r}")
        if not 0 < self.clamp_eps < 0.5:
            raise LossError("clamp_eps must lie in (0, 0.5)")
        if self.alpha_start_epoch > self.alpha_end_epoch:
            raise LossError("alpha_start_epoch must not exceed alpha_end_epoch")
        if self.alpha_max < 0:
            raise LossError("alpha_max must be >= 0")
        if len(self.penalty_weights) != len(PENALTY_NAMES):
            raise LossError("penalty_weights needs one entry per penalty")
        if self.target_scale <= 0:
            raise LossError("target_scale must be > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["penalty_weights"] = list(self.penalty_weights)
        return d


def _weights(model) -> np.ndarray:
    return np.asarray(getattr(model, "W", model), dtype=float)


def _scoped(S: np.ndarray, penalize_negated: bool) -> np.ndarray:
    return S if penalize_negated else S[:, : S.shape[1] // 2]


def penalty_long(model, theta: float = 3.0, penalize_negated: bool = True) -> float:
    """Sum over rules of how far the soft rule length exceeds ``theta``."""
    S = _scoped(sigmoid(_weights(model)), penalize_negated)
    return float(np.maximum(S.sum(axis=1) - theta, 0.0).sum())


def penalty_fuzzy(model, penalize_negated: bool = True) -> float:
    S = _scoped(sigmoid(_weights(model)), penalize_negated)
    return float(((1.0 - S) * S).sum())


def _pair_penalty(S: np.ndarray, pairs) -> float:
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    if pairs.size == 0:
        return 0.0
    return float(np.minimum(S[:, pairs[:, 0]], S[:, pairs[:, 1]]).sum())


def penalty_implied(model, pairs) -> float:
    return _pair_penalty(sigmoid(_weights(model)), pairs)


def penalty_exclusive(model, pairs) -> float:
    return _pair_penalty(sigmoid(_weights(model)), pairs)


def alpha_schedule(epoch: int, cfg: LossConfig) -> float:
    if epoch < cfg.alpha_start_epoch:
        return 0.0
    if epoch >= cfg.alpha_end_epoch:
        return float(cfg.alpha_max)
    span = cfg.alpha_end_epoch - cfg.alpha_start_epoch
    return float(cfg.alpha_max) * (epoch - cfg.alpha_start_epoch) / span


def penalties_with_grad(W: np.ndarray, constraints, cfg: LossConfig):
    """All four penalty values and d(weighted penalty sum)/dW.

    Subgradient conventions: the length hinge is flat at equality, and a
    pair at a tie routes its gradient to the first literal of the pair.
    """
    S = sigmoid(W)
    gS = np.zeros_like(S)
    values = {}
    w_long, w_fuzzy, w_impl, w_excl = cfg.penalty_weights
    k = S.shape[1] if cfg.penalize_negated else S.shape[1] // 2

    excess = S[:, :k].sum(axis=1) - cfg.theta
    values["long"] = float(np.maximum(excess, 0.0).sum())
    gS[:, :k] += w_long * (excess > 0)[:, None]

    Sk = S[:, :k]
    values["fuzzy"] = float(((1.0 - Sk) * Sk).sum())
    gS[:, :k] += w_fuzzy * (1.0 - 2.0 * Sk)

    for name, pairs, weight in (
        ("implied", constraints.implication_array() if constraints else None, w_impl),
        ("exclusive", constraints.exclusion_array() if constraints else None, w_excl),
    ):
        if pairs is None or len(pairs) == 0:
            values[name] = 0.0
            continue
        a, b = S[:, pairs[:, 0]], S[:, pairs[:, 1]]
        values[name] = float(np.minimum(a, b).sum())
        first = a <= b
        rows = np.arange(S.shape[0])[:, None]
        np.add.at(gS, (np.broadcast_to(rows, first.shape), np.broadcast_to(pairs[:, 0], first.shape)),
                  weight * first)
        np.add.at(gS, (np.broadcast_to(rows, first.shape), np.broadcast_to(pairs[:, 1], first.shape)),
                  weight * ~first)

    gW = gS * S * (1.0 - S)
    return values, gW


def weighted_penalty_sum(values: dict, cfg: LossConfig) -> float:
    return float(sum(w * values[n] for n, w in zip(PENALTY_NAMES, cfg.penalty_weights)))


def base_loss_with_grad(y_pred: np.ndarray, y_target: np.ndarray, cfg: LossConfig):
    """Base data loss and its gradient with respect to the raw predictions."""
    y_pred = np.asarray(y_pred, dtype=float)
    y_target = np.asarray(y_target, dtype=float)
    if y_pred.shape != y_target.shape:
        raise LossError(f"prediction/target length mismatch: {y_pred.shape} vs {y_target.shape}")
    if not np.all(np.isfinite(y_target)):
        raise LossError("targets must be finite")
    N = max(y_pred.size, 1)
    if cfg.base_loss == "mse":
        diff = y_pred - y_target
        return float(np.mean(diff ** 2)) if y_pred.size else 0.0, 2.0 * diff / N

    scale = cfg.target_scale
    if np.any((y_target < 0) | (y_target > scale)):
        raise LossError(f"bce targets must lie in [0, {scale}]")
    t = y_target / scale
    raw = y_pred / scale
    eps = cfg.clamp_eps
    p = np.clip(raw, eps, 1.0 - eps)
    loss = -(t * np.log(p) + (1.0 - t) * np.log1p(-p))
    dp = (-t / p + (1.0 - t) / (1.0 - p)) / N
    inside = (raw >= eps) & (raw <= 1.0 - eps)
    grad = np.where(inside, dp, 0.0) / scale
    return float(loss.mean()) if y_pred.size else 0.0, grad


def total_loss(y_pred, y_target, model, constraints, alpha: float, cfg: LossConfig) -> float:
    base, _ = base_loss_with_grad(y_pred, y_target, cfg)
    if alpha == 0:
        return base
    values, _ = penalties_with_grad(_weights(model), constraints, cfg)
    return base + alpha * weighted_penalty_sum(values, cfg)
