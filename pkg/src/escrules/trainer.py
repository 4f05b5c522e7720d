"""Initialisation, Adam and the early-stopping training loop."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .features import FeatureMatrix
from .loss import PENALTY_NAMES, LossConfig, alpha_schedule
from .model import RuleModel, loss_value, model_gradients

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    m_rules: int = 100
    seed: int = 0
    learning_rate: float = 0.1
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    min_epochs: int = 300
    max_epochs: int = 1200
    patience: int = 10
    batch_size: int | None = None  # None: full batch
    split_ratios: tuple = (0.7, 0.15, 0.15)
    singleton_weight: float = 6.0
    ridge_lambda: float = 1e-3
    aggregator: str = "min"
    freeze_offset: bool = False
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        self.betas = tuple(self.betas)
        self.split_ratios = tuple(self.split_ratios)
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.min_epochs > self.max_epochs:
            raise ValueError("min_epochs must not exceed max_epochs")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        _check_ratios(self.split_ratios)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss"] = self.loss.to_dict()
        d["betas"] = list(self.betas)
        d["split_ratios"] = list(self.split_ratios)
        return d


@dataclass
class Dataset:
    features: FeatureMatrix
    targets: np.ndarray

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=float).ravel()
        if self.features.shape[0] != self.targets.size:
            raise ValueError(f"{self.features.shape[0]} feature rows but {self.targets.size} targets")

    def __len__(self):
        return self.targets.size

    @property
    def X(self) -> np.ndarray:
        return self.features.values

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        return Dataset(self.features.take(rows), self.targets[rows])


def _check_ratios(ratios):
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not np.isclose(sum(ratios), 1.0):
        raise ValueError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")


def split_indices(n_rows: int, ratios=(0.7, 0.15, 0.15), seed: int = 0):
    _check_ratios(ratios)
    order = np.random.default_rng(seed).permutation(n_rows)
    n_train = int(round(n_rows * ratios[0]))
    n_val = int(round(n_rows * ratios[1]))
    parts = order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]
    for name, part in zip(("train", "validation", "test"), parts):
        if part.size == 0:
            raise ValueError(f"{name} split would be empty ({n_rows} rows, ratios {ratios})")
    return parts


def split(dataset: Dataset, ratios=(0.7, 0.15, 0.15), seed: int = 0):
    return tuple(dataset.take(p) for p in split_indices(len(dataset), ratios, seed))


def fit_linear(X, y, ridge_lambda: float = 1e-3) -> tuple[np.ndarray, float]:
    """Ridge regression with an unpenalised intercept (via centering)."""
    X = np.asarray(getattr(X, "values", X), dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] < 1 or X.shape[0] != y.size:
        raise ValueError("need at least one row and matching targets")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite values in regression input")
    x_mean, y_mean = X.mean(axis=0), y.mean()
    Xc = X - x_mean
    A = Xc.T @ Xc + ridge_lambda * np.eye(X.shape[1])
    try:
        beta = np.linalg.solve(A, Xc.T @ (y - y_mean))
    except np.linalg.LinAlgError:
        beta = np.linalg.lstsq(A, Xc.T @ (y - y_mean), rcond=None)[0]
    return beta, float(y_mean - x_mean @ beta)


def init_model(train: Dataset, cfg: TrainConfig) -> RuleModel:
    """Singleton rules from a linear fit, the remaining rules drawn at random."""
    n = train.features.shape[1]
    m = cfg.m_rules
    if m < n:
        raise ValueError(f"m_rules={m} is smaller than the feature count; use at least {n}")
    beta, intercept = fit_linear(train.X, train.targets, cfg.ridge_lambda)
    c = cfg.singleton_weight
    W = np.full((m, 2 * n), -c)
    W[np.arange(n), np.arange(n)] = c
    r = np.zeros(m)
    r[:n] = beta
    rng = np.random.default_rng(cfg.seed)
    W[n:] = rng.uniform(-1.0, 1.0, size=(m - n, 2 * n))
    r[n:] = rng.uniform(-10.0, 10.0, size=m - n)
    b = 0.0 if cfg.freeze_offset else intercept
    return RuleModel(W, r, b, list(train.features.names), cfg.aggregator)


class Adam:
    """Adam over a dict of numpy arrays, updated in place."""

    def __init__(self, lr=1e-2, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def adam_step(params: dict, grads: dict, state: Adam | None = None, lr=1e-2,
              betas=(0.9, 0.999), eps=1e-8):
    """Functional wrapper: copies ``params``, advances ``state`` one step."""
    state = state or Adam(lr, betas, eps)
    new = {k: np.array(v, dtype=float, copy=True) for k, v in params.items()}
    state.step(new, grads)
    return new, state


HISTORY_FIELDS = ("epoch", "train_loss", "val_loss") + tuple(f"lambda_{p}" for p in PENALTY_NAMES) + ("alpha",)


@dataclass
class TrainingHistory:
    rows: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    stopped_epoch: int = -1
    stop_reason: str = ""

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS, lineterminator="\n")
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: (repr(float(v)) if k != "epoch" else v) for k, v in row.items()})

    @classmethod
    def from_csv(cls, path) -> "TrainingHistory":
        with open(path, newline="") as fh:
            rows = [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()}
                    for row in csv.DictReader(fh)]
        return cls(rows)


def _params(model: RuleModel) -> dict:
    return {"W": model.W, "r": model.r, "b": np.array([model.b])}


def train(dataset: Dataset | tuple, cfg: TrainConfig, constraints=None,
          init: RuleModel | None = None):
    """Train a rule model with early stopping on the validation loss.

    ``dataset`` is either a full :class:`Dataset` (split with ``cfg``) or a
    ``(train, validation)`` pair.  Validation losses are only compared while
    the penalty scale alpha stays constant, so parameters from before the
    penalty fade-in completes are never returned over later ones.
    """
    if isinstance(dataset, Dataset):
        train_set, val_set, _ = split(dataset, cfg.split_ratios, cfg.seed)
    else:
        train_set, val_set = dataset[0], dataset[1]
    model = init.copy() if init is not None else init_model(train_set, cfg)
    lcfg = cfg.loss
    opt = Adam(cfg.learning_rate, cfg.betas, cfg.eps)
    rng = np.random.default_rng(cfg.seed + 1)
    history = TrainingHistory()
    best_loss, best_model, best_alpha = np.inf, model.copy(), None
    # never stop while the penalties are still fading in
    min_epochs = min(max(cfg.min_epochs, lcfg.alpha_end_epoch + 1), cfg.max_epochs)

    for epoch in range(cfg.max_epochs):
        alpha = alpha_schedule(epoch, lcfg)
        if cfg.batch_size is None:
            batches = [np.arange(len(train_set))]
        else:
            perm = rng.permutation(len(train_set))
            batches = [perm[i:i + cfg.batch_size] for i in range(0, perm.size, cfg.batch_size)]
        train_losses = []
        for rows in batches:
            grads = model_gradients(model, train_set.X[rows], train_set.targets[rows], lcfg,
                                    constraints, alpha)
            train_losses.append(grads.loss)
            g_b = 0.0 if cfg.freeze_offset else grads.b
            params = _params(model)
            opt.step(params, {"W": grads.W, "r": grads.r, "b": np.array([g_b])})
            model.b = float(params["b"][0])
        train_loss = float(np.mean(train_losses))

        val_loss, pen = loss_value(model, val_set.X, val_set.targets, lcfg, constraints, alpha)
        if not (np.isfinite(val_loss) and np.isfinite(train_loss)):
            raise TrainingError(f"training diverged at epoch {epoch}")
        history.rows.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
                             **{f"lambda_{p}": pen[p] for p in PENALTY_NAMES}, "alpha": alpha})

        if alpha != best_alpha or val_loss < best_loss:
            best_loss, best_model, best_alpha = val_loss, model.copy(), alpha
            history.best_epoch = epoch
        if epoch + 1 >= min_epochs and epoch - history.best_epoch >= cfg.patience:
            history.stop_reason = "early_stopping"
            break
    else:
        history.stop_reason = "max_epochs"
    history.stopped_epoch = history.rows[-1]["epoch"]
    logger.info("stopped at epoch %d (%s), best epoch %d, val loss %.6g",
                history.stopped_epoch, history.stop_reason, history.best_epoch, best_loss)
    return best_model, history
