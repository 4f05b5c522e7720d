"""Error summaries, the ridge baseline, planted-rule data and recovery scoring."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import expit as sigmoid

from .features import ColumnMeta, FeatureMatrix
from .model import RuleModel, predict_batch, rule_fits
from .trainer import Dataset, fit_linear

TRUTH_WEIGHT = 20.0


@dataclass
class ErrorSummary:
    label: str
    errors: np.ndarray
    row_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.errors = np.asarray(self.errors, dtype=float)
        if not self.row_ids:
            self.row_ids = list(range(self.errors.size))

    @property
    def stats(self) -> dict:
        q1, median, q3 = np.quantile(self.errors, [0.25, 0.5, 0.75])
        return {"n": int(self.errors.size), "mean": float(self.errors.mean()),
                "median": float(median), "q1": float(q1), "q3": float(q3),
                "max": float(self.errors.max())}

    @property
    def mean(self) -> float:
        return float(self.errors.mean())


def absolute_errors(predictions, targets, label: str = "model", row_ids=None) -> ErrorSummary:
    p = np.asarray(predictions, dtype=float).ravel()
    t = np.asarray(targets, dtype=float).ravel()
    if p.size != t.size:
        raise ValueError(f"{p.size} predictions but {t.size} targets")
    if p.size == 0:
        raise ValueError("cannot summarise an empty error vector")
    return ErrorSummary(label, np.abs(p - t), list(row_ids) if row_ids is not None else [])


def ridge_baseline(train: Dataset, test: Dataset, ridge_lambda: float = 1e-3,
                   label: str = "ridge") -> ErrorSummary:
    beta, intercept = fit_linear(train.X, train.targets, ridge_lambda)
    return absolute_errors(test.X @ beta + intercept, test.targets, label, test.features.row_ids)


@dataclass
class EvalReport:
    entries: list[ErrorSummary] = field(default_factory=list)
    rule_counts: dict = field(default_factory=dict)

    def add(self, entry: ErrorSummary):
        self.entries.append(entry)

    def to_dict(self) -> dict:
        return {"models": {e.label: e.stats for e in self.entries},
                "rule_counts": self.rule_counts}

    def records(self) -> pd.DataFrame:
        """Flat (model, row_id, abs_error) records for plotting."""
        frames = [pd.DataFrame({"model": e.label, "row_id": e.row_ids, "abs_error": e.errors})
                  for e in self.entries]
        return pd.concat(frames, ignore_index=True) if frames else \
            pd.DataFrame(columns=["model", "row_id", "abs_error"])

    def write(self, json_path, csv_path):
        Path(json_path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        self.records().to_csv(csv_path, index=False, float_format="%.10g")


@dataclass
class SyntheticSpec:
    n_features: int = 20
    n_rows: int = 2000
    # each rule: (list of signed literal indices in [0, 2n), weight)
    planted_rules: list = field(default_factory=list)
    noise_std: float = 0.5
    offset: float = 50.0
    activation_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.planted_rules = [(sorted(int(j) for j in lits), float(w)) for lits, w in self.planted_rules]
        if not 0 < self.activation_prob < 1:
            raise ValueError("activation probability must lie in (0, 1)")
        for lits, _ in self.planted_rules:
            if any(not 0 <= j < 2 * self.n_features for j in lits):
                raise ValueError(f"planted literal index out of range in {lits}")

    @classmethod
    def random(cls, seed: int, n_features: int = 20, n_rules: int = 5, lengths=(2, 3),
               weight_range=(2.0, 6.0), negation_prob: float = 0.0, **kw) -> "SyntheticSpec":
        """Rules over disjoint features with random lengths and weight signs.

        With ``negation_prob > 0`` literals are negated at random; note that
        such rules have equivalent rewrites (A and not B == A - A and B) that
        literal-set recovery scoring does not credit.
        """
        rng = np.random.default_rng(seed)
        sizes = rng.choice(lengths, size=n_rules)
        if sizes.sum() > n_features:
            raise ValueError("not enough features for disjoint planted rules")
        feats = rng.permutation(n_features)
        rules, pos = [], 0
        for size in sizes:
            chosen = feats[pos:pos + size]
            pos += size
            negate = rng.random(size) < negation_prob
            lits = [int(f + n_features * neg) for f, neg in zip(chosen, negate)]
            w = rng.uniform(*weight_range) * rng.choice([-1.0, 1.0])
            rules.append((lits, float(w)))
        return cls(n_features=n_features, planted_rules=rules, seed=seed, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


def truth_model(spec: SyntheticSpec) -> RuleModel:
    n = spec.n_features
    m = max(len(spec.planted_rules), 1)
    W = np.full((m, 2 * n), -TRUTH_WEIGHT)
    r = np.zeros(m)
    for i, (lits, w) in enumerate(spec.planted_rules):
        W[i, lits] = TRUTH_WEIGHT
        r[i] = w
    return RuleModel(W, r, spec.offset, [f"f{j}" for j in range(n)])


def generate_synthetic(spec: SyntheticSpec) -> tuple[Dataset, RuleModel]:
    rng = np.random.default_rng(spec.seed)
    n = spec.n_features
    X = (rng.random((spec.n_rows, n)) < spec.activation_prob).astype(float)
    L = np.hstack([X, 1.0 - X])
    y = np.full(spec.n_rows, spec.offset)
    for lits, w in spec.planted_rules:
        y += w * L[:, lits].min(axis=1) if lits else w
    y += rng.normal(0.0, spec.noise_std, size=spec.n_rows)
    cols = [ColumnMeta(f"f{j}", f"f{j}", "passthrough_binary") for j in range(n)]
    return Dataset(FeatureMatrix(X, cols), y), truth_model(spec)


def crisp_literal_sets(model: RuleModel, crisp_threshold: float = 0.5) -> list[frozenset]:
    S = sigmoid(model.W)
    return [frozenset(np.flatnonzero(row >= crisp_threshold).tolist()) for row in S]


def jaccard(a: frozenset, b: frozenset) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def rule_recovery_score(trained: RuleModel, truth: RuleModel, crisp_threshold: float = 0.5,
                        truth_rules: int | None = None) -> float:
    """Mean Jaccard similarity of each planted rule to its greedily matched trained rule."""
    if trained.n != truth.n:
        raise ValueError("trained and truth models have different feature counts")
    planted = crisp_literal_sets(truth, crisp_threshold)[:truth_rules]
    candidates = crisp_literal_sets(trained, crisp_threshold)
    used: set[int] = set()
    scores = []
    for target in planted:
        best, best_i = 0.0, None
        for i, lits in enumerate(candidates):
            if i in used:
                continue
            s = jaccard(target, lits)
            if s > best:
                best, best_i = s, i
        if best_i is not None:
            used.add(best_i)
        scores.append(best)
    return float(np.mean(scores)) if scores else 1.0


def active_rule_count(model: RuleModel, X, contribution_threshold: float = 0.01) -> dict:
    contrib = np.abs(rule_fits(model, X) * model.r[None, :])
    active = contrib >= contribution_threshold
    per_row = active.sum(axis=1)
    return {"mean": float(per_row.mean()) if per_row.size else 0.0,
            "max": int(per_row.max()) if per_row.size else 0,
            "ever_active": int(active.any(axis=0).sum())}


def model_errors(model: RuleModel, test: Dataset, label: str = "esc-rules") -> ErrorSummary:
    return absolute_errors(predict_batch(model, test.X), test.targets, label, test.features.row_ids)


def exclusion_overlap(model: RuleModel, pairs) -> float:
    """Sum over rules and pairs of min(sigmoid(w), sigmoid(w'))."""
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    S = sigmoid(model.W)
    return float(np.minimum(S[:, pairs[:, 0]], S[:, pairs[:, 1]]).sum())
