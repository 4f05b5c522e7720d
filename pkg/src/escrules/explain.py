"""Readable rule listings and per-prediction explanations."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit as sigmoid

from .model import RuleModel, rule_fits


@dataclass(frozen=True)
class RenderedLiteral:
    label: str
    weight: float
    negated: bool

    def text(self) -> str:
        prefix = "not " if self.negated else ""
        return f'{prefix}"{self.label}"[{format_weight(self.weight)}]'


@dataclass(frozen=True)
class RenderedRule:
    index: int
    literals: tuple[RenderedLiteral, ...]
    rule_weight: float

    @property
    def direction(self) -> str:
        return "raise" if self.rule_weight > 0 else "lower"

    def condition(self) -> str:
        if not self.literals:
            return "(always)"
        return " & ".join(lit.text() for lit in self.literals)


@dataclass
class AppliedRule:
    rule: RenderedRule
    fit: float
    contribution: float


@dataclass
class Explanation:
    applied: list[AppliedRule]
    offset: float
    remainder: float
    remainder_rules: int
    total: float = field(init=False)

    def __post_init__(self):
        self.total = self.offset + sum(a.contribution for a in self.applied) + self.remainder

    def to_dict(self) -> dict:
        return {
            "prediction": self.total,
            "offset": self.offset,
            "remainder": self.remainder,
            "remainder_rules": self.remainder_rules,
            "rules": [{"index": a.rule.index,
                       "condition": a.rule.condition(),
                       "literals": [{"feature": lit.label, "negated": lit.negated, "weight": lit.weight}
                                    for lit in a.rule.literals],
                       "rule_weight": a.rule.rule_weight,
                       "fit": a.fit,
                       "contribution": a.contribution} for a in self.applied],
        }


def format_weight(s: float) -> str:
    # four decimals with trailing zeros dropped: 1.0, 0.3893, 0.7504
    return repr(round(float(s), 4))


def extract_rules(model: RuleModel, display_threshold: float = 0.25) -> list[RenderedRule]:
    """One rendered rule per model rule, in model order."""
    if not 0 < display_threshold < 1:
        raise ValueError("display_threshold must lie in (0, 1)")
    S = sigmoid(model.W)
    n = model.n
    rules = []
    for i in range(model.m):
        lits = tuple(
            RenderedLiteral(model.feature_names[j % n], float(S[i, j]), j >= n)
            for j in np.flatnonzero(S[i] >= display_threshold)
        )
        rules.append(RenderedRule(i, lits, float(model.r[i])))
    return rules


def rule_base_text(model: RuleModel, display_threshold: float = 0.25) -> str:
    """The full rule base, largest absolute rule weight first."""
    rules = sorted(extract_rules(model, display_threshold), key=lambda r: (-abs(r.rule_weight), r.index))
    lines = [f"{r.condition()}\n  => {r.direction} outcome by {abs(r.rule_weight):.4f}" for r in rules]
    lines.append(f"offset: {model.b:.4f}")
    return "\n\n".join(lines) + "\n"


def explain_prediction(model: RuleModel, x, display_threshold: float = 0.25,
                       contribution_threshold: float = 0.01) -> Explanation:
    """Explain the prediction for one feature row ``x`` (length n)."""
    if contribution_threshold < 0:
        raise ValueError("contribution_threshold must be >= 0")
    x = np.asarray(x, dtype=float).reshape(1, -1)
    fits = rule_fits(model, x)[0]
    contrib = fits * model.r
    rendered = extract_rules(model, display_threshold)
    shown = np.flatnonzero(np.abs(contrib) >= contribution_threshold)
    order = shown[np.lexsort((shown, -np.abs(contrib[shown])))]
    hidden = np.setdiff1d(np.arange(model.m), shown)
    applied = [AppliedRule(rendered[i], float(fits[i]), float(contrib[i])) for i in order]
    return Explanation(applied, model.b, float(contrib[hidden].sum()), int(hidden.size))


def explain_literals(model: RuleModel, lits, **kw) -> Explanation:
    """Same as :func:`explain_prediction` but from a literal vector of length 2n."""
    lits = np.asarray(lits, dtype=float)
    return explain_prediction(model, lits[: model.n], **kw)


def render_text(explanation: Explanation) -> str:
    blocks = []
    for a in explanation.applied:
        blocks.append(f"{a.rule.condition()}\n"
                      f"  => {a.rule.direction} predicted outcome by {abs(a.contribution):.4f} (fit: {a.fit:.4f})")
    blocks.append(f"offset {explanation.offset:.4f}; {explanation.remainder_rules} further rule(s) "
                  f"contribute {explanation.remainder:+.4f}; prediction {explanation.total:.4f}")
    return "\n\n".join(blocks) + "\n"
