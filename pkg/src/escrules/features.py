"""Fuzzy binarization of raw tabular columns.

Every rule in the model is a conjunction over binary features, so raw
columns have to be turned into membership values in [0, 1] first.  Each
raw column is handled by one scheme; the outputs of all schemes are
concatenated into a :class:`FeatureMatrix`.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

SCHEMES = (
    "semantic_categories",
    "fixed_width",
    "quantile",
    "exact_value",
    "cluster",
    "passthrough_binary",
    "one_hot",
)
MISSING_POLICIES = ("indicator", "zero", "error")

DEFAULT_AGE_CATEGORIES = (
    ("child", -math.inf, 18.0),
    ("young adult", 18.0, 40.0),
    ("older adult", 40.0, 65.0),
    ("elderly", 65.0, math.inf),
)


class BinarizationError(ValueError):
    """Raised for invalid binarization configuration or input."""


@dataclass(frozen=True)
class ColumnMeta:
    name: str
    source: str
    scheme: str
    group: str | None = None


@dataclass
class FeatureMatrix:
    """Rows x features matrix of memberships plus per-column metadata."""

    values: np.ndarray
    columns: list[ColumnMeta]
    row_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1, len(self.columns))
        if not self.row_ids:
            self.row_ids = list(range(self.values.shape[0]))
        if len(self.row_ids) != self.values.shape[0]:
            raise BinarizationError("row_ids length does not match row count")
        names = self.names
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise BinarizationError(f"duplicate output column names: {dupes}")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def take(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows, dtype=int)
        return FeatureMatrix(self.values[rows].copy(), list(self.columns),
                             [self.row_ids[i] for i in rows])

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.values, columns=self.names)
        df.insert(0, "row_id", self.row_ids)
        return df

    def meta_json(self) -> str:
        return json.dumps([asdict(c) for c in self.columns], indent=2)


# ---------------------------------------------------------------------------
# membership primitives
# ---------------------------------------------------------------------------

def _below(values: np.ndarray, threshold: float, h: float) -> np.ndarray:
    """Membership of ``v < threshold`` with a linear ramp of half-width h."""
    if h == 0:
        return (values < threshold).astype(float)
    with np.errstate(over="ignore"):  # tiny h: the ramp saturates to a step
        return np.clip((threshold + h - values) / (2.0 * h), 0.0, 1.0)


def _above(values: np.ndarray, threshold: float, h: float) -> np.ndarray:
    if h == 0:
        return (values >= threshold).astype(float)
    with np.errstate(over="ignore"):
        return np.clip((values - (threshold - h)) / (2.0 * h), 0.0, 1.0)


def _fmt(x: float) -> str:
    return f"{x:g}"


def _as_array(values) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(values, dtype=float).ravel()
    missing = ~np.isfinite(arr)
    return arr, missing


def _finite(values) -> np.ndarray:
    arr, missing = _as_array(values)
    return arr[~missing]


# ---------------------------------------------------------------------------
# schemes
# ---------------------------------------------------------------------------

def binarize_fixed_width(values, width: float, max: float, h: float = 0.0,
                         name: str = "") -> tuple[np.ndarray, list[str], list[float]]:
    """Ordered ``< T`` columns for T = width, 2*width, ..., max.

    Returns (memberships, column labels, thresholds).  Missing or non-finite
    values produce rows of zeros; the caller applies the missing policy.
    """
    if not width > 0:
        raise BinarizationError(f"bin width must be > 0, got {width}")
    if max < width:
        raise BinarizationError(f"max ({max}) must be >= width ({width})")
    if h < 0 or h >= width / 2:
        raise BinarizationError(f"ramp half-width must satisfy 0 <= h < width/2, got {h}")
    count = int(math.floor(max / width + 1e-9))
    thresholds = [width * (i + 1) for i in range(count)]
    return _below_columns(values, thresholds, h, name)


def _below_columns(values, thresholds, h, name):
    arr, missing = _as_array(values)
    filled = np.where(missing, 0.0, arr)
    cols = [_below(filled, t, h) for t in thresholds]
    out = np.column_stack(cols) if cols else np.zeros((arr.size, 0))
    out[missing] = 0.0
    prefix = f"{name} " if name else ""
    labels = [f"{prefix}(< {_fmt(t)})" for t in thresholds]
    return out, labels, list(thresholds)


def binarize_semantic_categories(values, categories: Sequence = DEFAULT_AGE_CATEGORIES,
                                 h: float = 2.0, name: str = "") -> tuple[np.ndarray, list[str]]:
    """Trapezoidal membership per named category.

    ``categories`` is an ordered list of (label, lower, upper) with
    ``upper`` of one category equal to ``lower`` of the next.  Neighbouring
    memberships share a linear ramp of total width 2h around each boundary,
    so memberships over all categories sum to one.
    """
    cats = [(str(c[0]), float(c[1]), float(c[2])) for c in categories]
    if not cats:
        raise BinarizationError("at least one category is required")
    if h < 0:
        raise BinarizationError(f"ramp half-width must be >= 0, got {h}")
    for (n0, lo0, hi0), (n1, lo1, hi1) in zip(cats, cats[1:]):
        if hi0 != lo1:
            raise BinarizationError(
                f"categories {n0!r} and {n1!r} are not contiguous ({hi0} != {lo1})")
    for label, lo, hi in cats:
        if not lo < hi:
            raise BinarizationError(f"category {label!r} has empty range [{lo}, {hi})")
        # ramps from both sides may touch but not cross
        if math.isfinite(lo) and math.isfinite(hi) and h > (hi - lo) / 2:
            raise BinarizationError(f"ramp half-width {h} too wide for category {label!r}")

    arr, missing = _as_array(values)
    filled = np.where(missing, 0.0, arr)
    cols = []
    for label, lo, hi in cats:
        rise = _above(filled, lo, h) if math.isfinite(lo) else np.ones_like(filled)
        fall = _below(filled, hi, h) if math.isfinite(hi) else np.ones_like(filled)
        cols.append(np.minimum(rise, fall))
    out = np.column_stack(cols)
    out[missing] = 0.0
    prefix = f"{name} " if name else ""
    labels = [f"{prefix}({label})" for label, _, _ in cats]
    return out, labels


def quantile_thresholds(values, q: int = 4) -> list[float]:
    """Thresholds at the i/q empirical quantiles (linear interpolation)."""
    if q < 2:
        raise BinarizationError(f"quantile count must be >= 2, got {q}")
    data = _finite(values)
    if data.size == 0:
        raise BinarizationError("no finite values to compute quantiles from")
    probs = [i / q for i in range(1, q)]
    raw = np.quantile(data, probs, method="linear")
    thresholds = sorted(set(float(t) for t in raw))
    if np.unique(data).size < q or len(thresholds) < q - 1:
        warnings.warn(
            f"only {np.unique(data).size} distinct values for q={q}; "
            f"collapsed to {len(thresholds)} threshold(s)", stacklevel=2)
    return thresholds


def binarize_quantiles(values, q: int = 4, h: float = 0.0,
                       name: str = "") -> tuple[np.ndarray, list[str], list[float]]:
    if h < 0:
        raise BinarizationError(f"ramp half-width must be >= 0, got {h}")
    thresholds = quantile_thresholds(values, q)
    return _below_columns(values, thresholds, h, name)


def binarize_exact(values, target: float, tol: float = 1e-6) -> np.ndarray:
    if tol < 0:
        raise BinarizationError(f"tolerance must be >= 0, got {tol}")
    arr, missing = _as_array(values)
    out = (np.abs(np.where(missing, np.inf, arr) - target) <= tol).astype(float)
    return out


def kmeans_1d(values, k: int, max_iter: int = 100) -> np.ndarray:
    """Lloyd's algorithm in one dimension with quantile-spaced initial centers.

    Deterministic: ties go to the lowest-index center and empty clusters
    keep their previous center.  Returned centers are sorted ascending.
    """
    data = np.sort(_finite(values))
    distinct = np.unique(data)
    if k < 2:
        raise BinarizationError(f"cluster count must be >= 2, got {k}")
    if distinct.size < k:
        warnings.warn(f"only {distinct.size} distinct values; reducing k from {k}",
                      stacklevel=2)
        k = max(int(distinct.size), 1)
    centers = np.quantile(data, [(i + 0.5) / k for i in range(k)], method="linear")
    if np.unique(centers).size < k:
        # heavy duplication: fall back to evenly spaced distinct values
        centers = distinct[np.linspace(0, distinct.size - 1, k).round().astype(int)].astype(float)
    assign = None
    for _ in range(max_iter):
        new_assign = assign_clusters(data, centers)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = data[assign == c]
            if members.size:
                centers[c] = members.mean()
    return np.sort(centers)


def assign_clusters(values, centers) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    dist = np.abs(values[:, None] - np.asarray(centers)[None, :])
    return np.argmin(dist, axis=1)


def binarize_clusters(values, k: int = 3, seed: int = 0,
                      name: str = "") -> tuple[np.ndarray, list[str], np.ndarray]:
    # the seed is accepted for interface stability; initialisation is deterministic
    del seed
    centers = kmeans_1d(values, k)
    arr, missing = _as_array(values)
    assign = assign_clusters(np.where(missing, 0.0, arr), centers)
    out = np.zeros((arr.size, centers.size))
    out[np.arange(arr.size), assign] = 1.0
    out[missing] = 0.0
    prefix = f"{name} " if name else ""
    labels = [f"{prefix}(cluster-{i} ~{_fmt(round(c, 4))})" for i, c in enumerate(centers)]
    return out, labels, centers


# ---------------------------------------------------------------------------
# whole-table application
# ---------------------------------------------------------------------------

@dataclass
class ColumnSpec:
    scheme: str
    params: dict = field(default_factory=dict)
    missing_policy: str | None = None


@dataclass
class BinarizationSpec:
    columns: dict[str, ColumnSpec]
    missing_policy: str = "indicator"
    seed: int = 0

    @classmethod
    def from_dict(cls, doc: dict) -> "BinarizationSpec":
        cols = {}
        for name, entry in doc.get("columns", {}).items():
            entry = dict(entry)
            scheme = entry.pop("scheme", None)
            if scheme not in SCHEMES:
                raise BinarizationError(f"column {name!r}: unknown scheme {scheme!r}")
            policy = entry.pop("missing_policy", None)
            cols[name] = ColumnSpec(scheme, entry, policy)
        spec = cls(cols, doc.get("missing_policy", "indicator"), int(doc.get("seed", 0)))
        spec.validate()
        return spec

    @classmethod
    def load(cls, path) -> "BinarizationSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        cols = {}
        for name, c in self.columns.items():
            entry = {"scheme": c.scheme, **c.params}
            if c.missing_policy is not None:
                entry["missing_policy"] = c.missing_policy
            cols[name] = entry
        return {"columns": cols, "missing_policy": self.missing_policy, "seed": self.seed}

    def validate(self):
        for name, c in self.columns.items():
            policy = c.missing_policy or self.missing_policy
            if policy not in MISSING_POLICIES:
                raise BinarizationError(f"column {name!r}: unknown missing policy {policy!r}")
            p = c.params
            if c.scheme == "fixed_width":
                if p.get("width", 0) <= 0:
                    raise BinarizationError(f"column {name!r}: bin width must be > 0")
            elif c.scheme == "quantile":
                if p.get("q", 4) < 2:
                    raise BinarizationError(f"column {name!r}: q must be >= 2")
            elif c.scheme == "cluster":
                if p.get("k", 3) < 2:
                    raise BinarizationError(f"column {name!r}: k must be >= 2")
            if p.get("h", 0) < 0:
                raise BinarizationError(f"column {name!r}: ramp half-width must be >= 0")


def _apply_column(name: str, values, cs: ColumnSpec, seed: int):
    p = cs.params
    if cs.scheme == "fixed_width":
        out, labels, _ = binarize_fixed_width(values, p["width"], p["max"], p.get("h", 0.0), name)
        return out, labels, f"{name}:<"
    if cs.scheme == "quantile":
        out, labels, _ = binarize_quantiles(values, p.get("q", 4), p.get("h", 0.0), name)
        return out, labels, f"{name}:<"
    if cs.scheme == "semantic_categories":
        cats = p.get("categories", DEFAULT_AGE_CATEGORIES)
        out, labels = binarize_semantic_categories(values, cats, p.get("h", 2.0), name)
        return out, labels, None
    if cs.scheme == "exact_value":
        target = float(p["target"])
        out = binarize_exact(values, target, p.get("tol", 1e-6))[:, None]
        return out, [p.get("label", f"{name} (= {_fmt(target)})")], None
    if cs.scheme == "cluster":
        out, labels, _ = binarize_clusters(values, p.get("k", 3), seed, name)
        return out, labels, None
    if cs.scheme == "passthrough_binary":
        arr, missing = _as_array(values)
        if np.any((arr[~missing] < 0) | (arr[~missing] > 1)):
            raise BinarizationError(f"column {name!r}: passthrough values must lie in [0, 1]")
        return np.where(missing, 0.0, arr)[:, None], [name], None
    if cs.scheme == "one_hot":
        series = pd.Series(values)
        levels = p.get("levels") or sorted(series.dropna().astype(str).unique())
        out = np.column_stack([(series.astype(str) == lv) & series.notna() for lv in levels]
                              ).astype(float) if levels else np.zeros((len(series), 0))
        return out, [f"{name} = {lv}" for lv in levels], None
    raise BinarizationError(f"column {name!r}: unknown scheme {cs.scheme!r}")


def apply_spec(raw: pd.DataFrame, spec: BinarizationSpec,
               row_ids: Sequence | None = None) -> FeatureMatrix:
    """Binarize every raw column per ``spec`` and concatenate the outputs."""
    unknown = [c for c in spec.columns if c not in raw.columns]
    if unknown:
        raise BinarizationError(f"spec references unknown column(s): {', '.join(map(repr, unknown))}")
    uncovered = [c for c in raw.columns if c not in spec.columns]
    if uncovered:
        raise BinarizationError(f"no binarization scheme for column(s): {', '.join(map(repr, uncovered))}")

    blocks, metas = [], []
    for name, cs in spec.columns.items():
        column = raw[name]
        if cs.scheme == "one_hot":
            missing = column.isna().to_numpy()
            values = column
        else:
            numeric = pd.to_numeric(column, errors="coerce").to_numpy(dtype=float)
            missing = ~np.isfinite(numeric)
            values = numeric
        out, labels, group = _apply_column(name, values, cs, spec.seed)
        blocks.append(out)
        metas.extend(ColumnMeta(label, name, cs.scheme, group) for label in labels)

        if missing.any():
            policy = cs.missing_policy or spec.missing_policy
            if policy == "error":
                rows = np.flatnonzero(missing)[:5].tolist()
                raise BinarizationError(f"column {name!r} has missing values (rows {rows})")
            if policy == "indicator":
                blocks.append(missing.astype(float)[:, None])
                metas.append(ColumnMeta(f"{name} missing", name, "missing_indicator"))
            logger.info("column %r: %d missing value(s)", name, int(missing.sum()))

    values = np.hstack(blocks) if blocks else np.zeros((len(raw), 0))
    ids = list(row_ids) if row_ids is not None else list(range(len(raw)))
    return FeatureMatrix(values, metas, ids)


def ordered_groups(matrix: FeatureMatrix) -> dict[str, list[int]]:
    """Column indices of every ordered ``<x`` group, thresholds ascending."""
    groups: dict[str, list[int]] = {}
    for j, c in enumerate(matrix.columns):
        if c.group:
            groups.setdefault(c.group, []).append(j)
    return groups


# ---------------------------------------------------------------------------
# CSV io
# ---------------------------------------------------------------------------

def read_raw_csv(path, id_column: str | None = "row_id") -> tuple[pd.DataFrame, list]:
    df = pd.read_csv(path, keep_default_na=True, na_values=[""])
    if id_column and id_column in df.columns:
        ids = df.pop(id_column).tolist()
    else:
        ids = list(range(len(df)))
    return df, ids


def write_feature_csv(matrix: FeatureMatrix, path, targets=None, target_name: str = "target"):
    df = matrix.to_frame()
    if targets is not None:
        df[target_name] = np.asarray(targets, dtype=float)
    df.to_csv(path, index=False, float_format="%.10g")
    Path(str(path) + ".meta.json").write_text(matrix.meta_json())


def read_feature_csv(path, target: str | None = "target") -> tuple[FeatureMatrix, np.ndarray | None]:
    df = pd.read_csv(path)
    ids = df.pop("row_id").tolist() if "row_id" in df.columns else list(range(len(df)))
    y = None
    if target and target in df.columns:
        y = df.pop(target).to_numpy(dtype=float)
    meta_path = Path(str(path) + ".meta.json")
    metas = None
    if meta_path.exists():
        metas = [ColumnMeta(**m) for m in json.loads(meta_path.read_text())]
        if [m.name for m in metas] != list(df.columns):
            metas = None
    if metas is None:
        metas = [ColumnMeta(c, c, "passthrough_binary") for c in df.columns]
    values = df.to_numpy(dtype=float)
    if np.any(~np.isfinite(values)) or np.any((values < 0) | (values > 1)):
        raise BinarizationError(f"{path}: feature values must be finite memberships in [0, 1]")
    return FeatureMatrix(values, metas, ids), y
