"""Lightweight ontology handling: subsumption, disjointness, feature bindings.

The ontology file is a small JSON document::

    {
      "classes": ["Somatic", {"id": "PharmacologicalSupport", "label": "..."}],
      "subclass_of": [["PharmacologicalSupport", "Somatic"]],
      "disjoint": [["Bupropion", "NotPill"]],
      "bindings": {"pharmacological support": "PharmacologicalSupport"}
    }

Only transitive subsumption and stated disjointness are used.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import networkx as nx
import numpy as np

from .features import FeatureMatrix

logger = logging.getLogger(__name__)


class OntologyError(ValueError):
    pass


@dataclass(frozen=True)
class OntologyDoc:
    classes: dict[str, str]
    subclass_axioms: tuple[tuple[str, str], ...]
    disjoint_axioms: tuple[tuple[str, str], ...]
    bindings: dict[str, str] = field(default_factory=dict)

    def graph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(self.classes)
        g.add_edges_from(self.subclass_axioms)
        return g


@dataclass(frozen=True)
class ConstraintSet:
    """Literal-level constraint pairs for ``n`` features.

    Literal j < n is feature j, literal j >= n is the negation of feature j - n.
    Implications are ordered (j, j'); exclusions are stored sorted.
    """

    n: int
    implications: frozenset = frozenset()
    exclusions: frozenset = frozenset()

    def __post_init__(self):
        for a, b in set(self.implications) | set(self.exclusions):
            if not (0 <= a < 2 * self.n and 0 <= b < 2 * self.n):
                raise OntologyError(f"literal pair ({a}, {b}) out of range for n={self.n}")

    @classmethod
    def contradictions_only(cls, n: int) -> "ConstraintSet":
        return cls(n, frozenset(), frozenset((j, j + n) for j in range(n)))

    def with_exclusions(self, pairs: Iterable[tuple[int, int]]) -> "ConstraintSet":
        extra = {tuple(sorted((int(a), int(b)))) for a, b in pairs}
        return ConstraintSet(self.n, self.implications, self.exclusions | extra)

    def implication_array(self) -> np.ndarray:
        return _pair_array(self.implications)

    def exclusion_array(self) -> np.ndarray:
        return _pair_array(self.exclusions)


def _pair_array(pairs) -> np.ndarray:
    if not pairs:
        return np.zeros((0, 2), dtype=int)
    return np.array(sorted(pairs), dtype=int)


def parse_ontology(document: dict) -> OntologyDoc:
    """Validate a decoded ontology document and build an :class:`OntologyDoc`."""
    classes: dict[str, str] = {}
    for entry in document.get("classes", []):
        if isinstance(entry, dict):
            cid = str(entry["id"])
            classes[cid] = str(entry.get("label", cid))
        else:
            classes[str(entry)] = str(entry)
    # axioms may introduce classes that were not listed explicitly
    subs = [(str(c), str(p)) for c, p in document.get("subclass_of", [])]
    disj = [(str(a), str(b)) for a, b in document.get("disjoint", [])]
    for a, b in subs + disj:
        classes.setdefault(a, a)
        classes.setdefault(b, b)

    bindings = {str(k): str(v) for k, v in document.get("bindings", {}).items()}
    for column, cls in bindings.items():
        if cls not in classes:
            raise OntologyError(f"binding {column!r} refers to unknown class {cls!r}")

    doc = OntologyDoc(classes, tuple(subs), tuple(disj), bindings)
    g = doc.graph()
    try:
        cycle = nx.find_cycle(g)
    except nx.NetworkXNoCycle:
        cycle = None
    if cycle:
        path = " -> ".join([cycle[0][0]] + [e[1] for e in cycle])
        raise OntologyError(f"subsumption cycle: {path}")
    for a, b in disj:
        if a == b:
            raise OntologyError(f"class {a!r} declared disjoint with itself")
        if nx.has_path(g, a, b) or nx.has_path(g, b, a):
            raise OntologyError(f"classes {a!r} and {b!r} are disjoint but one subsumes the other")
    return doc


def load_ontology(path) -> OntologyDoc:
    return parse_ontology(json.loads(Path(path).read_text()))


def implication_closure(doc: OntologyDoc, transitive: bool = True) -> set[tuple[str, str]]:
    """All (child, ancestor) pairs, without reflexive pairs."""
    if not transitive:
        return {(c, p) for c, p in doc.subclass_axioms if c != p}
    g = doc.graph()
    return {(c, a) for c in g.nodes for a in nx.descendants(g, c)}


def _columns_by_class(doc: OntologyDoc, names: Sequence[str]) -> dict[str, list[int]]:
    index = {name: j for j, name in enumerate(names)}
    out: dict[str, list[int]] = {}
    for column, cls in doc.bindings.items():
        if column in index:
            out.setdefault(cls, []).append(index[column])
    return out


def precomplete(matrix: FeatureMatrix, doc: OntologyDoc, transitive: bool = True) -> FeatureMatrix:
    """Raise every bound parent feature to at least the membership of its children."""
    missing = [c for c in doc.bindings if c not in matrix.names]
    if missing:
        raise OntologyError(f"bound column(s) absent from feature matrix: {missing}")
    cols = _columns_by_class(doc, matrix.names)
    values = matrix.values.copy()
    for child, parent in sorted(implication_closure(doc, transitive)):
        for jc in cols.get(child, ()):
            for jp in cols.get(parent, ()):
                np.maximum(values[:, jp], matrix.values[:, jc], out=values[:, jp])
    return FeatureMatrix(values, list(matrix.columns), list(matrix.row_ids))


def literal_pairs(doc: OntologyDoc, names: Sequence[str], contrapositive: bool = False,
                  transitive: bool = True) -> ConstraintSet:
    """Compile the ontology into literal-index constraint pairs for these columns."""
    names = list(names)
    n = len(names)
    unbound = [c for c in doc.bindings if c not in names]
    if unbound:
        logger.warning("skipping %d binding(s) to absent column(s): %s", len(unbound), unbound)
    cols = _columns_by_class(doc, names)

    implications = set()
    exclusions = {(j, j + n) for j in range(n)}
    for child, parent in implication_closure(doc, transitive):
        for jc in cols.get(child, ()):
            for jp in cols.get(parent, ()):
                if jc == jp:
                    continue
                implications.add((jc, jp))
                if contrapositive:
                    exclusions.add(tuple(sorted((jc, jp + n))))
    for a, b in doc.disjoint_axioms:
        for ja in cols.get(a, ()):
            for jb in cols.get(b, ()):
                if ja != jb:
                    exclusions.add(tuple(sorted((ja, jb))))
    return ConstraintSet(n, frozenset(implications), frozenset(exclusions))
