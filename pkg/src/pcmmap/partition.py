"""Evidence / query / hidden split of a circuit's variables."""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import InvalidPartition, UnknownVariable


@dataclass(frozen=True)
class VariablePartition:
    """Disjoint variable-index tuples covering every circuit variable.

    Order matters: ``evidence`` fixes the network input layout and the
    dataset column order, ``query`` fixes the output slot of each query
    variable.
    """

    evidence: tuple
    query: tuple
    hidden: tuple
    n_vars: int

    def __post_init__(self):
        sets = [set(self.evidence), set(self.query), set(self.hidden)]
        total = len(self.evidence) + len(self.query) + len(self.hidden)
        union = sets[0] | sets[1] | sets[2]
        if len(union) != total:
            raise InvalidPartition("evidence, query and hidden sets overlap")
        if union != set(range(self.n_vars)):
            missing = sorted(set(range(self.n_vars)) - union)
            extra = sorted(union - set(range(self.n_vars)))
            raise InvalidPartition(f"partition does not cover variables: missing {missing} extra {extra}")
        if not self.query:
            raise InvalidPartition("query set is empty")

    @property
    def N(self):
        return len(self.evidence)

    @property
    def M(self):
        return len(self.query)

    @property
    def K(self):
        return len(self.hidden)

    @classmethod
    def from_names(cls, circuit, evidence=(), query=(), hidden=()):
        try:
            idx = [tuple(circuit.var_index(v) for v in group) for group in (evidence, query, hidden)]
        except UnknownVariable as exc:
            raise InvalidPartition(str(exc)) from None
        return cls(*idx, n_vars=circuit.n_vars)

    @classmethod
    def from_document(cls, circuit, doc):
        if isinstance(doc, str):
            doc = json.loads(doc)
        unknown = set(doc) - {"evidence", "query", "hidden"}
        if unknown:
            raise InvalidPartition(f"unexpected partition keys {sorted(unknown)}")
        return cls.from_names(circuit, doc.get("evidence", []), doc.get("query", []),
                              doc.get("hidden", []))

    def to_document(self, circuit):
        name = circuit.variables
        return {"evidence": [name[v] for v in self.evidence],
                "query": [name[v] for v in self.query],
                "hidden": [name[v] for v in self.hidden]}


def load_partition(circuit, path):
    with open(path) as fh:
        return VariablePartition.from_document(circuit, json.load(fh))
