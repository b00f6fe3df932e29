"""Top-down ancestral sampling and evidence datasets for self-supervised training."""

from __future__ import annotations

import csv
import io
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .circuit import LEAF, SUM
from .errors import ConflictingLeafAssignment, InvalidSpec

# Samples are drawn in fixed-size chunks, chunk i using the i-th child of
# SeedSequence(seed).  A dataset is therefore the same whether chunks run
# serially or on a pool.
CHUNK = 4096


def sample_full(c, rng):
    """One complete assignment {variable index: 0/1} by top-down descent."""
    x = {}
    stack = [c.root]
    while stack:
        k = stack.pop()
        kind = c.kinds[k]
        if kind == LEAF:
            node = c.nodes[k]
            if node.var in x:
                raise ConflictingLeafAssignment(
                    f"variable {c.variables[node.var]} reached twice (node {node.id})")
            x[node.var] = 0 if node.negated else 1
        elif kind == SUM:
            w = c.weights[k]
            stack.append(c.children[k][min(np.searchsorted(np.cumsum(w), rng.random(), side="right"),
                                           len(w) - 1)])
        else:
            stack.extend(c.children[k])
    return x


def sample_batch(c, n, rng):
    """``n`` complete assignments as an (n, n_vars) int8 array.

    Vectorized descent: every node carries a mask of the samples that
    reach it; a sum node routes each reaching sample to one child.
    """
    reach = np.zeros((len(c.nodes), n), dtype=bool)
    reach[c.root] = True
    x = np.full((n, c.n_vars), -1, dtype=np.int8)
    for k in reversed(c.topo_order):
        r = reach[k]
        kind = c.kinds[k]
        if kind == LEAF:
            node = c.nodes[k]
            if np.any(x[r, node.var] >= 0):
                raise ConflictingLeafAssignment(
                    f"variable {c.variables[node.var]} reached twice (node {node.id})")
            x[r, node.var] = 0 if node.negated else 1
        elif kind == SUM:
            cw = np.cumsum(c.weights[k])
            pick = np.minimum(np.searchsorted(cw, rng.random(n), side="right"), len(cw) - 1)
            for i, ch in enumerate(c.children[k]):
                reach[ch] |= r & (pick == i)
        else:
            for ch in c.children[k]:
                reach[ch] |= r
    if np.any(x < 0):
        raise ConflictingLeafAssignment("a sample left some variable unassigned")
    return x


def sample_assignments(c, n, seed):
    """``n`` samples drawn chunk by chunk from per-chunk substreams."""
    if n < 1:
        raise InvalidSpec(f"need at least one sample, got n={n}")
    n_chunks = -(-n // CHUNK)
    streams = np.random.SeedSequence(seed).spawn(n_chunks)
    parts = []
    for i, ss in enumerate(streams):
        size = min(CHUNK, n - i * CHUNK)
        parts.append(sample_batch(c, size, np.random.default_rng(ss)))
    return np.concatenate(parts)


@dataclass(frozen=True)
class EvidenceDataset:
    variables: tuple
    rows: np.ndarray
    provenance: dict

    def __len__(self):
        return len(self.rows)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n", quoting=csv.QUOTE_NONE)
        w.writerow(self.variables)
        w.writerows(self.rows.tolist())
        return buf.getvalue()

    def save(self, path):
        write_atomic(path, self.to_csv())

    def subset(self, idx):
        return EvidenceDataset(self.variables, self.rows[idx], self.provenance)


def generate_dataset(c, part, n, seed):
    """``n`` full samples projected onto the evidence variables (declared order)."""
    x = sample_assignments(c, n, seed)
    rows = x[:, list(part.evidence)].astype(np.int8)
    names = tuple(c.variables[v] for v in part.evidence)
    return EvidenceDataset(names, rows, {"circuit": c.digest(), "seed": seed, "n": n})


def read_dataset(path_or_text, *, text=False):
    content = path_or_text if text else open(path_or_text).read()
    lines = [ln for ln in content.split("\n") if ln]
    if not lines:
        raise InvalidSpec("empty dataset")
    header = tuple(lines[0].split(",")) if lines[0] else ()
    rows = [[int(v) for v in ln.split(",")] for ln in lines[1:]]
    arr = np.array(rows, dtype=np.int8).reshape(len(rows), len(header))
    if np.any((arr != 0) & (arr != 1)):
        raise InvalidSpec("dataset entries must be 0/1")
    return EvidenceDataset(header, arr, {"source": "csv"})


def write_atomic(path, content):
    """Write text to ``path`` through a temp file in the same directory."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
