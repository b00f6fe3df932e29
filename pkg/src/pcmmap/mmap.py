"""MMAP problems, scoring, the exhaustive oracle and polytime baselines."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .circuit import (
    LEAF,
    SUM,
    evaluate,
    evaluate_log,
    leaf_adjoints,
    leaf_values_for_marginal,
)
from .errors import (
    InvalidPartition,
    ValidationError,
    OverlappingAssignments,
    QueryTooLarge,
    ZeroEvidenceProbability,
)
from .partition import VariablePartition

NEG_INF = -math.inf
BRUTE_FORCE_MAX_M = 20
_CHUNK = 1 << 12


@dataclass(frozen=True)
class MmapProblem:
    circuit: object
    partition: VariablePartition
    evidence: dict

    def __post_init__(self):
        if set(self.evidence) != set(self.partition.evidence):
            raise InvalidPartition("evidence must assign exactly the evidence variables")

    @property
    def query(self):
        return self.partition.query

    @property
    def e_bits(self):
        return np.array([self.evidence[v] for v in self.partition.evidence], dtype=float)

    @classmethod
    def from_document(cls, doc, circuit):
        part = VariablePartition.from_document(circuit, doc["partition"])
        ev = {circuit.var_index(k): int(v) for k, v in doc.get("evidence", {}).items()}
        return cls(circuit, part, ev)


@dataclass
class MmapSolution:
    q: dict
    log_score: float
    method: str
    elapsed: float = 0.0
    trace: list = field(default=None, repr=False)

    def to_document(self, circuit):
        return {"q": {circuit.variables[v]: int(b) for v, b in sorted(self.q.items())},
                "log_score": self.log_score if math.isfinite(self.log_score) else "-inf",
                "method": self.method,
                "elapsed": self.elapsed}


def score(c, e, q):
    """ln p(e, q); ``NEG_INF`` when the joint has probability zero."""
    if set(e) & set(q):
        raise OverlappingAssignments(f"variables {sorted(set(e) & set(q))} in both e and q")
    sign, logv = evaluate_log(c, leaf_values_for_marginal(c, {**e, **q}))
    return logv if sign > 0 else NEG_INF


def _batch_leaf_values(c, e, query, bits):
    """Leaf values for many query assignments at once; ``bits`` is (B, M)."""
    lv = np.repeat(leaf_values_for_marginal(c, e)[:, None], len(bits), axis=1)
    for j, v in enumerate(query):
        col = bits[:, j].astype(bool)
        pos = np.flatnonzero((c.leaf_var == v) & ~c.leaf_negated)
        neg = np.flatnonzero((c.leaf_var == v) & c.leaf_negated)
        lv[pos] = np.where(col, 1.0, 0.0)
        lv[neg] = np.where(col, 0.0, 1.0)
    return lv


def batch_scores(c, e, query, bits):
    """Log scores for each row of ``bits`` over ``query`` (one signed-log pass)."""
    bits = np.atleast_2d(np.asarray(bits))
    sign, logv = evaluate_log(c, _batch_leaf_values(c, e, query, bits))
    return np.where(np.asarray(sign) > 0, logv, NEG_INF)


def _solution(p, q, method, t0, trace=None):
    return MmapSolution(q=dict(q), log_score=score(p.circuit, p.evidence, q), method=method,
                        elapsed=time.perf_counter() - t0, trace=trace)


def brute_force_mmap(p):
    """Exhaustive search over all 2^M query assignments.

    Ties go to the lexicographically smallest bit string with query
    variables ordered by index.
    """
    t0 = time.perf_counter()
    query = sorted(p.query)
    M = len(query)
    if M > BRUTE_FORCE_MAX_M:
        raise QueryTooLarge(f"brute force limited to {BRUTE_FORCE_MAX_M} query variables, got {M}")
    best, best_code = NEG_INF, 0
    shifts = np.arange(M - 1, -1, -1)
    for start in range(0, 1 << M, _CHUNK):
        codes = np.arange(start, min(start + _CHUNK, 1 << M))
        bits = (codes[:, None] >> shifts) & 1
        s = batch_scores(p.circuit, p.evidence, query, bits)
        k = int(np.argmax(s))
        if s[k] > best:
            best, best_code = s[k], int(codes[k])
    q = {v: (best_code >> (M - 1 - j)) & 1 for j, v in enumerate(query)}
    return _solution(p, q, "bruteforce", t0)


def max_approx(p):
    """Max-product upward pass then a top-down argmax selection.

    Sum nodes become max nodes over weighted child values; query and hidden
    leaves are set to 1.  Ties at a max node go to the child with the
    lowest node id.
    """
    t0 = time.perf_counter()
    c = p.circuit
    lv = leaf_values_for_marginal(c, p.evidence)
    with np.errstate(divide="ignore"):
        logv = np.empty(len(c.nodes))
        logv[c.leaves] = np.log(lv)
        choice = {}
        for k, kind, ch, _, logw in c._internal:
            if kind == SUM:
                cand = logw + logv[ch]
                top = cand.max()
                winners = [i for i in range(len(ch)) if cand[i] == top]
                pick = min(winners, key=lambda i: c.nodes[ch[i]].id)
                choice[k] = ch[pick]
                logv[k] = top
            else:
                logv[k] = logv[ch].sum()
    q = {}
    stack = [c.root]
    while stack:
        k = stack.pop()
        kind = c.kinds[k]
        if kind == LEAF:
            node = c.nodes[k]
            if node.var in p.query:
                q[node.var] = 0 if node.negated else 1
        elif kind == SUM:
            stack.append(choice[k])
        else:
            stack.extend(c.children[k])
    missing = set(p.query) - set(q)
    if missing:
        raise ValidationError(f"max selection reached no leaf for variables {sorted(missing)}")
    return _solution(p, q, "max", t0)


def all_marginals(c, e, targets, *, fast=False):
    """p(V=1 | e) for each target variable.

    The reference path evaluates p(e) and p(V=1, e) directly; ``fast=True``
    reads every p(V=1, e) off one reverse sweep instead.
    """
    pe = evaluate(c, leaf_values_for_marginal(c, e))
    if pe <= 0:
        raise ZeroEvidenceProbability("p(e) = 0")
    targets = list(targets)
    if not fast:
        return {v: marginal_joint(c, e, v) / pe for v in targets}
    _, _, a_sign, a_log = leaf_adjoints(c, leaf_values_for_marginal(c, e))
    adj = a_sign * np.exp(a_log)
    out = {}
    for v in targets:
        if v in e:
            out[v] = float(e[v])
            continue
        pos = (c.leaf_var == v) & ~c.leaf_negated
        out[v] = float(adj[pos].sum()) / pe
    return out


def marginal_joint(c, e, v):
    if v in e:
        return evaluate(c, leaf_values_for_marginal(c, e)) if e[v] == 1 else 0.0
    return evaluate(c, leaf_values_for_marginal(c, {**e, v: 1}))


def ml_approx(p):
    """Set each query variable to its conditional-marginal argmax (0.5 -> 0)."""
    t0 = time.perf_counter()
    marg = all_marginals(p.circuit, p.evidence, p.query)
    q = {v: int(marg[v] > 0.5) for v in p.query}
    return _solution(p, q, "ml", t0)


def seq_approx(p):
    """Greedy sequential conditioning.

    Each step fixes the (variable, value) pair with the largest
    p(q_j | e, y); ties go to the lower variable index, then value 0.
    """
    t0 = time.perf_counter()
    c = p.circuit
    pe = evaluate(c, leaf_values_for_marginal(c, p.evidence))
    if pe <= 0:
        raise ZeroEvidenceProbability("p(e) = 0")
    y = {}
    remaining = sorted(p.query)
    while remaining:
        base = {**p.evidence, **y}
        p_base = evaluate(c, leaf_values_for_marginal(c, base))
        cands = [(v, b) for v in remaining for b in (0, 1)]
        lv = np.stack([leaf_values_for_marginal(c, {**base, v: b}) for v, b in cands], axis=1)
        cond = evaluate(c, lv) / p_base
        k = int(np.argmax(cond))
        v, b = cands[k]
        y[v] = b
        remaining.remove(v)
    return _solution(p, y, "seq", t0)


def hill_climb(p, init, iters=100, seed=0, method="hillclimb"):
    """Stochastic hill climbing over single-bit flips of the query.

    Each round scores all M flips and moves to the best strictly improving
    one (ties to the lowest slot); on a plateau it flips a uniformly random
    bit instead.  The best assignment ever visited is returned, and
    ``trace`` holds the best-ever score after every round.
    """
    t0 = time.perf_counter()
    if set(init) != set(p.query):
        raise InvalidPartition("hill-climb init must assign exactly the query variables")
    rng = np.random.default_rng(seed)
    query = list(p.query)
    M = len(query)
    cur = np.array([init[v] for v in query], dtype=np.int8)
    cur_s = float(batch_scores(p.circuit, p.evidence, query, cur[None])[0])
    best, best_s = cur.copy(), cur_s
    trace = [best_s]
    flips = np.eye(M, dtype=np.int8)
    for _ in range(iters):
        nbrs = cur[None, :] ^ flips
        s = batch_scores(p.circuit, p.evidence, query, nbrs)
        k = int(np.argmax(s))
        if s[k] > cur_s:
            cur, cur_s = nbrs[k], float(s[k])
        else:
            k = int(rng.integers(M))
            cur, cur_s = nbrs[k], float(s[k])
        if cur_s > best_s:
            best, best_s = cur.copy(), cur_s
        trace.append(best_s)
    q = {v: int(b) for v, b in zip(query, best)}
    return _solution(p, q, method, t0, trace=trace)


def random_assignment(query, rng):
    return {v: int(b) for v, b in zip(query, rng.integers(0, 2, size=len(query)))}


SOLVERS = {
    "bruteforce": brute_force_mmap,
    "max": max_approx,
    "ml": ml_approx,
    "seq": seq_approx,
}


def solution_json(sol, circuit):
    return json.dumps(sol.to_document(circuit), indent=2)
