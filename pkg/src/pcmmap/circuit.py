"""Smooth, decomposable probabilistic circuits over binary variables.

A :class:`Circuit` is an immutable rooted DAG of sum, product and literal
leaf nodes.  Nodes are stored in topological order (children first), so the
internal index of a node doubles as its evaluation position.  Every
value pass works on numpy arrays whose trailing axes are a batch shape, so a
single pass can evaluate many leaf-value settings at once.

Leaf values are passed as an array of shape ``(n_leaves, *batch)`` ordered
like ``Circuit.leaves``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InvalidSpec,
    NumericOverflow,
    ParseError,
    UnknownVariable,
    ValidationError,
)

SUM = "sum"
PRODUCT = "product"
LEAF = "leaf"

WEIGHT_TOL = 1e-9

LINEAR = "linear"
SIGNED_LOG = "signed_log"


@dataclass(frozen=True)
class Node:
    id: int
    kind: str
    children: tuple = ()
    weights: tuple = ()
    var: int = -1
    negated: bool = False


@dataclass
class ValidationReport:
    acyclic: list = field(default_factory=list)
    normalized: list = field(default_factory=list)
    smooth: list = field(default_factory=list)
    decomposable: list = field(default_factory=list)
    other: list = field(default_factory=list)

    PROPERTIES = ("acyclic", "normalized", "smooth", "decomposable")

    @property
    def ok(self):
        return not any(getattr(self, p) for p in self.PROPERTIES) and not self.other

    def failures(self):
        """(property, node id) pairs for every violation found."""
        out = [(p, nid) for p in self.PROPERTIES for nid in getattr(self, p)]
        return out + [("other", msg) for msg in self.other]

    def summary(self):
        parts = []
        for p in self.PROPERTIES:
            bad = getattr(self, p)
            parts.append(f"{p}: ok" if not bad else f"{p}: FAIL at nodes {bad}")
        parts.extend(f"error: {msg}" for msg in self.other)
        return ", ".join(parts)


class Circuit:
    """Immutable probabilistic circuit.

    Build one with :func:`parse_circuit`, :func:`from_document` or
    :func:`random_circuit`; the constructor expects nodes already checked
    for dangling references.
    """

    def __init__(self, variables, nodes, root_id, *, check=True):
        self.variables = tuple(variables)
        self._var_index = {v: i for i, v in enumerate(self.variables)}
        by_id = {n.id: n for n in nodes}
        order = _topological_order(by_id, root_id)
        self.nodes = tuple(by_id[i] for i in order)
        self.index = {n.id: k for k, n in enumerate(self.nodes)}
        self.root = len(self.nodes) - 1
        self.root_id = root_id
        self.topo_order = tuple(range(len(self.nodes)))

        self.children = []
        self.weights = []
        self.log_weights = []
        self.kinds = []
        for n in self.nodes:
            self.kinds.append(n.kind)
            ch = np.array([self.index[c] for c in n.children], dtype=np.intp)
            self.children.append(ch)
            w = np.array(n.weights, dtype=float)
            self.weights.append(w)
            with np.errstate(divide="ignore"):
                self.log_weights.append(np.log(w) if w.size else w)

        self.leaves = np.array(
            [k for k, n in enumerate(self.nodes) if n.kind == LEAF], dtype=np.intp
        )
        self.leaf_var = np.array([self.nodes[k].var for k in self.leaves], dtype=np.intp)
        self.leaf_negated = np.array(
            [self.nodes[k].negated for k in self.leaves], dtype=bool
        )
        self._internal = [
            (k, self.kinds[k], self.children[k], self.weights[k], self.log_weights[k])
            for k in range(len(self.nodes))
            if self.kinds[k] != LEAF
        ]
        self.levels = _level_schedule(self)
        self.scopes = _scopes(self)
        if check:
            report = validate(self)
            if not report.ok:
                prop, nid = report.failures()[0]
                raise ValidationError(f"{prop} violated at node {nid}", node_id=nid)

    @property
    def n_vars(self):
        return len(self.variables)

    @property
    def n_leaves(self):
        return len(self.leaves)

    def __len__(self):
        return len(self.nodes)

    def var_index(self, name):
        try:
            return self._var_index[name]
        except KeyError:
            raise UnknownVariable(f"unknown variable {name!r}") from None

    def counts(self):
        """Number of (sum, product, leaf) nodes."""
        return tuple(self.kinds.count(k) for k in (SUM, PRODUCT, LEAF))

    def scope_vars(self, k):
        mask = self.scopes[k]
        return [v for v in range(self.n_vars) if mask >> v & 1]

    def to_document(self):
        out = []
        for n in self.nodes:
            if n.kind == LEAF:
                out.append({"id": n.id, "kind": LEAF, "var": self.variables[n.var],
                            "negated": bool(n.negated)})
            elif n.kind == SUM:
                out.append({"id": n.id, "kind": SUM, "children": [
                    {"id": c, "weight": float(w)} for c, w in zip(n.children, n.weights)]})
            else:
                out.append({"id": n.id, "kind": PRODUCT, "children": list(n.children)})
        return {"variables": list(self.variables), "nodes": out, "root": self.root_id}

    def to_json(self):
        return json.dumps(self.to_document())

    def digest(self):
        """Short content hash, used to tag generated artifacts."""
        text = json.dumps(self.to_document(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class _Level:
    kind: str
    nodes: np.ndarray
    children: np.ndarray
    weights: np.ndarray
    log_weights: np.ndarray


def _level_schedule(c):
    """Internal nodes grouped by height, with padded child-index matrices.

    Passes allocate two extra slots after the real nodes: ``ZERO`` (value 0)
    pads sum nodes and ``ONE`` (value 1) pads product nodes, so a whole
    level is evaluated with one gather and one reduction.
    """
    n = len(c.nodes)
    zero, one = n, n + 1
    height = np.zeros(n, dtype=np.intp)
    for k, _, ch, _, _ in c._internal:
        height[k] = 1 + height[ch].max()
    levels = []
    for h in range(1, int(height.max(initial=0)) + 1):
        for kind, pad in ((SUM, zero), (PRODUCT, one)):
            ks = [k for k, kd, *_ in c._internal if kd == kind and height[k] == h]
            if not ks:
                continue
            width = max(len(c.children[k]) for k in ks)
            idx = np.full((len(ks), width), pad, dtype=np.intp)
            w = np.zeros((len(ks), width))
            for r, k in enumerate(ks):
                idx[r, :len(c.children[k])] = c.children[k]
                if kind == SUM:
                    w[r, :len(c.children[k])] = c.weights[k]
            with np.errstate(divide="ignore"):
                logw = np.log(w) if kind == SUM else w
            levels.append(_Level(kind, np.array(ks, dtype=np.intp), idx, w, logw))
    return levels


def _topological_order(by_id, root_id):
    if root_id not in by_id:
        raise ValidationError(f"root {root_id} is not a declared node", node_id=root_id)
    # iterative DFS; grey nodes on the stack detect cycles
    state = {}
    order = []
    stack = [(root_id, iter(by_id[root_id].children))]
    state[root_id] = 1
    while stack:
        nid, it = stack[-1]
        for c in it:
            if c not in by_id:
                raise ValidationError(f"node {nid} references missing child {c}", node_id=nid)
            s = state.get(c, 0)
            if s == 1:
                raise ValidationError(f"cycle through node {c}", node_id=c)
            if s == 0:
                state[c] = 1
                stack.append((c, iter(by_id[c].children)))
                break
        else:
            stack.pop()
            state[nid] = 2
            order.append(nid)
    unreachable = sorted(set(by_id) - set(order))
    if unreachable:
        raise ValidationError(f"node {unreachable[0]} unreachable from root",
                              node_id=unreachable[0])
    return order


def _scopes(c):
    scopes = [0] * len(c.nodes)
    for k, n in enumerate(c.nodes):
        if n.kind == LEAF:
            scopes[k] = 1 << n.var
        else:
            m = 0
            for ch in c.children[k]:
                m |= scopes[ch]
            scopes[k] = m
    return scopes


def validate(c):
    """Check normalization, smoothness and decomposability.

    Accepts a :class:`Circuit` or a circuit document (dict or JSON text);
    documents with cycles yield a report whose ``acyclic`` entry fails.
    """
    report = ValidationReport()
    if not isinstance(c, Circuit):
        try:
            c = from_document(c, check=False)
        except ValidationError as exc:
            if "cycle" in str(exc):
                report.acyclic.append(exc.node_id)
            else:
                report.other.append(str(exc))
            return report
    for k, n in enumerate(c.nodes):
        if n.kind == LEAF:
            if n.children:
                report.other.append(f"leaf {n.id} has children")
            continue
        if not n.children:
            report.other.append(f"node {n.id} has no children")
            continue
        if len(set(n.children)) != len(n.children):
            report.other.append(f"node {n.id} lists a child twice")
        ch_scopes = [c.scopes[i] for i in c.children[k]]
        if n.kind == SUM:
            w = c.weights[k]
            if np.any(w <= 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
                report.normalized.append(n.id)
            if any(s != ch_scopes[0] for s in ch_scopes):
                report.smooth.append(n.id)
        else:
            seen = 0
            for s in ch_scopes:
                if seen & s:
                    report.decomposable.append(n.id)
                    break
                seen |= s
    return report


def _require(cond, msg):
    if not cond:
        raise ParseError(msg)


def from_document(doc, *, check=True):
    """Build a circuit from a parsed JSON document (or its text)."""
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc}") from None
    _require(isinstance(doc, dict), "circuit document must be an object")
    for key in ("variables", "nodes", "root"):
        _require(key in doc, f"missing key {key!r}")
    variables = doc["variables"]
    _require(isinstance(variables, list) and all(isinstance(v, str) for v in variables),
             "variables must be a list of names")
    _require(len(set(variables)) == len(variables), "duplicate variable names")
    var_index = {v: i for i, v in enumerate(variables)}

    nodes = []
    seen = set()
    for raw in doc["nodes"]:
        _require(isinstance(raw, dict) and "id" in raw and "kind" in raw,
                 f"malformed node entry {raw!r}")
        nid = raw["id"]
        _require(isinstance(nid, int) and not isinstance(nid, bool), f"node id {nid!r} not int")
        _require(nid not in seen, f"duplicate node id {nid}")
        seen.add(nid)
        kind = raw["kind"]
        if kind == LEAF:
            name = raw.get("var")
            if name not in var_index:
                raise ValidationError(f"leaf {nid} references undeclared variable {name!r}",
                                      node_id=nid)
            negated = raw.get("negated", False)
            _require(isinstance(negated, bool), f"leaf {nid}: negated must be a bool")
            nodes.append(Node(nid, LEAF, var=var_index[name], negated=negated))
        elif kind == SUM:
            ch = raw.get("children")
            _require(isinstance(ch, list) and ch, f"sum {nid} needs children")
            try:
                ids = tuple(int(e["id"]) for e in ch)
                ws = tuple(float(e["weight"]) for e in ch)
            except (KeyError, TypeError, ValueError):
                raise ParseError(f"sum {nid}: children must be {{id, weight}} objects") from None
            nodes.append(Node(nid, SUM, children=ids, weights=ws))
        elif kind == PRODUCT:
            ch = raw.get("children")
            _require(isinstance(ch, list) and ch and all(isinstance(i, int) for i in ch),
                     f"product {nid} needs a list of child ids")
            nodes.append(Node(nid, PRODUCT, children=tuple(ch)))
        else:
            raise ParseError(f"node {nid}: unknown kind {kind!r}")
    return Circuit(variables, nodes, doc["root"], check=check)


def parse_circuit(text):
    return from_document(text)


def load_circuit(path):
    with open(path) as fh:
        return parse_circuit(fh.read())


# ---------------------------------------------------------------- leaf values

def _check_assignment(c, q):
    for v, val in q.items():
        if not (isinstance(v, (int, np.integer)) and 0 <= v < c.n_vars):
            raise UnknownVariable(f"unknown variable index {v!r}")
        if val not in (0, 1):
            raise ValueError(f"variable {c.variables[v]} assigned {val!r}, expected 0/1")


def leaf_values_for_marginal(c, q):
    """0/1 leaf values: inconsistent literals get 0, everything else 1."""
    _check_assignment(c, q)
    lv = np.ones(c.n_leaves)
    for v, val in q.items():
        hit = c.leaf_var == v
        lv[hit & (c.leaf_negated == bool(val))] = 0.0
    return lv


def assignment_from_names(c, named):
    return {c.var_index(k): int(v) for k, v in named.items()}


# ---------------------------------------------------------------- evaluation

def _linear_pass(c, lv):
    n = len(c.nodes)
    vals = np.empty((n + 2,) + lv.shape[1:])
    vals[c.leaves] = lv
    vals[n] = 0.0
    vals[n + 1] = 1.0
    tail = (1,) * (lv.ndim - 1)
    for lev in c.levels:
        ch = vals[lev.children]
        if lev.kind == SUM:
            vals[lev.nodes] = np.sum(ch * lev.weights.reshape(lev.weights.shape + tail), axis=1)
        else:
            vals[lev.nodes] = np.prod(ch, axis=1)
    return vals[:n]


def signed_log_pass(c, lv):
    """Forward pass in sign/log-magnitude form.

    Returns ``(sign, logabs)`` arrays over all nodes; zero values carry
    sign 0 and log-magnitude ``-inf``.
    """
    lv = np.asarray(lv, dtype=float)
    n = len(c.nodes)
    shape = (n + 2,) + lv.shape[1:]
    sign = np.empty(shape)
    logv = np.empty(shape)
    sign[c.leaves] = np.sign(lv)
    sign[n], sign[n + 1] = 0.0, 1.0
    logv[n], logv[n + 1] = -np.inf, 0.0
    tail = (1,) * (lv.ndim - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        logv[c.leaves] = np.log(np.abs(lv))
        for lev in c.levels:
            s_ch, l_ch = sign[lev.children], logv[lev.children]
            if lev.kind == SUM:
                terms = l_ch + lev.log_weights.reshape(lev.log_weights.shape + tail)
                sign[lev.nodes], logv[lev.nodes] = _signed_logsumexp(s_ch, terms, axis=1)
            else:
                s = np.prod(s_ch, axis=1)
                sign[lev.nodes] = s
                logv[lev.nodes] = np.where(s == 0, -np.inf, np.sum(l_ch, axis=1))
    return sign[:n], logv[:n]


def _signed_logsumexp(signs, logs, axis=0):
    m = np.max(np.where(signs != 0, logs, -np.inf), axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    tot = np.sum(signs * np.exp(logs - m_safe), axis=axis)
    return np.sign(tot), np.log(np.abs(tot)) + np.squeeze(m_safe, axis=axis)


def signed_log_add(s1, l1, s2, l2):
    """Elementwise (s1·e^l1) + (s2·e^l2) in sign/log form."""
    with np.errstate(divide="ignore", invalid="ignore"):
        m = np.maximum(np.where(s1 != 0, l1, -np.inf), np.where(s2 != 0, l2, -np.inf))
        m_safe = np.where(np.isfinite(m), m, 0.0)
        tot = s1 * np.exp(l1 - m_safe) + s2 * np.exp(l2 - m_safe)
        return np.sign(tot), np.log(np.abs(tot)) + m_safe


def evaluate(c, lv, mode=LINEAR):
    """Root value for the given leaf values.

    ``mode`` is ``"linear"`` (plain arithmetic) or ``"signed_log"``
    (sign/log-magnitude arithmetic, converted back to a real on return).
    Either raises NumericOverflow when the root is not a finite float.
    """
    lv = np.asarray(lv, dtype=float)
    if lv.shape[:1] != (c.n_leaves,):
        raise ValueError(f"expected {c.n_leaves} leaf values, got shape {lv.shape}")
    if mode == LINEAR:
        with np.errstate(over="ignore", invalid="ignore"):
            root = _linear_pass(c, lv)[c.root]
        if not np.all(np.isfinite(root)):
            raise NumericOverflow("linear evaluation overflowed")
    elif mode == SIGNED_LOG:
        s, lg = signed_log_pass(c, lv)
        with np.errstate(over="ignore"):
            root = s[c.root] * np.exp(lg[c.root])
        if not np.all(np.isfinite(root)):
            raise NumericOverflow("root magnitude exceeds float range; use evaluate_log")
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return float(root) if root.ndim == 0 else root


def evaluate_log(c, lv):
    """``(sign, log|v|)`` of the root in signed-log arithmetic."""
    s, lg = signed_log_pass(c, lv)
    if s.ndim == 1:
        return float(s[c.root]), float(lg[c.root])
    return s[c.root], lg[c.root]


def leaf_adjoints(c, lv):
    """Reverse-mode sweep: derivative of the root w.r.t. every leaf value.

    Returns ``(root_sign, root_log, adj_sign, adj_log)`` where the adjoint
    arrays have shape ``(n_leaves, *batch)``.  Product-node adjoints use
    exclusive prefix/suffix sums of child log-magnitudes, so zero-valued
    siblings never force a division.
    """
    lv = np.asarray(lv, dtype=float)
    sign, logv = signed_log_pass(c, lv)
    tail = (1,) * (lv.ndim - 1)
    a_sign = np.zeros_like(sign)
    a_log = np.full_like(logv, -np.inf)
    a_sign[c.root] = 1.0
    a_log[c.root] = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        for k, kind, ch, _, logw in reversed(c._internal):
            ps, pl = a_sign[k], a_log[k]
            if not np.any(ps):
                continue
            if kind == SUM:
                cs = np.broadcast_to(ps, (len(ch),) + ps.shape)
                cl = pl + logw.reshape((-1,) + tail)
            else:
                s_ch, l_ch = sign[ch], logv[ch]
                zero = np.zeros((1,) + l_ch.shape[1:])
                one = np.ones((1,) + s_ch.shape[1:])
                pre_l = np.concatenate([zero, np.cumsum(l_ch, axis=0)[:-1]])
                suf_l = np.concatenate([np.cumsum(l_ch[::-1], axis=0)[:-1][::-1], zero])
                pre_s = np.concatenate([one, np.cumprod(s_ch, axis=0)[:-1]])
                suf_s = np.concatenate([np.cumprod(s_ch[::-1], axis=0)[:-1][::-1], one])
                cs = ps * pre_s * suf_s
                cl = pl + pre_l + suf_l
            for i, child in enumerate(ch):
                a_sign[child], a_log[child] = signed_log_add(
                    a_sign[child], a_log[child], cs[i], cl[i])
    return sign[c.root], logv[c.root], a_sign[c.leaves], a_log[c.leaves]


def marginal(c, q):
    """Probability of the partial assignment ``q`` (variable index -> 0/1)."""
    return evaluate(c, leaf_values_for_marginal(c, q))


# ---------------------------------------------------------------- generator

def random_circuit(n_vars, depth, fanout, seed, *, reuse=0.3):
    """Random smooth, decomposable, normalized circuit.

    Shape rules: a single-variable scope becomes a sum over the variable's
    two literal leaves; a multi-variable scope at depth 0 becomes a product
    of such univariate sums; otherwise a sum node gets ``fanout`` product
    children, each splitting the scope into ``min(max(fanout, 2), |scope|)``
    random nonempty blocks built at ``depth - 1``.  With probability
    ``reuse`` a block reuses an already built node with the same scope,
    which makes the graph a DAG rather than a tree.  Literal leaves are
    shared.  Deterministic in ``seed``.
    """
    if n_vars < 1 or depth < 0 or fanout < 1:
        raise InvalidSpec(f"bad generator spec n_vars={n_vars} depth={depth} fanout={fanout}")
    rng = np.random.default_rng(seed)
    nodes = []
    literal = {}
    by_scope = {}

    def add(**kw):
        nid = len(nodes)
        nodes.append(Node(nid, **kw))
        return nid

    def leaf(v, neg):
        if (v, neg) not in literal:
            literal[(v, neg)] = add(kind=LEAF, var=v, negated=neg)
        return literal[(v, neg)]

    def weights(k):
        w = rng.dirichlet(np.ones(k)) * 0.9 + 0.1 / k
        w[-1] = 1.0 - w[:-1].sum()
        return tuple(float(x) for x in w)

    def remember(scope, nid):
        by_scope.setdefault(scope, []).append(nid)
        return nid

    def univariate(v):
        kids = (leaf(v, False), leaf(v, True))
        return remember((v,), add(kind=SUM, children=kids, weights=weights(2)))

    def build(scope, d):
        if len(scope) == 1:
            return univariate(scope[0])
        if d == 0:
            kids = tuple(univariate(v) for v in scope)
            return remember(scope, add(kind=PRODUCT, children=kids))
        prods = []
        for _ in range(fanout):
            k = min(max(fanout, 2), len(scope))
            perm = rng.permutation(scope)
            cuts = np.sort(rng.choice(np.arange(1, len(scope)), size=k - 1, replace=False))
            blocks = [tuple(sorted(int(v) for v in b)) for b in np.split(perm, cuts)]
            kids = []
            for b in blocks:
                if b in by_scope and rng.random() < reuse:
                    kids.append(by_scope[b][int(rng.integers(len(by_scope[b])))])
                else:
                    kids.append(build(b, d - 1))
            prods.append(add(kind=PRODUCT, children=tuple(kids)))
        if len(prods) == 1:
            return remember(scope, prods[0])
        return remember(scope, add(kind=SUM, children=tuple(prods), weights=weights(len(prods))))

    root = build(tuple(range(n_vars)), depth)
    names = [f"X{i + 1}" for i in range(n_vars)]
    return Circuit(names, nodes, root)
