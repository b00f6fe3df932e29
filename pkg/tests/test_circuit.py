import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pcmmap.circuit import (
    LINEAR,
    SIGNED_LOG,
    evaluate,
    evaluate_log,
    from_document,
    leaf_values_for_marginal,
    leaf_adjoints,
    marginal,
    parse_circuit,
    random_circuit,
    validate,
)
from pcmmap.errors import NumericOverflow, ParseError, UnknownVariable, ValidationError

from oracles import doc_marginal

# joint probabilities over (X3, X4) computed by tests/oracles.py enumeration
FIG1_JOINTS = {(1, 1): 0.1402, (1, 0): 0.0778, (0, 1): 0.4798, (0, 0): 0.3022}


def _leaf(i, var, neg=False):
    return {"id": i, "kind": "leaf", "var": var, "negated": neg}


def test_single_leaf_circuit():
    c = parse_circuit(json.dumps({"variables": ["X1"], "nodes": [_leaf(5, "X1")], "root": 5}))
    assert len(c) == 1
    assert marginal(c, {0: 1}) == 1.0
    assert marginal(c, {0: 0}) == 0.0


def test_fig1_node_counts(fig1):
    assert fig1.counts() == (7, 5, 13)
    assert fig1.variables == ("X1", "X2", "X3", "X4")


def test_unnormalized_sum_names_node():
    doc = {"variables": ["X"], "root": 9,
           "nodes": [_leaf(1, "X"), _leaf(2, "X", True),
                     {"id": 9, "kind": "sum", "children": [{"id": 1, "weight": 0.5},
                                                           {"id": 2, "weight": 0.6}]}]}
    with pytest.raises(ValidationError) as exc:
        parse_circuit(json.dumps(doc))
    assert exc.value.node_id == 9
    assert "9" in str(exc.value)


@pytest.mark.parametrize("text", ["not json", "[]", '{"variables": ["X"], "nodes": []}',
                                  '{"variables": ["X"], "root": 0, "nodes": [{"id": 0, "kind": "max"}]}'])
def test_malformed_documents(text):
    with pytest.raises(ParseError):
        parse_circuit(text)


def test_dangling_variable():
    doc = {"variables": ["X"], "root": 0, "nodes": [_leaf(0, "Y")]}
    with pytest.raises(ValidationError):
        from_document(doc)


def test_cycle_is_rejected_and_reported():
    doc = {"variables": ["X"], "root": 0, "nodes": [
        {"id": 0, "kind": "product", "children": [1]},
        {"id": 1, "kind": "product", "children": [0]}]}
    with pytest.raises(ValidationError):
        from_document(doc)
    report = validate(doc)
    assert report.acyclic and not report.ok


def test_validate_fig1(fig1):
    report = validate(fig1)
    assert report.ok
    assert "smooth: ok" in report.summary() and "decomposable: ok" in report.summary()


def test_decomposability_violation():
    doc = {"variables": ["X3"], "root": 0, "nodes": [
        {"id": 0, "kind": "product", "children": [1, 2]}, _leaf(1, "X3"), _leaf(2, "X3", True)]}
    report = validate(doc)
    assert report.decomposable == [0]
    assert not report.smooth


def test_smoothness_violation():
    doc = {"variables": ["X3", "X4"], "root": 0, "nodes": [
        {"id": 0, "kind": "sum", "children": [{"id": 1, "weight": 0.5}, {"id": 2, "weight": 0.5}]},
        _leaf(1, "X3"), _leaf(2, "X4")]}
    report = validate(doc)
    assert report.smooth == [0]
    with pytest.raises(ValidationError):
        from_document(doc)


def test_leaf_function_for_query(fig1):
    lv = leaf_values_for_marginal(fig1, {2: 1, 3: 0})
    for k, leaf in enumerate(fig1.leaves):
        node = fig1.nodes[leaf]
        zero = (node.var == 2 and node.negated) or (node.var == 3 and not node.negated)
        assert lv[k] == (0.0 if zero else 1.0)


def test_leaf_function_edge_cases(fig1):
    assert np.all(leaf_values_for_marginal(fig1, {}) == 1.0)
    lv = leaf_values_for_marginal(fig1, {0: 1, 1: 0, 2: 1, 3: 1})
    for v in range(4):
        pos = lv[(fig1.leaf_var == v) & ~fig1.leaf_negated]
        neg = lv[(fig1.leaf_var == v) & fig1.leaf_negated]
        assert set(pos) | set(neg) == {0.0, 1.0} or len(pos) + len(neg) == 1
        assert len(set(pos)) == 1 and len(set(neg)) == 1 and pos[0] + neg[0] == 1.0
    with pytest.raises(UnknownVariable):
        leaf_values_for_marginal(fig1, {7: 1})


def test_fig1_values(fig1):
    assert abs(marginal(fig1, {2: 1, 3: 0}) - 0.0778) < 1e-12
    assert abs(marginal(fig1, {}) - 1.0) < 1e-12
    assert abs(marginal(fig1, {0: 1}) - 0.3) < 1e-12


def test_fig1_total_probability(fig1):
    total = sum(marginal(fig1, {2: a, 3: b}) for a, b in itertools.product((0, 1), repeat=2))
    assert abs(total - 1.0) < 1e-9
    for (a, b), p in FIG1_JOINTS.items():
        assert marginal(fig1, {2: a, 3: b}) == pytest.approx(p, abs=1e-12)


def test_evaluate_qpc_leaves_fig1_soft_query(fig1):
    lv = np.ones(fig1.n_leaves)
    table = {(2, False): 0.99, (2, True): 0.01, (3, False): 0.05, (3, True): 0.95}
    for k in range(fig1.n_leaves):
        lv[k] = table.get((int(fig1.leaf_var[k]), bool(fig1.leaf_negated[k])), 1.0)
    assert abs(evaluate(fig1, lv) - 0.0832216) < 1e-12
    assert abs(evaluate(fig1, lv, SIGNED_LOG) - 0.0832216) < 1e-12


def test_signed_log_handles_negative_leaves(fig1):
    rng = np.random.default_rng(3)
    lv = rng.uniform(-1.0, 1.0, size=fig1.n_leaves)
    assert evaluate(fig1, lv, SIGNED_LOG) == pytest.approx(evaluate(fig1, lv, LINEAR), rel=1e-12)


def test_linear_overflow_raises(fig1):
    with pytest.raises(NumericOverflow):
        evaluate(fig1, np.full(fig1.n_leaves, 1e200))
    sign, log = evaluate_log(fig1, np.full(fig1.n_leaves, 1e200))
    assert sign == 1.0 and np.isfinite(log) and log > 700


def test_batch_evaluation_matches_single(fig1):
    rows = [leaf_values_for_marginal(fig1, {2: a, 3: b})
            for a, b in itertools.product((0, 1), repeat=2)]
    batch = evaluate(fig1, np.stack(rows, axis=1))
    assert np.allclose(batch, [evaluate(fig1, r) for r in rows], rtol=1e-15, atol=0)


def test_topo_order_respects_edges(fig1):
    for k in fig1.topo_order:
        assert all(ch < k for ch in fig1.children[k])


def test_random_circuit_smallest_shape():
    c = random_circuit(1, 1, 1, seed=0)
    assert len(c) == 3
    assert c.counts() == (1, 0, 2)


def test_random_circuit_deterministic():
    a = random_circuit(4, 2, 2, seed=7)
    b = random_circuit(4, 2, 2, seed=7)
    assert a.to_json() == b.to_json()
    assert random_circuit(4, 2, 2, seed=8).to_json() != a.to_json()


def test_round_trip_document(fig1):
    again = from_document(fig1.to_json())
    assert again.to_document() == fig1.to_document()


def test_leaf_adjoints_match_finite_differences(fig1):
    rng = np.random.default_rng(0)
    lv = rng.uniform(0.1, 0.9, size=fig1.n_leaves)
    _, _, s, lg = leaf_adjoints(fig1, lv)
    adj = s * np.exp(lg)
    h = 1e-6
    for k in range(fig1.n_leaves):
        up, dn = lv.copy(), lv.copy()
        up[k] += h
        dn[k] -= h
        fd = (evaluate(fig1, up) - evaluate(fig1, dn)) / (2 * h)
        assert adj[k] == pytest.approx(fd, rel=1e-6, abs=1e-10)


def test_leaf_adjoints_with_zero_siblings(fig1):
    # leaf X1 = 0 zeroes the left product; its sibling subtree still has a nonzero adjoint
    lv = leaf_values_for_marginal(fig1, {0: 0})
    _, _, s, lg = leaf_adjoints(fig1, lv)
    adj = s * np.exp(lg)
    x1 = int(np.flatnonzero((fig1.leaf_var == 0) & ~fig1.leaf_negated)[0])
    assert adj[x1] == pytest.approx(0.3 * 1.0, abs=1e-12)


circuit_specs = st.tuples(st.integers(1, 6), st.integers(0, 3), st.integers(1, 3),
                          st.integers(0, 10_000))


@settings(max_examples=40, deadline=None)
@given(circuit_specs)
def test_generated_circuits_are_valid_and_normalized(shape):
    c = random_circuit(*shape)
    assert validate(c).ok
    assert abs(evaluate(c, np.ones(c.n_leaves)) - 1.0) < 1e-9
    assert abs(evaluate(c, np.ones(c.n_leaves), SIGNED_LOG) - 1.0) < 1e-9


@settings(max_examples=30, deadline=None)
@given(circuit_specs, st.data())
def test_marginal_equals_sum_over_completions(shape, data):
    c = random_circuit(*shape)
    doc = c.to_document()
    bits = data.draw(st.lists(st.sampled_from([None, 0, 1]), min_size=c.n_vars, max_size=c.n_vars))
    q = {v: b for v, b in enumerate(bits) if b is not None}
    named = {c.variables[v]: b for v, b in q.items()}
    assert abs(marginal(c, q) - doc_marginal(doc, named)) < 1e-9


@settings(max_examples=30, deadline=None)
@given(circuit_specs, st.integers(0, 2**31))
def test_signed_log_agrees_with_linear(shape, seed):
    c = random_circuit(*shape)
    lv = np.random.default_rng(seed).uniform(-1, 1, size=c.n_leaves)
    lin = evaluate(c, lv, LINEAR)
    slog = evaluate(c, lv, SIGNED_LOG)
    assert slog == pytest.approx(lin, rel=1e-9, abs=1e-15)
