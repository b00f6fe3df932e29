"""Query-specific evaluation of a circuit and the MMAP training loss.

The query-specific circuit is never materialized: it is the original
circuit evaluated with a role-aware leaf function.  For evidence bits ``e``
and a soft query vector ``qc`` in ``[0,1]^M``:

* positive query leaf ``Q_j``  -> ``qc[j]``
* negated query leaf ``¬Q_j``  -> ``1 - qc[j]``
* evidence literal contradicting ``e`` -> 0
* every other leaf (consistent evidence, hidden) -> 1

The root value is multilinear in ``qc``.  The loss is
``-ln v(e, qc) - alpha * sum_j [qc_j ln qc_j + (1-qc_j) ln(1-qc_j)]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circuit import LINEAR, SIGNED_LOG, evaluate, evaluate_log, leaf_adjoints
from .errors import DimensionMismatch, NonpositiveCircuitValue

ENTROPY_EPS = 1e-12


class QueryRoles:
    """Per-leaf role table for a (circuit, partition) pair.

    Works on batches: evidence bits of shape ``(..., N)`` and soft
    assignments of shape ``(..., M)`` give leaf values ``(n_leaves, ...)``.
    """

    def __init__(self, circuit, partition):
        if partition.n_vars != circuit.n_vars:
            raise DimensionMismatch("partition built for a different circuit")
        self.circuit = circuit
        self.partition = partition
        q_slot = {v: j for j, v in enumerate(partition.query)}
        e_slot = {v: k for k, v in enumerate(partition.evidence)}
        lvar, lneg = circuit.leaf_var, circuit.leaf_negated
        is_q = np.array([v in q_slot for v in lvar], dtype=bool)
        is_e = np.array([v in e_slot for v in lvar], dtype=bool)
        self.q_pos = np.flatnonzero(is_q & ~lneg)
        self.q_neg = np.flatnonzero(is_q & lneg)
        self.q_pos_slot = np.array([q_slot[v] for v in lvar[self.q_pos]], dtype=np.intp)
        self.q_neg_slot = np.array([q_slot[v] for v in lvar[self.q_neg]], dtype=np.intp)
        self.e_pos = np.flatnonzero(is_e & ~lneg)
        self.e_neg = np.flatnonzero(is_e & lneg)
        self.e_pos_slot = np.array([e_slot[v] for v in lvar[self.e_pos]], dtype=np.intp)
        self.e_neg_slot = np.array([e_slot[v] for v in lvar[self.e_neg]], dtype=np.intp)

    @property
    def N(self):
        return self.partition.N

    @property
    def M(self):
        return self.partition.M

    def _check(self, e_bits, qc):
        e_bits = np.asarray(e_bits, dtype=float)
        qc = np.asarray(qc, dtype=float)
        if e_bits.shape[-1:] != (self.N,) or qc.shape[-1:] != (self.M,):
            raise DimensionMismatch(
                f"expected evidence (..., {self.N}) and query (..., {self.M}), "
                f"got {e_bits.shape} and {qc.shape}")
        return e_bits, qc

    def leaf_values(self, e_bits, qc):
        e_bits, qc = self._check(e_bits, qc)
        batch = np.broadcast_shapes(e_bits.shape[:-1], qc.shape[:-1])
        e_t = np.moveaxis(np.broadcast_to(e_bits, batch + (self.N,)), -1, 0)
        q_t = np.moveaxis(np.broadcast_to(qc, batch + (self.M,)), -1, 0)
        lv = np.ones((self.circuit.n_leaves,) + batch)
        lv[self.q_pos] = q_t[self.q_pos_slot]
        lv[self.q_neg] = 1.0 - q_t[self.q_neg_slot]
        lv[self.e_pos] = e_t[self.e_pos_slot]
        lv[self.e_neg] = 1.0 - e_t[self.e_neg_slot]
        return lv

    def derivative_leaf_values(self, e_bits, qc, j):
        """Leaf values whose root value is d v / d qc[j]."""
        lv = self.leaf_values(e_bits, qc)
        lv[self.q_pos[self.q_pos_slot == j]] = 1.0
        lv[self.q_neg[self.q_neg_slot == j]] = -1.0
        return lv

    def value(self, e_bits, qc):
        return evaluate(self.circuit, self.leaf_values(e_bits, qc), LINEAR)

    def loss_and_grad(self, e_bits, qc, alpha):
        """Batched loss and gradient w.r.t. ``qc`` by one reverse sweep.

        Returns ``(total, nll, entropy_term, grad, ok)``; rows whose circuit
        value is not positive have ``ok`` False and NaN loss/gradient.
        """
        e_bits, qc = self._check(e_bits, qc)
        lv = self.leaf_values(e_bits, qc)
        r_sign, r_log, a_sign, a_log = leaf_adjoints(self.circuit, lv)
        ok = r_sign > 0
        with np.errstate(invalid="ignore", over="ignore"):
            ratio = a_sign * np.exp(a_log - np.where(ok, r_log, 0.0))
        batch = qc.shape[:-1]
        dv = np.zeros((self.M,) + batch)
        np.add.at(dv, self.q_pos_slot, ratio[self.q_pos])
        np.subtract.at(dv, self.q_neg_slot, ratio[self.q_neg])
        dv = np.moveaxis(dv, 0, -1)
        qcl = np.clip(qc, ENTROPY_EPS, 1.0 - ENTROPY_EPS)
        ent = np.sum(qcl * np.log(qcl) + (1.0 - qcl) * np.log1p(-qcl), axis=-1)
        nll = np.where(ok, -r_log, np.nan)
        total = nll - alpha * ent
        grad = -dv - alpha * (np.log(qcl) - np.log1p(-qcl))
        grad = np.where(np.expand_dims(ok, -1), grad, np.nan)
        return total, nll, ent, grad, ok


@dataclass(frozen=True)
class QpcContext:
    """A circuit, a partition and one concrete evidence assignment."""

    roles: QueryRoles
    evidence: dict

    @classmethod
    def build(cls, circuit, partition, evidence=None):
        evidence = dict(evidence or {})
        if set(evidence) != set(partition.evidence):
            raise DimensionMismatch("evidence must assign exactly the evidence variables")
        return cls(QueryRoles(circuit, partition), evidence)

    @property
    def circuit(self):
        return self.roles.circuit

    @property
    def partition(self):
        return self.roles.partition

    @property
    def e_bits(self):
        return np.array([self.evidence[v] for v in self.partition.evidence], dtype=float)


@dataclass(frozen=True)
class LossValue:
    total: float
    nll: float
    entropy_term: float
    alpha: float


def _soft(ctx, qc):
    qc = np.asarray(qc, dtype=float)
    if qc.shape != (ctx.roles.M,):
        raise DimensionMismatch(f"soft assignment must have length {ctx.roles.M}")
    return qc


def qpc_leaf_values(ctx, qc):
    return ctx.roles.leaf_values(ctx.e_bits, _soft(ctx, qc))


def qpc_value(ctx, qc):
    return ctx.roles.value(ctx.e_bits, _soft(ctx, qc))


def loss(ctx, qc, alpha=0.0):
    qc = _soft(ctx, qc)
    sign, logv = evaluate_log(ctx.circuit, qpc_leaf_values(ctx, qc))
    if sign <= 0:
        raise NonpositiveCircuitValue("evidence has probability 0 under the circuit")
    qcl = np.clip(qc, ENTROPY_EPS, 1.0 - ENTROPY_EPS)
    ent = float(np.sum(qcl * np.log(qcl) + (1.0 - qcl) * np.log1p(-qcl)))
    return LossValue(total=-logv - alpha * ent, nll=-logv, entropy_term=ent, alpha=alpha)


def grad_single(ctx, qc, j):
    """d v / d qc[j] by one signed-log pass with the j-th literals set to +1/-1."""
    qc = _soft(ctx, qc)
    if not 0 <= j < ctx.roles.M:
        raise IndexError(f"query slot {j} out of range")
    lv = ctx.roles.derivative_leaf_values(ctx.e_bits, qc, j)
    return evaluate(ctx.circuit, lv, SIGNED_LOG)


def grad_loss(ctx, qc, alpha=0.0):
    """Gradient of :func:`loss` w.r.t. ``qc`` via a single reverse sweep."""
    qc = _soft(ctx, qc)
    *_, grad, ok = ctx.roles.loss_and_grad(ctx.e_bits, qc, alpha)
    if not ok:
        raise NonpositiveCircuitValue("evidence has probability 0 under the circuit")
    return grad


def grad_loss_by_substitution(ctx, qc, alpha=0.0):
    """Same gradient assembled from M leaf-substitution passes."""
    qc = _soft(ctx, qc)
    v = qpc_value(ctx, qc)
    if v <= 0:
        raise NonpositiveCircuitValue("evidence has probability 0 under the circuit")
    dv = np.array([grad_single(ctx, qc, j) for j in range(ctx.roles.M)])
    qcl = np.clip(qc, ENTROPY_EPS, 1.0 - ENTROPY_EPS)
    return -dv / v - alpha * (np.log(qcl) - np.log1p(-qcl))
