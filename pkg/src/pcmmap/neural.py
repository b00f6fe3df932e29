"""Feed-forward MMAP approximator trained by the query-specific circuit loss.

The network maps the 0/1 evidence vector (declared evidence order) to one
sigmoid output per query variable.  Everything is plain numpy: forward,
backward, Adam and the training loops.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatch, InvalidSpec, StaleCache
from .mmap import MmapSolution, score
from .qpc import QueryRoles
from .circuit import evaluate_log

TRAIN = "train"
EVAL = "eval"

ALPHA_GRID = (0.01, 0.1, 1.0, 10.0, 100.0, 1000.0)


class MlpModel:
    def __init__(self, dims, weights, biases, dropout=0.0, meta=None):
        self.dims = tuple(int(d) for d in dims)
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        self.dropout = float(dropout)
        self.meta = dict(meta or {})
        self.version = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.dims[i], self.dims[i + 1]) or b.shape != (self.dims[i + 1],):
                raise InvalidSpec(f"layer {i} shapes {w.shape}/{b.shape} do not chain {self.dims}")

    @property
    def n_inputs(self):
        return self.dims[0]

    @property
    def n_outputs(self):
        return self.dims[-1]

    def params(self):
        return [p for wb in zip(self.weights, self.biases) for p in wb]

    def copy(self):
        m = MlpModel(self.dims, [w.copy() for w in self.weights],
                     [b.copy() for b in self.biases], self.dropout, self.meta)
        return m

    def to_document(self):
        return {"dims": list(self.dims),
                "layers": [{"w": w.tolist(), "b": b.tolist()}
                           for w, b in zip(self.weights, self.biases)],
                "dropout": self.dropout,
                "meta": self.meta}

    @classmethod
    def from_document(cls, doc):
        if isinstance(doc, str):
            doc = json.loads(doc)
        layers = doc["layers"]
        return cls(doc["dims"], [np.array(l["w"], dtype=float).reshape(-1, len(l["b"]))
                                 for l in layers],
                   [l["b"] for l in layers], doc.get("dropout", 0.0), doc.get("meta"))


def init_model(dims, seed, dropout=0.0):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
    dims = [int(d) for d in dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise InvalidSpec(f"invalid layer dims {dims}")
    if not 0.0 <= dropout < 1.0:
        raise InvalidSpec(f"dropout must be in [0, 1), got {dropout}")
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        ws.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        bs.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpModel(dims, ws, bs, dropout, {"seed": seed})


def _sigmoid(z):
    # split form never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class ForwardCache:
    version: int
    inputs: list
    pre: list
    masks: list
    output: np.ndarray
    squeeze: bool


def forward(m, e_bits, mode=EVAL, rng=None):
    """Outputs in (0, 1)^M and the cache needed by :func:`backward`.

    Dropout (inverted, so eval needs no rescaling) is applied to hidden
    activations in train mode only.
    """
    x = np.asarray(e_bits, dtype=float)
    squeeze = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != m.n_inputs:
        raise DimensionMismatch(f"model expects {m.n_inputs} inputs, got {x.shape[1]}")
    drop = m.dropout if mode == TRAIN else 0.0
    if drop > 0 and rng is None:
        raise ValueError("train-mode dropout needs an rng")
    inputs, pre, masks = [], [], []
    h = x
    last = len(m.weights) - 1
    for i, (w, b) in enumerate(zip(m.weights, m.biases)):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        if i == last:
            break
        h = np.maximum(z, 0.0)
        if drop > 0:
            mask = (rng.random(h.shape) >= drop) / (1.0 - drop)
            h = h * mask
        else:
            mask = None
        masks.append(mask)
    out = _sigmoid(pre[-1])
    cache = ForwardCache(m.version, inputs, pre, masks, out, squeeze)
    return (out[0] if squeeze else out), cache


def backward(m, cache, dL_dq):
    """Parameter gradients ``[(dW, db), ...]`` for upstream gradient ``dL_dq``."""
    if cache.version != m.version:
        raise StaleCache("model was updated after this forward pass")
    g = np.asarray(dL_dq, dtype=float)
    g = np.atleast_2d(g) if cache.squeeze else g
    if g.shape != cache.output.shape:
        raise DimensionMismatch(f"upstream gradient shape {g.shape} != {cache.output.shape}")
    q = cache.output
    dz = g * q * (1.0 - q)
    grads = [None] * len(m.weights)
    for i in range(len(m.weights) - 1, -1, -1):
        grads[i] = (cache.inputs[i].T @ dz, dz.sum(axis=0))
        if i == 0:
            break
        dh = dz @ m.weights[i].T
        if cache.masks[i - 1] is not None:
            dh = dh * cache.masks[i - 1]
        dz = dh * (cache.pre[i - 1] > 0)
    return grads


@dataclass
class TrainConfig:
    alpha: float = 1.0
    learning_rate: float = 1e-3
    lr_decay: float = 0.9
    decay_interval: int = 10
    epochs: int = 50
    batch_size: int = 128
    dropout_rate: float = 0.1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    hidden: tuple = (64, 64)

    def __post_init__(self):
        if self.alpha < 0:
            raise InvalidSpec("alpha must be >= 0")
        for name in ("learning_rate", "lr_decay", "decay_interval", "batch_size"):
            if getattr(self, name) <= 0:
                raise InvalidSpec(f"{name} must be positive")
        if self.epochs < 0:
            raise InvalidSpec("epochs must be >= 0")

    def lr_at(self, epoch):
        return self.learning_rate * self.lr_decay ** (epoch // self.decay_interval)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros(cls, model):
        return cls([np.zeros_like(p) for p in model.params()],
                   [np.zeros_like(p) for p in model.params()])


def adam_step(model, grads, state, cfg, lr=None):
    """One bias-corrected Adam update, in place; returns ``(model, state)``."""
    flat = [g for wb in grads for g in wb]
    params = model.params()
    if len(flat) != len(params) or any(g.shape != p.shape for g, p in zip(flat, params)):
        raise DimensionMismatch("gradient shapes do not match the model")
    lr = cfg.learning_rate if lr is None else lr
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m1, m2 in zip(params, flat, state.m, state.v):
        m1 *= b1
        m1 += (1.0 - b1) * g
        m2 *= b2
        m2 += (1.0 - b2) * g * g
        p -= lr * (m1 / c1) / (np.sqrt(m2 / c2) + cfg.adam_eps)
    model.version += 1
    return model, state


@dataclass
class TrainHistory:
    loss: list = field(default_factory=list)
    nll: list = field(default_factory=list)
    entropy: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    val_ll: list = field(default_factory=list)
    n_processed: list = field(default_factory=list)
    n_skipped: list = field(default_factory=list)
    lr: list = field(default_factory=list)


def _model_for(part, cfg):
    dims = [part.N, *cfg.hidden, part.M]
    return init_model(dims, cfg.seed, cfg.dropout_rate)


def _grad_norm(grads):
    return float(math.sqrt(sum(float(np.sum(g * g)) for wb in grads for g in wb)))


def rounded_log_scores(roles, e_rows, q_soft):
    """ln p(e_i, [q_i > 0.5]) for each row; ``-inf`` for impossible pairs."""
    bits = (np.asarray(q_soft) > 0.5).astype(float)
    sign, logv = evaluate_log(roles.circuit, roles.leaf_values(e_rows, bits))
    return np.where(np.asarray(sign) > 0, logv, -np.inf)


def _mean_ll(scores):
    return float(np.mean(scores)) if len(scores) else float("nan")


def _run_epochs(model, rows, n_in, cfg, batch_objective, val=None):
    """Shared minibatch/Adam loop.

    ``rows`` holds the network inputs in its first ``n_in`` columns (extra
    columns, e.g. labels, travel with them).  ``batch_objective(rows, q)``
    returns ``(dL_dq, loss_sum, nll_sum, entropy_sum, n_ok)``.
    """
    rng = np.random.default_rng(cfg.seed + 1)
    state = AdamState.zeros(model)
    hist = TrainHistory()
    n = len(rows)
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(n)
        sums = np.zeros(3)
        n_ok = 0
        norms = []
        for start in range(0, n, cfg.batch_size):
            batch = rows[order[start:start + cfg.batch_size]].astype(float)
            q, cache = forward(model, batch[:, :n_in], TRAIN, rng)
            dq, l_sum, nll_sum, ent_sum, ok = batch_objective(batch, q)
            if ok == 0:
                continue
            grads = backward(model, cache, dq)
            norms.append(_grad_norm(grads))
            adam_step(model, grads, state, cfg, lr)
            sums += (l_sum, nll_sum, ent_sum)
            n_ok += ok
        denom = max(n_ok, 1)
        hist.loss.append(sums[0] / denom)
        hist.nll.append(sums[1] / denom)
        hist.entropy.append(sums[2] / denom)
        hist.grad_norm.append(float(np.mean(norms)) if norms else 0.0)
        hist.n_processed.append(n_ok)
        hist.n_skipped.append(n - n_ok)
        hist.lr.append(lr)
        if val is not None:
            hist.val_ll.append(val(model))
    return model, hist


def train_ssmp(c, part, data, cfg, val_rows=None):
    """Self-supervised training on evidence rows with the circuit loss.

    The batch objective is the mean per-example loss over rows whose
    evidence has positive probability; other rows are skipped and counted.
    """
    roles = QueryRoles(c, part)
    rows = _rows(data, c, part)
    model = _model_for(part, cfg)
    model.meta.update(alpha=cfg.alpha, seed=cfg.seed, objective="ssmp")

    def objective(x, q):
        total, nll, ent, grad, ok = roles.loss_and_grad(x, q, cfg.alpha)
        n_ok = int(ok.sum())
        dq = np.where(ok[:, None], grad, 0.0) / max(n_ok, 1)
        return (dq, float(total[ok].sum()), float(nll[ok].sum()), float(ent[ok].sum()), n_ok)

    val = None
    if val_rows is not None:
        vr = np.asarray(val_rows, dtype=float)
        val = lambda m: _mean_ll(rounded_log_scores(roles, vr, forward(m, vr)[0]))
    return _run_epochs(model, rows, part.N, cfg, objective, val)


def train_supervised(c, part, labeled, loss_kind, cfg):
    """Regression of sigmoid outputs onto discrete labels (``"mse"`` or ``"mae"``).

    ``labeled`` is a pair ``(e_rows, q_labels)`` of (n, N) and (n, M) arrays.
    """
    e_rows, labels = (np.asarray(a, dtype=float) for a in labeled)
    if e_rows.ndim != 2 or e_rows.shape[1] != part.N or labels.shape != (len(e_rows), part.M):
        raise DimensionMismatch("labeled data does not match the partition")
    if loss_kind not in ("mse", "mae"):
        raise InvalidSpec(f"unknown supervised loss {loss_kind!r}")
    model = _model_for(part, cfg)
    model.meta.update(seed=cfg.seed, objective=loss_kind)
    N = part.N

    def objective(xy, q):
        diff = q - xy[:, N:]
        B = len(q)
        if loss_kind == "mse":
            per = np.sum(diff * diff, axis=1)
            dq = 2.0 * diff / B
        else:
            per = np.sum(np.abs(diff), axis=1)
            dq = np.sign(diff) / B
        s = float(per.sum())
        return dq, s, s, 0.0, B

    return _run_epochs(model, np.hstack([e_rows, labels]), N, cfg, objective)


def mse(pred, target):
    d = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    return float(np.mean(np.sum(np.atleast_2d(d) ** 2, axis=1)))


def mae(pred, target):
    d = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    return float(np.mean(np.sum(np.abs(np.atleast_2d(d)), axis=1)))


def _rows(data, c, part):
    rows = np.asarray(getattr(data, "rows", data))
    names = getattr(data, "variables", None)
    expect = tuple(c.variables[v] for v in part.evidence)
    if names is not None and tuple(names) != expect:
        raise DimensionMismatch(f"dataset columns {names} != evidence {expect}")
    if rows.ndim != 2 or rows.shape[1] != part.N:
        raise DimensionMismatch(f"dataset rows must have {part.N} columns")
    return rows


def kfold_indices(n, folds, seed):
    if folds < 2 or folds > n:
        raise InvalidSpec(f"need 2 <= folds <= n, got folds={folds}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, folds)


def cross_validate_alpha(c, part, data, grid=ALPHA_GRID, folds=5, cfg=None):
    """Pick alpha by k-fold mean validation log-likelihood of rounded outputs.

    Returns ``(best_alpha, {alpha: mean score})``; ties go to the smaller alpha.
    """
    cfg = cfg or TrainConfig()
    rows = _rows(data, c, part)
    roles = QueryRoles(c, part)
    splits = kfold_indices(len(rows), folds, cfg.seed)
    scores = {}
    for alpha in sorted(grid):
        fold_scores = []
        for k, val_idx in enumerate(splits):
            train_idx = np.concatenate([s for i, s in enumerate(splits) if i != k])
            model, _ = train_ssmp(c, part, rows[train_idx], replace(cfg, alpha=alpha))
            vr = rows[val_idx].astype(float)
            fold_scores.append(_mean_ll(rounded_log_scores(roles, vr, forward(model, vr)[0])))
        scores[alpha] = float(np.mean(fold_scores))
    best = None
    for alpha in sorted(scores):
        if best is None or scores[alpha] > scores[best]:
            best = alpha
    return best, scores


def round_outputs(q):
    return (np.asarray(q) > 0.5).astype(int)


def predict_mmap(m, p):
    """Eval-mode forward, round at 0.5 (ties to 0), score the result."""
    t0 = time.perf_counter()
    if m.n_inputs != p.partition.N or m.n_outputs != p.partition.M:
        raise DimensionMismatch(f"model dims {m.dims} do not fit N={p.partition.N}, M={p.partition.M}")
    q_soft, _ = forward(m, p.e_bits, EVAL)
    q = {v: int(b) for v, b in zip(p.query, round_outputs(q_soft))}
    return MmapSolution(q=q, log_score=score(p.circuit, p.evidence, q), method="ssmp",
                        elapsed=time.perf_counter() - t0)


def save_model(m, path):
    from .sampler import write_atomic
    write_atomic(path, json.dumps(m.to_document()))


def load_model(path):
    with open(path) as fh:
        return MlpModel.from_document(json.load(fh))
