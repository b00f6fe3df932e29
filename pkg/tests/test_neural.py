import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pcmmap.errors import DimensionMismatch, InvalidSpec, StaleCache
from pcmmap.mmap import MmapProblem, brute_force_mmap
from pcmmap.neural import (
    EVAL,
    TRAIN,
    AdamState,
    MlpModel,
    TrainConfig,
    adam_step,
    backward,
    cross_validate_alpha,
    forward,
    init_model,
    kfold_indices,
    load_model,
    mae,
    mse,
    predict_mmap,
    save_model,
    train_ssmp,
    train_supervised,
)
from pcmmap.partition import VariablePartition
from pcmmap.qpc import QueryRoles
from pcmmap.sampler import generate_dataset

from oracles import random_instance


@pytest.fixture
def e1_part(fig1):
    return VariablePartition.from_names(fig1, ["X1"], ["X3", "X4"], ["X2"])


def _param_fd(m, f, h=1e-5):
    out = []
    for p in m.params():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = f()
            p[idx] = old - h
            dn = f()
            p[idx] = old
            g[idx] = (up - dn) / (2 * h)
        out.append(g)
    return out


def test_init_shapes_and_range():
    m = init_model([4, 8, 3], seed=0)
    assert [w.shape for w in m.weights] == [(4, 8), (8, 3)]
    assert all(np.all(np.abs(w) <= 1 / np.sqrt(w.shape[0])) for w in m.weights)
    q, _ = forward(m, np.random.default_rng(0).integers(0, 2, size=(20, 4)))
    assert q.shape == (20, 3) and np.all((q > 0) & (q < 1))


def test_no_hidden_layer_model():
    m = init_model([4, 2], seed=0)
    q, _ = forward(m, [1, 0, 1, 1])
    assert q.shape == (2,)


@pytest.mark.parametrize("dims", [[3], [3, 0, 2], []])
def test_invalid_dims(dims):
    with pytest.raises(InvalidSpec):
        init_model(dims, seed=0)


def test_input_width_checked():
    with pytest.raises(DimensionMismatch):
        forward(init_model([3, 2], 0), [1, 0])


def test_sigmoid_extremes_stay_finite():
    m = init_model([1, 1], 0)
    m.weights[0][:] = 1e4
    q, _ = forward(m, [[1.0], [-1.0]])
    assert np.all(np.isfinite(q))


def test_dropout_only_in_train_mode():
    m = init_model([3, 16, 2], seed=1, dropout=0.5)
    x = np.ones((4, 3))
    a, _ = forward(m, x, EVAL)
    b, _ = forward(m, x, EVAL)
    assert np.array_equal(a, b)
    c, _ = forward(m, x, TRAIN, np.random.default_rng(0))
    assert not np.allclose(a, c)
    with pytest.raises(ValueError):
        forward(m, x, TRAIN)


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(0)
    m = init_model([3, 5, 4, 2], seed=3)
    x = rng.integers(0, 2, size=(6, 3)).astype(float)
    up = rng.normal(size=(6, 2))
    q, cache = forward(m, x)
    grads = backward(m, cache, up)
    fd = _param_fd(m, lambda: float(np.sum(forward(m, x)[0] * up)))
    flat = [g for wb in grads for g in wb]
    for g, f in zip(flat, fd):
        assert np.allclose(g, f, rtol=1e-4, atol=1e-8)


def test_backward_with_dropout_masks():
    m = init_model([3, 6, 2], seed=2, dropout=0.3)
    x = np.ones((5, 3))
    up = np.ones((5, 2))
    _, cache = forward(m, x, TRAIN, np.random.default_rng(1))

    def f():
        q, _ = forward(m, x, TRAIN, np.random.default_rng(1))
        return float(np.sum(q * up))

    flat = [g for wb in backward(m, cache, up) for g in wb]
    for g, fd in zip(flat, _param_fd(m, f)):
        assert np.allclose(g, fd, rtol=1e-4, atol=1e-8)


def test_stale_cache_rejected():
    m = init_model([2, 3, 1], seed=0)
    q, cache = forward(m, np.ones((2, 2)))
    grads = backward(m, cache, np.ones_like(q))
    adam_step(m, grads, AdamState.zeros(m), TrainConfig())
    with pytest.raises(StaleCache):
        backward(m, cache, np.ones_like(q))


def test_backward_shape_checked():
    m = init_model([2, 1], seed=0)
    _, cache = forward(m, np.ones((3, 2)))
    with pytest.raises(DimensionMismatch):
        backward(m, cache, np.ones((3, 2)))


def test_adam_first_step_is_lr_times_sign():
    m = init_model([2, 1], seed=0)
    before = [p.copy() for p in m.params()]
    grads = [(np.array([[0.5], [-2.0]]), np.array([3.0]))]
    cfg = TrainConfig(learning_rate=0.01)
    adam_step(m, grads, AdamState.zeros(m), cfg)
    steps = [b - a for a, b in zip(m.params(), before)]
    # bias-corrected first step is lr * g / (|g| + eps')
    assert np.allclose(steps[0], [[0.01], [-0.01]], atol=1e-9)
    assert np.allclose(steps[1], [0.01], atol=1e-9)


def test_lr_schedule():
    cfg = TrainConfig(learning_rate=1e-3, lr_decay=0.9, decay_interval=10)
    assert cfg.lr_at(0) == cfg.lr_at(9) == 1e-3
    assert cfg.lr_at(25) == pytest.approx(1e-3 * 0.9**2)


@pytest.mark.parametrize("bad", [{"alpha": -1.0}, {"learning_rate": 0.0}, {"batch_size": 0},
                                 {"epochs": -1}])
def test_config_validation(bad):
    with pytest.raises(InvalidSpec):
        TrainConfig(**bad)


def test_end_to_end_parameter_gradient():
    # QPC gradient -> sigmoid -> MLP backward, against finite differences of the batch loss
    for seed in range(20):
        c, part, ev, _ = random_instance(seed, max_vars=8, max_nodes=100)
        if part.N == 0:
            continue
        roles = QueryRoles(c, part)
        m = init_model([part.N, 4, part.M], seed=seed)
        e = np.array([[ev[v] for v in part.evidence]], dtype=float)

        def batch_loss():
            return float(roles.loss_and_grad(e, forward(m, e)[0], 0.1)[0][0])

        q, cache = forward(m, e)
        grad = roles.loss_and_grad(e, q, 0.1)[3]
        flat = [g for wb in backward(m, cache, grad) for g in wb]
        for g, fd in zip(flat, _param_fd(m, batch_loss)):
            assert np.allclose(g, fd, rtol=1e-4, atol=1e-7)


def test_zero_epochs_returns_initial_model(fig1, e1_part):
    data = generate_dataset(fig1, e1_part, 50, seed=0)
    cfg = TrainConfig(epochs=0, hidden=(4,))
    m, hist = train_ssmp(fig1, e1_part, data, cfg)
    ref = init_model([1, 4, 2], cfg.seed, cfg.dropout_rate)
    assert all(np.array_equal(a, b) for a, b in zip(m.params(), ref.params()))
    assert hist.loss == []


def test_training_reduces_loss_on_small_fixture(fig1, e1_part):
    data = generate_dataset(fig1, e1_part, 500, seed=0)
    m, hist = train_ssmp(fig1, e1_part, data, TrainConfig(alpha=0.0, epochs=20, hidden=(16,)))
    assert hist.loss[-1] <= hist.loss[0]
    assert len(hist.lr) == 20 and hist.lr[-1] == pytest.approx(1e-3 * 0.9)
    # the fixture's optimum is (X3=0, X4=1) for both values of X1
    for x1 in (0, 1):
        p = MmapProblem(fig1, e1_part, {0: x1})
        sol = predict_mmap(m, p)
        assert sol.log_score <= brute_force_mmap(p).log_score + 1e-12


def test_large_alpha_drives_outputs_discrete(fig1, e1_part):
    data = generate_dataset(fig1, e1_part, 500, seed=0)
    x = np.array([[0.0], [1.0]])
    spread = {}
    for alpha in (0.0, 100.0):
        m, _ = train_ssmp(fig1, e1_part, data, TrainConfig(alpha=alpha, epochs=20, hidden=(16,)))
        q, _ = forward(m, x)
        spread[alpha] = float(np.mean(np.minimum(q, 1 - q)))
    assert spread[100.0] <= spread[0.0]


def test_training_is_deterministic(fig1, e1_part):
    data = generate_dataset(fig1, e1_part, 200, seed=0)
    cfg = TrainConfig(epochs=3, hidden=(8,), seed=5)
    a, ha = train_ssmp(fig1, e1_part, data, cfg)
    b, hb = train_ssmp(fig1, e1_part, data, cfg)
    assert ha.loss == hb.loss
    assert all(np.array_equal(x, y) for x, y in zip(a.params(), b.params()))


def test_validation_history(fig1, e1_part):
    data = generate_dataset(fig1, e1_part, 200, seed=0)
    _, hist = train_ssmp(fig1, e1_part, data, TrainConfig(epochs=2, hidden=(8,)),
                         val_rows=[[0], [1]])
    assert len(hist.val_ll) == 2 and all(v < 0 for v in hist.val_ll)


def test_dataset_columns_checked(fig1, e1_part):
    other = VariablePartition.from_names(fig1, ["X2"], ["X3", "X4"], ["X1"])
    data = generate_dataset(fig1, other, 20, seed=0)
    with pytest.raises(DimensionMismatch):
        train_ssmp(fig1, e1_part, data, TrainConfig(epochs=1))


def test_supervised_regression_learns_labels(fig1, e1_part):
    e = np.array([[0], [1]] * 100)
    y = np.array([[0, 1], [1, 0]] * 100)
    cfg = TrainConfig(epochs=30, hidden=(16,), learning_rate=1e-2, dropout_rate=0.0)
    for kind in ("mse", "mae"):
        m, hist = train_supervised(fig1, e1_part, (e, y), kind, cfg)
        q, _ = forward(m, [[0], [1]])
        assert np.array_equal((q > 0.5).astype(int), [[0, 1], [1, 0]])
        assert hist.loss[-1] < hist.loss[0]
    with pytest.raises(InvalidSpec):
        train_supervised(fig1, e1_part, (e, y), "huber", cfg)
    with pytest.raises(DimensionMismatch):
        train_supervised(fig1, e1_part, (e, y[:, :1]), "mse", cfg)


def test_mse_mae():
    assert mse([[0.5, 1.0]], [[0, 1]]) == pytest.approx(0.25)
    assert mae([[0.5, 0.0]], [[0, 1]]) == pytest.approx(1.5)


def test_kfold_partition():
    folds = kfold_indices(10, 3, seed=0)
    assert sorted(np.concatenate(folds).tolist()) == list(range(10))
    with pytest.raises(InvalidSpec):
        kfold_indices(3, 5, seed=0)


def test_cross_validation_ties_to_smaller_alpha(fig1):
    # a single query variable with no evidence effect: every alpha rounds to the same answer
    part = VariablePartition.from_names(fig1, ["X2"], ["X1"], ["X3", "X4"])
    data = generate_dataset(fig1, part, 60, seed=0)
    best, scores = cross_validate_alpha(fig1, part, data, grid=(10.0, 0.1, 1.0), folds=3,
                                        cfg=TrainConfig(epochs=2, hidden=(4,)))
    assert sorted(scores) == [0.1, 1.0, 10.0]
    top = max(scores.values())
    assert best == min(a for a, s in scores.items() if s == top)


def test_model_round_trip(tmp_path):
    m = init_model([3, 4, 2], seed=0, dropout=0.2)
    m.meta["alpha"] = 0.1
    path = tmp_path / "m.json"
    save_model(m, path)
    back = load_model(path)
    assert back.dims == m.dims and back.dropout == 0.2 and back.meta["alpha"] == 0.1
    x = np.eye(3)
    assert np.array_equal(forward(back, x)[0], forward(m, x)[0])
    assert json.loads(path.read_text())["dims"] == [3, 4, 2]


def test_model_shape_mismatch_rejected():
    with pytest.raises(InvalidSpec):
        MlpModel([2, 3], [np.zeros((3, 2))], [np.zeros(3)])


def test_predict_checks_dims(fig1, e1_part):
    with pytest.raises(DimensionMismatch):
        predict_mmap(init_model([2, 2], 0), MmapProblem(fig1, e1_part, {0: 1}))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_outputs_always_in_open_interval(seed):
    rng = np.random.default_rng(seed)
    dims = [int(rng.integers(1, 6)), int(rng.integers(1, 8)), int(rng.integers(1, 4))]
    m = init_model(dims, seed=seed)
    q, _ = forward(m, rng.integers(0, 2, size=(10, dims[0])))
    assert np.all((q > 0) & (q < 1))
