import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vscomplete import model as M
from vscomplete.errors import DegenerateLabels, EmptySplit, InvalidConfig, InvalidDims, NonFiniteLoss, ShapeMismatch
from vscomplete.metrics import auroc
from vscomplete.model import (AdamW, TrainConfig, backward, bce_with_logits, f1_curve, forward, forward_logits,
                              init_model, load_model, parameter_count, predict, save_model, train, tune_threshold,
                              weighted_bce_loss)

from oracles import f1_at, max_relative_gradient_error


def test_default_architecture_count():
    assert parameter_count((1545, 512, 256, 64, 1)) == 941_057
    assert init_model().parameter_count() == 941_057


def test_small_count_by_hand():
    assert parameter_count((9, 4, 1)) == 9 * 4 + 4 + 2 * 4 + 4 * 1 + 1 == 53


@given(st.lists(st.integers(1, 12), min_size=1, max_size=4), st.integers(1, 12))
def test_count_formula_vs_enumeration(hidden, n_in):
    dims = (n_in, *hidden, 1)
    assert parameter_count(dims) == init_model(dims, seed=0).parameter_count()


def test_init_deterministic_and_bounded():
    a, b = init_model((20, 8, 1), seed=3), init_model((20, 8, 1), seed=3)
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])
    assert np.max(np.abs(a.params["W0"])) <= math.sqrt(6 / 20)
    assert np.all(a.params["b0"] == 0) and np.all(a.params["gamma0"] == 1) and np.all(a.params["beta0"] == 0)


@pytest.mark.parametrize("dims", [(5,), (5, 0, 1), (5, 3, 2)])
def test_invalid_dims(dims):
    with pytest.raises(InvalidDims):
        init_model(dims)


def test_zero_weights_give_half(rng):
    m = init_model((6, 4, 3, 1), seed=0)
    for k in m.params:
        if k.startswith("W"):
            m.params[k][:] = 0
    assert np.allclose(forward(m, rng.normal(size=(7, 6)), "eval"), 0.5)


def test_eval_output_range_and_determinism(rng):
    m = init_model((6, 4, 1), seed=1)
    X = rng.normal(size=(50, 6)) * 10
    p = forward(m, X, "eval")
    assert np.all((p > 0) & (p < 1)) and np.array_equal(p, forward(m, X, "eval"))


def test_train_mode_dropout_reproducible(rng):
    m = init_model((6, 16, 1), seed=1)
    X = rng.normal(size=(10, 6))
    a = forward(m, X, "train", np.random.default_rng(5))
    b = forward(m, X, "train", np.random.default_rng(5))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, forward(m, X, "train", np.random.default_rng(6)))


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        forward(init_model((6, 4, 1)), np.zeros((3, 5)), "eval")
    with pytest.raises(ShapeMismatch):
        predict(init_model((6, 4, 1)), 0.5, np.zeros((3, 7)))


def test_inverted_dropout_expectation():
    """Mean train-mode activation over many masks equals the no-dropout activation."""
    m = init_model((4, 6, 1), seed=2, dropout=0.3)
    X = np.random.default_rng(0).normal(size=(8, 4))
    _, cache = forward_logits(m, X, train=True, use_dropout=False, update_stats=False)
    base = cache["h_last"]
    rng = np.random.default_rng(1)
    draws = np.stack([forward_logits(m, X, train=True, rng=rng, update_stats=False)[1]["h_last"]
                      for _ in range(10_000)])
    mean, se = draws.mean(axis=0), draws.std(axis=0, ddof=1) / math.sqrt(len(draws))
    live = se > 0
    assert np.all(np.abs(mean - base)[live] <= 3 * se[live] + 1e-12)
    assert np.array_equal(mean[~live], base[~live])


def test_bce_examples():
    assert weighted_bce_loss(np.array([0.5]), np.array([1.0]), 1.0)[0] == pytest.approx(math.log(2))
    loss, _ = weighted_bce_loss(np.array([0.9, 0.1]), np.array([1.0, 0.0]), 2.0)
    assert loss == pytest.approx((2 * -math.log(0.9) - math.log(0.9)) / 2)
    assert loss == pytest.approx(0.1581, abs=1e-4)


@given(st.lists(st.floats(-8, 8), min_size=1, max_size=20), st.data(), st.floats(0.1, 5))
def test_logit_and_probability_forms_agree(z, data, w):
    y = np.array(data.draw(st.lists(st.sampled_from([0.0, 1.0]), min_size=len(z), max_size=len(z))))
    z = np.array(z)
    l1, g1 = bce_with_logits(z, y, w)
    l2, g2 = weighted_bce_loss(M.sigmoid(z), y, w)
    assert l1 == pytest.approx(l2, rel=1e-6, abs=1e-9)
    assert np.allclose(g1, g2, atol=1e-12)
    unweighted = np.mean(-(y * np.log(M.sigmoid(z)) + (1 - y) * np.log(1 - M.sigmoid(z))))
    assert bce_with_logits(z, y, 1.0)[0] == pytest.approx(unweighted, rel=1e-6, abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_check(seed):
    rng = np.random.default_rng(seed)
    m = init_model((13, 8, 5, 3, 1), seed=seed)
    for i in range(3):
        m.params[f"gamma{i}"] = rng.uniform(0.5, 1.5, size=m.params[f"gamma{i}"].shape)
        m.params[f"beta{i}"] = rng.normal(0, 0.3, size=m.params[f"beta{i}"].shape)
    X = rng.normal(size=(16, 13))
    y = (rng.random(16) < 0.4).astype(float)
    assert max_relative_gradient_error(m, X, y, w=2.5) <= 1e-4


def test_zero_output_layer_blocks_gradient():
    m = init_model((5, 4, 1), seed=0)
    m.params["W1"][:] = 0
    X = np.random.default_rng(0).normal(size=(4, 5))
    y = np.array([1.0, 0.0, 1.0, 0.0])
    logits, cache = forward_logits(m, X, train=True, use_dropout=False)
    assert np.all(logits == 0)
    g = backward(m, cache, bce_with_logits(logits, y, 1.0)[1])
    for k in ("W0", "b0", "gamma0", "beta0"):
        assert np.all(g[k] == 0)
    assert g["b1"][0] == pytest.approx(np.mean(0.5 - y))


def test_weight_decay_is_scaled_by_learning_rate():
    m = init_model((5, 4, 1), seed=0)
    before = {k: v.copy() for k, v in m.params.items()}
    opt = AdamW(m.params, weight_decay=0.5)
    opt.step(m.params, {k: np.ones_like(v) for k, v in m.params.items()}, lr=0.0)
    for k in before:
        assert np.array_equal(before[k], m.params[k])


def test_decoupled_decay_with_zero_gradient():
    p = {"w": np.array([2.0])}
    AdamW(p, weight_decay=0.1).step(p, {"w": np.array([0.0])}, lr=0.5)
    assert p["w"][0] == pytest.approx(2.0 * (1 - 0.05))


def _separable(n=200, d=4, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = (X @ np.array([1.5, -2.0, 0.7, 1.0])[:d] > 0).astype(float)
    return X, y


def test_separable_toy_reaches_perfect_auroc():
    rng = np.random.default_rng(0)
    w = np.array([1.5, -2.0, 0.7, 1.0])
    X = rng.normal(size=(1000, 4))
    X = X[np.abs(X @ w) > 0.5][:200]  # keep a margin around the separating plane
    y = (X @ w > 0).astype(float)
    cfg = TrainConfig(learning_rate=1e-2, batch_size=32, max_epochs=20, seed=0)
    m, hist = train(init_model((4, 16, 8, 1), seed=0), X[:150], y[:150], X[150:], y[150:], cfg)
    assert len(hist) <= 20
    probs, _ = predict(m, 0.5, X[150:])
    assert auroc(probs, y[150:]) == 1.0


def test_training_is_deterministic():
    X, y = _separable(300, seed=1)
    cfg = TrainConfig(learning_rate=1e-2, batch_size=32, max_epochs=4, seed=9)
    runs = [train(init_model((4, 8, 1), seed=1), X[:200], y[:200], X[200:], y[200:], cfg) for _ in range(2)]
    assert runs[0][1] == runs[1][1]
    for k in runs[0][0].params:
        assert np.array_equal(runs[0][0].params[k], runs[1][0].params[k])


def test_early_stopping_restores_best_epoch(monkeypatch):
    scripted = iter([1.0, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3])
    snapshots = {}
    epoch = {"n": 0}

    def fake_validation_loss(model, X, y, w, block=8192):
        epoch["n"] += 1
        snapshots[epoch["n"]] = {k: v.copy() for k, v in model.params.items()}
        return next(scripted)

    monkeypatch.setattr(M, "validation_loss", fake_validation_loss)
    X, y = _separable(100)
    m, hist = train(init_model((4, 8, 1), seed=0), X[:80], y[:80], X[80:], y[80:],
                    TrainConfig(batch_size=16, max_epochs=50, early_stop_patience=5))
    assert [h["epoch"] for h in hist] == list(range(1, 8))
    for k in m.params:
        assert np.array_equal(m.params[k], snapshots[2][k])


def test_plateau_halves_learning_rate(monkeypatch):
    scripted = iter([1.0, 1.1, 1.2, 1.3, 1.4, 0.5, 0.6, 0.7])
    monkeypatch.setattr(M, "validation_loss", lambda *a, **k: next(scripted))
    X, y = _separable(60)
    _, hist = train(init_model((4, 4, 1), seed=0), X[:40], y[:40], X[40:], y[40:],
                    TrainConfig(learning_rate=1.0e-3, batch_size=16, max_epochs=8, early_stop_patience=5))
    assert [h["learning_rate"] for h in hist] == [1e-3, 1e-3, 1e-3, 5e-4, 5e-4, 2.5e-4, 2.5e-4, 2.5e-4]


def test_returned_weights_achieve_minimum_val_loss():
    X, y = _separable(300, seed=2)
    y[::7] = 1 - y[::7]
    cfg = TrainConfig(learning_rate=3e-2, batch_size=32, max_epochs=15, seed=0)
    m, hist = train(init_model((4, 8, 1), seed=0), X[:200], y[:200], X[200:], y[200:], cfg)
    w = M.positive_weight(y[:200])
    assert M.validation_loss(m, X[200:], y[200:], w) == pytest.approx(min(h["val_loss"] for h in hist), rel=1e-12)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_errors():
    X, y = _separable(20)
    with pytest.raises(EmptySplit):
        train(init_model((4, 4, 1)), X[:1], y[:1], X, y)
    with pytest.raises(EmptySplit):
        train(init_model((4, 4, 1)), X, y, X[:0], y[:0])
    Xbad = X.copy()
    Xbad[0, 0] = np.inf
    with pytest.raises(NonFiniteLoss):
        train(init_model((4, 4, 1)), Xbad, y, X, y, TrainConfig(batch_size=64, max_epochs=2))


def test_batches_of_one_are_skipped():
    X, y = _separable(21)
    _, hist = train(init_model((4, 4, 1)), X[:17], y[:17], X[17:], y[17:], TrainConfig(batch_size=8, max_epochs=1))
    assert len(hist) == 1


def test_train_config_validation():
    assert TrainConfig.from_dict({}).learning_rate == 3e-4
    with pytest.raises(InvalidConfig):
        TrainConfig.from_dict({"learning_rate": 0})
    with pytest.raises(InvalidConfig):
        TrainConfig.from_dict({"plateau_patience": 0})
    with pytest.raises(InvalidConfig):
        TrainConfig.from_dict({"typo": 1})


def test_threshold_example():
    assert tune_threshold([0.9, 0.8, 0.2], [1, 1, 0]) == pytest.approx(0.5)
    with pytest.raises(DegenerateLabels):
        tune_threshold([0.3, 0.4], [1, 1])


@settings(max_examples=100)
@given(st.lists(st.tuples(st.integers(0, 999), st.booleans()), min_size=2, max_size=40))
def test_threshold_matches_grid_search(pairs):
    # scores sit halfway between grid points, so the grid separates every pair of distinct scores
    scores = np.array([(s + 0.5) / 1000 for s, _ in pairs])
    labels = np.array([int(b) for _, b in pairs])
    if not 0 < labels.sum() < len(labels):
        return
    t = tune_threshold(scores, labels)
    grid_best = max(f1_at(scores, labels, g) for g in np.linspace(0, 1, 1001))
    assert f1_at(scores, labels, t) == pytest.approx(grid_best, abs=1e-12)
    cands, f1 = f1_curve(scores, labels.astype(float))
    assert t == cands[np.flatnonzero(f1 == f1.max())[0]]


def test_predict_threshold_semantics(rng):
    m = init_model((5, 4, 1), seed=0)
    X = rng.normal(size=(30, 5))
    p, all_pos = predict(m, 0.0, X)
    assert all_pos.all()
    assert not predict(m, 1.0, X)[1].any()
    prev = all_pos
    for t in np.linspace(0, 1, 21):
        d = predict(m, t, X)[1]
        assert not np.any(d & ~prev)
        prev = d


def test_checkpoint_round_trip(tmp_path, rng):
    m = init_model((5, 4, 3, 1), seed=4)
    m.running_mean[0] += 0.3
    save_model(tmp_path / "m.bin", m, 0.42, TrainConfig(), [{"epoch": 1, "val_loss": 0.1}])
    back, meta = load_model(tmp_path / "m.bin")
    X = rng.normal(size=(9, 5))
    assert meta["threshold"] == 0.42 and meta["dims"] == [5, 4, 3, 1]
    assert np.array_equal(forward(back, X, "eval"), forward(m, X, "eval"))
