import numpy as np
import pytest

from vsr_fdx.errors import (DimensionMismatchError, DivergedError, EmptyDatasetError,
                            MalformedFileError, VersionMismatchError)
from vsr_fdx.features import NormalizationSpec
from vsr_fdx.mlp import (DEFAULT_HIDDEN, Layer, MlpModel, TrainConfig, batch_gradient, forward,
                         gradient_check, init_model, load_model, loss_and_grads, mse,
                         param_count, save_model, train)


def test_default_architecture():
    m = init_model(7)
    assert m.hidden_sizes == DEFAULT_HIDDEN == (16,) * 10
    assert [l.activation for l in m.layers] == ["tansig"] * 10 + ["purelin"]
    assert m.output_dim == 1
    assert m.n_params == param_count(7) == 7 * 16 + 16 + 9 * (16 * 16 + 16) + 17
    assert not np.any(m.layers[0].biases)


def test_forward_single_and_batch(rng):
    m = init_model(3, (5, 4), seed=2)
    x = rng.normal(size=(6, 3))
    batch = forward(m, x)
    assert batch.shape == (6,)
    assert forward(m, x[2]) == pytest.approx(batch[2], abs=0, rel=1e-15)
    with pytest.raises(DimensionMismatchError):
        forward(m, rng.normal(size=(2, 4)))


def test_layers_must_chain():
    with pytest.raises(DimensionMismatchError):
        MlpModel([Layer(np.zeros((4, 3)), np.zeros(4)), Layer(np.zeros((1, 5)), np.zeros(1))])
    with pytest.raises(ValueError):
        Layer(np.zeros((1, 3)), np.zeros(1), "relu")


@pytest.mark.parametrize("seed", range(24))
def test_gradient_check_random_architectures(seed):
    rng = np.random.default_rng(seed)
    depth = int(rng.integers(1, 5))
    hidden = tuple(int(h) for h in rng.integers(2, 9, depth))
    dim = int(rng.integers(1, 8))
    m = init_model(dim, hidden, seed=seed)
    for layer in m.layers:
        layer.biases[:] = rng.normal(scale=0.3, size=layer.biases.shape)
    x = rng.normal(size=(int(rng.integers(1, 6)), dim))
    y = rng.integers(0, 8, len(x)).astype(float)
    assert gradient_check(m, x, y) <= 1e-4


def test_worker_split_matches_serial(rng):
    from concurrent.futures import ThreadPoolExecutor

    m = init_model(7, seed=5)
    x = rng.normal(size=(97, 7))
    y = rng.integers(0, 8, 97).astype(float)
    loss1, g1 = batch_gradient(m, x, y)
    with ThreadPoolExecutor(4) as pool:
        loss4, g4 = batch_gradient(m, x, y, workers=4, pool=pool)
    assert loss4 == pytest.approx(loss1, rel=1e-12)
    for (w1, b1), (w4, b4) in zip(g1, g4):
        np.testing.assert_allclose(w4, w1, rtol=1e-10, atol=1e-14)
        np.testing.assert_allclose(b4, b1, rtol=1e-10, atol=1e-14)


def test_hidden_unit_permutation_invariance(rng):
    m = init_model(3, (6, 5), seed=1)
    x = rng.normal(size=(10, 3))
    before = forward(m, x)
    perm = rng.permutation(6)
    m.layers[0].weights = m.layers[0].weights[perm]
    m.layers[0].biases = m.layers[0].biases[perm]
    m.layers[1].weights = m.layers[1].weights[:, perm]
    np.testing.assert_allclose(forward(m, x), before, rtol=1e-13)


def _blobs(rng, n=300):
    centers = np.array([[-2.0, -2.0], [0.0, 2.0], [2.0, -1.0]])
    y = rng.integers(0, 3, n)
    return centers[y] + rng.normal(scale=0.3, size=(n, 2)), y


def test_train_separable_blobs(rng):
    x, y = _blobs(rng)
    xv, yv = _blobs(rng, 100)
    cfg = TrainConfig(learning_rate=0.01, max_epochs=300, batch_size=16, seed=3)
    m, hist = train(x, y, xv, yv, hidden=(8, 8), config=cfg, regime="transient")
    pred = np.round(m.predict(xv))
    assert np.mean(pred == yv) == 1.0
    assert hist.stop_reason in ("goal_reached", "early_stop", "max_epochs")
    assert m.norm is not None and m.meta["seed"] == 3


def test_train_goal_stops_early(rng):
    x, y = _blobs(rng)
    cfg = TrainConfig(learning_rate=0.01, loss_goal=0.05, max_epochs=500, seed=0)
    _, hist = train(x, y, hidden=(8,), config=cfg)
    assert hist.stop_reason == "goal_reached"
    assert hist.train_mse[-1] <= 0.05
    assert len(hist.epochs) < 500


def test_backoff_makes_loss_monotone(rng):
    x, y = _blobs(rng)
    cfg = TrainConfig(learning_rate=0.5, max_epochs=40, lr_backoff=True, seed=0, loss_goal=1e-9)
    _, hist = train(x, y, hidden=(8, 8), config=cfg)
    assert all(b <= a for a, b in zip(hist.train_mse, hist.train_mse[1:]))
    assert hist.train_mse[-1] < hist.train_mse[0]


def test_adam_and_balance_train(rng):
    x, y = _blobs(rng)
    y = np.where(y == 2, 1, y)
    cfg = TrainConfig(optimizer="adam", learning_rate=0.01, max_epochs=30, class_balance=True)
    m, hist = train(x, y, x, y, hidden=(8,), config=cfg)
    assert hist.val_mse[-1] < hist.val_mse[0]
    assert mse(m, m.norm.apply(x), y) < 0.1


def test_training_is_deterministic(rng):
    x, y = _blobs(rng, 100)
    cfg = TrainConfig(max_epochs=5, seed=7)
    a, _ = train(x, y, hidden=(4,), config=cfg)
    b, _ = train(x, y, hidden=(4,), config=cfg)
    for la, lb in zip(a.layers, b.layers):
        np.testing.assert_array_equal(la.weights, lb.weights)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_errors(rng):
    with pytest.raises(EmptyDatasetError):
        train(np.zeros((0, 3)), np.zeros(0))
    x = rng.normal(size=(50, 2))
    y = np.full(50, 1e6)
    with pytest.raises(DivergedError):
        train(x, y, hidden=(4,), config=TrainConfig(learning_rate=1e3, max_epochs=50))


def test_loss_and_grads_sum_reduction(rng):
    m = init_model(2, (3,), seed=0)
    x = rng.normal(size=(5, 2))
    y = rng.normal(size=5)
    lm, gm = loss_and_grads(m, x, y)
    ls, gs = loss_and_grads(m, x, y, reduce="sum")
    assert ls == pytest.approx(5 * lm)
    np.testing.assert_allclose(gs[0][0], 5 * gm[0][0])


def test_save_load_round_trip(tmp_path, rng):
    m = init_model(7, seed=4, regime="synthetic",
                   norm=NormalizationSpec(-np.arange(1.0, 8.0), np.arange(1.0, 8.0)))
    m.meta.update(final_loss=0.123456789, config="abc")
    path = tmp_path / "m.txt"
    save_model(m, path)
    back = load_model(path)
    x = rng.normal(size=(20, 7))
    np.testing.assert_array_equal(back.predict(x), m.predict(x))
    assert back.regime == "synthetic" and back.norm == m.norm
    assert back.meta["final_loss"] == 0.123456789 and back.meta["config"] == "abc"


def test_load_rejects_bad_files(tmp_path):
    m = init_model(3, (4,), seed=0)
    path = tmp_path / "m.txt"
    save_model(m, path)
    text = path.read_text()
    path.write_text(text.replace("vsr-mlp v1", "vsr-mlp v9"))
    with pytest.raises(VersionMismatchError):
        load_model(path)
    lines = text.splitlines()
    path.write_text("\n".join(lines[:-2]) + "\n")
    with pytest.raises(MalformedFileError):
        load_model(path)
    path.write_text(text.replace("input_dim = 3", "input_dim = 5"))
    with pytest.raises(MalformedFileError):
        load_model(path)
    path.write_text("")
    with pytest.raises(MalformedFileError):
        load_model(path)
