import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gesturekit.nn import functional as F
from gesturekit.nn import layers as L
from gesturekit.nn.checkpoint import load_model, save_model
from gesturekit.nn.gradcheck import check_layer, check_model, numerical_grad, relative_error
from gesturekit.nn.model import Model
from gesturekit.nn.optim import Adam, AdamState, adam_step
from gesturekit.nn.train import History, TrainSchedule, schedule_from_dict, train

NAMES = ["LEFT", "RIGHT", "CLICK", "WRIST"]


def naive_conv(x, w, b, stride, padding):
    """Loop-based cross-correlation with TensorFlow-style 'same' padding."""
    n, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    if padding == "same":
        ho, wo = math.ceil(h / stride), math.ceil(wd / stride)
        ph = max((ho - 1) * stride + kh - h, 0)
        pw = max((wo - 1) * stride + kw - wd, 0)
        x = np.pad(x, ((0, 0), (ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2), (0, 0)))
    else:
        ho, wo = (h - kh) // stride + 1, (wd - kw) // stride + 1
    out = np.zeros((n, ho, wo, cout))
    for i in range(ho):
        for j in range(wo):
            patch = x[:, i * stride:i * stride + kh, j * stride:j * stride + kw, :]
            out[:, i, j, :] = np.tensordot(patch, w, axes=([1, 2, 3], [0, 1, 2]))
    return out + (0 if b is None else b)


# --------------------------------------------------------------- conv2d

def test_identity_kernel_returns_input():
    x = np.random.default_rng(0).standard_normal((2, 5, 6, 3))
    w = np.eye(3).reshape(1, 1, 3, 3)
    np.testing.assert_array_equal(F.conv2d_forward(x, w, None, 1, "same"), x)
    w3 = np.zeros((3, 3, 3, 3))
    w3[1, 1] = np.eye(3)
    np.testing.assert_allclose(F.conv2d_forward(x, w3, None, 1, "same"), x, atol=1e-15)


def test_all_ones_kernel_on_ones_gives_nine_inside():
    out = F.conv2d_forward(np.ones((1, 6, 6, 1)), np.ones((3, 3, 1, 1)), None, 1, "same")
    np.testing.assert_array_equal(out[0, 1:-1, 1:-1, 0], 9.0)
    assert out[0, 0, 0, 0] == 4.0 and out[0, 0, 2, 0] == 6.0


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 3), h=st.integers(1, 9), w=st.integers(1, 9), cin=st.integers(1, 4), cout=st.integers(1, 4),
       k=st.sampled_from([1, 3, 5]), stride=st.sampled_from([1, 2]), padding=st.sampled_from(["same", "valid"]),
       seed=st.integers(0, 1000))
def test_conv_matches_loop_oracle(n, h, w, cin, cout, k, stride, padding, seed):
    if padding == "valid" and (h < k or w < k):
        return
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, h, w, cin))
    kern = rng.standard_normal((k, k, cin, cout))
    b = rng.standard_normal(cout)
    np.testing.assert_allclose(F.conv2d_forward(x, kern, b, stride, padding), naive_conv(x, kern, b, stride, padding),
                               atol=1e-10)


def test_conv_rejects_channel_mismatch():
    with pytest.raises(ValueError):
        F.conv2d_forward(np.zeros((1, 4, 4, 2)), np.zeros((3, 3, 3, 1)), None)
    with pytest.raises(ValueError):
        L.Conv2D(3, 4).output_shape((8, 8, 2))


def test_conv_float32_gradients():
    rng = np.random.default_rng(3)
    layer = L.Conv2D(3, 4, 3, 1, "same", rng=rng)
    x = rng.standard_normal((2, 5, 5, 3)).astype(np.float32)
    layer.forward(x, True)
    probe = rng.standard_normal((2, 5, 5, 4)).astype(np.float32)
    dx = layer.backward(probe)
    layer64 = L.Conv2D(3, 4, 3, 1, "same", rng=rng).astype(np.float64)
    layer64.params["w"][...] = layer.params["w"]
    layer64.params["b"][...] = layer.params["b"]
    x64 = x.astype(np.float64)
    fd = numerical_grad(lambda: float(np.sum(layer64.forward(x64, True) * probe)), x64)
    assert dx.dtype == np.float32
    assert relative_error(dx, fd) < 1e-3


# ------------------------------------------------------ gradient sweeps

def _random_case(kind, rng):
    n = int(rng.integers(2, 4))
    h, w = int(rng.integers(2, 7)), int(rng.integers(2, 7))
    c = int(rng.integers(1, 4))
    if kind == "conv2d":
        cout, k, s = int(rng.integers(1, 4)), int(rng.choice([1, 3])), int(rng.choice([1, 2]))
        return L.Conv2D(c, cout, k, s, "same", rng=rng), (n, h, w, c)
    if kind == "maxpool2d":
        return L.MaxPool2D(), (n, h, w, c)
    if kind == "batchnorm":
        return L.BatchNorm(c), (n, h, w, c)
    if kind == "dense":
        return L.Dense(h * w, c + 1, rng), (n, h * w)
    if kind == "relu":
        return L.ReLU(), (n, h, w, c)
    if kind == "softmax":
        return L.Softmax(), (n, c + 1)
    if kind == "residual_block":
        return L.ResidualBlock(c, int(rng.integers(1, 4)), int(rng.choice([1, 2])), rng), (n, h, w, c)
    raise AssertionError(kind)


KINDS = ["conv2d", "maxpool2d", "batchnorm", "dense", "relu", "softmax", "residual_block"]


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("seed", range(20))
def test_layer_gradients_match_finite_differences(kind, seed):
    rng = np.random.default_rng(1000 * KINDS.index(kind) + seed)
    layer, shape = _random_case(kind, rng)
    layer.astype(np.float64)
    x = rng.standard_normal(shape)
    if kind == "maxpool2d":
        # distinct values spaced far beyond the FD step so argmax never flips
        x = rng.permutation(np.linspace(-3, 3, x.size)).reshape(shape)
    if kind == "relu":
        x = np.where(np.abs(x) < 1e-3, 0.5, x)
    errors = check_layer(layer, x, training=True, seed=seed)
    assert max(errors.values()) < 1e-6, errors


def test_inference_mode_batchnorm_gradient():
    rng = np.random.default_rng(0)
    bn = L.BatchNorm(3).astype(np.float64)
    bn.buffers["running_mean"] = rng.standard_normal(3)
    bn.buffers["running_var"] = rng.random(3) + 0.5
    assert max(check_layer(bn, rng.standard_normal((1, 2, 2, 3)), training=False).values()) < 1e-7


# --------------------------------------------------------------- maxpool

def test_maxpool_ties_go_to_first_cell():
    pool = L.MaxPool2D()
    x = np.ones((1, 2, 2, 1))
    pool.forward(x)
    np.testing.assert_array_equal(pool.backward(np.ones((1, 1, 1, 1)))[0, :, :, 0], [[1, 0], [0, 0]])


def test_maxpool_increasing_input_picks_bottom_right():
    pool = L.MaxPool2D()
    x = np.arange(16, dtype=float).reshape(1, 4, 4, 1)
    out = pool.forward(x)
    np.testing.assert_array_equal(out[0, :, :, 0], [[5, 7], [13, 15]])
    dx = pool.backward(np.ones_like(out))[0, :, :, 0]
    assert dx.sum() == 4 and dx[1, 1] == dx[3, 3] == 1


def test_maxpool_odd_size():
    pool = L.MaxPool2D()
    x = np.arange(9, dtype=float).reshape(1, 3, 3, 1)
    out = pool.forward(x)
    assert out.shape == (1, 2, 2, 1) == (1, *pool.output_shape((3, 3, 1)))
    np.testing.assert_array_equal(out[0, :, :, 0], [[4, 5], [7, 8]])
    assert pool.backward(np.ones_like(out)).shape == x.shape


# ------------------------------------------------------------- batchnorm

def test_batchnorm_training_normalizes():
    rng = np.random.default_rng(0)
    bn = L.BatchNorm(4).astype(np.float64)
    x = 3 + 5 * rng.standard_normal((8, 5, 5, 4))
    y = bn.forward(x, training=True)
    np.testing.assert_allclose(y.mean(axis=(0, 1, 2)), 0, atol=1e-10)
    np.testing.assert_allclose(y.var(axis=(0, 1, 2)), 1, atol=1e-3)


def test_batchnorm_running_statistics_update():
    rng = np.random.default_rng(1)
    bn = L.BatchNorm(2).astype(np.float64)
    x = rng.standard_normal((6, 3, 3, 2)) * 2 + 1
    bn.forward(x, training=True)
    flat = x.reshape(-1, 2)
    np.testing.assert_allclose(bn.buffers["running_mean"], 0.1 * flat.mean(axis=0))
    np.testing.assert_allclose(bn.buffers["running_var"], 0.9 + 0.1 * flat.var(axis=0, ddof=1))


def test_batchnorm_inference_identity():
    bn = L.BatchNorm(3).astype(np.float64)
    x = np.random.default_rng(2).standard_normal((2, 4, 4, 3))
    np.testing.assert_allclose(bn.forward(x, training=False), x / np.sqrt(1 + 1e-5), rtol=1e-12)


def test_batchnorm_rejects_single_sample_batch():
    with pytest.raises(ValueError):
        L.BatchNorm(3).forward(np.zeros((1, 4, 4, 3)), training=True)


# -------------------------------------------------------------- residual

def test_residual_zero_branch_is_identity_on_nonnegative_input():
    rng = np.random.default_rng(0)
    block = L.ResidualBlock(3, 3, 1, rng).astype(np.float64)
    last_bn = block.branch[-1]
    last_bn.params["gamma"][...] = 0
    last_bn.params["beta"][...] = 0
    x = np.abs(rng.standard_normal((2, 6, 6, 3)))
    np.testing.assert_array_equal(block.forward(x, training=True), x)


def test_residual_downsampling_shapes():
    block = L.ResidualBlock(16, 32, 2)
    assert block.output_shape((64, 64, 16)) == (32, 32, 32)
    out = block.forward(np.zeros((2, 64, 64, 16), np.float32), training=True)
    assert out.shape == (2, 32, 32, 32)
    assert len(block.shortcut) == 2 and len(L.ResidualBlock(8, 8, 1).shortcut) == 0


def test_small_model_gradient_through_cross_entropy():
    rng = np.random.default_rng(5)
    model = Model([L.Conv2D(2, 3, 3, 2, "same", bias=False, rng=rng), L.BatchNorm(3), L.ReLU(),
                   L.ResidualBlock(3, 4, 2, rng), L.GlobalAvgPool(), L.Dense(4, 4, rng)], (6, 6, 2), NAMES)
    model.astype(np.float64)
    assert check_model(model, rng.standard_normal((3, 6, 6, 2)), np.array([0, 2, 3])) < 1e-6


# ------------------------------------------------------- softmax / loss

def test_uniform_logits_cost_ln4():
    loss, grad = F.softmax_crossentropy(np.zeros((5, 4)), [0, 1, 2, 3, 0])
    assert loss == pytest.approx(math.log(4), abs=1e-12)
    np.testing.assert_allclose(grad.sum(axis=1), 0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(scale=st.floats(1e-3, 1e4), seed=st.integers(0, 10_000))
def test_softmax_is_a_distribution_and_loss_finite(scale, seed):
    rng = np.random.default_rng(seed)
    logits = scale * rng.standard_normal((6, 4))
    p = F.softmax(logits)
    np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-12)
    assert np.all(p >= 0)
    loss, grad = F.softmax_crossentropy(logits, rng.integers(0, 4, 6))
    assert math.isfinite(loss) and loss >= 0 and np.all(np.isfinite(grad))


def test_cross_entropy_gradient_finite_differences():
    rng = np.random.default_rng(0)
    logits = rng.standard_normal((3, 4))
    labels = np.array([1, 0, 3])
    _, grad = F.softmax_crossentropy(logits, labels)
    fd = numerical_grad(lambda: F.softmax_crossentropy(logits, labels)[0], logits)
    assert relative_error(grad, fd) < 1e-8


# ------------------------------------------------------------------ Adam

def test_adam_leaves_parameters_on_zero_gradient():
    p = np.array([1.0, -2.0])
    adam_step([p], [np.zeros(2)], AdamState(), lr=0.1)
    np.testing.assert_array_equal(p, [1.0, -2.0])


def test_adam_first_step_is_signed_lr():
    p = np.array([0.5, 0.5, 0.5])
    g = np.array([3.0, -0.2, 1e-3])
    adam_step([p], [g], AdamState(), lr=0.01)
    np.testing.assert_allclose(p, 0.5 - 0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_adam_matches_scalar_recurrence():
    x = np.array([1.0])
    opt = Adam(lr=0.1)
    m = v = 0.0
    ref = 1.0
    for t in range(1, 101):
        opt.step([x], [2 * x.copy()])
        g = 2 * ref
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.1 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert x[0] == pytest.approx(ref, abs=1e-12)
    assert abs(x[0]) < 0.05


def test_adam_rejects_mismatched_state():
    state = AdamState()
    adam_step([np.zeros(2)], [np.zeros(2)], state)
    with pytest.raises(ValueError):
        adam_step([np.zeros(3)], [np.zeros(3)], state)


# --------------------------------------------------------------- training

def toy_model(seed=0):
    rng = np.random.default_rng(seed)
    return Model([L.Conv2D(3, 4, 3, 1, "same", rng=rng), L.ReLU(), L.GlobalAvgPool(), L.Dense(4, 4, rng)],
                 (8, 8, 3), NAMES, name="toy")


def toy_data(n_per_class=5, seed=0):
    """Each class lights up a different quadrant."""
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for c in range(4):
        for _ in range(n_per_class):
            x = 0.1 * rng.random((8, 8, 3))
            r, q = divmod(c, 2)
            x[4 * r:4 * r + 4, 4 * q:4 * q + 4, c % 3] += 1.0
            xs.append(x)
            ys.append(c)
    return np.array(xs, np.float32), np.array(ys)


def test_training_separates_toy_classes():
    x, y = toy_data()
    sched = TrainSchedule(lr=0.05, batch_size=8, max_epochs=50, stop_patience=50, lr_patience=50)
    model, hist = train(toy_model(), x, y, x, y, sched)
    assert np.mean(model.predict_proba(x).argmax(axis=1) == y) == 1.0
    assert hist.rows[hist.best_epoch - 1]["val_acc"] == 1.0


def test_training_is_deterministic():
    x, y = toy_data()
    sched = TrainSchedule(lr=0.01, batch_size=8, max_epochs=2)
    _, h1 = train(toy_model(), x, y, x, y, sched)
    _, h2 = train(toy_model(), x, y, x, y, sched)
    assert h1.rows == h2.rows


def test_early_stopping_restores_best_epoch():
    x, y = toy_data()
    # a huge learning rate makes validation loss bounce around
    sched = TrainSchedule(lr=5.0, batch_size=4, max_epochs=30, stop_patience=2, lr_patience=1)
    model, hist = train(toy_model(), x, y, x, y, sched)
    best = min(r["val_loss"] for r in hist.rows)
    assert hist.rows[hist.best_epoch - 1]["val_loss"] == best
    assert len(hist.rows) - hist.best_epoch <= 2
    from gesturekit.nn.train import evaluate_loss
    assert evaluate_loss(model, x, y)[0] == pytest.approx(best, rel=1e-5)


def test_training_rejects_empty_sets():
    x, y = toy_data()
    with pytest.raises(ValueError):
        train(toy_model(), x[:0], y[:0], x, y)
    with pytest.raises(ValueError):
        train(toy_model(), x, y, x[:0], y[:0])


def test_schedule_validation():
    with pytest.raises(ValueError):
        TrainSchedule(lr=0)
    with pytest.raises(ValueError):
        schedule_from_dict({"learning_rate": 1})
    assert schedule_from_dict({"max_epochs": 3}).max_epochs == 3


def test_history_csv_round_trip():
    x, y = toy_data()
    _, hist = train(toy_model(), x, y, x, y, TrainSchedule(max_epochs=3))
    back = History.from_csv(hist.to_csv())
    assert back.rows == hist.rows and back.best_epoch == hist.best_epoch


# -------------------------------------------------------------- inference

def test_predict_proba_rows_sum_to_one_and_are_pure():
    model = toy_model()
    x, _ = toy_data()
    before = model.get_state()
    p1 = model.predict_proba(x)
    p2 = model.predict_proba(x)
    np.testing.assert_allclose(p1.sum(axis=1), 1, atol=1e-6)
    np.testing.assert_array_equal(p1, p2)
    assert all(np.array_equal(a, b) for a, b in zip(before, model.get_state()))


def test_predict_rejects_wrong_shape():
    with pytest.raises(ValueError):
        toy_model().predict_proba(np.zeros((2, 9, 9, 3)))


def test_model_rejects_class_count_mismatch():
    with pytest.raises(ValueError):
        Model([L.Flatten(), L.Dense(12, 3)], (2, 2, 3), NAMES)


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    x, y = toy_data()
    model, _ = train(toy_model(), x, y, x, y, TrainSchedule(max_epochs=2))
    save_model(model, tmp_path / "m.gnn")
    back = load_model(tmp_path / "m.gnn")
    assert back.name == "toy" and back.class_names == NAMES
    assert all(np.array_equal(a, b) for a, b in zip(model.get_state(), back.get_state()))
    np.testing.assert_array_equal(model.predict_proba(x), back.predict_proba(x))


def test_target_accuracy_stops_training_early():
    x, y = toy_data()
    sched = TrainSchedule(lr=0.05, batch_size=8, max_epochs=50, stop_patience=50, lr_patience=50, target_val_acc=1.0)
    model, hist = train(toy_model(), x, y, x, y, sched)
    assert hist.rows[-1]["val_acc"] == 1.0
    assert all(r["val_acc"] < 1.0 for r in hist.rows[:-1])
    assert hist.best_epoch == len(hist.rows) < 50
    assert np.mean(model.predict_proba(x).argmax(axis=1) == y) == 1.0
    with pytest.raises(ValueError):
        TrainSchedule(target_val_acc=1.5)
