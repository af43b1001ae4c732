import math

import numpy as np
import pytest

from scaf.data.models import Architecture, DeviceProfile, LeakageModel, SynthConfig, TrainConfig
from scaf.data.traces import TraceMatrix
from scaf.errors import ConfigurationError, DimensionError, RangeError, TraceFormatError
from scaf.nn.layers import (
    BatchNorm1d,
    Conv1D,
    Dense,
    Dropout,
    Flatten,
    MaxPool1D,
    ReLU,
    cross_entropy,
    softmax,
    softmax_cross_entropy_grad,
)
from scaf.nn.network import CnnSpec, gradients, init_model
from scaf.nn.optim import Adam
from scaf.nn.serialize import load_model, save_model
from scaf.nn.train import accuracy, predict, train
from scaf.pca.model import fit as fit_pca
from scaf.synth.generator import synth_dataset

H = 1e-5
TOLERANCE = 1e-4


def _rel_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(1e-6, np.abs(a) + np.abs(b))))


def _numeric_grad(f, x: np.ndarray) -> np.ndarray:
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + H
        plus = f()
        x[i] = old - H
        minus = f()
        x[i] = old
        grad[i] = (plus - minus) / (2 * H)
    return grad


def _check_layer(layer, x: np.ndarray, training: bool = True) -> None:
    """Compare backward() against central differences of sum(forward(x) * R)."""
    r = np.random.default_rng(11).normal(size=layer.forward(x, training).shape)

    def f():
        return float(np.sum(layer.forward(x, training) * r))

    layer.forward(x, training)
    dx = layer.backward(r)
    analytic = {name: g.copy() for name, g in layer.grads.items()}

    assert _rel_error(dx, _numeric_grad(f, x)) < TOLERANCE
    for name, p in layer.params.items():
        assert _rel_error(analytic[name], _numeric_grad(f, p)) < TOLERANCE, name


##### Layer gradients #####


def test_dense_gradient(rng):
    _check_layer(Dense(6, 4, rng), rng.normal(size=(3, 6)))


def test_relu_gradient(rng):
    x = rng.normal(size=(4, 5))
    x[np.abs(x) < 0.1] = 0.5  # keep away from the kink
    _check_layer(ReLU(), x)


def test_batch_norm_gradient(rng):
    layer = BatchNorm1d(5)
    layer.params["gamma"] = rng.normal(size=5)
    layer.params["beta"] = rng.normal(size=5)
    _check_layer(layer, rng.normal(size=(6, 5)))


def test_dropout_gradient_with_fixed_mask(rng):
    layer = Dropout(0.5, rng)
    layer.fixed_mask = (rng.random((3, 7)) >= 0.5) / 0.5
    _check_layer(layer, rng.normal(size=(3, 7)))


def test_conv1d_gradient(rng):
    layer = Conv1D(2, 3, 4, rng)
    layer.params["b"] = rng.normal(size=3)
    _check_layer(layer, rng.normal(size=(2, 9, 2)))


def test_max_pool_gradient(rng):
    _check_layer(MaxPool1D(3), rng.normal(size=(2, 10, 3)))


def test_flatten_gradient(rng):
    _check_layer(Flatten(), rng.normal(size=(2, 4, 3)))


def test_softmax_cross_entropy_gradient(rng):
    logits = rng.normal(size=(3, 4))
    labels = np.array([0, 3, 1])
    analytic = softmax_cross_entropy_grad(softmax(logits), labels)
    numeric = _numeric_grad(lambda: cross_entropy(softmax(logits), labels), logits)
    assert _rel_error(analytic, numeric) < TOLERANCE


##### Forward pass #####


def test_hand_built_two_layer_forward():
    model = init_model(Architecture.MLP, 2, hidden_units=[2], dropout=0.0, n_classes=2)
    hidden, out = Dense(2, 2), Dense(2, 2)
    hidden.params["W"][...] = [[1.0, -1.0], [2.0, 0.5]]
    hidden.params["b"][...] = [0.5, -1.0]
    out.params["W"][...] = [[0.2, -0.1], [3.0, 1.0]]
    out.params["b"][...] = [0.0, 0.3]
    model.layers = [hidden, ReLU(), out]

    probs = model.forward(np.array([[1.0, 2.0], [0.0, 0.0]]))
    # hidden (5.5, 0) -> logits (1.1, -0.25); hidden (0.5, 0) -> logits (0.1, 0.25)
    first = 1.0 / (1.0 + math.exp(-1.35))
    second = 1.0 / (1.0 + math.exp(0.15))
    np.testing.assert_allclose(probs, [[first, 1.0 - first], [second, 1.0 - second]], rtol=0, atol=1e-12)


def test_one_hot_kernel_copies_a_shifted_slice(rng):
    layer = Conv1D(1, 1, 5)
    layer.params["W"][2, 0, 0] = 1.0
    x = rng.normal(size=(3, 12, 1))
    np.testing.assert_array_equal(layer.forward(x), x[:, 2:10, :])


def test_softmax_rows_sum_to_one(rng):
    model = _tiny_mlp(rng)
    batch = 50.0 * rng.normal(size=(6, 8))
    for training in (False, True):
        np.testing.assert_allclose(model.forward(batch, training).sum(axis=1), 1.0, rtol=0, atol=1e-9)
    extreme = softmax(np.array([[1000.0, -1000.0, 0.0], [-745.0, -745.0, -745.0]]))
    np.testing.assert_allclose(extreme.sum(axis=1), 1.0, rtol=0, atol=1e-9)
    assert np.all(extreme >= 0.0)


def test_batch_norm_eval_is_affine_in_running_stats(rng):
    layer = BatchNorm1d(4)
    layer.params["gamma"] = rng.normal(size=4)
    layer.params["beta"] = rng.normal(size=4)
    layer.buffers["running_mean"] = rng.normal(size=4)
    layer.buffers["running_var"] = rng.random(4) + 0.5
    frozen = {k: v.copy() for k, v in layer.buffers.items()}

    x = rng.normal(size=(5, 4))
    expected = (
        layer.params["gamma"] * (x - frozen["running_mean"]) / np.sqrt(frozen["running_var"] + layer.eps)
        + layer.params["beta"]
    )
    np.testing.assert_allclose(layer.forward(x), expected, atol=1e-12)
    # single rows give the same answer as the batch, and the stats stay frozen
    np.testing.assert_allclose(np.vstack([layer.forward(row[None, :]) for row in x]), expected, atol=1e-12)
    for name, value in frozen.items():
        np.testing.assert_array_equal(layer.buffers[name], value)


##### Whole model #####


def _tiny_mlp(rng):
    model = init_model(Architecture.MLP, 8, seed=2, hidden_units=[5], dropout=0.0, n_classes=4)
    # the output layer starts at zero; randomize it so every gradient is exercised
    out = model.layers[-1]
    out.params["W"][...] = rng.normal(size=out.params["W"].shape)
    out.params["b"][...] = rng.normal(size=out.params["b"].shape)
    return model


def test_whole_model_gradient(rng):
    model = _tiny_mlp(rng)
    batch = rng.normal(size=(3, 8))
    labels = np.array([0, 2, 3])
    l2 = 1e-2
    _, grads = gradients(model, batch, labels, l2)
    analytic = {k: g.copy() for k, g in grads.items()}

    def loss():
        probs = model.forward(batch, training=True)
        return cross_entropy(probs, labels) + model.l2_penalty(l2)

    for key, param in model.named_parameters().items():
        assert _rel_error(analytic[key], _numeric_grad(loss, param)) < TOLERANCE, key


def test_cnn_model_gradient(rng):
    model = init_model(
        Architecture.CNN, 12, seed=1, filters=2, kernel=3, pool=2, fc_units=4,
        flatten_dropout=0.0, fc_dropout=0.0, n_classes=3,
    )
    out = model.layers[-1]
    out.params["W"][...] = rng.normal(size=out.params["W"].shape)
    batch = rng.normal(size=(4, 12))
    labels = np.array([0, 1, 2, 1])
    _, grads = gradients(model, batch, labels)
    analytic = {k: g.copy() for k, g in grads.items()}

    def loss():
        return cross_entropy(model.forward(batch, training=True), labels)

    for key, param in model.named_parameters().items():
        assert _rel_error(analytic[key], _numeric_grad(loss, param)) < TOLERANCE, key


def test_zero_input_gives_zero_first_layer_gradient(rng):
    model = _tiny_mlp(rng)
    _, grads = gradients(model, np.zeros((3, 8)), np.array([0, 1, 3]))
    assert np.all(grads["0.W"] == 0.0)


def test_l2_component_doubles(rng):
    model = _tiny_mlp(rng)
    batch = rng.normal(size=(3, 8))
    labels = np.array([1, 1, 2])
    _, plain = gradients(model, batch, labels, 0.0)
    _, single = gradients(model, batch, labels, 0.01)
    _, double = gradients(model, batch, labels, 0.02)
    for key in plain:
        np.testing.assert_allclose(double[key] - plain[key], 2.0 * (single[key] - plain[key]), atol=1e-12)
    # biases are not decayed
    np.testing.assert_array_equal(single["0.b"], plain["0.b"])


##### Losses #####


def test_cross_entropy_values():
    uniform = np.full((4, 256), 1.0 / 256)
    assert cross_entropy(uniform, np.arange(4)) == pytest.approx(math.log(256))
    probs = np.array([[0.5, 0.5, 0.0, 0.0], [0.25, 0.25, 0.25, 0.25]])
    assert cross_entropy(probs, np.array([0, 1])) == pytest.approx(1.0397, abs=1e-4)


def test_cross_entropy_clamps_zero_probability():
    assert cross_entropy(np.array([[1.0, 0.0]]), np.array([1])) == pytest.approx(-math.log(1e-12))


def test_fresh_model_loss_is_ln_256(hw_noiseless):
    model = init_model(Architecture.MLP, hw_noiseless.trace_length, seed=0)
    assert model.loss(hw_noiseless) == pytest.approx(math.log(256), abs=0.01)


##### Initialization #####


def test_init_is_deterministic_per_seed():
    a = init_model(Architecture.MLP, 20, seed=4)
    b = init_model(Architecture.MLP, 20, seed=4)
    c = init_model(Architecture.MLP, 20, seed=5)
    for key, pa in a.named_parameters().items():
        np.testing.assert_array_equal(pa, b.named_parameters()[key])
    assert not np.array_equal(a.layers[0].params["W"], c.layers[0].params["W"])


def test_he_uniform_scale():
    model = init_model(Architecture.MLP, 500, seed=0)
    w = model.layers[0].params["W"]
    assert np.std(w) == pytest.approx(math.sqrt(2.0 / 500), rel=0.03)
    assert np.all(model.layers[-1].params["W"] == 0.0)
    assert np.all(model.layers[0].params["b"] == 0.0)


def test_cnn_too_short_for_kernels():
    assert CnnSpec(input_length=300).pooled_length() == (300 - 118) // 3
    with pytest.raises(ConfigurationError):
        init_model(Architecture.CNN, 100)


def test_input_width_checked():
    model = init_model(Architecture.MLP, 10)
    with pytest.raises(DimensionError):
        model.forward(np.zeros((2, 11)))
    with pytest.raises(RangeError):
        model.accuracy(np.zeros((2, 10)))


##### Optimizer #####


def test_adam_first_step_moves_by_learning_rate():
    w = np.array([1.0, -2.0])
    Adam(learning_rate=0.1).step({"w": w}, {"w": np.array([3.0, -0.5])})
    np.testing.assert_allclose(w, [0.9, -1.9], atol=1e-6)


##### Training #####


def _blobs(n_per_class: int = 50) -> TraceMatrix:
    rng = np.random.default_rng(8)
    centres = np.array([[4.0, 4.0], [-4.0, 4.0], [-4.0, -4.0], [4.0, -4.0]])
    x = np.concatenate([c + rng.normal(scale=0.5, size=(n_per_class, 2)) for c in centres])
    return TraceMatrix.from_samples(x, key_bytes=np.repeat(np.arange(4), n_per_class))


def test_separable_toy_reaches_full_accuracy():
    data = _blobs()
    model = init_model(Architecture.MLP, 2, seed=0, hidden_units=[16], dropout=0.0, n_classes=4)
    report = train(model, data, cfg=TrainConfig(batch_size=20, epochs=50, learning_rate=1e-2, seed=0))
    assert report.train_accuracy[-1] == 1.0
    assert accuracy(model, data) == 1.0
    assert report.train_loss[-1] < report.initial_loss


def test_memorizes_one_trace_per_class():
    cfg = SynthConfig(
        n_traces_per_device=256,
        trace_length=32,
        devices=[DeviceProfile(device_id=1, leak_positions=[4])],
        leakage_model=LeakageModel.BITS,
        background_amplitude=0.0,
    )
    traces = synth_dataset(cfg)
    model = init_model(Architecture.MLP, 32, seed=0, dropout=0.0)
    assert model.loss(traces) == pytest.approx(math.log(256))

    report = train(
        model,
        traces,
        cfg=TrainConfig(batch_size=16, epochs=100, learning_rate=5e-3, l2_lambda=0.0, seed=0),
    )
    assert report.initial_loss == pytest.approx(math.log(256))
    assert len(report.train_loss) == 100
    assert max(report.train_accuracy) == 1.0
    assert accuracy(model, traces) == 1.0
    np.testing.assert_array_equal(predict(model, traces), traces.key_bytes)


def test_training_is_reproducible(small_devices):
    cfg = TrainConfig(batch_size=64, epochs=2, seed=3)
    a = init_model(Architecture.MLP, 64, seed=1)
    b = init_model(Architecture.MLP, 64, seed=1)
    ra = train(a, small_devices, small_devices, cfg)
    rb = train(b, small_devices, small_devices, cfg)
    assert ra.train_loss == rb.train_loss
    assert ra.val_accuracy == rb.val_accuracy
    np.testing.assert_array_equal(a.predict_proba(small_devices), b.predict_proba(small_devices))


def test_label_range_checked_against_classes():
    model = init_model(Architecture.MLP, 2, hidden_units=[4], n_classes=4)
    data = TraceMatrix.from_samples(np.zeros((2, 2)), key_bytes=[0, 9])
    with pytest.raises(RangeError):
        train(model, data, cfg=TrainConfig(epochs=1))


##### Prediction #####


def test_constant_logit_shift_keeps_labels(rng, small_devices):
    logits = rng.normal(size=(20, 256))
    shift = rng.normal(scale=100.0, size=(20, 1))
    np.testing.assert_array_equal(softmax(logits + shift).argmax(axis=1), softmax(logits).argmax(axis=1))

    model = init_model(Architecture.MLP, 64, seed=0)
    train(model, small_devices, cfg=TrainConfig(epochs=1, batch_size=128))
    before = predict(model, small_devices)
    model.layers[-1].params["b"] += 7.5
    np.testing.assert_array_equal(predict(model, small_devices), before)


def test_uniform_model_scores_chance(hw_noiseless):
    model = init_model(Architecture.MLP, hw_noiseless.trace_length, seed=0)
    np.testing.assert_allclose(model.predict_proba(hw_noiseless), 1.0 / 256, rtol=0, atol=1e-15)
    # balanced keys, 4 per class: a constant prediction is right for exactly one class
    assert accuracy(model, hw_noiseless) == pytest.approx(1.0 / 256)


##### Model files #####


def test_save_and_load_model(tmp_path, small_devices):
    model = init_model(Architecture.MLP, 8, seed=0, hidden_units=[10])
    pca = fit_pca(small_devices, p=8)
    projected = small_devices.with_samples((small_devices.samples - pca.mean) @ pca.components)
    train(model, projected, cfg=TrainConfig(epochs=1, batch_size=128))

    reference = np.linspace(0.0, 1.0, 70)
    path = save_model(tmp_path / "model.scan", model, pca=pca, reference=reference, resample_length=64)
    loaded = load_model(path)

    np.testing.assert_array_equal(loaded.network.predict_proba(projected), model.predict_proba(projected))
    np.testing.assert_array_equal(loaded.pca.components, pca.components)
    np.testing.assert_array_equal(loaded.reference, reference)
    assert loaded.resample_length == 64
    assert loaded.network.summary() == model.summary()


def test_load_model_rejects_garbage(tmp_path):
    path = save_model(tmp_path / "m.scan", init_model(Architecture.MLP, 4, hidden_units=[3]))
    data = path.read_bytes()
    (tmp_path / "bad.scan").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(TraceFormatError):
        load_model(tmp_path / "bad.scan")
    (tmp_path / "long.scan").write_bytes(data + b"\x00" * 8)
    with pytest.raises(TraceFormatError):
        load_model(tmp_path / "long.scan")


def test_load_model_rejects_corrupt_descriptor(tmp_path):
    path = save_model(tmp_path / "m.scan", init_model(Architecture.MLP, 4, hidden_units=[3]))
    data = bytearray(path.read_bytes())
    # first byte of the JSON descriptor follows the 10-byte header
    assert data[10:11] == b"{"
    data[10] = ord("[")
    path.write_bytes(bytes(data))
    with pytest.raises(TraceFormatError, match="unreadable model descriptor"):
        load_model(path)
