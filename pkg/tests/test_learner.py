import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from posemon.learner import tensor as T
from posemon.learner.atom import (AtomConfig, ModelFormatError, atom_forward, bench_forward, encode_samples,
                                  forward, gradient_check, init_model, load_model, loss_and_grads, predict_samples,
                                  resize_bilinear, resize_nearest, save_model)
from posemon.learner.train import TrainingDiverged, augment_batch, target_matrix, train
from posemon.synth import CorruptionSpec, SceneConfig, default_template, generate_sequences

SMALL = AtomConfig(input_size=(32, 32), conv_channels=(4, 8), fc_sizes=(16,), epochs=3, batch_size=8)


def _rand_inputs(cfg, n, rng):
    h, w = cfg.input_size
    return rng.random((n, 2, h, w)), rng.normal(size=(n, cfg.aux_size))


def _numeric_grad(f, arr, h=1e-6):
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = arr[i]
        arr[i] = orig + h
        up = f()
        arr[i] = orig - h
        down = f()
        arr[i] = orig
        g[i] = (up - down) / (2 * h)
    return g


def _rel(a, b):
    scale = max(np.abs(a).max(), np.abs(b).max())
    return 0.0 if scale == 0 else np.abs(a - b).max() / scale


# ------------------------------------------------------------ tensor ops

@pytest.mark.parametrize("op", ["linear", "relu", "concat", "pool", "conv", "mse"])
def test_op_gradients_double(op, rng):
    x = rng.normal(size=(3, 2, 7, 6))
    v = rng.normal(size=(3, 5))
    w = rng.normal(size=(5, 4))
    b = rng.normal(size=4)
    kw = rng.normal(size=(3, 2, 3, 3))
    kb = rng.normal(size=3)
    tgt = rng.normal(size=(3, 4))
    proj = rng.normal(size=(3, 4))

    def build(tensors):
        X, V, W, B, KW, KB = tensors
        if op == "linear":
            out = T.linear(V, W, B)
        elif op == "relu":
            out = T.relu(T.linear(V, W, B))
        elif op == "concat":
            out = T.linear(T.concat([V, T.relu(V)], axis=1), T.Tensor(np.vstack([w, w])), B)
        elif op == "pool":
            out = T.linear(T.global_avg_pool(X), T.Tensor(rng_w), B)
        elif op == "conv":
            out = T.linear(T.global_avg_pool(T.conv2d(X, KW, KB, stride=2)), T.Tensor(rng_w3), B)
        else:
            return T.mse_loss(T.linear(V, W, B), tgt)
        return T.mse_loss(out, proj)

    rng_w = np.random.default_rng(5).normal(size=(2, 4))
    rng_w3 = np.random.default_rng(6).normal(size=(3, 4))
    arrays = [x, v, w, b, kw, kb]
    tensors = [T.Tensor(a, requires_grad=True) for a in arrays]
    build(tensors).backward()
    for t, a in zip(tensors, arrays):
        if t.grad is None:
            continue
        num = _numeric_grad(lambda: float(build([T.Tensor(q) for q in arrays]).data), a)
        assert _rel(t.grad, num) < 1e-6


def test_mse_examples():
    pred = T.Tensor(np.array([[1.0, 2.0, 0.0, 0.0]]), requires_grad=True)
    loss = T.mse_loss(pred, np.zeros((1, 4)))
    assert float(loss.data) == 1.25
    loss.backward()
    assert np.array_equal(pred.grad, 2 * pred.data / 4)
    assert float(T.mse_loss(T.Tensor(np.ones((2, 4))), np.ones((2, 4))).data) == 0.0
    with pytest.raises(ValueError):
        T.mse_loss(T.Tensor(np.ones((2, 4))), np.ones((3, 4)))


def test_conv_output_shape():
    out = T.conv2d(T.Tensor(np.zeros((1, 2, 9, 8))), T.Tensor(np.zeros((5, 2, 3, 3))), T.Tensor(np.zeros(5)))
    assert out.shape == (1, 5, 5, 4)


# ----------------------------------------------------------- model / forward

def test_forward_four_outputs_and_zero_params(rng):
    model = init_model(SMALL)
    lv = atom_forward(model, rng.integers(0, 256, (50, 40)).astype(np.uint8), rng.random((50, 40)) < 0.5,
                      rng.normal(size=(16, 3)), [0.9, 0.0, 0.1])
    assert len(lv.as_array()) == 4
    zero = init_model(SMALL)
    for k in zero.params:
        zero.params[k][...] = 0
    zero.params["head.b"][...] = [0.5, -1.0, 2.0, 3.0]
    x, aux = _rand_inputs(SMALL, 5, rng)
    out = forward(SMALL, zero.params, x.astype(np.float32), aux.astype(np.float32)).data
    assert np.array_equal(out, np.tile(zero.params["head.b"], (5, 1)))


def test_forward_deterministic(rng):
    model = init_model(SMALL)
    x, aux = _rand_inputs(SMALL, 3, rng)
    a = forward(SMALL, model.params, x, aux).data
    assert np.array_equal(a, forward(SMALL, model.params, x, aux).data)


def test_shape_mismatch_raises():
    model = init_model(SMALL)
    with pytest.raises(ValueError):
        atom_forward(model, np.zeros((32, 32), np.uint8), np.zeros((32, 32), bool), np.zeros((15, 3)), [1, 0, 0])


def test_resize_helpers():
    img = np.arange(16.0).reshape(4, 4)
    assert np.array_equal(resize_bilinear(img, (4, 4)), img)
    up = resize_bilinear(img, (8, 8))
    assert up.shape == (8, 8) and up.min() >= 0 and up.max() <= 15
    m = np.eye(4, dtype=bool)
    assert np.array_equal(resize_nearest(m, (8, 8)), np.kron(m, np.ones((2, 2), bool)))


@pytest.mark.parametrize("flag", ["use_mask", "use_joints"])
def test_ablation_contracts(flag, rng):
    cfg = replace(SMALL, **{flag: False})
    model = init_model(cfg)
    for _ in range(20):
        img = rng.integers(0, 256, (32, 32)).astype(np.uint8)
        m1, m2 = rng.random((32, 32)) < 0.5, rng.random((32, 32)) < 0.5
        j1, j2 = rng.normal(size=(16, 3)), rng.normal(size=(16, 3))
        if flag == "use_mask":
            a = atom_forward(model, img, m1, j1, [0.9, 0, 0])
            b = atom_forward(model, img, m2, j1, [0.9, 0, 0])
        else:
            a = atom_forward(model, img, m1, j1, [0.9, 0, 0])
            b = atom_forward(model, img, m1, j2, [0.9, 0, 0])
        assert np.array_equal(a.as_array(), b.as_array())


# ------------------------------------------------------------ gradient check

def test_gradient_check_float32_and_float64(rng):
    cfg = replace(SMALL, input_size=(12, 12))
    model = init_model(cfg)
    x, aux = _rand_inputs(cfg, 3, rng)
    y = rng.normal(size=(3, 4))
    err32, per, fails = gradient_check(model, x, aux, y, tolerance=1e-3, max_entries=30)
    assert err32 < 1e-3 and not fails and set(per) == set(model.params)
    err64, _, _ = gradient_check(model.astype("float64"), x, aux, y, tolerance=1e-6, max_entries=30)
    assert err64 < 1e-6


def test_gradient_check_reports_failures(rng):
    cfg = replace(SMALL, input_size=(12, 12))
    model = init_model(cfg)
    x, aux = _rand_inputs(cfg, 2, rng)
    _, per, fails = gradient_check(model, x, aux, rng.normal(size=(2, 4)), tolerance=0.0, max_entries=5)
    assert fails == [k for k, e in per.items() if e > 0.0] and fails


def test_zero_input_head_bias_gradient():
    model = init_model(replace(SMALL, dtype="float64"))
    model.params["head.b"][...] = [0.3, -0.7, 1.1, 0.25]
    h, w = SMALL.input_size
    _, grads = loss_and_grads(model, np.zeros((1, 2, h, w)), np.zeros((1, SMALL.aux_size)), np.zeros((1, 4)))
    assert np.array_equal(grads["head.b"], 2 * model.params["head.b"] / 4)


# ------------------------------------------------------------- augmentation

@pytest.fixture(scope="module")
def tiny_frames():
    return generate_sequences(default_template(4, 3), SceneConfig(width=16, height=16), 1, 1,
                              CorruptionSpec(0, 0, 0), seed=0)


def test_augment_prob_zero_unchanged(clean_frames):
    out, targets, changed = augment_batch(clean_frames, 0.0, 0.2, 0.2, np.random.default_rng(0))
    assert out == clean_frames and not changed.any()
    assert np.array_equal(targets, target_matrix(clean_frames))


def test_augment_sigma_zero_unchanged(clean_frames):
    out, targets, changed = augment_batch(clean_frames, 1.0, 0.0, 0.0, np.random.default_rng(0))
    assert out == clean_frames and not changed.any()
    assert np.array_equal(targets, target_matrix(clean_frames))


def test_augment_relabels(clean_frames):
    out, targets, changed = augment_batch(clean_frames, 1.0, 0.2, 0.2, np.random.default_rng(1))
    assert changed.all()
    assert np.allclose(targets, target_matrix(out))
    assert np.all(targets[:, 1] > 0)


def test_augment_needs_ground_truth(clean_frames):
    with pytest.raises(ValueError):
        augment_batch([replace(clean_frames[0], gt_mesh=None, gt_joints=None, gt_mask=None)], 0.5, 0.1, 0.1,
                      np.random.default_rng(0))


def test_augment_binomial_count(tiny_frames):
    n, p = 10_000, 0.6
    _, _, changed = augment_batch(tiny_frames * n, p, 0.1, 0.1, np.random.default_rng(2024), default_template(4, 3))
    sigma = np.sqrt(n * p * (1 - p))
    assert abs(changed.sum() - n * p) <= 4 * sigma


def test_default_augment_prob():
    assert AtomConfig().augment_prob == 0.6


# ------------------------------------------------------------------ training

def test_memorize_single_sample(clean_frames):
    cfg = replace(SMALL, epochs=200, augment=False, batch_size=8)
    _, hist = train(init_model(cfg), clean_frames[:1] * 8, config=cfg)
    assert hist.train_mse[-1] < 1e-4


def test_fit_small_distinct_set(mixed_frames):
    cfg = replace(SMALL, epochs=150, augment=False, batch_size=8, learning_rate=3e-3)
    data = mixed_frames[:8]
    model, hist = train(init_model(cfg), data, config=cfg)
    assert min(hist.train_mse) < 0.1 * hist.train_mse[0]
    pred = predict_samples(model, data)
    assert np.corrcoef(pred[:, 1], target_matrix(data)[:, 1])[0, 1] > 0.9


def test_training_deterministic(mixed_frames):
    cfg = replace(SMALL, epochs=2)
    a = train(init_model(cfg), mixed_frames[:12], mixed_frames[12:16], config=cfg)
    b = train(init_model(cfg), mixed_frames[:12], mixed_frames[12:16], config=cfg)
    assert a[1].train_mse == b[1].train_mse and a[1].val_mse == b[1].val_mse
    assert all(np.array_equal(a[0].params[k], b[0].params[k]) for k in a[0].params)


def test_training_keeps_best_validation(mixed_frames):
    cfg = replace(SMALL, epochs=4, augment=False)
    model, hist = train(init_model(cfg), mixed_frames[:12], mixed_frames[12:20], config=cfg)
    assert hist.best_epoch == int(np.argmin(hist.val_mse))
    x, aux = encode_samples(model.config, mixed_frames[12:20])
    y = (target_matrix(mixed_frames[12:20]) - model.target_mean) / model.target_std
    z = forward(model.config, model.params, x, aux).data
    assert np.isclose(np.mean((z - y) ** 2), min(hist.val_mse), rtol=1e-4)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_divergence(mixed_frames):
    cfg = replace(SMALL, epochs=3, augment=False, learning_rate=1e38)
    with pytest.raises(TrainingDiverged):
        train(init_model(cfg), mixed_frames[:8], config=cfg)


def test_empty_training_set():
    with pytest.raises(ValueError):
        train(init_model(SMALL), [])


# ------------------------------------------------------------------- storage

def test_save_load_roundtrip(tmp_path, rng, mixed_frames):
    model, _ = train(init_model(SMALL), mixed_frames[:8], config=replace(SMALL, epochs=1))
    save_model(model, tmp_path / "m.json")
    loaded = load_model(tmp_path / "m.json")
    assert loaded.config == model.config
    assert np.array_equal(predict_samples(loaded, mixed_frames[:4]), predict_samples(model, mixed_frames[:4]))
    for k in model.params:
        assert loaded.params[k].dtype == model.params[k].dtype
        assert np.array_equal(loaded.params[k], model.params[k])


def test_load_errors(tmp_path):
    save_model(init_model(SMALL), tmp_path / "m.json")
    text = (tmp_path / "m.json").read_text()
    (tmp_path / "trunc.json").write_text(text[: len(text) // 2])
    with pytest.raises(ModelFormatError, match="parse"):
        load_model(tmp_path / "trunc.json")
    doc = json.loads(text)
    doc["version"] = 99
    (tmp_path / "v.json").write_text(json.dumps(doc))
    with pytest.raises(ModelFormatError, match="version"):
        load_model(tmp_path / "v.json")
    doc = json.loads(text)
    doc["shapes"]["head.w"] = [3, 3]
    (tmp_path / "s.json").write_text(json.dumps(doc))
    with pytest.raises(ModelFormatError, match="head.w"):
        load_model(tmp_path / "s.json")
    (tmp_path / "l.json").write_text("[1, 2]")
    with pytest.raises(ModelFormatError):
        load_model(tmp_path / "l.json")


@settings(max_examples=10, deadline=None)
@given(st.sampled_from([(16, 16), (24, 20)]), st.integers(0, 100))
def test_config_roundtrip(size, seed):
    cfg = AtomConfig(input_size=size, seed=seed, conv_channels=(3,), fc_sizes=(5, 4))
    assert AtomConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        AtomConfig.from_dict({"bogus": 1})


# ------------------------------------------------------------------- timing

def test_bench_forward():
    model = init_model(AtomConfig())
    t = bench_forward(model, 10)
    assert 0 < t < 0.05
    big = init_model(AtomConfig(input_size=(256, 256)))
    assert bench_forward(big, 10) > t
    with pytest.raises(ValueError):
        bench_forward(model, 5)
