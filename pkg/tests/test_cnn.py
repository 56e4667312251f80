import math

import numpy as np
import pytest

from trafficvis import cnn
from trafficvis.byteclass import ByteClass
from trafficvis.errors import (BadMagic, NonFiniteLoss, ShapeMismatch, SizeMismatch, TooFewSamples,
                               VersionMismatch, WrongOrder)
from trafficvis.hilbert import layout


# ---------------------------------------------------------------- reference forward (nested loops)

def ref_conv(x, w, b):
    c_in, h, wd = x.shape
    f_out = w.shape[0]
    out = np.zeros((f_out, h, wd))
    for f in range(f_out):
        for i in range(h):
            for j in range(wd):
                s = b[f]
                for c in range(c_in):
                    for di in range(3):
                        for dj in range(3):
                            ii, jj = i + di - 1, j + dj - 1
                            if 0 <= ii < h and 0 <= jj < wd:
                                s += w[f, c, di, dj] * x[c, ii, jj]
                out[f, i, j] = s
    return out


def ref_pool(x):
    c, h, w = x.shape
    out = np.zeros((c, h // 2, w // 2))
    for k in range(c):
        for i in range(h // 2):
            for j in range(w // 2):
                out[k, i, j] = max(x[k, 2 * i, 2 * j], x[k, 2 * i, 2 * j + 1],
                                   x[k, 2 * i + 1, 2 * j], x[k, 2 * i + 1, 2 * j + 1])
    return out


def ref_forward(p, x):
    relu = lambda a: np.where(a > 0, a, 0.0)
    h = ref_pool(relu(ref_conv(x, p["conv1.w"], p["conv1.b"])))
    h = ref_pool(relu(ref_conv(h, p["conv2.w"], p["conv2.b"])))
    flat = h.reshape(-1)
    hidden = [max(0.0, p["dense1.b"][k] + sum(p["dense1.w"][k, i] * flat[i] for i in range(flat.size)))
              for k in range(p["dense1.w"].shape[0])]
    logits = [p["dense2.b"][o] + sum(p["dense2.w"][o, k] * hidden[k] for k in range(len(hidden)))
              for o in range(2)]
    m = max(logits)
    e = [math.exp(v - m) for v in logits]
    return e[0] / sum(e), e[1] / sum(e)


def random_model(seed, size, bias_scale=0.1):
    m = cnn.init_model(seed, size)
    rng = np.random.default_rng(seed + 1)
    for k in cnn.PARAM_NAMES:
        if k.endswith(".b"):
            m.params[k] = rng.normal(0, bias_scale, m.params[k].shape)
    return m


# ---------------------------------------------------------------- shapes / init

def test_param_shapes_default():
    s = cnn.param_shapes()
    assert s["conv1.w"] == (8, 6, 3, 3) and s["conv2.w"] == (16, 8, 3, 3)
    assert s["dense1.w"] == (64, 4096) and s["dense2.w"] == (2, 64)
    m = cnn.init_model(3)
    assert m.rng_seed == 3 and m.is_finite()
    assert m.n_params() == 8 * 54 + 8 + 16 * 72 + 16 + 64 * 4096 + 64 + 2 * 64 + 2


def test_init_he_uniform_bounds():
    m = cnn.init_model(0)
    for k in ("conv1.w", "conv2.w", "dense1.w", "dense2.w"):
        fan_in = np.prod(m[k].shape[1:])
        assert np.abs(m[k]).max() <= np.sqrt(6 / fan_in)
    assert not m["conv1.b"].any()
    assert cnn.init_model(0).bit_equal(m) and not cnn.init_model(1).bit_equal(m)


def test_wrong_param_shape():
    params = cnn.zero_model(8).params
    params["conv1.w"] = np.zeros((8, 6, 3, 2))
    with pytest.raises(ShapeMismatch):
        cnn.CnnModel(params, 8)


# ---------------------------------------------------------------- encode_input

def test_encode_all_null():
    x = cnn.encode_input(layout(b"\x00" * 4096, 6))
    assert x.shape == (6, 64, 64)
    assert (x[0] == 1).all() and not x[1:].any()


def test_encode_aaaa_padding():
    x = cnn.encode_input(layout(b"AAAA", 6))
    assert x[ByteClass.PRINTABLE].sum() == 4
    assert x[ByteClass.PADDING].sum() == 4092
    assert (x.sum(axis=0) == 1.0).all()


def test_encode_one_hot_sums(rng):
    x = cnn.encode_input(layout(rng.integers(0, 256, 3000, dtype=np.uint8).tobytes(), 6))
    assert (x.sum(axis=0) == 1.0).all()
    assert set(np.unique(x)) <= {0.0, 1.0}


def test_encode_wrong_order():
    with pytest.raises(WrongOrder):
        cnn.encode_input(layout(b"a", 5))


# ---------------------------------------------------------------- forward

def test_zero_model_is_uniform(rng):
    assert cnn.forward(cnn.zero_model(), rng.normal(size=(6, 64, 64))) == (0.5, 0.5)


def test_forward_matches_reference_small(rng):
    for seed in range(3):
        m = random_model(seed, 8)
        x = rng.normal(size=(6, 8, 8))
        assert cnn.forward(m, x) == pytest.approx(ref_forward(m.params, x), abs=1e-9)


def test_forward_matches_reference_full_size():
    m = random_model(11, 64)
    x = cnn.encode_input(layout(np.random.default_rng(5).integers(0, 256, 4096, dtype=np.uint8).tobytes(), 6))
    assert cnn.forward(m, x) == pytest.approx(ref_forward(m.params, x), abs=1e-6)


def test_softmax_sums_to_one(rng):
    # one-hot images are the real input domain; huge logit gaps would round p to exactly 1.0
    for i in range(100):
        m = random_model(100 + i, 8, bias_scale=1.0)
        x = cnn.encode_input(layout(rng.integers(0, 256, int(rng.integers(1, 65)), dtype=np.uint8).tobytes(), 3), 3)
        pb, pm = cnn.forward(m, x)
        assert 0 < pb < 1 and 0 < pm < 1
        assert abs(pb + pm - 1) <= 1e-9


def test_forward_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        cnn.forward(cnn.zero_model(), np.zeros((6, 32, 32)))
    with pytest.raises(ShapeMismatch):
        cnn.forward(cnn.zero_model(8), np.zeros((5, 8, 8)))


def test_pool_never_exceeds_window_max(rng):
    x = rng.normal(size=(2, 3, 8, 8))
    out, _ = cnn._pool_forward(x)
    windows = x.reshape(2, 3, 4, 2, 4, 2)
    assert (out <= windows.max(axis=(3, 5))).all()
    for n in range(2):
        np.testing.assert_array_equal(out[n], ref_pool(x[n]))


def test_zero_kernel_conv_is_bias_only(rng):
    x = rng.normal(size=(1, 6, 8, 8))
    b = np.arange(8, dtype=float)
    out, _ = cnn._conv_forward(x, np.zeros((8, 6, 3, 3)), b)
    assert (out[0] == b[:, None, None]).all()


def test_batch_equals_single(rng):
    m = random_model(4, 16)
    xs = rng.normal(size=(5, 6, 16, 16))
    batch = cnn.predict_proba(m, xs)
    for i in range(5):
        assert tuple(batch[i]) == pytest.approx(cnn.forward(m, xs[i]), abs=1e-12)


# ---------------------------------------------------------------- loss

def test_loss_values():
    assert cnn.loss((0.5, 0.5), "benign") == pytest.approx(math.log(2))
    assert cnn.loss((0.5, 0.5), "malicious") == pytest.approx(0.6931, abs=1e-4)
    assert cnn.loss((1.0, 0.0), "benign") == 0
    assert cnn.loss((0.9, 0.1), "malicious") == pytest.approx(-math.log(0.1))
    assert cnn.loss((0.9, 0.1), "malicious") == pytest.approx(2.3026, abs=1e-4)
    assert cnn.loss((1.0, 0.0), "malicious") == pytest.approx(-math.log(1e-12))


# ---------------------------------------------------------------- backward

def test_zero_model_dense2_bias_gradient(rng):
    x = rng.normal(size=(6, 64, 64))
    g = cnn.backward(cnn.zero_model(), x, "benign")
    assert tuple(g["dense2.b"]) == (-0.5, 0.5)
    g = cnn.backward(cnn.zero_model(), x, "malicious")
    assert tuple(g["dense2.b"]) == (0.5, -0.5)
    assert list(g) == list(cnn.PARAM_NAMES)


def _numeric_grad(model, x, label, name, idx, eps=1e-4):
    m = model.copy()
    orig = m.params[name][idx]
    m.params[name][idx] = orig + eps
    up = cnn.loss(cnn.forward(m, x), label)
    m.params[name][idx] = orig - eps
    down = cnn.loss(cnn.forward(m, x), label)
    return (up - down) / (2 * eps)


def gradient_check(seed=0, samples=200, size=8):
    """Max relative error between analytic and central-difference gradients."""
    rng = np.random.default_rng(seed)
    model = random_model(seed, size)
    x = rng.normal(size=(6, size, size))
    label = "malicious"
    grads = cnn.backward(model, x, label)
    worst = 0.0
    checked = 0
    # spread the budget evenly; blocks smaller than their share are checked in full
    names = sorted(cnn.PARAM_NAMES, key=lambda k: model.params[k].size)
    for i, name in enumerate(names):
        quota = (samples - checked) // (len(names) - i)
        flat = rng.choice(model.params[name].size, size=min(quota, model.params[name].size), replace=False)
        for f in flat:
            idx = np.unravel_index(f, model.params[name].shape)
            a = grads[name][idx]
            n = _numeric_grad(model, x, label, name, idx)
            worst = max(worst, abs(a - n) / max(abs(a), abs(n), 1e-8))
            checked += 1
    return worst, checked


def test_gradient_check_reduced_model():
    worst, checked = gradient_check(seed=0)
    assert checked == 200
    assert worst < 1e-3


def test_dead_relu_path_has_zero_gradient(rng):
    m = random_model(2, 8)
    m.params["conv2.b"][3] = -1e3
    g = cnn.backward(m, rng.normal(size=(6, 8, 8)), "benign")
    assert not g["conv2.w"][3].any() and g["conv2.b"][3] == 0
    per_channel = g["dense1.w"].reshape(64, 16, 2, 2)
    assert not per_channel[:, 3].any()


def test_batch_gradient_is_mean_of_singles(rng):
    m = random_model(3, 8)
    xs = rng.normal(size=(3, 6, 8, 8))
    ys = ["benign", "malicious", "malicious"]
    _, g = cnn.batch_loss_and_grad(m, xs, [0, 1, 1])
    singles = [cnn.backward(m, xs[i], ys[i]) for i in range(3)]
    for k in cnn.PARAM_NAMES:
        np.testing.assert_allclose(g[k], sum(s[k] for s in singles) / 3, rtol=1e-10, atol=1e-14)


# ---------------------------------------------------------------- training

def _constant_images(byte, n, order=6):
    return np.stack([cnn.encode_input(layout(bytes([byte]) * 4 ** order, order), order)] * n)


def test_too_few_samples():
    x = np.zeros((129, 6, 8, 8))
    y = ["benign"] * 29 + ["malicious"] * 100
    with pytest.raises(TooFewSamples, match="30"):
        cnn.train(cnn.init_model(0, 8), x, y)


def test_separable_training_descends():
    x = np.concatenate([_constant_images(0x00, 30), _constant_images(0x41, 30)])
    y = ["benign"] * 30 + ["malicious"] * 30
    model, trace = cnn.train(cnn.init_model(0), x, y, cnn.TrainConfig(iterations=50, seed=0))
    assert len(trace) == 50
    assert trace[-1] < 0.1 * trace[0]
    assert np.mean(trace[-10:]) < np.mean(trace[:10])
    assert cnn.classify(model, layout(b"\x00" * 4096))[0] == "benign"
    assert cnn.classify(model, layout(b"A" * 4096))[0] == "malicious"


def test_training_is_deterministic(rng):
    x = rng.integers(0, 2, size=(60, 6, 16, 16)).astype(np.uint8)
    y = [0, 1] * 30
    cfg = cnn.TrainConfig(iterations=25, seed=9)
    m1, t1 = cnn.train(cnn.init_model(1, 16), x, y, cfg)
    m2, t2 = cnn.train(cnn.init_model(1, 16), x, y, cfg)
    assert t1 == t2
    assert cnn.save_model(m1) == cnn.save_model(m2)
    m3, _ = cnn.train(cnn.init_model(1, 16), x, y, cnn.TrainConfig(iterations=25, seed=10))
    assert not m3.bit_equal(m1)


def test_training_does_not_mutate_input_model(rng):
    m = cnn.init_model(0, 8)
    before = cnn.save_model(m)
    cnn.train(m, rng.normal(size=(60, 6, 8, 8)), [0, 1] * 30, cnn.TrainConfig(iterations=3))
    assert cnn.save_model(m) == before


def test_non_finite_loss_aborts_with_trace(rng):
    x = rng.normal(size=(60, 6, 8, 8))
    x[:] = np.nan
    with pytest.raises(NonFiniteLoss) as info:
        cnn.train(cnn.init_model(0, 8), x, [0, 1] * 30, cnn.TrainConfig(iterations=5))
    assert info.value.trace == []


@pytest.mark.parametrize("kw", [dict(iterations=0), dict(learning_rate=0), dict(momentum=1.0),
                                dict(batch_size=0)])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        cnn.TrainConfig(**kw)


# ---------------------------------------------------------------- classify

def _model_with_p(p):
    m = cnn.zero_model()
    m.params["dense2.b"][1] = math.log(p / (1 - p))
    return m


def test_classify_threshold_rule():
    img = layout(b"x", 6)
    label, p = cnn.classify(_model_with_p(0.91), img, 0.5)
    assert label == "malicious" and p == pytest.approx(0.91)
    assert cnn.classify(_model_with_p(0.91), img, 0.95)[0] == "benign"
    label, p = cnn.classify(cnn.zero_model(), img, 0.5)
    assert p == 0.5 and label == "malicious"
    assert cnn.decide(0.5, 0.5) == "malicious" and cnn.decide(0.4999, 0.5) == "benign"


# ---------------------------------------------------------------- persistence

def test_save_load_roundtrip():
    m = random_model(7, 64)
    blob = cnn.save_model(m)
    assert blob[:6] == b"MSQD\x01\x00"
    assert int.from_bytes(blob[6:10], "little") == 8 * 6 * 9
    assert len(blob) == 6 + 8 * 4 + 8 * m.n_params()
    back = cnn.load_model(blob)
    assert back.bit_equal(m) and back.input_size == 64
    small = random_model(7, 8)
    assert cnn.load_model(cnn.save_model(small)).bit_equal(small)


def test_load_errors():
    blob = cnn.save_model(cnn.init_model(0, 8))
    with pytest.raises(BadMagic):
        cnn.load_model(b"MSQX" + blob[4:])
    with pytest.raises(VersionMismatch):
        cnn.load_model(blob[:4] + b"\x02\x00" + blob[6:])
    with pytest.raises(SizeMismatch):
        cnn.load_model(blob[:-3])
    with pytest.raises(SizeMismatch):
        cnn.load_model(blob[:8])
    with pytest.raises(SizeMismatch):
        cnn.load_model(blob + b"\x00")
    with pytest.raises(SizeMismatch):
        cnn.load_model(blob[:6] + (5).to_bytes(4, "little") + b"\x00" * 40 + blob[6 + 4 + 8 * 432:])
