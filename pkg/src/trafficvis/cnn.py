"""Small two-convolution network for class images, written directly in numpy.

Architecture (input ``6 x S x S``, S = 64 by default)::

    conv 3x3 same, 8 filters -> ReLU -> maxpool 2x2
    conv 3x3 same, 16 filters -> ReLU -> maxpool 2x2
    flatten (16 * S/4 * S/4) -> dense 64 -> ReLU -> dense 2 -> softmax

Everything runs in float64. Output index 0 is benign, 1 is malicious.
"""
import struct
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .byteclass import N_CLASSES
from .errors import (BadMagic, NonFiniteLoss, ShapeMismatch, SizeMismatch,
                     TooFewSamples, VersionMismatch, WrongOrder)
from .labels import LABELS, label_index

INPUT_CHANNELS = N_CLASSES
CONV1_FILTERS = 8
CONV2_FILTERS = 16
HIDDEN = 64
OUTPUTS = 2
DEFAULT_INPUT_SIZE = 64

MIN_SAMPLES_PER_CLASS = 30
PROB_FLOOR = 1e-12

MODEL_MAGIC = b"MSQD"
MODEL_VERSION = 1

PARAM_NAMES = ("conv1.w", "conv1.b", "conv2.w", "conv2.b",
               "dense1.w", "dense1.b", "dense2.w", "dense2.b")


def param_shapes(input_size: int = DEFAULT_INPUT_SIZE) -> Dict[str, Tuple[int, ...]]:
    if input_size < 4 or input_size % 4:
        raise ValueError(f"input size must be a positive multiple of 4, got {input_size}")
    flat = CONV2_FILTERS * (input_size // 4) ** 2
    return {
        "conv1.w": (CONV1_FILTERS, INPUT_CHANNELS, 3, 3),
        "conv1.b": (CONV1_FILTERS,),
        "conv2.w": (CONV2_FILTERS, CONV1_FILTERS, 3, 3),
        "conv2.b": (CONV2_FILTERS,),
        "dense1.w": (HIDDEN, flat),
        "dense1.b": (HIDDEN,),
        "dense2.w": (OUTPUTS, HIDDEN),
        "dense2.b": (OUTPUTS,),
    }


@dataclass(eq=False)
class CnnModel:
    params: Dict[str, np.ndarray]
    input_size: int = DEFAULT_INPUT_SIZE
    rng_seed: Optional[int] = None

    def __post_init__(self):
        shapes = param_shapes(self.input_size)
        if tuple(self.params) != PARAM_NAMES:
            self.params = {k: self.params[k] for k in PARAM_NAMES}
        for name, shape in shapes.items():
            arr = np.asarray(self.params[name], dtype=np.float64)
            if arr.shape != shape:
                raise ShapeMismatch(f"{name}: expected {shape}, got {arr.shape}")
            self.params[name] = arr

    def __getitem__(self, name):
        return self.params[name]

    def copy(self) -> "CnnModel":
        return CnnModel({k: v.copy() for k, v in self.params.items()}, self.input_size, self.rng_seed)

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.params.values())

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def bit_equal(self, other: "CnnModel") -> bool:
        return all(self.params[k].tobytes() == other.params[k].tobytes() for k in PARAM_NAMES)


def zero_model(input_size: int = DEFAULT_INPUT_SIZE) -> CnnModel:
    return CnnModel({k: np.zeros(s) for k, s in param_shapes(input_size).items()}, input_size, None)


def init_model(seed: int, input_size: int = DEFAULT_INPUT_SIZE) -> CnnModel:
    """He-uniform weights (limit sqrt(6 / fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(input_size).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            limit = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-limit, limit, size=shape)
    return CnnModel(params, input_size, seed)


# ---------------------------------------------------------------- input

def encode_input(img, order: int = 6) -> np.ndarray:
    """One-hot class planes, shape (6, side, side), float64."""
    if img.order != order:
        raise WrongOrder(f"model expects order-{order} images, got order {img.order}")
    return one_hot(img.cells)


def one_hot(cells: np.ndarray) -> np.ndarray:
    """(..., H, W) class indices -> (..., 6, H, W) float64 one-hot."""
    cells = np.asarray(cells)
    eye = np.eye(INPUT_CHANNELS)
    return np.moveaxis(eye[cells], -1, -3)


# ---------------------------------------------------------------- layers

def _im2col(x):
    # x: (N, C, H, W) -> (N*H*W, C*9) for a 3x3 same-padded convolution
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # (N, C, H, W, 3, 3)
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)


def _conv_forward(x, w, b):
    n, _, h, wd = x.shape
    cols = _im2col(x)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    return out.reshape(n, h, wd, -1).transpose(0, 3, 1, 2), cols


def _conv_backward(dout, cols, w, x_shape, need_dx=True):
    n, c, h, wd = x_shape
    f = w.shape[0]
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, f)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ w.reshape(f, -1)).reshape(n, h, wd, c, 3, 3)
    dxp = np.zeros((n, c, h + 2, wd + 2))
    for i in range(3):
        for j in range(3):
            dxp[:, :, i:i + h, j:j + wd] += dcols[..., i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, 1:-1, 1:-1], dw, db


def _pool_forward(x):
    n, c, h, w = x.shape
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)[..., None]
    return np.take_along_axis(win, idx, axis=-1)[..., 0], idx


def _pool_backward(dout, idx, x_shape):
    n, c, h, w = x_shape
    dwin = np.zeros((n, c, h // 2, w // 2, 4))
    np.put_along_axis(dwin, idx, dout[..., None], axis=-1)
    return dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(x_shape)


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_batch(model, x):
    x = np.asarray(x, dtype=np.float64)
    s = model.input_size
    if x.shape[-3:] != (INPUT_CHANNELS, s, s) or x.ndim not in (3, 4):
        raise ShapeMismatch(f"expected input (N,) {INPUT_CHANNELS}x{s}x{s}, got {x.shape}")
    return x


def _forward_batch(model, x):
    p = model.params
    z1, cols1 = _conv_forward(x, p["conv1.w"], p["conv1.b"])
    a1 = np.maximum(z1, 0.0)
    h1, idx1 = _pool_forward(a1)
    z2, cols2 = _conv_forward(h1, p["conv2.w"], p["conv2.b"])
    a2 = np.maximum(z2, 0.0)
    h2, idx2 = _pool_forward(a2)
    flat = h2.reshape(len(x), -1)
    z3 = flat @ p["dense1.w"].T + p["dense1.b"]
    a3 = np.maximum(z3, 0.0)
    logits = a3 @ p["dense2.w"].T + p["dense2.b"]
    probs = _softmax(logits)
    cache = (x, z1, cols1, idx1, h1, z2, cols2, idx2, h2, flat, z3, a3)
    return probs, cache


def _backward_batch(model, probs, cache, y):
    """Gradients of the mean cross-entropy over the batch."""
    p = model.params
    x, z1, cols1, idx1, h1, z2, cols2, idx2, h2, flat, z3, a3 = cache
    n = len(x)
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    g = {}
    g["dense2.w"] = dlogits.T @ a3
    g["dense2.b"] = dlogits.sum(axis=0)
    dz3 = (dlogits @ p["dense2.w"]) * (z3 > 0)
    g["dense1.w"] = dz3.T @ flat
    g["dense1.b"] = dz3.sum(axis=0)
    dh2 = (dz3 @ p["dense1.w"]).reshape(h2.shape)
    dz2 = _pool_backward(dh2, idx2, z2.shape) * (z2 > 0)
    dh1, g["conv2.w"], g["conv2.b"] = _conv_backward(dz2, cols2, p["conv2.w"], h1.shape)
    dz1 = _pool_backward(dh1, idx1, z1.shape) * (z1 > 0)
    _, g["conv1.w"], g["conv1.b"] = _conv_backward(dz1, cols1, p["conv1.w"], x.shape, need_dx=False)
    return {k: g[k] for k in PARAM_NAMES}


# ---------------------------------------------------------------- public ops

def predict_proba(model: CnnModel, x) -> np.ndarray:
    """Class probabilities for a batch (N, 6, S, S) -> (N, 2)."""
    x = _check_batch(model, x)
    if x.ndim == 3:
        x = x[None]
    return _forward_batch(model, x)[0]


def forward(model: CnnModel, x) -> Tuple[float, float]:
    """``(p_benign, p_malicious)`` for one encoded image."""
    x = _check_batch(model, x)
    if x.ndim != 3:
        raise ShapeMismatch(f"forward takes a single image, got batch shape {x.shape}")
    pb, pm = _forward_batch(model, x[None])[0][0]
    return float(pb), float(pm)


def loss(probs, label) -> float:
    """Cross-entropy of one prediction, ``-ln p(true class)`` with p floored at 1e-12."""
    return float(-np.log(max(float(probs[label_index(label)]), PROB_FLOOR)))


def backward(model: CnnModel, x, label) -> Dict[str, np.ndarray]:
    """Exact gradient of ``loss(forward(model, x), label)`` for every parameter."""
    x = _check_batch(model, x)
    if x.ndim != 3:
        raise ShapeMismatch(f"backward takes a single image, got batch shape {x.shape}")
    probs, cache = _forward_batch(model, x[None])
    return _backward_batch(model, probs, cache, np.array([label_index(label)]))


def batch_loss_and_grad(model: CnnModel, x, y) -> Tuple[float, Dict[str, np.ndarray]]:
    x = _check_batch(model, x)
    y = np.asarray(y, dtype=np.intp)
    probs, cache = _forward_batch(model, x)
    losses = -np.log(np.maximum(probs[np.arange(len(y)), y], PROB_FLOOR))
    return float(losses.mean()), _backward_batch(model, probs, cache, y)


@dataclass
class TrainConfig:
    iterations: int = 500
    batch_size: int = 16
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")


def check_class_counts(y, minimum: int = MIN_SAMPLES_PER_CLASS):
    counts = np.bincount(np.asarray(y, dtype=np.intp), minlength=2)
    short = [f"{LABELS[i]}={counts[i]}" for i in range(2) if counts[i] < minimum]
    if short:
        raise TooFewSamples(
            f"training needs at least {minimum} images for each class; have {', '.join(short)}")


def train(model: CnnModel, x, y, cfg: TrainConfig = None, *,
          min_per_class: int = MIN_SAMPLES_PER_CLASS) -> Tuple[CnnModel, List[float]]:
    """Mini-batch SGD with momentum. Returns a new model and the per-step batch loss.

    Batches are consecutive slices of a seeded permutation, reshuffled each
    time the data is exhausted; results depend only on (cfg, model, x, y).
    ``x`` may be any numeric dtype (e.g. uint8 one-hot); batches are cast to
    float64.
    """
    cfg = cfg or TrainConfig()
    y = np.asarray([label_index(v) for v in y], dtype=np.intp)
    if len(x) != len(y):
        raise ShapeMismatch(f"{len(x)} inputs but {len(y)} labels")
    check_class_counts(y, min_per_class)
    model = model.copy()
    rng = np.random.default_rng(cfg.seed)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    trace = []
    order = rng.permutation(len(y))
    pos = 0
    for it in range(cfg.iterations):
        if pos + cfg.batch_size > len(order):
            order = rng.permutation(len(y))
            pos = 0
        idx = order[pos:pos + cfg.batch_size]
        pos += cfg.batch_size
        batch_loss, grads = batch_loss_and_grad(model, np.asarray(x[idx], dtype=np.float64), y[idx])
        if not np.isfinite(batch_loss):
            raise NonFiniteLoss(f"loss became non-finite at iteration {it}", trace)
        trace.append(batch_loss)
        for k in PARAM_NAMES:
            v = velocity[k]
            v *= cfg.momentum
            v -= cfg.learning_rate * grads[k]
            model.params[k] += v
        if not model.is_finite():
            raise NonFiniteLoss(f"parameters diverged at iteration {it}", trace)
    return model, trace


def classify(model: CnnModel, img, threshold: float = 0.5) -> Tuple[str, float]:
    """Label an image; malicious iff p_malicious >= threshold."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must be in (0, 1)")
    order = model.input_size.bit_length() - 1
    p_mal = forward(model, encode_input(img, order))[1]
    return decide(p_mal, threshold), p_mal


def decide(p_malicious: float, threshold: float = 0.5) -> str:
    return LABELS[1] if p_malicious >= threshold else LABELS[0]


def predict_labels(model: CnnModel, x, threshold: float = 0.5, batch_size: int = 64) -> Tuple[List[str], np.ndarray]:
    p = np.concatenate([predict_proba(model, np.asarray(x[i:i + batch_size], dtype=np.float64))[:, 1]
                        for i in range(0, len(x), batch_size)]) if len(x) else np.zeros(0)
    return [decide(v, threshold) for v in p], p


# ---------------------------------------------------------------- persistence

def save_model(model: CnnModel) -> bytes:
    out = [MODEL_MAGIC, struct.pack("<H", MODEL_VERSION)]
    for name in PARAM_NAMES:
        arr = np.ascontiguousarray(model.params[name], dtype="<f8").ravel()
        out.append(struct.pack("<I", arr.size))
        out.append(arr.tobytes())
    return b"".join(out)


def load_model(data: bytes) -> CnnModel:
    if data[:4] != MODEL_MAGIC:
        raise BadMagic(f"not a model file (magic {bytes(data[:4])!r})")
    if len(data) < 6:
        raise SizeMismatch("model file truncated in header")
    version = struct.unpack_from("<H", data, 4)[0]
    if version != MODEL_VERSION:
        raise VersionMismatch(f"model format version {version}, expected {MODEL_VERSION}")
    off = 6
    blocks = []
    for name in PARAM_NAMES:
        if len(data) < off + 4:
            raise SizeMismatch(f"model file truncated before block {name}")
        n = struct.unpack_from("<I", data, off)[0]
        off += 4
        if len(data) < off + 8 * n:
            raise SizeMismatch(f"block {name} claims {n} values, file truncated")
        blocks.append(np.frombuffer(data, dtype="<f8", count=n, offset=off).astype(np.float64))
        off += 8 * n
    if off != len(data):
        raise SizeMismatch(f"{len(data) - off} trailing bytes after last block")
    flat = blocks[PARAM_NAMES.index("dense1.w")].size // HIDDEN
    side = int(round(np.sqrt(flat / CONV2_FILTERS))) * 4
    shapes = param_shapes(side) if side >= 4 else None
    if shapes is None or any(np.prod(shapes[k]) != b.size for k, b in zip(PARAM_NAMES, blocks)):
        raise SizeMismatch("parameter block sizes do not match the network architecture")
    return CnnModel({k: b.reshape(shapes[k]) for k, b in zip(PARAM_NAMES, blocks)}, side, None)
