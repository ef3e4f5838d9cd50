"""Convolutional posterior-probability network with hand-written backprop.

The network maps an image to J+1 class probabilities via a stack of 5x5
same-padded convolutions (32 filters each, leaky-rectifier activations), one
2x2 max-pool after the conv stack, and a dense head with softmax.  Forward
and backward passes are implemented explicitly; no autodiff framework is
used.  Convolution arithmetic runs through numpy im2col by default or, when
available, torch's conv kernels as a faster BLAS-like primitive (gradients
are still computed from the explicit formulas).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .imaging import apply_noise
from .rng import stream, substream

try:
    import torch
    import torch.nn.functional as _tf
    _HAVE_TORCH = True
except ImportError:  # pragma: no cover
    _HAVE_TORCH = False

_BACKEND = "torch" if _HAVE_TORCH else "numpy"


def set_backend(name: str):
    """Select the convolution backend: "numpy" or "torch"."""
    global _BACKEND
    if name not in ("numpy", "torch"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "torch" and not _HAVE_TORCH:
        raise RuntimeError("torch is not available")
    _BACKEND = name


def get_backend() -> str:
    return _BACKEND


@dataclass(frozen=True)
class Architecture:
    conv_layers: int
    input_shape: tuple[int, int]     # (height, width)
    n_classes: int = 10              # J + 1
    filters: int = 32
    kernel: int = 5
    leaky_slope: float = 0.01

    def __post_init__(self):
        if self.conv_layers < 1:
            raise ValueError("need at least one conv layer")
        h, w = self.input_shape
        if h % 2 or w % 2:
            raise ValueError("input dimensions must be even for 2x2 pooling")

    @property
    def dense_inputs(self) -> int:
        h, w = self.input_shape
        return self.filters * (h // 2) * (w // 2)


@dataclass
class NetworkState:
    """Weights plus Adam moments; params are ordered conv w/b pairs then the
    dense weight and bias."""

    arch: Architecture
    params: list[np.ndarray]
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    input_mean: float = 0.0
    input_std: float = 1.0

    def copy(self) -> "NetworkState":
        return NetworkState(self.arch,
                            [p.copy() for p in self.params],
                            [p.copy() for p in self.m],
                            [p.copy() for p in self.v],
                            self.step, self.input_mean, self.input_std)


def init_state(arch: Architecture, seed: int = 0,
               dtype=np.float32) -> NetworkState:
    """Fan-in-scaled uniform initialization, fully seed-determined."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0FFEE]))
    params = []
    c_in = 1
    k = arch.kernel
    for _ in range(arch.conv_layers):
        fan_in = c_in * k * k
        limit = np.sqrt(6.0 / fan_in)
        params.append(rng.uniform(-limit, limit,
                                  (arch.filters, c_in, k, k)).astype(dtype))
        params.append(np.zeros(arch.filters, dtype=dtype))
        c_in = arch.filters
    limit = np.sqrt(6.0 / arch.dense_inputs)
    params.append(rng.uniform(-limit, limit,
                              (arch.n_classes, arch.dense_inputs)).astype(dtype))
    params.append(np.zeros(arch.n_classes, dtype=dtype))
    zeros = [np.zeros_like(p) for p in params]
    return NetworkState(arch, params, zeros,
                        [np.zeros_like(p) for p in params])


# ---------------------------------------------------------------------------
# primitive layers

def _conv_forward(x, w, b):
    if _BACKEND == "torch":
        p = w.shape[-1] // 2
        with torch.no_grad():
            y = _tf.conv2d(torch.from_numpy(x), torch.from_numpy(w),
                           torch.from_numpy(b), padding=p)
        return y.numpy()
    return _conv_forward_np(x, w, b)


def _conv_backward(x, w, dy):
    if _BACKEND == "torch":
        p = w.shape[-1] // 2
        with torch.no_grad():
            xt = torch.from_numpy(x)
            dyt = torch.from_numpy(dy)
            dw = _tf.conv2d(xt.transpose(0, 1), dyt.transpose(0, 1),
                            padding=p).transpose(0, 1)
            dx = _tf.conv_transpose2d(dyt, torch.from_numpy(w), padding=p)
        return dw.numpy(), dy.sum(axis=(0, 2, 3)), dx.numpy()
    return _conv_backward_np(x, w, dy)


def _cols_view(xp, k, h, w):
    b, c = xp.shape[:2]
    s = xp.strides
    return as_strided(xp, (b, c, k, k, h, w),
                      (s[0], s[1], s[2], s[3], s[2], s[3]))


def _conv_forward_np(x, w, b):
    k = w.shape[-1]
    p = k // 2
    _, _, h, ww = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = _cols_view(xp, k, h, ww)
    y = np.einsum("fckl,bcklhw->bfhw", w, cols, optimize=True)
    return y + b[None, :, None, None]


def _conv_backward_np(x, w, dy):
    k = w.shape[-1]
    p = k // 2
    _, _, h, ww = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    dw = np.einsum("bfhw,bcklhw->fckl", dy, _cols_view(xp, k, h, ww),
                   optimize=True)
    db = dy.sum(axis=(0, 2, 3))
    dyp = np.pad(dy, ((0, 0), (0, 0), (p, p), (p, p)))
    wflip = np.ascontiguousarray(w[:, :, ::-1, ::-1])
    dx = np.einsum("fckl,bfklhw->bchw", wflip, _cols_view(dyp, k, h, ww),
                   optimize=True)
    return dw, db, dx


def _pool_forward(x):
    b, c, h, w = x.shape
    xr = x.reshape(b, c, h // 2, 2, w // 2, 2) \
          .transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    idx = xr.argmax(axis=-1)
    y = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]
    return y, idx


def _pool_backward(dy, idx, in_shape):
    b, c, h, w = in_shape
    dxr = np.zeros((b, c, h // 2, w // 2, 4), dtype=dy.dtype)
    np.put_along_axis(dxr, idx[..., None], dy[..., None], axis=-1)
    return dxr.reshape(b, c, h // 2, w // 2, 2, 2) \
              .transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)


def softmax(z: np.ndarray) -> np.ndarray:
    """Stable softmax along the last axis."""
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# network passes

def _forward_batch(x, state: NetworkState, keep_cache: bool):
    arch = state.arch
    caches = []
    a = x
    for i in range(arch.conv_layers):
        w, b = state.params[2 * i], state.params[2 * i + 1]
        y = _conv_forward(a, w, b)
        mask = y > 0
        if keep_cache:
            caches.append((a, mask))
        a = np.where(mask, y, arch.leaky_slope * y)
    pooled, idx = _pool_forward(a)
    flat = pooled.reshape(len(x), -1)
    wd, bd = state.params[-2], state.params[-1]
    logits = flat @ wd.T + bd
    cache = (caches, idx, a.shape, flat) if keep_cache else None
    return logits, cache


def _backward_batch(dlogits, cache, state: NetworkState):
    arch = state.arch
    caches, idx, act_shape, flat = cache
    wd = state.params[-2]
    grads = [None] * len(state.params)
    grads[-2] = dlogits.T @ flat
    grads[-1] = dlogits.sum(axis=0)
    dflat = dlogits @ wd
    b, c, h, w = act_shape
    dpool = dflat.reshape(b, c, h // 2, w // 2)
    da = _pool_backward(dpool, idx, act_shape)
    for i in reversed(range(arch.conv_layers)):
        x_in, mask = caches[i]
        dy = np.where(mask, da, arch.leaky_slope * da)
        dw, db, da = _conv_backward(x_in, state.params[2 * i], dy)
        grads[2 * i] = dw
        grads[2 * i + 1] = db
    return grads


def _prepare_input(images, state: NetworkState):
    x = np.asarray(images)
    if x.ndim == 2:
        x = x[None]
    x = x[:, None]  # (B, 1, H, W)
    dtype = state.params[0].dtype
    return ((x - state.input_mean) / state.input_std).astype(dtype)


def forward(g, state: NetworkState):
    """Single-image forward pass: (logits, posterior probabilities)."""
    g = np.asarray(g)
    if g.shape != state.arch.input_shape:
        raise ValueError(f"image shape {g.shape} does not match architecture "
                         f"input {state.arch.input_shape}")
    logits, _ = _forward_batch(_prepare_input(g, state), state, False)
    return logits[0], softmax(logits[0])


def forward_posteriors(images, state: NetworkState,
                       chunk: int = 128) -> np.ndarray:
    """Batched posteriors for a stack of images, shape (N, J+1)."""
    out = []
    for i in range(0, len(images), chunk):
        logits, _ = _forward_batch(_prepare_input(images[i:i + chunk], state),
                                   state, False)
        out.append(softmax(logits))
    return np.concatenate(out)


def loss_and_gradient(images, labels, state: NetworkState):
    """Mean cross-entropy over the batch and its gradient w.r.t. all params.

    The logit gradient per sample is (softmax(z) - onehot(y)) / batch_size.
    """
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("empty batch")
    if labels.min() < 0 or labels.max() >= state.arch.n_classes:
        raise ValueError("label out of range")
    x = _prepare_input(images, state)
    logits, cache = _forward_batch(x, state, True)
    probs = softmax(logits)
    n = len(labels)
    sel = probs[np.arange(n), labels].astype(np.float64)
    loss = float(-np.log(sel + 1e-300).mean())
    dlogits = probs.astype(logits.dtype)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    grads = _backward_batch(dlogits, cache, state)
    return loss, grads


# ---------------------------------------------------------------------------
# optimization

@dataclass(frozen=True)
class TrainSchedule:
    total_minibatches: int
    batch_per_class: int = 80
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    val_period: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.total_minibatches <= 0 or self.batch_per_class <= 0:
            raise ValueError("counts must be positive")


class TrainingDiverged(RuntimeError):
    pass


def adam_step(state: NetworkState, grads, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> NetworkState:
    """One Adam update with bias correction; mutates and returns state."""
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient at step {state.step}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p, m, v, g in zip(state.params, state.m, state.v, grads):
        g = g.astype(p.dtype, copy=False)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


# ---------------------------------------------------------------------------
# training loop

@dataclass
class TrainResult:
    best_state: NetworkState
    final_state: NetworkState
    best_val_loss: float
    history: list[tuple[int, float, float]]  # (step, train_loss, val_loss)


def _compose_batch(task, backgrounds, batch_per_class, rng):
    """Balanced mini-batch: stored noiseless images + signal + fresh noise."""
    h, w = task.grid[1], task.grid[0]
    n_classes = task.J + 1
    images = np.empty((batch_per_class * n_classes, h, w), dtype=np.float32)
    labels = np.empty(batch_per_class * n_classes, dtype=np.int64)
    sig = task.signal_images
    pos = 0
    for cls in range(n_classes):
        for _ in range(batch_per_class):
            if backgrounds is None:
                img = np.zeros((h, w), dtype=np.float32)
            else:
                img = backgrounds[int(rng.integers(len(backgrounds)))]
            if cls > 0:
                img = img + sig[cls - 1]
            images[pos] = apply_noise(img, task.noise, rng)
            labels[pos] = cls
            pos += 1
    return images, labels


def validation_loss(images, labels, state: NetworkState,
                    chunk: int = 256) -> float:
    """Mean cross-entropy of a fixed labeled set."""
    labels = np.asarray(labels)
    total = 0.0
    for i in range(0, len(images), chunk):
        probs = forward_posteriors(images[i:i + chunk], state, chunk=chunk)
        sel = probs[np.arange(len(probs)), labels[i:i + chunk]]
        total += float(-np.log(sel.astype(np.float64) + 1e-300).sum())
    return total / len(labels)


def estimate_normalization(task, backgrounds, schedule: TrainSchedule,
                           n_probe: int = 200):
    """Global input mean/std from a probe of simulated noisy training images."""
    rng = stream(schedule.seed, "input-normalization")
    per_class = max(1, n_probe // (task.J + 1))
    images, _ = _compose_batch(task, backgrounds, per_class, rng)
    std = float(images.std())
    return float(images.mean()), std if std > 0 else 1.0


def train(arch: Architecture, task, backgrounds, schedule: TrainSchedule,
          val_images=None, val_labels=None, start_state=None,
          log_path=None) -> TrainResult:
    """Semi-online training: stored noiseless images, noise drawn per batch.

    Every mini-batch is balanced over the J+1 classes.  Each step's
    randomness derives only from (schedule.seed, step), so training resumed
    from a checkpoint replays the identical trajectory.  Returns the state
    with the lowest validation cross-entropy seen at checkpoints, plus the
    final state.
    """
    if start_state is not None:
        state = start_state
    else:
        state = init_state(arch, seed=schedule.seed)
        state.input_mean, state.input_std = estimate_normalization(
            task, backgrounds, schedule)
    has_val = val_images is not None
    best_state = state.copy()
    best_val = np.inf
    history = []
    log_fh = open(log_path, "w") if log_path else None
    if log_fh:
        log_fh.write("step,train_loss,val_loss\n")
    try:
        for step in range(state.step, schedule.total_minibatches):
            rng = substream(schedule.seed, "train-step", step)
            images, labels = _compose_batch(task, backgrounds,
                                            schedule.batch_per_class, rng)
            try:
                loss, grads = loss_and_gradient(images, labels, state)
                if not np.isfinite(loss):
                    raise TrainingDiverged(
                        f"loss became non-finite at step {step}")
                adam_step(state, grads, schedule.learning_rate, schedule.beta1,
                          schedule.beta2, schedule.epsilon)
            except TrainingDiverged as exc:
                # the state has not been touched by the failing update
                exc.state = state
                raise
            at_checkpoint = (state.step % schedule.val_period == 0
                             or state.step == schedule.total_minibatches)
            if at_checkpoint:
                val = validation_loss(val_images, val_labels, state) \
                    if has_val else np.nan
                history.append((state.step, loss, val))
                if log_fh:
                    log_fh.write(f"{state.step},{loss:.6f},{val:.6f}\n")
                    log_fh.flush()
                if has_val and val < best_val:
                    best_val = val
                    best_state = state.copy()
    finally:
        if log_fh:
            log_fh.close()
    if not has_val:
        best_state = state.copy()
        best_val = history[-1][1] if history else np.nan
    return TrainResult(best_state, state, float(best_val), history)


def select_depth(depths, trainer):
    """Depth search: train increasing depths until the validation
    cross-entropy improves by less than 1% over the previous depth.

    trainer(depth) must return (result, val_loss).  Returns
    (best_depth, best_result, [(depth, val_loss), ...]).
    """
    trained = []
    prev = None
    for depth in depths:
        result, val = trainer(depth)
        trained.append((depth, result, val))
        if prev is not None and (prev - val) < 0.01 * prev:
            break
        prev = val
    best = min(trained, key=lambda t: t[2])
    return best[0], best[1], [(d, v) for d, _, v in trained]


# ---------------------------------------------------------------------------
# observer interface

def cnn_io_records(images, labels, state: NetworkState, priors=None):
    """Observer records from the network posteriors.

    lambda_j = log Pr(H_j|g) - log Pr(H_0|g) (plus the log prior ratio when
    non-uniform priors are supplied); the binary statistic is 1 - Pr(H_0|g).
    """
    from .observers import ObserverRecord, scanning_decision
    probs = forward_posteriors(np.asarray(images), state)
    logp = np.log(probs + 1e-300)
    lams = logp[:, 1:] - logp[:, :1]
    if priors is not None:
        priors = np.asarray(priors, dtype=np.float64)
        lams = lams + (np.log(priors[1:]) - np.log(priors[0]))
    records = []
    for i in range(len(probs)):
        t, j_star = scanning_decision(lams[i])
        records.append(ObserverRecord(t, j_star, int(labels[i]), lams[i],
                                      float(1.0 - probs[i, 0])))
    return records


def cnn_io_record(g, state: NetworkState, true_label: int = 0, priors=None):
    return cnn_io_records(np.asarray(g)[None], [true_label], state, priors)[0]


# ---------------------------------------------------------------------------
# checkpoints

_CKPT_MAGIC = b"SCANOBSN"
_CKPT_HEADER = struct.Struct("<8sIIIIIIIfffQ")


def save_checkpoint(path, state: NetworkState):
    """Binary checkpoint: header + flat little-endian float32 blocks.

    Block order: every parameter (conv weight/bias pairs, dense weight,
    dense bias), then the first-moment blocks, then the second-moment blocks,
    each in the same parameter order.
    """
    arch = state.arch
    hdr = _CKPT_HEADER.pack(
        _CKPT_MAGIC, 1, arch.conv_layers, arch.filters, arch.kernel,
        arch.n_classes, arch.input_shape[0], arch.input_shape[1],
        arch.leaky_slope, state.input_mean, state.input_std, state.step)
    with open(path, "wb") as fh:
        fh.write(hdr)
        for group in (state.params, state.m, state.v):
            for p in group:
                fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def load_checkpoint(path) -> NetworkState:
    raw = Path(path).read_bytes()
    (magic, version, conv_layers, filters, kernel, n_classes, in_h, in_w,
     slope, mean, std, step) = _CKPT_HEADER.unpack(raw[:_CKPT_HEADER.size])
    if magic != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    if version != 1:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    arch = Architecture(conv_layers, (in_h, in_w), n_classes, filters,
                        kernel, round(float(slope), 6))
    template = init_state(arch)
    offset = _CKPT_HEADER.size
    groups = []
    for group in (template.params, template.m, template.v):
        loaded = []
        for p in group:
            n = p.size * 4
            arr = np.frombuffer(raw, dtype="<f4", count=p.size, offset=offset)
            loaded.append(arr.reshape(p.shape).astype(np.float32))
            offset += n
        groups.append(loaded)
    if offset != len(raw):
        raise ValueError(f"{path}: trailing or missing data")
    return NetworkState(arch, groups[0], groups[1], groups[2], step,
                        float(mean), float(std))
