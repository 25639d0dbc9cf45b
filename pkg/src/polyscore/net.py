"""Convolutional-recurrent network with hand-written exact gradients.

Stack: two 3x3 convolutions (16 filters, stride 2 on the frequency axis only)
each followed by batch normalization, ReLU and dropout; per-frame features are
flattened frequency-major and optionally frame-doubled; two bidirectional LSTM
layers with batch normalization between them and dropout after the last; a
final linear projection with row softmax yields per-frame symbol posteriors.

Batch normalization always normalizes with the stored running statistics (the
desk-scale batches are too small for batch statistics); the training loop
updates those statistics explicitly via :func:`update_batchnorm_stats`, so the
forward pass stays a pure function of (params, input, seed).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict

import numpy as np

BN_EPS = 1e-5
CHECKPOINT_MAGIC = b"PSCK"
CHECKPOINT_VERSION = 1


class ShapeMismatch(Exception):
    """Input does not match the configured geometry."""


class OddFeatureDim(Exception):
    """Frame doubling requires an even feature dimension."""


class StaleCache(Exception):
    """Backward called without a fresh train-mode forward cache."""


class NonFiniteGradient(Exception):
    """A gradient tensor contains NaN or infinity."""


class CheckpointError(Exception):
    """Checkpoint file is unreadable or malformed."""


class VocabularyMismatch(CheckpointError):
    """Checkpoint was trained against a different vocabulary."""


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    input_bins: int = 240
    conv_filters: int = 16
    conv_kernel: int = 3
    conv_freq_stride: int = 2
    conv_layers: int = 2
    recurrent_layers: int = 2
    hidden_units: int = 64
    dropout_p: float = 0.1
    frame_doubling: bool = True

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be at least 2")
        if self.hidden_units < 1:
            raise ValueError("hidden_units must be at least 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        if self.conv_kernel != 3:
            raise ValueError("only 3x3 kernels are supported")

    def conv_feature_dims(self) -> list[int]:
        dims = [self.input_bins]
        for _ in range(self.conv_layers):
            dims.append(-(-dims[-1] // self.conv_freq_stride))
        return dims

    def frame_features(self) -> int:
        return self.conv_feature_dims()[-1] * self.conv_filters

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(eq=False)
class ModelParams:
    """Ordered name -> tensor map; running BN statistics are not trainable."""

    tensors: dict[str, np.ndarray]
    trainable: tuple[str, ...]

    def clone(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.tensors.items()}, self.trainable)


@dataclass(eq=False)
class PosteriorGrid:
    """Per-frame symbol probabilities, one row per output frame."""

    probs: np.ndarray

    def validate(self, tol: float = 1e-6) -> None:
        sums = self.probs.sum(axis=1)
        if not np.all(np.abs(sums - 1.0) <= tol):
            raise ValueError("posterior rows must sum to 1")
        if np.any(self.probs < 0) or np.any(self.probs > 1):
            raise ValueError("posterior entries must lie in [0, 1]")


def _uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> ModelParams:
    """Seeded initialization: uniform +-1/sqrt(fan_in), forget-gate bias 1.

    LSTM gate blocks are laid out [input, forget, output, candidate] within
    the 4H axis; the checkpoint format fixes this layout.
    """
    rng = np.random.default_rng(seed)
    t: dict[str, np.ndarray] = {}
    c = config.conv_filters
    k = config.conv_kernel
    in_ch = 1
    for i in range(config.conv_layers):
        t[f"conv{i}_w"] = _uniform(rng, (c, in_ch, k, k), in_ch * k * k, dtype)
        t[f"conv{i}_b"] = np.zeros(c, dtype=dtype)
        t[f"bn{i}_gamma"] = np.ones(c, dtype=dtype)
        t[f"bn{i}_beta"] = np.zeros(c, dtype=dtype)
        t[f"bn{i}_mean"] = np.zeros(c, dtype=dtype)
        t[f"bn{i}_var"] = np.ones(c, dtype=dtype)
        in_ch = c
    h = config.hidden_units
    feat = config.frame_features()
    if config.frame_doubling:
        if feat % 2:
            raise OddFeatureDim(f"feature dim {feat} must be even for frame doubling")
        feat //= 2
    for l in range(config.recurrent_layers):
        for direction in ("fwd", "bwd"):
            t[f"rnn{l}_{direction}_wx"] = _uniform(rng, (feat, 4 * h), feat, dtype)
            t[f"rnn{l}_{direction}_wh"] = _uniform(rng, (h, 4 * h), h, dtype)
            bias = np.zeros(4 * h, dtype=dtype)
            bias[h : 2 * h] = 1.0
            t[f"rnn{l}_{direction}_b"] = bias
        if l < config.recurrent_layers - 1:
            t[f"rbn{l}_gamma"] = np.ones(2 * h, dtype=dtype)
            t[f"rbn{l}_beta"] = np.zeros(2 * h, dtype=dtype)
            t[f"rbn{l}_mean"] = np.zeros(2 * h, dtype=dtype)
            t[f"rbn{l}_var"] = np.ones(2 * h, dtype=dtype)
        feat = 2 * h
    t["out_w"] = _uniform(rng, (2 * h, config.vocab_size), 2 * h, dtype)
    t["out_b"] = np.zeros(config.vocab_size, dtype=dtype)
    trainable = tuple(n for n in t if not (n.endswith("_mean") or n.endswith("_var")))
    return ModelParams(tensors=t, trainable=trainable)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -60.0, 60.0)))


def _conv_same_pad(size: int, stride: int, kernel: int) -> tuple[int, int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


def _conv_forward(x, w, b, stride_f):
    c_in, f, width = x.shape
    c_out = w.shape[0]
    f_out, pf0, pf1 = _conv_same_pad(f, stride_f, 3)
    xp = np.pad(x, ((0, 0), (pf0, pf1), (1, 1)))
    cols = np.empty((c_in, 3, 3, f_out, width), dtype=x.dtype)
    for ki in range(3):
        for kj in range(3):
            cols[:, ki, kj] = xp[:, ki : ki + stride_f * (f_out - 1) + 1 : stride_f, kj : kj + width]
    cols = cols.reshape(c_in * 9, f_out * width)
    y = (w.reshape(c_out, -1) @ cols).reshape(c_out, f_out, width) + b[:, None, None]
    cache = (xp.shape, (c_in, f, width), pf0, cols, stride_f, f_out)
    return y, cache


def _conv_backward(dy, w, cache):
    xp_shape, (c_in, f, width), pf0, cols, stride_f, f_out = cache
    c_out = w.shape[0]
    dy2 = dy.reshape(c_out, -1)
    db = dy2.sum(axis=1)
    dw = (dy2 @ cols.T).reshape(w.shape)
    dcols = (w.reshape(c_out, -1).T @ dy2).reshape(c_in, 3, 3, f_out, width)
    dxp = np.zeros(xp_shape, dtype=dy.dtype)
    for ki in range(3):
        for kj in range(3):
            dxp[:, ki : ki + stride_f * (f_out - 1) + 1 : stride_f, kj : kj + width] += dcols[:, ki, kj]
    dx = dxp[:, pf0 : pf0 + f, 1 : 1 + width]
    return dx, dw, db


def _bn_forward(x, gamma, beta, mean, var, channel_axis):
    shape = [1] * x.ndim
    shape[channel_axis] = -1
    inv = 1.0 / np.sqrt(var.reshape(shape) + BN_EPS)
    xhat = (x - mean.reshape(shape)) * inv
    y = gamma.reshape(shape) * xhat + beta.reshape(shape)
    reduce_axes = tuple(a for a in range(x.ndim) if a != channel_axis)
    moments = (x.mean(axis=reduce_axes), x.var(axis=reduce_axes))
    return y, (xhat, inv, gamma, channel_axis, reduce_axes), moments


def _bn_backward(dy, cache):
    xhat, inv, gamma, channel_axis, reduce_axes = cache
    shape = [1] * dy.ndim
    shape[channel_axis] = -1
    dgamma = (dy * xhat).sum(axis=reduce_axes)
    dbeta = dy.sum(axis=reduce_axes)
    dx = dy * gamma.reshape(shape) * inv
    return dx, dgamma, dbeta


def _lstm_forward(x, wx, wh, b):
    """Both directions at once over stacked (2, L, I) input.

    Gate blocks within the 4H axis are [i, f, o, g]; weight stacks carry the
    forward direction at index 0 and the backward direction at index 1.
    """
    _, length, _ = x.shape
    h_units = wh.shape[1]
    xp = x @ wx + b[:, None, :]
    h_all = np.zeros((2, length + 1, h_units), dtype=x.dtype)
    c_all = np.zeros((2, length + 1, h_units), dtype=x.dtype)
    sig = np.empty((2, length, 3 * h_units), dtype=x.dtype)
    cand = np.empty((2, length, h_units), dtype=x.dtype)
    tanh_c = np.empty((2, length, h_units), dtype=x.dtype)
    h = h_all[:, 0]
    c = c_all[:, 0]
    for t in range(length):
        z = xp[:, t] + (h[:, None, :] @ wh)[:, 0]
        s = _sigmoid(z[:, : 3 * h_units])
        g = np.tanh(z[:, 3 * h_units :])
        c = s[:, h_units : 2 * h_units] * c + s[:, :h_units] * g
        tc = np.tanh(c)
        h = s[:, 2 * h_units : 3 * h_units] * tc
        sig[:, t] = s
        cand[:, t] = g
        tanh_c[:, t] = tc
        h_all[:, t + 1] = h
        c_all[:, t + 1] = c
    return h_all[:, 1:], (x, h_all, c_all, sig, cand, tanh_c, wx, wh)


def _lstm_backward(dh_out, cache):
    x, h_all, c_all, sig, cand, tanh_c, wx, wh = cache
    _, length, h_units = dh_out.shape
    wh_t = np.ascontiguousarray(wh.transpose(0, 2, 1))
    i = sig[:, :, :h_units]
    f = sig[:, :, h_units : 2 * h_units]
    o = sig[:, :, 2 * h_units : 3 * h_units]
    g = cand
    # factor everything that does not depend on the running dc/dh out of the loop
    a_i = g * i * (1.0 - i)
    a_f = c_all[:, :-1] * f * (1.0 - f)
    a_g = i * (1.0 - g * g)
    b_o = tanh_c * o * (1.0 - o)
    b_c = o * (1.0 - tanh_c * tanh_c)
    dz_all = np.empty((2, length, 4 * h_units), dtype=dh_out.dtype)
    dh_next = np.zeros((2, 1, h_units), dtype=dh_out.dtype)
    dc_next = np.zeros((2, h_units), dtype=dh_out.dtype)
    dz = np.empty((2, 4 * h_units), dtype=dh_out.dtype)
    for t in range(length - 1, -1, -1):
        dh = dh_out[:, t] + dh_next[:, 0]
        dc = dh * b_c[:, t] + dc_next
        dz[:, :h_units] = dc * a_i[:, t]
        dz[:, h_units : 2 * h_units] = dc * a_f[:, t]
        dz[:, 2 * h_units : 3 * h_units] = dh * b_o[:, t]
        dz[:, 3 * h_units :] = dc * a_g[:, t]
        dc_next = dc * f[:, t]
        dh_next = dz[:, None, :] @ wh_t
        dz_all[:, t] = dz
    dwx = x.transpose(0, 2, 1) @ dz_all
    dwh = h_all[:, :-1].transpose(0, 2, 1) @ dz_all
    db = dz_all.sum(axis=1)
    dx = dz_all @ wx.transpose(0, 2, 1)
    return dx, dwx, dwh, db


def _bilstm_forward(x, params, name):
    wx = np.stack([params[f"{name}_fwd_wx"], params[f"{name}_bwd_wx"]])
    wh = np.stack([params[f"{name}_fwd_wh"], params[f"{name}_bwd_wh"]])
    b = np.stack([params[f"{name}_fwd_b"], params[f"{name}_bwd_b"]])
    stacked = np.stack([x, x[::-1]])
    h_both, cache = _lstm_forward(stacked, wx, wh, b)
    y = np.concatenate([h_both[0], h_both[1][::-1]], axis=1)
    return y, (cache, name)


def _bilstm_backward(dy, cache, grads):
    lstm_cache, name = cache
    h_units = dy.shape[1] // 2
    dh = np.stack([dy[:, :h_units], dy[::-1, h_units:]])
    dx, dwx, dwh, db = _lstm_backward(dh, lstm_cache)
    for d, direction in enumerate(("fwd", "bwd")):
        grads[f"{name}_{direction}_wx"] = dwx[d]
        grads[f"{name}_{direction}_wh"] = dwh[d]
        grads[f"{name}_{direction}_b"] = db[d]
    return dx[0] + dx[1][::-1]


def frame_double(features: np.ndarray) -> np.ndarray:
    """Split each feature row in half, emitting two frames per input frame."""
    length, dim = features.shape
    if dim % 2:
        raise OddFeatureDim(f"feature dim {dim} is odd")
    return features.reshape(length, 2, dim // 2).reshape(2 * length, dim // 2)


def frame_undouble(features: np.ndarray) -> np.ndarray:
    """Inverse of :func:`frame_double`."""
    length, dim = features.shape
    if length % 2:
        raise OddFeatureDim(f"frame count {length} is odd")
    return features.reshape(length // 2, 2 * dim)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(eq=False)
class TrainCache:
    config: ModelConfig
    params: "ModelParams"
    stages: list
    bn_moments: dict
    input_shape: tuple
    used: bool = False


def forward(params: ModelParams, config: ModelConfig, spec, mode: str = "eval", rng_seed: int = 0):
    """Run the network on a spectrogram.

    Parameters
    ----------
    spec : Spectrogram or (W, bins) array
        Input frames.
    mode : {"eval", "train"}
        Train mode applies dropout (seeded by ``rng_seed``) and returns
        ``(grid, cache)`` for :func:`backward`; eval mode returns the grid
        alone and is a pure function of (params, input).

    Returns
    -------
    PosteriorGrid or (PosteriorGrid, TrainCache)
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    frames = np.asarray(getattr(spec, "frames", spec))
    if frames.ndim != 2 or frames.shape[1] != config.input_bins:
        raise ShapeMismatch(
            f"expected (W, {config.input_bins}) input, got {frames.shape}"
        )
    if frames.shape[0] < 1:
        raise ShapeMismatch("need at least one frame")
    t = params.tensors
    dtype = t["out_w"].dtype
    train = mode == "train"
    rng = np.random.default_rng(rng_seed) if train else None
    stages: list = []
    bn_moments: dict = {}

    x = np.ascontiguousarray(frames.T[None, :, :], dtype=dtype)  # (1, bins, W)
    for i in range(config.conv_layers):
        x, cache = _conv_forward(x, t[f"conv{i}_w"], t[f"conv{i}_b"], config.conv_freq_stride)
        stages.append(("conv", i, cache))
        x, cache, moments = _bn_forward(
            x, t[f"bn{i}_gamma"], t[f"bn{i}_beta"], t[f"bn{i}_mean"], t[f"bn{i}_var"], 0
        )
        bn_moments[f"bn{i}"] = moments
        stages.append(("bn", f"bn{i}", cache))
        mask = x > 0
        x = x * mask
        stages.append(("relu", None, mask))
        if train and config.dropout_p > 0:
            drop = (rng.random(x.shape) >= config.dropout_p).astype(dtype) / (1 - config.dropout_p)
            x = x * drop
            stages.append(("dropout", None, drop))

    # (C, F, W) -> (W, F*C), feature index = f * C + c
    c_ch, f_dim, width = x.shape
    x = np.ascontiguousarray(x.transpose(2, 1, 0).reshape(width, f_dim * c_ch))
    stages.append(("flatten", None, (c_ch, f_dim, width)))

    if config.frame_doubling:
        x = frame_double(x)
        stages.append(("double", None, None))

    for l in range(config.recurrent_layers):
        x, cache = _bilstm_forward(x, t, f"rnn{l}")
        stages.append(("bilstm", l, cache))
        if l < config.recurrent_layers - 1:
            x, cache, moments = _bn_forward(
                x, t[f"rbn{l}_gamma"], t[f"rbn{l}_beta"], t[f"rbn{l}_mean"], t[f"rbn{l}_var"], 1
            )
            bn_moments[f"rbn{l}"] = moments
            stages.append(("bn", f"rbn{l}", cache))
    if train and config.dropout_p > 0:
        drop = (rng.random(x.shape) >= config.dropout_p).astype(dtype) / (1 - config.dropout_p)
        x = x * drop
        stages.append(("dropout", None, drop))

    logits = x @ t["out_w"] + t["out_b"]
    stages.append(("out", None, x))
    grid = PosteriorGrid(probs=_softmax(logits))
    if not train:
        return grid
    cache = TrainCache(
        config=config, params=params, stages=stages, bn_moments=bn_moments, input_shape=frames.shape
    )
    return grid, cache


def backward(cache: TrainCache, grad_logits: np.ndarray) -> dict[str, np.ndarray]:
    """Exact loss gradients for every trainable tensor.

    ``grad_logits`` is the upstream gradient with respect to the pre-softmax
    activations, as produced by the alignment-free loss.
    """
    if not isinstance(cache, TrainCache) or cache.used:
        raise StaleCache("backward needs a fresh cache from a train-mode forward")
    cache.used = True
    t = cache.params.tensors
    grads: dict[str, np.ndarray] = {}
    dx = None
    for kind, key, data in reversed(cache.stages):
        if kind == "out":
            h = data
            grads["out_w"] = h.T @ grad_logits
            grads["out_b"] = grad_logits.sum(axis=0)
            dx = grad_logits @ t["out_w"].T
        elif kind == "dropout":
            dx = dx * data
        elif kind == "bn":
            dx, dgamma, dbeta = _bn_backward(dx, data)
            grads[f"{key}_gamma"] = dgamma
            grads[f"{key}_beta"] = dbeta
        elif kind == "bilstm":
            dx = _bilstm_backward(dx, data, grads)
        elif kind == "double":
            dx = frame_undouble(dx)
        elif kind == "flatten":
            c_ch, f_dim, width = data
            dx = dx.reshape(width, f_dim, c_ch).transpose(2, 1, 0)
        elif kind == "relu":
            dx = dx * data
        elif kind == "conv":
            i = key
            dx, dw, db = _conv_backward(dx, t[f"conv{i}_w"], data)
            grads[f"conv{i}_w"] = dw
            grads[f"conv{i}_b"] = db
    return grads


def update_batchnorm_stats(params: ModelParams, moments: dict, momentum: float = 0.1) -> None:
    """Blend observed activation moments into the running statistics."""
    for name, (mean, var) in moments.items():
        rm = params.tensors[f"{name}_mean"]
        rv = params.tensors[f"{name}_var"]
        params.tensors[f"{name}_mean"] = ((1 - momentum) * rm + momentum * mean).astype(rm.dtype)
        params.tensors[f"{name}_var"] = ((1 - momentum) * rv + momentum * var).astype(rv.dtype)


def average_moments(per_sample: list[dict]) -> dict:
    """Average per-sample BN moments over a batch."""
    out: dict = {}
    for name in per_sample[0]:
        means = np.stack([m[name][0] for m in per_sample])
        variances = np.stack([m[name][1] for m in per_sample])
        out[name] = (means.mean(axis=0), variances.mean(axis=0))
    return out


def sgd_nesterov_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    velocity: dict[str, np.ndarray],
    lr: float,
    momentum: float = 0.9,
) -> tuple[ModelParams, dict[str, np.ndarray]]:
    """In-place Nesterov momentum update.

    v <- mu * v + g;  p <- p - lr * (g + mu * v). Updated tensors keep the
    parameter dtype, so float32 training state round-trips checkpoints
    exactly.
    """
    for name in params.trainable:
        if name not in grads:
            continue
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"gradient for {name} is not finite")
        p = params.tensors[name]
        v = velocity[name]
        v_new = (momentum * v + g).astype(p.dtype)
        velocity[name] = v_new
        params.tensors[name] = (p - lr * (g + momentum * v_new)).astype(p.dtype)
    return params, velocity


def zero_velocity(params: ModelParams) -> dict[str, np.ndarray]:
    return {n: np.zeros_like(params.tensors[n]) for n in params.trainable}


def lr_at_epoch(epoch: int) -> float:
    """Learning rate schedule: 0.0003 shrunk by 1.1 per epoch, 50-epoch cycles."""
    return 3e-4 / 1.1 ** (epoch % 50)


def _write_tensor(fh, name: str, array: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<B", array.ndim))
    fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
    fh.write(array.astype("<f4").tobytes())


def _read_tensor(fh) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<H", fh.read(2))
    name = fh.read(name_len).decode("utf-8")
    (ndim,) = struct.unpack("<B", fh.read(1))
    shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    data = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(shape)
    return name, data.astype(np.float32)


def save_checkpoint(
    path,
    config: ModelConfig,
    params: ModelParams,
    velocity: dict[str, np.ndarray],
    vocab_hash: bytes,
    epoch: int = 0,
    best_wer: float | None = None,
) -> None:
    """Versioned binary checkpoint: header, parameter blobs, velocity blobs."""
    header = json.dumps(
        {"config": config.to_dict(), "epoch": epoch, "best_wer": best_wer},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(struct.pack("<32s", vocab_hash))
        fh.write(struct.pack("<I", len(params.tensors)))
        for name, array in params.tensors.items():
            _write_tensor(fh, name, array)
        fh.write(struct.pack("<I", len(velocity)))
        for name in params.trainable:
            _write_tensor(fh, name, velocity[name])


def load_checkpoint(path, expected_vocab_hash: bytes | None = None):
    """Load a checkpoint; returns (config, params, velocity, state dict).

    Raises :class:`VocabularyMismatch` when an expected vocabulary hash is
    given and differs from the stored one.
    """
    try:
        with open(path, "rb") as fh:
            if fh.read(4) != CHECKPOINT_MAGIC:
                raise CheckpointError("not a checkpoint file")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != CHECKPOINT_VERSION:
                raise CheckpointError(f"unsupported checkpoint version {version}")
            (header_len,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(header_len).decode("utf-8"))
            (vocab_hash,) = struct.unpack("<32s", fh.read(32))
            config = ModelConfig.from_dict(header["config"])
            (n_params,) = struct.unpack("<I", fh.read(4))
            tensors = {}
            for _ in range(n_params):
                name, array = _read_tensor(fh)
                tensors[name] = array
            (n_vel,) = struct.unpack("<I", fh.read(4))
            velocity = {}
            for _ in range(n_vel):
                name, array = _read_tensor(fh)
                velocity[name] = array
    except (struct.error, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    if expected_vocab_hash is not None and vocab_hash != expected_vocab_hash:
        raise VocabularyMismatch("checkpoint vocabulary hash does not match")
    trainable = tuple(n for n in tensors if not (n.endswith("_mean") or n.endswith("_var")))
    params = ModelParams(tensors=tensors, trainable=trainable)
    state = {"epoch": header["epoch"], "best_wer": header["best_wer"], "vocab_hash": vocab_hash}
    return config, params, velocity, state
