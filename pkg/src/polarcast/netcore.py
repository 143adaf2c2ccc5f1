"""Fixed five-conv / two-dense CNN with hand-written forward and backward passes.

Conventions:
  * convolution = valid cross-correlation (no kernel flip, no padding),
  * maxpool window 2, non-overlapping, odd trailing element dropped,
    ties broken toward the lower index,
  * hidden activation ReLU (swappable to identity for linearity diagnostics),
  * inverted dropout (scaled at train time, eval is a bitwise pass-through),
  * sigmoid output read as P(upward polarity).

Parameters are stored float32 (the checkpoint wire dtype); all math runs in
float64, so gradients accumulate in double precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PARAM_DTYPE = np.float32
BCE_EPS = 1e-7


@dataclass
class ArchConfig:
    """Shape of the fixed architecture. Channel/width defaults are config, not
    constants: pass the real values when they are known."""

    window_len: int = 400
    conv_channels: tuple = (16, 32, 64, 64, 128)
    kernel_size: int = 3
    pool_every_block: bool = True
    dense_widths: tuple = (64, 1)
    dropout_enabled: bool = False
    dropout_rate: float = 0.5
    hidden_activation: str = "relu"  # "identity" for linearity diagnostics
    pool_enabled: bool = True  # False: no pooling at all (diagnostics only)

    def __post_init__(self):
        if len(self.conv_channels) != 5:
            raise ValueError("exactly five convolutional layers required")
        if len(self.dense_widths) != 2 or self.dense_widths[1] != 1:
            raise ValueError("exactly two dense layers, the last of width 1")
        if any(c < 1 for c in self.conv_channels) or self.dense_widths[0] < 1:
            raise ValueError("channel/width counts must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd and positive")
        if self.dropout_enabled and self.dropout_rate != 0.5:
            raise ValueError("dropout rate is fixed to 0.5 when enabled")
        if self.hidden_activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.hidden_activation!r}")
        self.layer_plan()  # validates spatial lengths

    def pools_after(self, block: int) -> bool:
        if not self.pool_enabled:
            return False
        return self.pool_every_block or block == 4

    def layer_plan(self) -> list[tuple[int, int]]:
        """Per block: (conv output length, length after optional pooling)."""
        plan = []
        length = self.window_len
        for b in range(5):
            conv_out = length - self.kernel_size + 1
            if conv_out < 1:
                raise ValueError(
                    f"block {b + 1}: spatial length {length} too short for "
                    f"kernel {self.kernel_size}"
                )
            length = conv_out
            if self.pools_after(b):
                if length < 2:
                    raise ValueError(f"block {b + 1}: length {length} cannot be pooled")
                length //= 2
            plan.append((conv_out, length))
        return plan

    @property
    def flat_dim(self) -> int:
        return self.conv_channels[-1] * self.layer_plan()[-1][1]


@dataclass
class ModelParams:
    """All trainable tensors. conv weights (out_ch, in_ch, k); dense (out, in)."""

    arch: ArchConfig
    conv_w: list = field(default_factory=list)
    conv_b: list = field(default_factory=list)
    dense_w: list = field(default_factory=list)
    dense_b: list = field(default_factory=list)

    def tensors(self) -> dict[str, np.ndarray]:
        """Name -> array view, in a fixed order (the checkpoint/opt-state key space)."""
        out: dict[str, np.ndarray] = {}
        for i in range(5):
            out[f"conv{i + 1}.w"] = self.conv_w[i]
            out[f"conv{i + 1}.b"] = self.conv_b[i]
        for i in range(2):
            out[f"dense{i + 1}.w"] = self.dense_w[i]
            out[f"dense{i + 1}.b"] = self.dense_b[i]
        return out

    def set_tensor(self, name: str, value: np.ndarray):
        kind, attr = name.split(".")
        idx = int(kind[-1]) - 1
        getattr(self, f"{kind[:-1]}_{attr}")[idx] = value

    def copy(self) -> "ModelParams":
        return ModelParams(
            arch=self.arch,
            conv_w=[w.copy() for w in self.conv_w],
            conv_b=[b.copy() for b in self.conv_b],
            dense_w=[w.copy() for w in self.dense_w],
            dense_b=[b.copy() for b in self.dense_b],
        )

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            arch=self.arch,
            conv_w=[w.astype(dtype) for w in self.conv_w],
            conv_b=[b.astype(dtype) for b in self.conv_b],
            dense_w=[w.astype(dtype) for w in self.dense_w],
            dense_b=[b.astype(dtype) for b in self.dense_b],
        )

    def num_params(self) -> int:
        return sum(int(t.size) for t in self.tensors().values())

    def all_finite(self) -> bool:
        return all(np.isfinite(t).all() for t in self.tensors().values())


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    w = rng.uniform(-bound, bound, size=shape).astype(PARAM_DTYPE)
    # float32 rounding must never push |w| past the float64 bound
    b32 = np.float32(bound)
    if float(b32) > bound:
        b32 = np.nextafter(b32, np.float32(0))
    return np.clip(w, -b32, b32)


def init_params(arch: ArchConfig, seed) -> ModelParams:
    """Glorot-uniform weights, zero biases, deterministic per seed."""
    rng = np.random.default_rng(seed)
    params = ModelParams(arch=arch)
    in_ch = 1
    k = arch.kernel_size
    for out_ch in arch.conv_channels:
        params.conv_w.append(_glorot(rng, (out_ch, in_ch, k), in_ch * k, out_ch * k))
        params.conv_b.append(np.zeros(out_ch, dtype=PARAM_DTYPE))
        in_ch = out_ch
    widths = [arch.flat_dim, *arch.dense_widths]
    for i in range(2):
        params.dense_w.append(
            _glorot(rng, (widths[i + 1], widths[i]), widths[i], widths[i + 1])
        )
        params.dense_b.append(np.zeros(widths[i + 1], dtype=PARAM_DTYPE))
    return params


# ---------------------------------------------------------------------------
# layer primitives (batched; a (C, L) input is treated as batch of one)


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Valid cross-correlation: out[oc, i] = b[oc] + sum_ic sum_k w[oc,ic,k] * x[ic,i+k]."""
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3 or w.ndim != 3:
        raise ValueError("conv1d_forward expects (B, C, L) input and (O, C, K) weights")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"in-channel mismatch: x has {x.shape[1]}, w has {w.shape[1]}")
    k = w.shape[2]
    if x.shape[2] < k:
        raise ValueError(f"input length {x.shape[2]} shorter than kernel {k}")
    windows = sliding_window_view(x, k, axis=2)  # (B, C, L_out, K)
    out = np.einsum("ock,bclk->bol", w, windows, optimize=True) + b[None, :, None]
    return out[0] if squeeze else out


def conv1d_backward(
    x: np.ndarray, w: np.ndarray, d_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of the valid cross-correlation. Returns (d_x, d_w, d_b)."""
    k = w.shape[2]
    windows = sliding_window_view(x, k, axis=2)
    d_w = np.einsum("bol,bclk->ock", d_out, windows, optimize=True)
    d_b = d_out.sum(axis=(0, 2))
    pad = np.zeros(
        (d_out.shape[0], d_out.shape[1], d_out.shape[2] + 2 * (k - 1)), dtype=d_out.dtype
    )
    pad[:, :, k - 1 : k - 1 + d_out.shape[2]] = d_out
    pad_windows = sliding_window_view(pad, k, axis=2)  # (B, O, L_in, K)
    d_x = np.einsum("ock,bolk->bcl", w[:, :, ::-1], pad_windows, optimize=True)
    return d_x, d_w, d_b


def maxpool1d_forward(x: np.ndarray, window: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping max over pairs; odd trailing element dropped; ties -> lower index.

    Returns (pooled, argmax) where argmax holds original positions along L.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if window != 2:
        raise ValueError("only window=2 is supported")
    length = x.shape[2]
    if length < 2:
        raise ValueError(f"cannot pool length {length}")
    n_out = length // 2
    pairs = x[:, :, : 2 * n_out].reshape(x.shape[0], x.shape[1], n_out, 2)
    local = np.argmax(pairs, axis=3)  # first occurrence wins the tie
    pooled = np.take_along_axis(pairs, local[..., None], axis=3)[..., 0]
    argmax = local + 2 * np.arange(n_out)[None, None, :]
    if squeeze:
        return pooled[0], argmax[0]
    return pooled, argmax


def maxpool1d_backward(d_out: np.ndarray, argmax: np.ndarray, in_length: int) -> np.ndarray:
    """Route gradient to the cached argmax positions (one winner per window)."""
    b, c, n_out = d_out.shape
    pairs = np.zeros((b, c, n_out, 2), dtype=d_out.dtype)
    local = (argmax & 1)[..., None]  # position within its window of 2
    np.put_along_axis(pairs, local, d_out[..., None], axis=3)
    d_x = np.zeros((b, c, in_length), dtype=d_out.dtype)
    d_x[:, :, : 2 * n_out] = pairs.reshape(b, c, 2 * n_out)
    return d_x


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(z):
    """Numerically safe logistic; never overflows for large |z|."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    if out.ndim == 0:
        return float(out)
    return out


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """y = w @ x + b (row-batched when x is 2-D)."""
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"dense shape mismatch: x {x.shape} vs w {w.shape}")
    return x @ w.T + b


def dropout_apply(
    x: np.ndarray,
    rate: float = 0.5,
    mode: str = "train",
    rng: Optional[np.random.Generator] = None,
    mask: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Inverted dropout. Train: zero with prob ``rate``, scale kept by 1/(1-rate).
    Eval: bitwise pass-through with an all-ones mask."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("rate must be in [0, 1)")
    if mode == "eval" or rate == 0.0:
        return x, np.ones_like(x)
    if mode != "train":
        raise ValueError(f"unknown dropout mode {mode!r}")
    keep = 1.0 - rate
    if mask is None:
        if rng is None:
            raise ValueError("train-mode dropout needs an rng (or a frozen mask)")
        mask = (rng.random(x.shape) < keep).astype(np.float64)
    return x * mask / keep, mask


# ---------------------------------------------------------------------------
# full model


@dataclass
class ForwardCache:
    """Everything backward needs; only built in train mode."""

    x: np.ndarray  # (B, 1, L) input
    conv_in: list  # inputs to each conv layer
    conv_pre: list  # conv pre-activations
    pool_arg: list  # argmax indices or None per block
    pool_in_len: list  # conv-activation length per block (pooling input)
    flat: np.ndarray  # (B, F) after flatten
    drop_masks: list  # [mask1, mask2] or [None, None]
    dense1_in: np.ndarray
    dense1_pre: np.ndarray
    dense2_in: np.ndarray
    logit: np.ndarray  # (B,)
    p: np.ndarray  # (B,)


def _activation(arch: ArchConfig):
    return relu if arch.hidden_activation == "relu" else (lambda v: v)


def model_forward(
    params: ModelParams,
    window: np.ndarray,
    mode: str = "eval",
    rng: Optional[np.random.Generator] = None,
    frozen_masks: Optional[list] = None,
) -> tuple[np.ndarray, Optional[ForwardCache]]:
    """Run the stack [conv->act->pool]x5 -> flatten -> (drop) -> dense -> act ->
    (drop) -> dense(1) -> sigmoid.

    ``window`` is (L,) or (B, L). Returns (p, cache); cache only in train mode.
    ``frozen_masks`` pins the two dropout masks (gradient checking).
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    arch = params.arch
    x = np.asarray(window, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None]
    if x.shape[1] != arch.window_len:
        raise ValueError(f"window length {x.shape[1]} != arch {arch.window_len}")
    act = _activation(arch)
    plan = arch.layer_plan()

    h = x[:, None, :]  # (B, 1, L)
    conv_in, conv_pre, pool_arg, pool_in_len = [], [], [], []
    for b in range(5):
        conv_in.append(h)
        z = conv1d_forward(h, params.conv_w[b], params.conv_b[b])
        assert z.shape[2] == plan[b][0], "spatial bookkeeping broke"
        conv_pre.append(z)
        a = act(z)
        pool_in_len.append(a.shape[2])
        if arch.pools_after(b):
            h, arg = maxpool1d_forward(a)
            pool_arg.append(arg)
        else:
            h = a
            pool_arg.append(None)
        assert h.shape[2] == plan[b][1], "spatial bookkeeping broke"

    flat = h.reshape(h.shape[0], -1)
    assert flat.shape[1] == arch.flat_dim

    train = mode == "train"
    use_drop = arch.dropout_enabled
    masks: list = [None, None]

    d1_in = flat
    if use_drop and train:
        d1_in, masks[0] = dropout_apply(
            flat, arch.dropout_rate, "train", rng,
            mask=None if frozen_masks is None else frozen_masks[0],
        )
    z1 = dense_forward(d1_in, params.dense_w[0], params.dense_b[0])
    a1 = act(z1)
    d2_in = a1
    if use_drop and train:
        d2_in, masks[1] = dropout_apply(
            a1, arch.dropout_rate, "train", rng,
            mask=None if frozen_masks is None else frozen_masks[1],
        )
    logit = dense_forward(d2_in, params.dense_w[1], params.dense_b[1])[:, 0]
    p = sigmoid(logit)

    cache = None
    if train:
        cache = ForwardCache(
            x=x[:, None, :],
            conv_in=conv_in,
            conv_pre=conv_pre,
            pool_arg=pool_arg,
            pool_in_len=pool_in_len,
            flat=flat,
            drop_masks=masks,
            dense1_in=d1_in,
            dense1_pre=z1,
            dense2_in=d2_in,
            logit=logit,
            p=p,
        )
    if single:
        return (float(p[0]), cache)
    return p, cache


def bce_loss(p, y) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample binary cross-entropy and the fused sigmoid gradient dL/dz = p - y.

    p is clamped to [eps, 1-eps] inside the log only; the gradient uses raw p.
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    loss = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    return loss, p - y


def mean_bce(p: np.ndarray, y: np.ndarray) -> float:
    loss, _ = bce_loss(p, y)
    return float(np.mean(loss))


def model_backward(params: ModelParams, cache: ForwardCache, y) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradients of the mean BCE over the cached batch.

    Maxpool routes into the cached argmax; dropout reuses the cached masks with
    the same 1/(1-rate) scale. Gradient tensors come back float64, keyed like
    ``ModelParams.tensors()``.
    """
    if cache is None:
        raise ValueError("model_backward needs the cache from a train-mode forward")
    arch = params.arch
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    batch = cache.p.shape[0]
    if y.shape[0] != batch:
        raise ValueError("label count does not match cached batch")
    grads: dict[str, np.ndarray] = {}
    keep = 1.0 - arch.dropout_rate

    d_logit = (cache.p - y) / batch  # fused sigmoid+BCE, mean over batch

    # dense2
    grads["dense2.w"] = np.einsum("b,bi->i", d_logit, cache.dense2_in)[None, :]
    grads["dense2.b"] = np.array([d_logit.sum()])
    d_h = d_logit[:, None] * params.dense_w[1].astype(np.float64)

    if cache.drop_masks[1] is not None:
        d_h = d_h * cache.drop_masks[1] / keep
    if arch.hidden_activation == "relu":
        d_h = d_h * (cache.dense1_pre > 0)

    # dense1
    grads["dense1.w"] = np.einsum("bo,bi->oi", d_h, cache.dense1_in)
    grads["dense1.b"] = d_h.sum(axis=0)
    d_flat = d_h @ params.dense_w[0].astype(np.float64)

    if cache.drop_masks[0] is not None:
        d_flat = d_flat * cache.drop_masks[0] / keep

    last_len = arch.layer_plan()[-1][1]
    d_h = d_flat.reshape(batch, arch.conv_channels[-1], last_len)

    for b in reversed(range(5)):
        if cache.pool_arg[b] is not None:
            d_h = maxpool1d_backward(d_h, cache.pool_arg[b], cache.pool_in_len[b])
        if arch.hidden_activation == "relu":
            d_h = d_h * (cache.conv_pre[b] > 0)
        d_h, d_w, d_b = conv1d_backward(cache.conv_in[b], params.conv_w[b], d_h)
        grads[f"conv{b + 1}.w"] = d_w
        grads[f"conv{b + 1}.b"] = d_b
    return grads


def predict(params: ModelParams, values: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """Eval-mode probabilities for an (n, L) array, chunked for memory."""
    values = np.asarray(values, dtype=np.float64)
    out = np.empty(len(values), dtype=np.float64)
    for s in range(0, len(values), chunk):
        p, _ = model_forward(params, values[s : s + chunk], mode="eval")
        out[s : s + chunk] = p
    return out
