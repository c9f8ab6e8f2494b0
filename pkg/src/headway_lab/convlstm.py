"""From-scratch ConvLSTM encoder-decoder for headway grids.

Architecture: one ConvLSTM encoder over the L history frames (the two
directions are input channels on an [N_d x 1] spatial grid), one ConvLSTM
decoder whose per-step input is the encoder's final hidden state
concatenated with the planned terminal headways broadcast along distance,
and a 1x1 convolution + ReLU head producing the two direction channels.

Convolutions use a (3, 1) kernel: three taps along distance with zero
padding 1, extent one along the singleton second axis, so distance bins
mix spatially while directions interact only through channels.

Everything here is plain numpy with hand-derived gradients. Internally
arrays are laid out [channels, batch, distance] so each kernel tap is a
single matmul; public entry points accept the [.. x N_d x N_dir x 1]
sample layout. Gate slices along the stacked axis are ordered
input, forget, candidate, output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KERNEL_TAPS = 3  # (3, 1) kernel: taps along the distance axis


class ShapeError(ValueError):
    """Contract violation: an array does not match its declared shape."""


class GradientError(RuntimeError):
    """Non-finite gradient encountered during an optimizer step."""


@dataclass(frozen=True)
class ModelDims:
    n_distance_bins: int
    n_directions: int = 2
    filters: int = 32
    lookback: int = 30
    horizon: int = 15

    def __post_init__(self):
        if min(self.n_distance_bins, self.filters, self.lookback, self.horizon) < 1:
            raise ShapeError("model dimensions must be positive")
        if self.n_directions != 2:
            raise ShapeError("exactly two direction channels are supported")

    @property
    def encoder_in(self) -> int:
        return self.n_directions

    @property
    def decoder_in(self) -> int:
        return self.filters + self.n_directions

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class LayerParams:
    """Gate kernels and bias of one ConvLSTM layer.

    w_x: [4*filters, in_channels, 3, 1], w_h: [4*filters, filters, 3, 1],
    b: [4*filters]. The leading axis stacks the i, f, g, o gates.
    """

    w_x: np.ndarray
    w_h: np.ndarray
    b: np.ndarray


@dataclass
class ModelParams:
    dims: ModelDims
    encoder: LayerParams
    decoder: LayerParams
    head_w: np.ndarray  # [2, filters]
    head_b: np.ndarray  # [2]

    def named_arrays(self):
        """Parameter tensors in the fixed serialization/update order."""
        return [
            ("encoder.w_x", self.encoder.w_x),
            ("encoder.w_h", self.encoder.w_h),
            ("encoder.b", self.encoder.b),
            ("decoder.w_x", self.decoder.w_x),
            ("decoder.w_h", self.decoder.w_h),
            ("decoder.b", self.decoder.b),
            ("head.w", self.head_w),
            ("head.b", self.head_b),
        ]

    def map_arrays(self, fn) -> "ModelParams":
        return ModelParams(
            dims=self.dims,
            encoder=LayerParams(fn(self.encoder.w_x), fn(self.encoder.w_h), fn(self.encoder.b)),
            decoder=LayerParams(fn(self.decoder.w_x), fn(self.decoder.w_h), fn(self.decoder.b)),
            head_w=fn(self.head_w),
            head_b=fn(self.head_b),
        )

    def copy(self) -> "ModelParams":
        return self.map_arrays(np.copy)

    def astype(self, dtype) -> "ModelParams":
        return self.map_arrays(lambda a: a.astype(dtype))

    @property
    def dtype(self):
        return self.encoder.w_x.dtype


def _glorot(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_params(dims: ModelDims, seed: int, dtype=np.float32) -> ModelParams:
    """Glorot-uniform kernels (fans over the full stacked-gate kernel),
    zero biases except the forget-gate slice, which starts at 1."""
    rng = np.random.Generator(np.random.PCG64(seed))
    nf = dims.filters

    def layer(in_channels):
        out = 4 * nf
        w_x = _glorot(rng, (out, in_channels, KERNEL_TAPS, 1),
                      in_channels * KERNEL_TAPS, out * KERNEL_TAPS, dtype)
        w_h = _glorot(rng, (out, nf, KERNEL_TAPS, 1),
                      nf * KERNEL_TAPS, out * KERNEL_TAPS, dtype)
        b = np.zeros(out, dtype=dtype)
        b[nf:2 * nf] = 1.0
        return LayerParams(w_x, w_h, b)

    encoder = layer(dims.encoder_in)
    decoder = layer(dims.decoder_in)
    head_w = _glorot(rng, (dims.n_directions, nf), nf, dims.n_directions, dtype)
    head_b = np.zeros(dims.n_directions, dtype=dtype)
    return ModelParams(dims, encoder, decoder, head_w, head_b)


# ---------------------------------------------------------------------------
# convolution along distance: kernel 3, zero padding 1, stride 1

def _im2col(x: np.ndarray) -> np.ndarray:
    """x: [in_ch, batch, n_d] -> [in_ch * 3, batch * n_d] of the three
    zero-padded taps, laid out to match a [out, in_ch * 3] kernel."""
    c, b, d = x.shape
    xp = np.zeros((c, b, d + 2), dtype=x.dtype)
    xp[:, :, 1:d + 1] = x
    cols = np.empty((c, KERNEL_TAPS, b, d), dtype=x.dtype)
    for k in range(KERNEL_TAPS):
        cols[:, k] = xp[:, :, k:k + d]
    return cols.reshape(c * KERNEL_TAPS, b * d)


def _flat_kernel(w: np.ndarray) -> np.ndarray:
    if w.ndim == 4:
        w = w[..., 0]
    return np.ascontiguousarray(w).reshape(w.shape[0], -1)


def conv_distance(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """w: [out_ch, in_ch, 3(, 1)], x: [in_ch, batch, n_d] -> [out_ch, batch, n_d].

    One GEMM against the im2col view; BLAS needs both operands contiguous
    to stay on its fast path.
    """
    c, b, d = x.shape
    out = _flat_kernel(w) @ _im2col(x)
    return out.reshape(w.shape[0], b, d)


def conv_distance_backward(w: np.ndarray, x: np.ndarray, d_out: np.ndarray):
    """Gradients of conv_distance: returns (d_w with w's shape, d_x)."""
    c, b, d = x.shape
    o = w.shape[0]
    cols = _im2col(x)
    d_out_flat = np.ascontiguousarray(d_out).reshape(o, b * d)
    d_w = (d_out_flat @ cols.T).reshape(o, c, KERNEL_TAPS)
    d_cols = (_flat_kernel(w).T @ d_out_flat).reshape(c, KERNEL_TAPS, b, d)
    d_xp = np.zeros((c, b, d + 2), dtype=x.dtype)
    for k in range(KERNEL_TAPS):
        d_xp[:, :, k:k + d] += d_cols[:, k]
    d_x = d_xp[:, :, 1:d + 1]
    return (d_w[..., None] if w.ndim == 4 else d_w), d_x


def _sigmoid(z):
    # tanh-based form: numerically stable and fast in one vector pass
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


# ---------------------------------------------------------------------------
# ConvLSTM cell

def _cell_forward_batch(x, h_prev, c_prev, layer: LayerParams, nf: int):
    """x: [C_in, B, D], states: [nf, B, D] -> (h, c, cache)."""
    gates = conv_distance(layer.w_x, x) + conv_distance(layer.w_h, h_prev)
    gates += layer.b[:, None, None]
    i = _sigmoid(gates[:nf])
    f = _sigmoid(gates[nf:2 * nf])
    g = np.tanh(gates[2 * nf:3 * nf])
    o = _sigmoid(gates[3 * nf:])
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, (x, h_prev, c_prev, i, f, g, o, tanh_c)


def _cell_backward_batch(d_h, d_c, cache, layer: LayerParams, nf: int,
                         g_layer: LayerParams):
    """Backprop one cell step; accumulates into g_layer, returns
    (d_x, d_h_prev, d_c_prev)."""
    x, h_prev, c_prev, i, f, g, o, tanh_c = cache
    d_o = d_h * tanh_c
    d_c_total = d_c + d_h * o * (1.0 - tanh_c * tanh_c)
    d_i = d_c_total * g
    d_f = d_c_total * c_prev
    d_g = d_c_total * i
    d_c_prev = d_c_total * f

    d_pre = np.concatenate([
        d_i * i * (1.0 - i),
        d_f * f * (1.0 - f),
        d_g * (1.0 - g * g),
        d_o * o * (1.0 - o),
    ], axis=0)

    g_layer.b += d_pre.sum(axis=(1, 2))
    d_wx, d_x = conv_distance_backward(layer.w_x, x, d_pre)
    g_layer.w_x += d_wx
    d_wh, d_h_prev = conv_distance_backward(layer.w_h, h_prev, d_pre)
    g_layer.w_h += d_wh
    return d_x, d_h_prev, d_c_prev


def cell_forward(x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray,
                 layer: LayerParams):
    """Single-sample cell step on [channels, N_d, 1] arrays."""
    nf = layer.w_h.shape[1]
    if x_t.ndim != 3 or x_t.shape[2] != 1 or x_t.shape[0] != layer.w_x.shape[1]:
        raise ShapeError(f"x_t must be [{layer.w_x.shape[1]}, N_d, 1], got {x_t.shape}")
    if h_prev.shape != (nf, x_t.shape[1], 1) or c_prev.shape != h_prev.shape:
        raise ShapeError("h_prev/c_prev must be [filters, N_d, 1]")
    xb = np.ascontiguousarray(x_t[:, None, :, 0])
    hb = np.ascontiguousarray(h_prev[:, None, :, 0])
    cb = np.ascontiguousarray(c_prev[:, None, :, 0])
    h, c, _ = _cell_forward_batch(xb, hb, cb, layer, nf)
    return h[:, 0, :, None], c[:, 0, :, None]


# ---------------------------------------------------------------------------
# full model: encoder -> decoder -> 1x1 conv + ReLU head

@dataclass
class ForwardCache:
    params: ModelParams
    enc_steps: list
    dec_steps: list
    head_h: list        # decoder hidden per future step
    head_pos: list      # ReLU active masks per future step
    batch: int


def zero_grads(params: ModelParams) -> ModelParams:
    return params.map_arrays(np.zeros_like)


def _check_batch_shapes(dims: ModelDims, xb, tb):
    b = xb.shape[0]
    if xb.shape != (b, dims.lookback, dims.n_directions, dims.n_distance_bins):
        raise ShapeError(f"history batch must be [B, {dims.lookback}, "
                         f"{dims.n_directions}, {dims.n_distance_bins}], got {xb.shape}")
    if tb.shape != (b, dims.horizon, dims.n_directions):
        raise ShapeError(f"terminal batch must be [B, {dims.horizon}, "
                         f"{dims.n_directions}], got {tb.shape}")


def forward_batch(params: ModelParams, xb: np.ndarray, tb: np.ndarray):
    """Batched forward pass.

    xb: [B, L, 2, N_d] normalized history, tb: [B, F, 2] normalized planned
    terminal headways. Returns (y [B, F, 2, N_d], ForwardCache).
    """
    dims = params.dims
    _check_batch_shapes(dims, xb, tb)
    dtype = params.dtype
    xb = xb.astype(dtype, copy=False)
    tb = tb.astype(dtype, copy=False)
    b, nf, d = xb.shape[0], dims.filters, dims.n_distance_bins

    h = np.zeros((nf, b, d), dtype=dtype)
    c = np.zeros((nf, b, d), dtype=dtype)
    enc_steps = []
    for step in range(dims.lookback):
        x_t = np.ascontiguousarray(xb[:, step].transpose(1, 0, 2))
        h, c, cache = _cell_forward_batch(x_t, h, c, params.encoder, nf)
        enc_steps.append(cache)
    enc_h = h

    dec_steps, head_h, head_pos, outs = [], [], [], []
    ones_d = np.ones((1, 1, d), dtype=dtype)
    for step in range(dims.horizon):
        t_chan = tb[:, step].T[:, :, None] * ones_d        # [2, B, D]
        x_dec = np.concatenate([enc_h, t_chan], axis=0)
        h, c, cache = _cell_forward_batch(x_dec, h, c, params.decoder, nf)
        dec_steps.append(cache)
        y_pre = (params.head_w @ h.reshape(nf, b * d)).reshape(-1, b, d)
        y_pre += params.head_b[:, None, None]
        pos = y_pre > 0
        outs.append(np.maximum(y_pre, 0))
        head_h.append(h)
        head_pos.append(pos)

    y = np.stack(outs, axis=0).transpose(2, 0, 1, 3)  # [B, F, 2, D]
    cache = ForwardCache(params, enc_steps, dec_steps, head_h, head_pos, b)
    return y, cache


def backward_batch(cache: ForwardCache, d_y: np.ndarray) -> ModelParams:
    """Gradients of every parameter given dLoss/dOutput ([B, F, 2, N_d])."""
    params = cache.params
    dims = params.dims
    nf, b, d = dims.filters, cache.batch, dims.n_distance_bins
    if d_y.shape != (b, dims.horizon, dims.n_directions, d):
        raise ShapeError(f"d_y shape {d_y.shape} does not match the forward call")
    d_y = d_y.astype(params.dtype, copy=False)
    grads = zero_grads(params)

    d_enc_h_final = np.zeros((nf, b, d), dtype=params.dtype)
    d_h_next = np.zeros_like(d_enc_h_final)
    d_c_next = np.zeros_like(d_enc_h_final)

    for step in range(dims.horizon - 1, -1, -1):
        d_out = np.ascontiguousarray(d_y[:, step].transpose(1, 0, 2))
        d_pre = np.where(cache.head_pos[step], d_out, 0)
        h_dec = cache.head_h[step]
        grads.head_w += d_pre.reshape(-1, b * d) @ h_dec.reshape(nf, b * d).T
        grads.head_b += d_pre.sum(axis=(1, 2))
        d_h = (params.head_w.T @ d_pre.reshape(-1, b * d)).reshape(nf, b, d)
        d_h += d_h_next
        d_x_dec, d_h_next, d_c_next = _cell_backward_batch(
            d_h, d_c_next, cache.dec_steps[step], params.decoder, nf, grads.decoder)
        d_enc_h_final += d_x_dec[:nf]

    # decoder's initial state was the encoder's final state
    d_h_enc = d_h_next + d_enc_h_final
    d_c_enc = d_c_next
    for step in range(dims.lookback - 1, -1, -1):
        _, d_h_enc, d_c_enc = _cell_backward_batch(
            d_h_enc, d_c_enc, cache.enc_steps[step], params.encoder, nf, grads.encoder)
    return grads


# sample layout [L, N_d, 2, 1] <-> engine layout [B, L, 2, N_d]

def sample_to_batch(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x[None, :, :, :, 0].transpose(0, 1, 3, 2))


def batch_to_sample(y: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(y[0].transpose(0, 2, 1))[:, :, :, None]


def model_forward(x: np.ndarray, t_future: np.ndarray, params: ModelParams):
    """Single-sample forward: x [L, N_d, 2, 1], t_future [F, 2, 1] ->
    (y_hat [F, N_d, 2, 1], cache)."""
    dims = params.dims
    if x.shape != (dims.lookback, dims.n_distance_bins, dims.n_directions, 1):
        raise ShapeError(f"x shape {x.shape} does not match model dims")
    if t_future.shape != (dims.horizon, dims.n_directions, 1):
        raise ShapeError(f"t_future shape {t_future.shape} does not match model dims")
    y, cache = forward_batch(params, sample_to_batch(x), t_future[None, :, :, 0])
    return batch_to_sample(y), cache


def model_backward(cache: ForwardCache, d_y_hat: np.ndarray) -> ModelParams:
    """Single-sample backward matching model_forward's layout."""
    if cache.batch != 1:
        raise ShapeError("model_backward expects a single-sample cache")
    d_y = d_y_hat[None, :, :, :, 0].transpose(0, 1, 3, 2)
    return backward_batch(cache, np.ascontiguousarray(d_y))


def mse_loss(y: np.ndarray, y_hat: np.ndarray):
    """Mean squared error over every element and its gradient wrt y_hat."""
    if y.shape != y_hat.shape:
        raise ShapeError(f"shape mismatch: {y.shape} vs {y_hat.shape}")
    diff = y_hat.astype(np.float64) - y.astype(np.float64)
    loss = float(np.mean(diff * diff))
    grad = (2.0 / diff.size) * diff
    return loss, grad.astype(y_hat.dtype)


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    first_moment: ModelParams
    second_moment: ModelParams
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_init(params: ModelParams, beta1=0.9, beta2=0.999, epsilon=1e-8) -> AdamState:
    return AdamState(zero_grads(params), zero_grads(params), 0, beta1, beta2, epsilon)


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState,
              lr: float) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update; parameters are replaced, not mutated."""
    t = state.step_count + 1
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    new_p, new_m, new_v = {}, {}, {}
    m_arrays = dict(state.first_moment.named_arrays())
    v_arrays = dict(state.second_moment.named_arrays())
    g_arrays = dict(grads.named_arrays())
    for name, p in params.named_arrays():
        g = g_arrays[name]
        if not np.isfinite(g).all():
            raise GradientError(f"non-finite gradient in parameter block {name!r}")
        m = b1 * m_arrays[name] + (1.0 - b1) * g
        v = b2 * v_arrays[name] + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_p[name] = (p - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)
        new_m[name] = m.astype(p.dtype)
        new_v[name] = v.astype(p.dtype)

    def rebuild(values):
        return ModelParams(
            dims=params.dims,
            encoder=LayerParams(values["encoder.w_x"], values["encoder.w_h"], values["encoder.b"]),
            decoder=LayerParams(values["decoder.w_x"], values["decoder.w_h"], values["decoder.b"]),
            head_w=values["head.w"],
            head_b=values["head.b"],
        )

    new_state = AdamState(rebuild(new_m), rebuild(new_v), t, b1, b2, eps)
    return rebuild(new_p), new_state
