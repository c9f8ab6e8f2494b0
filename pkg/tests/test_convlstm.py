import numpy as np
import pytest

from headway_lab.convlstm import (GradientError, ModelDims,
                                  ShapeError, adam_init, adam_step,
                                  cell_forward, conv_distance, init_params,
                                  model_backward, model_forward, mse_loss,
                                  zero_grads)

TINY = ModelDims(n_distance_bins=4, n_directions=2, filters=2, lookback=3, horizon=2)


def tiny_inputs(seed=11):
    rng = np.random.default_rng(seed)
    x = rng.random((TINY.lookback, TINY.n_distance_bins, 2, 1))
    t = rng.random((TINY.horizon, 2, 1))
    y = rng.random((TINY.horizon, TINY.n_distance_bins, 2, 1))
    return x, t, y


def naive_conv(w, x):
    """Direct-summation oracle: 3-tap convolution along distance with zero
    padding, independent of the engine's matmul formulation."""
    w = w[..., 0] if w.ndim == 4 else w
    o_ch, c_ch, taps = w.shape
    _, b, d = x.shape
    out = np.zeros((o_ch, b, d), dtype=x.dtype)
    for o in range(o_ch):
        for bi in range(b):
            for di in range(d):
                acc = 0.0
                for c in range(c_ch):
                    for k in range(taps):
                        src = di + k - 1
                        if 0 <= src < d:
                            acc += w[o, c, k] * x[c, bi, src]
                out[o, bi, di] = acc
    return out


def finite_diff_grads(params, x, t, y, eps=1e-5):
    """Central-difference gradient of the MSE loss for every parameter."""
    def loss_of():
        y_hat, _ = model_forward(x, t, params)
        return mse_loss(y, y_hat)[0]

    out = {}
    for name, arr in params.named_arrays():
        fd = np.zeros_like(arr)
        flat, fd_flat = arr.ravel(), fd.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = loss_of()
            flat[i] = orig - eps
            lm = loss_of()
            flat[i] = orig
            fd_flat[i] = (lp - lm) / (2 * eps)
        out[name] = fd
    return out


class TestInit:
    def test_deterministic(self):
        a = init_params(TINY, seed=4)
        b = init_params(TINY, seed=4)
        for (_, pa), (_, pb) in zip(a.named_arrays(), b.named_arrays()):
            assert np.array_equal(pa, pb)

    def test_forget_gate_bias_is_one(self):
        params = init_params(TINY, seed=0)
        nf = TINY.filters
        for layer in (params.encoder, params.decoder):
            assert np.all(layer.b[nf:2 * nf] == 1.0)
            assert np.all(layer.b[:nf] == 0.0)
            assert np.all(layer.b[2 * nf:] == 0.0)
        assert np.all(params.head_b == 0.0)

    def test_glorot_bound(self):
        dims = ModelDims(n_distance_bins=8, filters=5, lookback=2, horizon=2)
        params = init_params(dims, seed=1)
        for w, fan_in, fan_out in [
            (params.encoder.w_x, 2 * 3, 4 * 5 * 3),
            (params.encoder.w_h, 5 * 3, 4 * 5 * 3),
            (params.decoder.w_x, (5 + 2) * 3, 4 * 5 * 3),
            (params.head_w, 5, 2),
        ]:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            assert np.abs(w).max() <= limit


class TestCellForward:
    def test_all_zero(self):
        params = init_params(TINY, seed=0).map_arrays(np.zeros_like)
        nd = TINY.n_distance_bins
        x = np.zeros((2, nd, 1))
        h = np.zeros((TINY.filters, nd, 1))
        c = np.zeros_like(h)
        h_out, c_out = cell_forward(x, h, c, params.encoder)
        assert np.all(h_out == 0.0) and np.all(c_out == 0.0)

    def test_forget_saturation_preserves_cell(self):
        params = init_params(TINY, seed=0).map_arrays(np.zeros_like)
        nf = TINY.filters
        params.encoder.b[nf:2 * nf] = 25.0  # forget gate ~ 1
        rng = np.random.default_rng(2)
        nd = TINY.n_distance_bins
        c_prev = rng.normal(size=(nf, nd, 1))
        h_prev = np.zeros((nf, nd, 1))
        x = np.zeros((2, nd, 1))
        _, c_out = cell_forward(x, h_prev, c_prev, params.encoder)
        # i*g vanishes (g = tanh(0) = 0), so c tracks c_prev
        assert np.abs(c_out - c_prev).max() < 1e-9

    def test_shape_contract(self):
        params = init_params(TINY, seed=0)
        with pytest.raises(ShapeError):
            cell_forward(np.zeros((3, 4, 1)), np.zeros((2, 4, 1)),
                         np.zeros((2, 4, 1)), params.encoder)


class TestConvOracle:
    def test_matches_direct_summation(self):
        rng = np.random.default_rng(7)
        for o_ch, c_ch, b, d in [(8, 2, 1, 4), (4, 3, 2, 7), (12, 5, 3, 9)]:
            w = rng.normal(size=(o_ch, c_ch, 3, 1))
            x = rng.normal(size=(c_ch, b, d))
            fast = conv_distance(w, x)
            slow = naive_conv(w, x)
            assert np.abs(fast - slow).max() < 1e-12


class TestModelForward:
    def test_production_output_shape_and_relu(self):
        dims = ModelDims(n_distance_bins=64, filters=32, lookback=30, horizon=15)
        params = init_params(dims, seed=5)
        rng = np.random.default_rng(0)
        x = rng.random((30, 64, 2, 1)).astype(np.float32)
        t = rng.random((15, 2, 1)).astype(np.float32)
        y_hat, _ = model_forward(x, t, params)
        assert y_hat.shape == (15, 64, 2, 1)
        assert (y_hat >= 0).all()

    def test_terminal_channel_reaches_output(self):
        params = init_params(TINY, seed=9)
        x, t, _ = tiny_inputs()
        t2 = t.copy()
        t2[1, 0, 0] += 0.5
        a, _ = model_forward(x, t, params)
        b, _ = model_forward(x, t2, params)
        assert np.abs(a - b).max() > 0

    def test_shape_mismatch_rejected(self):
        params = init_params(TINY, seed=0)
        x, t, _ = tiny_inputs()
        with pytest.raises(ShapeError):
            model_forward(x[:2], t, params)
        with pytest.raises(ShapeError):
            model_forward(x, t[:1], params)


class TestMseLoss:
    def test_identity_zero(self):
        y = np.random.default_rng(0).random((3, 4))
        loss, grad = mse_loss(y, y.copy())
        assert loss == 0.0
        assert np.all(grad == 0.0)

    def test_hand_case(self):
        y = np.array([2.0, 4.0])
        y_hat = np.array([1.0, 6.0])
        loss, grad = mse_loss(y, y_hat)
        assert loss == pytest.approx(2.5)
        assert grad == pytest.approx([2 * (-1.0) / 2, 2 * 2.0 / 2])

    def test_direct_summation_oracle(self):
        rng = np.random.default_rng(3)
        y = rng.normal(size=(5, 7))
        y_hat = rng.normal(size=(5, 7))
        loss, _ = mse_loss(y, y_hat)
        acc = 0.0
        for i in range(5):
            for j in range(7):
                acc += (y_hat[i, j] - y[i, j]) ** 2
        assert abs(loss - acc / 35) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mse_loss(np.zeros(3), np.zeros(4))


class TestGradients:
    def test_zero_cotangent_zero_grads(self):
        params = init_params(TINY, seed=1, dtype=np.float64)
        x, t, _ = tiny_inputs()
        _, cache = model_forward(x, t, params)
        grads = model_backward(cache, np.zeros((TINY.horizon, TINY.n_distance_bins, 2, 1)))
        for _, g in grads.named_arrays():
            assert np.all(g == 0.0)

    def test_finite_difference_check(self):
        params = init_params(TINY, seed=3, dtype=np.float64)
        x, t, y = tiny_inputs()
        y_hat, cache = model_forward(x, t, params)
        _, d_y = mse_loss(y, y_hat)
        analytic = dict(model_backward(cache, d_y).named_arrays())
        fd = finite_diff_grads(params, x, t, y)
        for name in analytic:
            a, f = analytic[name], fd[name]
            rel = np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-8)
            assert rel.max() < 1e-4, f"{name}: max rel err {rel.max():.2e}"

    def test_saturated_forget_bias_gradient_near_zero(self):
        params = init_params(TINY, seed=0, dtype=np.float64).map_arrays(np.zeros_like)
        nf = TINY.filters
        params.encoder.b[nf:2 * nf] = 12.0
        params.decoder.b[nf:2 * nf] = 12.0
        x, t, y = tiny_inputs(seed=4)
        y_hat, cache = model_forward(x, t, params)
        _, d_y = mse_loss(y, y_hat)
        grads = model_backward(cache, d_y)
        fd = finite_diff_grads(params, x, t, y)
        for layer_name, g in [("encoder.b", grads.encoder.b),
                              ("decoder.b", grads.decoder.b)]:
            analytic_f = g[nf:2 * nf]
            fd_f = fd[layer_name][nf:2 * nf]
            assert np.abs(analytic_f).max() < 1e-4
            assert np.abs(fd_f).max() < 1e-4
            assert np.abs(analytic_f - fd_f).max() < 1e-6


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        params = init_params(TINY, seed=2)
        state = adam_init(params)
        new_params, new_state = adam_step(params, zero_grads(params), state, 0.001)
        assert new_state.step_count == 1
        for (_, a), (_, b) in zip(params.named_arrays(), new_params.named_arrays()):
            assert np.array_equal(a, b)

    def test_first_step_magnitude_is_lr(self):
        # with g = 1 the bias-corrected ratio m_hat / sqrt(v_hat) is exactly 1,
        # so the first update is lr / (1 + eps)
        params = init_params(TINY, seed=2, dtype=np.float64)
        grads = zero_grads(params)
        grads.head_b[:] = 1.0
        state = adam_init(params)
        lr = 0.001
        new_params, _ = adam_step(params, grads, state, lr)
        delta = params.head_b - new_params.head_b
        assert np.abs(delta - lr).max() < 1e-10
        assert np.array_equal(new_params.head_w, params.head_w)

    def test_deterministic_trajectory(self):
        def run():
            params = init_params(TINY, seed=8)
            state = adam_init(params)
            rng = np.random.default_rng(5)
            for _ in range(5):
                grads = params.map_arrays(lambda a: rng.normal(size=a.shape).astype(a.dtype))
                params, state = adam_step(params, grads, state, 0.01)
            return params

        a, b = run(), run()
        for (_, pa), (_, pb) in zip(a.named_arrays(), b.named_arrays()):
            assert np.array_equal(pa, pb)

    def test_non_finite_gradient_names_block(self):
        params = init_params(TINY, seed=2)
        grads = zero_grads(params)
        grads.decoder.w_h[0, 0, 0, 0] = np.nan
        with pytest.raises(GradientError, match="decoder.w_h"):
            adam_step(params, grads, adam_init(params), 0.001)
