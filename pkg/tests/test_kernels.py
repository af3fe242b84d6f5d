import numpy as np
import pytest

import oracles
from regolith import kernels
from regolith.tensor import QuantParams, compute_qparams, dequantize_array, quantize_array


def random_qparams(rng, lo=-4.0, hi=4.0):
    a, b = sorted(rng.uniform(lo, hi, size=2))
    if a == b:
        b = a + 0.5
    return compute_qparams(min(a, 0.0) - 0.05, max(b, 0.0) + 0.05)


def random_case(rng):
    """One random small conv/pool configuration."""
    h = int(rng.integers(1, 7))
    w = int(rng.integers(1, 7))
    cin = int(rng.integers(1, 5))
    cout = int(rng.integers(1, 5))
    kh = int(rng.integers(1, min(h, 3) + 1))
    kw = int(rng.integers(1, min(w, 3) + 1))
    stride = (int(rng.integers(1, 3)), int(rng.integers(1, 3)))
    padding = "same" if rng.random() < 0.5 else "valid"
    activation = "relu6" if rng.random() < 0.5 else "none"
    return h, w, cin, cout, kh, kw, stride, padding, activation


class TestFloatKernelsAgainstLoops:
    def test_conv2d_random_shapes(self):
        rng = np.random.default_rng(42)
        for _ in range(60):
            h, w, cin, cout, kh, kw, stride, padding, activation = random_case(rng)
            x = rng.standard_normal((1, h, w, cin)).astype(np.float32)
            wt = rng.standard_normal((cout, kh, kw, cin)).astype(np.float32)
            b = rng.standard_normal(cout).astype(np.float32)
            got = kernels.conv2d_f32(x, wt, b, stride, padding, activation)
            want = oracles.conv2d_loops(x, wt, b, stride, padding, activation)
            np.testing.assert_allclose(got, want, atol=1e-5)

    def test_depthwise_random_shapes(self):
        rng = np.random.default_rng(43)
        for _ in range(60):
            h, w, c, _, kh, kw, stride, padding, activation = random_case(rng)
            x = rng.standard_normal((1, h, w, c)).astype(np.float32)
            wt = rng.standard_normal((c, kh, kw, 1)).astype(np.float32)
            b = rng.standard_normal(c).astype(np.float32)
            got = kernels.depthwise_conv2d_f32(x, wt, b, stride, padding, activation)
            want = oracles.depthwise_conv2d_loops(x, wt, b, stride, padding, activation)
            np.testing.assert_allclose(got, want, atol=1e-5)

    def test_fully_connected_random_shapes(self):
        rng = np.random.default_rng(44)
        for _ in range(40):
            k = int(rng.integers(1, 40))
            n = int(rng.integers(1, 10))
            x = rng.standard_normal((1, k)).astype(np.float32)
            wt = rng.standard_normal((n, k)).astype(np.float32)
            b = rng.standard_normal(n).astype(np.float32)
            got = kernels.fully_connected_f32(x, wt, b, "relu6")
            want = oracles.fully_connected_loops(x, wt, b, "relu6")
            np.testing.assert_allclose(got, want, atol=1e-5)

    def test_pools_random_shapes(self):
        rng = np.random.default_rng(45)
        for _ in range(60):
            h, w, c, _, kh, kw, stride, padding, _ = random_case(rng)
            x = rng.standard_normal((1, h, w, c)).astype(np.float32)
            got_max = kernels.max_pool_f32(x, (kh, kw), stride, padding)
            want_max = oracles.pool_loops(x, (kh, kw), stride, padding, "max")
            np.testing.assert_allclose(got_max, want_max, atol=1e-6)
            got_avg = kernels.avg_pool_f32(x, (kh, kw), stride, padding)
            want_avg = oracles.pool_loops(x, (kh, kw), stride, padding, "avg")
            np.testing.assert_allclose(got_avg, want_avg, atol=1e-6)


class TestFloatKernelExamples:
    def test_identity_one_by_one_conv(self):
        x = np.random.default_rng(0).standard_normal((1, 5, 5, 3)).astype(np.float32)
        w = np.zeros((3, 1, 1, 3), np.float32)
        for c in range(3):
            w[c, 0, 0, c] = 1.0
        out = kernels.conv2d_f32(x, w, np.zeros(3, np.float32), (1, 1), "same")
        np.testing.assert_array_equal(out, x)

    def test_hand_summed_valid_conv(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]], np.float32).reshape(1, 2, 2, 1)
        w = np.ones((1, 2, 2, 1), np.float32)
        out = kernels.conv2d_f32(x, w, np.zeros(1, np.float32), (1, 1), "valid")
        assert out.shape == (1, 1, 1, 1)
        assert out[0, 0, 0, 0] == 10.0

    def test_relu6_definition(self):
        out = kernels.relu6_f32(np.array([-3.0, 2.0, 9.0], np.float32))
        assert list(out) == [0.0, 2.0, 6.0]

    def test_softmax_uniform(self):
        out = kernels.softmax_f32(np.full((1, 5), 0.7, np.float32))
        np.testing.assert_allclose(out, 0.2, atol=1e-7)
        assert out.sum() == pytest.approx(1.0, abs=1e-6)

    def test_avg_pool_hand_mean(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]], np.float32).reshape(1, 2, 2, 1)
        out = kernels.avg_pool_f32(x, (2, 2), (2, 2), "valid")
        assert out[0, 0, 0, 0] == 2.5


class TestRequantize:
    def test_zero_stays_zero(self):
        assert kernels.requantize(0, 0.5, 0.5, QuantParams(0.25, 0)) == 0

    def test_identity_multiplier(self):
        # in_scale * w_scale == out_scale, so M is exactly 1.0
        assert kernels.requantize(57, 0.5, 0.5, QuantParams(0.25, 0)) == 57

    def test_saturates(self):
        assert kernels.requantize(10**9, 1.0, 1.0, QuantParams(1.0, 0)) == 127
        assert kernels.requantize(-(10**9), 1.0, 1.0, QuantParams(1.0, 0)) == -128

    def test_matches_float_reference_on_stream(self):
        rng = np.random.default_rng(2024)
        n = 1_000_000
        accs = rng.integers(-(2**20), 2**20, size=n)
        multipliers = np.exp(rng.uniform(np.log(1e-6), np.log(2.0), size=n))
        zps = rng.integers(-128, 128, size=n)

        mismatches = 0
        checked = 0
        block = 100_000
        for start in range(0, n, block):
            sl = slice(start, start + block)
            acc = accs[sl]
            m = multipliers[sl]
            zp = zps[sl]
            # float reference: round(acc * M) + zp, saturated
            want = np.clip(
                np.copysign(np.floor(np.abs(acc * m) + 0.5), acc * m) + zp, -128, 127
            ).astype(np.int64)
            got = np.empty_like(want)
            for i in range(len(acc)):
                mult, shift = kernels.quantize_multiplier(float(m[i]))
                value = kernels.apply_multiplier(np.int64(acc[i]), mult, shift) + zp[i]
                got[i] = np.clip(value, -128, 127)
            delta = np.abs(got - want)
            assert delta.max(initial=0) <= 1
            mismatches += int((delta > 0).sum())
            checked += len(acc)
        assert checked == n
        assert mismatches / n < 0.001


class TestIntKernelsAgainstLoops:
    def test_conv2d_exact(self):
        rng = np.random.default_rng(7)
        for _ in range(40):
            h, w, cin, cout, kh, kw, stride, padding, activation = random_case(rng)
            x_qp = random_qparams(rng)
            w_qp = random_qparams(rng, -1.0, 1.0)
            out_qp = random_qparams(rng, -8.0, 8.0)
            x = rng.integers(-128, 128, size=(1, h, w, cin)).astype(np.int8)
            wt = rng.integers(-128, 128, size=(cout, kh, kw, cin)).astype(np.int8)
            b = rng.integers(-1000, 1000, size=cout).astype(np.int32)
            got = kernels.conv2d_q(x, x_qp, wt, w_qp, b, stride, padding, out_qp, activation)
            want = oracles.conv2d_int_loops(x, x_qp, wt, w_qp, b, stride, padding, out_qp, activation)
            np.testing.assert_array_equal(got, want)

    def test_depthwise_exact(self):
        rng = np.random.default_rng(8)
        for _ in range(40):
            h, w, c, _, kh, kw, stride, padding, activation = random_case(rng)
            x_qp = random_qparams(rng)
            w_qp = random_qparams(rng, -1.0, 1.0)
            out_qp = random_qparams(rng, -8.0, 8.0)
            x = rng.integers(-128, 128, size=(1, h, w, c)).astype(np.int8)
            wt = rng.integers(-128, 128, size=(c, kh, kw, 1)).astype(np.int8)
            b = rng.integers(-1000, 1000, size=c).astype(np.int32)
            got = kernels.depthwise_conv2d_q(x, x_qp, wt, w_qp, b, stride, padding, out_qp, activation)
            want = oracles.depthwise_conv2d_int_loops(
                x, x_qp, wt, w_qp, b, stride, padding, out_qp, activation
            )
            np.testing.assert_array_equal(got, want)

    def test_fully_connected_exact(self):
        rng = np.random.default_rng(9)
        for _ in range(40):
            k = int(rng.integers(1, 600))  # crosses the matmul chunk boundary
            n = int(rng.integers(1, 8))
            x_qp = random_qparams(rng)
            w_qp = random_qparams(rng, -1.0, 1.0)
            out_qp = random_qparams(rng, -8.0, 8.0)
            x = rng.integers(-128, 128, size=(1, k)).astype(np.int8)
            wt = rng.integers(-128, 128, size=(n, k)).astype(np.int8)
            b = rng.integers(-1000, 1000, size=n).astype(np.int32)
            got = kernels.fully_connected_q(x, x_qp, wt, w_qp, b, out_qp)
            want = oracles.fully_connected_int_loops(x, x_qp, wt, w_qp, b, out_qp)
            np.testing.assert_array_equal(got, want)

    def test_avg_pool_exact(self):
        rng = np.random.default_rng(10)
        for _ in range(40):
            h, w, c, _, kh, kw, stride, padding, _ = random_case(rng)
            qp = random_qparams(rng)
            x = rng.integers(-128, 128, size=(1, h, w, c)).astype(np.int8)
            got = kernels.avg_pool_q(x, qp, (kh, kw), stride, padding, qp)
            want = oracles.avg_pool_int_loops(x, qp, (kh, kw), stride, padding, qp)
            np.testing.assert_array_equal(got, want)

    def test_saturating_accumulator(self):
        # adversarial bias drives the accumulator past int32; must clamp, not wrap
        x_qp = QuantParams(1.0, 0)
        w_qp = QuantParams(1.0, 0)
        out_qp = QuantParams(1.0, 0)
        x = np.full((1, 1, 1, 1), 127, np.int8)
        wt = np.full((1, 1, 1, 1), 127, np.int8)
        b = np.array([2**31 - 1], np.int32)
        out = kernels.conv2d_q(x, x_qp, wt, w_qp, b, (1, 1), "valid", out_qp)
        assert out[0, 0, 0, 0] == 127  # saturated, no crash or wraparound


class TestIntVsFloatConsistency:
    def test_conv_within_one_quantum_of_float_reference(self):
        rng = np.random.default_rng(77)
        worst = 0
        for _ in range(30):
            h, w, cin, cout, kh, kw, stride, padding, _ = random_case(rng)
            x_float = rng.uniform(-1.0, 1.0, size=(1, h, w, cin))
            w_float = rng.uniform(-0.5, 0.5, size=(cout, kh, kw, cin))
            x_qp = compute_qparams(-1.0, 1.0)
            w_qp = compute_qparams(-0.5, 0.5)
            xq = quantize_array(x_float, x_qp)
            wq = quantize_array(w_float, w_qp)
            # both routes start from the same quantized operands
            x_deq = dequantize_array(xq, x_qp)
            w_deq = dequantize_array(wq, w_qp)
            ref = kernels.conv2d_f32(x_deq, w_deq, np.zeros(cout, np.float32), stride, padding)
            out_qp = compute_qparams(float(ref.min()) - 0.01, float(ref.max()) + 0.01)
            want = quantize_array(ref, out_qp)
            got = kernels.conv2d_q(
                xq, x_qp, wq, w_qp, np.zeros(cout, np.int32), stride, padding, out_qp
            )
            worst = max(worst, int(np.abs(got.astype(np.int32) - want.astype(np.int32)).max()))
        assert worst <= 1


class TestIntegerSoftmaxAndFriends:
    def test_softmax_q_tracks_float(self):
        rng = np.random.default_rng(12)
        in_qp = compute_qparams(-8.0, 8.0)
        out_qp = QuantParams(1.0 / 256.0, -128)
        for _ in range(50):
            logits = rng.uniform(-6, 6, size=(1, 4)).astype(np.float32)
            q = quantize_array(logits, in_qp)
            got = kernels.softmax_q(q, in_qp, out_qp)
            want_float = kernels.softmax_f32(dequantize_array(q, in_qp))
            got_float = (got.astype(np.float64) + 128) / 256.0
            assert np.abs(got_float - want_float).max() < 0.02

    def test_relu6_q_clamps_in_quantized_domain(self):
        qp = compute_qparams(-4.0, 10.0)
        q = np.arange(-128, 128, dtype=np.int8)
        out = kernels.relu6_q(q, qp, qp)
        values = dequantize_array(out, qp)
        assert values.min() >= -qp.scale / 2
        assert values.max() <= 6.0 + qp.scale / 2

    def test_add_q_rescales_operands(self):
        a_qp = compute_qparams(0.0, 2.0)
        b_qp = compute_qparams(0.0, 4.0)
        out_qp = compute_qparams(0.0, 6.0)
        a = quantize_array(np.array([1.0]), a_qp)
        b = quantize_array(np.array([2.5]), b_qp)
        out = kernels.add_q(a, a_qp, b, b_qp, out_qp)
        value = dequantize_array(out, out_qp)[0]
        assert value == pytest.approx(3.5, abs=3 * out_qp.scale)

    def test_max_pool_q_is_plain_max_with_same_qparams(self):
        qp = compute_qparams(-1.0, 1.0)
        x = np.array([[1, 5], [3, -7]], np.int8).reshape(1, 2, 2, 1)
        out = kernels.max_pool_q(x, qp, (2, 2), (2, 2), "valid", qp)
        assert out[0, 0, 0, 0] == 5
