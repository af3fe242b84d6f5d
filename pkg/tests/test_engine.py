import numpy as np
import pytest

import oracles
from graphs import (
    calibration_images,
    identity_graph,
    residual_block_graph,
    single_conv_graph,
    small_classifier_graph,
)
from regolith.engine import InputMismatchError, run, run_with_activations
from regolith.quantizer import calibrate, quantize_input, quantize_model
from regolith.tensor import Tensor, dequantize_array


def zeros_input(g):
    decl = g.tensors[g.inputs[0]]
    return Tensor(np.zeros(decl.shape, np.float32))


class TestRun:
    def test_identity_graph_returns_input(self):
        g = identity_graph()
        x = Tensor(np.random.default_rng(0).random((1, 4, 4, 2)).astype(np.float32))
        outs, _ = run(g, x)
        np.testing.assert_array_equal(outs[0].data, x.data)

    def test_single_conv_matches_loop_oracle(self):
        g = single_conv_graph(seed=5)
        x = Tensor(np.random.default_rng(1).standard_normal((1, 6, 6, 3)).astype(np.float32))
        outs, _ = run(g, x)
        weights = g.tensors[g.layers[0].inputs[1]].payload
        bias = g.tensors[g.layers[0].inputs[2]].payload
        want = oracles.conv2d_loops(x.data, weights, bias, (1, 1), "same")
        np.testing.assert_allclose(outs[0].data, want, atol=1e-5)

    def test_classifier_softmax_sums_to_one(self):
        g = small_classifier_graph()
        outs, _ = run(g, zeros_input(g))
        assert outs[0].data.sum() == pytest.approx(1.0, abs=1e-6)
        assert (outs[0].data >= 0).all()

    def test_residual_block_runs(self):
        g = residual_block_graph()
        x = Tensor(np.random.default_rng(2).random((1, 6, 6, 4)).astype(np.float32))
        outs, _ = run(g, x)
        assert outs[0].shape == (1, 6, 6, 4)

    def test_deterministic_bit_identical(self):
        g = small_classifier_graph()
        x = Tensor(np.random.default_rng(3).random((1, 8, 8, 3)).astype(np.float32))
        a, trace_a = run(g, x)
        b, trace_b = run(g, x)
        assert np.array_equal(a[0].data, b[0].data)
        assert trace_a.signature() == trace_b.signature()

    def test_int8_run_deterministic(self):
        g = small_classifier_graph()
        q = quantize_model(g, calibrate(g, calibration_images(g)))
        x = quantize_input(q, calibration_images(g, count=1, seed=55)[0])
        a, _ = run(q, x)
        b, _ = run(q, x)
        assert np.array_equal(a[0].data, b[0].data)

    def test_input_validation(self):
        g = small_classifier_graph()
        with pytest.raises(InputMismatchError):
            run(g, Tensor(np.zeros((1, 9, 8, 3), np.float32)))
        q = quantize_model(g, calibrate(g, calibration_images(g)))
        with pytest.raises(InputMismatchError):
            run(q, zeros_input(g))  # float input into int8 graph


class TestTrace:
    def test_trace_follows_topological_order(self):
        g = small_classifier_graph()
        _, trace = run(g, zeros_input(g))
        assert [t.index for t in trace.layers] == list(g.topo_order)
        assert [t.kind for t in trace.layers] == [g.layers[i].kind for i in g.topo_order]

    def test_total_at_least_max_layer_time(self):
        g = small_classifier_graph()
        _, trace = run(g, zeros_input(g))
        assert trace.total_seconds >= max(t.seconds for t in trace.layers)

    def test_trace_shapes_match_declarations(self):
        g = small_classifier_graph()
        _, trace = run(g, zeros_input(g))
        for t in trace.layers:
            assert t.shape == g.tensors[t.output].shape


class TestFloatIntAgreement:
    def test_single_layer_logits_within_three_output_quanta(self):
        g = single_conv_graph(seed=21, activation="none", scale=0.3)
        images = calibration_images(g, count=12, seed=500)
        q = quantize_model(g, calibrate(g, images))
        out_qp = q.tensors[q.outputs[0]].qparams
        for image in images[:6]:
            f_out, _ = run(g, image)
            q_out, _ = run(q, quantize_input(q, image))
            deq = dequantize_array(q_out[0].data, out_qp)
            assert np.abs(deq - f_out[0].data).max() <= 3 * out_qp.scale

    def test_small_graph_argmax_agreement(self):
        g = small_classifier_graph(seed=31)
        images = calibration_images(g, count=16, seed=900)
        q = quantize_model(g, calibrate(g, images))
        agree = 0
        total = 200
        for i in range(total):
            rng = np.random.default_rng(3000 + i)
            image = Tensor(rng.random((1, 8, 8, 3)).astype(np.float32))
            f_out, _ = run(g, image)
            q_out, _ = run(q, quantize_input(q, image))
            if int(np.argmax(f_out[0].data)) == int(np.argmax(q_out[0].data)):
                agree += 1
        assert agree / total >= 0.90
