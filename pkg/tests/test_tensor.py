"""Tensor container and tape/backward contracts."""

import numpy as np
import pytest

from waveseg import Tape, Tensor4, backward
from waveseg import ops
from waveseg.errors import ContractError, ShapeError


class TestTensor4:
    def test_dims_and_layout(self):
        t = Tensor4(np.arange(24.0).reshape(1, 2, 3, 4))
        assert t.dims == (1, 2, 3, 4)
        assert t.data.flags["C_CONTIGUOUS"]
        assert t.size == 24

    def test_rejects_wrong_rank(self):
        with pytest.raises(ShapeError):
            Tensor4(np.zeros((2, 3, 4)))

    def test_rejects_zero_sized(self):
        with pytest.raises(ShapeError):
            Tensor4(np.zeros((1, 0, 2, 2)))

    def test_integer_input_promotes_to_f64(self):
        t = Tensor4([[[[1, 2], [3, 4]]]])
        assert t.dtype == "f64"

    def test_explicit_dtypes(self):
        assert Tensor4(np.zeros((1, 1, 1, 1)), dtype="f32").dtype == "f32"
        assert Tensor4.zeros((1, 2, 3, 4), dtype="f64").dtype == "f64"

    def test_rejects_exotic_dtype(self):
        with pytest.raises(ContractError):
            Tensor4(np.zeros((1, 1, 1, 1), dtype=np.complex128))

    def test_mixed_dtype_op_rejected(self):
        a = Tensor4.zeros((1, 1, 2, 2), dtype="f32")
        b = Tensor4.zeros((1, 1, 2, 2), dtype="f64")
        with pytest.raises(ContractError):
            ops.add(a, b)


class TestBackward:
    def test_linear_function_gradient(self):
        x = Tensor4(np.arange(8.0).reshape(1, 2, 2, 2))
        with Tape() as tape:
            tape.watch(x)
            loss = ops.sum_all(ops.scale(x, 2.0))
        grads = backward(tape, loss)
        np.testing.assert_array_equal(grads[x.tid], np.full((1, 2, 2, 2), 2.0))
        np.testing.assert_array_equal(x.grad, grads[x.tid])

    def test_disconnected_parameter_gets_zeros(self):
        x = Tensor4(np.ones((1, 1, 2, 2)))
        unused = Tensor4(np.ones((1, 3, 2, 2)))
        with Tape() as tape:
            tape.watch(x)
            tape.watch(unused)
            loss = ops.sum_all(x)
        grads = backward(tape, loss)
        np.testing.assert_array_equal(grads[unused.tid], np.zeros((1, 3, 2, 2)))

    def test_non_scalar_loss_rejected(self):
        x = Tensor4(np.ones((1, 1, 2, 2)))
        with Tape() as tape:
            tape.watch(x)
            y = ops.relu(x)
        with pytest.raises(ContractError):
            backward(tape, y)

    def test_backward_twice_is_bitwise_identical(self, rng):
        x = Tensor4(rng.standard_normal((2, 3, 4, 4)))
        w = Tensor4(rng.standard_normal((2, 3, 3, 3)))
        with Tape() as tape:
            tape.watch(x)
            tape.watch(w)
            loss = ops.mean_all(ops.relu(ops.conv2d(x, ops.ConvParams(w, stride=1, padding=1))))
        g1 = backward(tape, loss)
        g2 = backward(tape, loss)
        for tid in g1:
            assert np.array_equal(g1[tid], g2[tid])

    def test_fanout_accumulates(self):
        x = Tensor4(np.full((1, 1, 2, 2), 3.0))
        with Tape() as tape:
            tape.watch(x)
            loss = ops.sum_all(ops.add(x, x))
        grads = backward(tape, loss)
        np.testing.assert_array_equal(grads[x.tid], np.full((1, 1, 2, 2), 2.0))

    def test_shared_upstream_gradient_not_corrupted(self):
        # add's vjp hands the same array to both inputs; accumulating into one
        # branch must not leak into the other
        a = Tensor4(np.ones((1, 1, 2, 2)))
        b = Tensor4(np.ones((1, 1, 2, 2)))
        with Tape() as tape:
            tape.watch(a)
            tape.watch(b)
            s = ops.add(a, b)
            loss = ops.sum_all(ops.add(s, ops.relu(a)))
        grads = backward(tape, loss)
        np.testing.assert_array_equal(grads[b.tid], np.ones((1, 1, 2, 2)))
        np.testing.assert_array_equal(grads[a.tid], np.full((1, 1, 2, 2), 2.0))

    def test_tape_nodes_topologically_ordered(self):
        x = Tensor4(np.ones((1, 1, 2, 2)))
        with Tape() as tape:
            y = ops.relu(x)
            z = ops.scale(y, 3.0)
            ops.sum_all(z)
        produced = {x.tid}
        for node in tape.nodes:
            assert all(t.tid in produced for t in node.inputs)
            produced.update(t.tid for t in node.outputs)

    def test_no_recording_outside_tape(self):
        x = Tensor4(np.ones((1, 1, 2, 2)))
        tape = Tape()
        with tape:
            pass
        ops.relu(x)
        assert tape.nodes == []
