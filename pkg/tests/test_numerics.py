import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cloudadapt.numerics import (
    ContractError,
    DimensionError,
    NonFiniteError,
    OptimizerState,
    Tape,
    TapeAllocationError,
    Tensor,
    adamw_step,
    backward,
    grad_disabled,
    no_grad,
    ops,
    poly_lr,
    tape_counters,
)

import fd
import gradcases


# --- linear_forward ------------------------------------------------------

def test_linear_identity_weights():
    y = ops.linear([[1.0, 2.0]], np.eye(2), [0.0, 0.0])
    np.testing.assert_array_equal(y.data, [[1.0, 2.0]])


def test_linear_hand_arithmetic():
    # 1*2 + 1*3 + 1
    y = ops.linear([[1.0, 1.0]], [[2.0, 3.0]], [1.0])
    np.testing.assert_array_equal(y.data, [[6.0]])


def test_linear_zero_input_returns_bias():
    W = np.random.default_rng(0).normal(size=(2, 2))
    y = ops.linear([[0.0, 0.0]], W, [5.0, 7.0])
    np.testing.assert_array_equal(y.data, [[5.0, 7.0]])


def test_linear_shape_mismatch():
    with pytest.raises(DimensionError):
        ops.linear(np.ones((1, 3)), np.ones((2, 2)), np.zeros(2))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (2, 4), elements=st.floats(-10, 10)),
       arrays(np.float64, (2, 4), elements=st.floats(-10, 10)))
def test_linear_is_affine(x1, x2):
    rng = np.random.default_rng(1)
    W, b = rng.normal(size=(3, 4)), rng.normal(size=3)
    lhs = ops.linear(x1 + x2, W, b).data
    rhs = ops.linear(x1, W, b).data + ops.linear(x2, W, b).data - b
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_linear_recorded_only_with_grad_inputs():
    with Tape() as tape:
        ops.linear(np.ones((1, 2)), np.eye(2), np.zeros(2))
        assert len(tape) == 0
        ops.linear(np.ones((1, 2)), Tensor(np.eye(2), requires_grad=True), np.zeros(2))
        assert len(tape) == 2  # leaf + output


# --- layernorm -----------------------------------------------------------

def test_layernorm_constant_row_is_zero():
    y = ops.layernorm([[1.0, 1.0, 1.0, 1.0]], np.ones(4), np.zeros(4))
    np.testing.assert_array_equal(y.data, np.zeros((1, 4)))


def test_layernorm_two_values():
    y = ops.layernorm([[0.0, 2.0]], np.ones(2), np.zeros(2), eps=1e-14)
    np.testing.assert_allclose(y.data, [[-1.0, 1.0]], atol=1e-12)


def test_layernorm_affine_dominates():
    y = ops.layernorm([[4.0, -1.0]], np.zeros(2), [3.0, 3.0])
    np.testing.assert_array_equal(y.data, [[3.0, 3.0]])


def test_layernorm_degenerate():
    with pytest.raises(ContractError):
        ops.layernorm([[1.0]], np.ones(1), np.zeros(1))


# --- backward ------------------------------------------------------------

def test_backward_sum():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with Tape() as tape:
        loss = ops.sum(x)
    g = backward(tape, loss)
    np.testing.assert_array_equal(tape.grad(g, x), [1.0, 1.0, 1.0])


def test_backward_mse_closed_form():
    x = Tensor([2.0], requires_grad=True)
    with Tape() as tape:
        loss = ops.mse(x, [0.0])
    np.testing.assert_array_equal(tape.grad(backward(tape, loss), x), [4.0])


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = ops.mul(x, 2.0)
    with pytest.raises(ContractError):
        backward(tape, y)


def test_backward_deterministic():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    W = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    with Tape() as tape:
        loss = ops.softmax_cross_entropy(ops.linear(x, W), [0, 1, 2, 0])
    g1 = backward(tape, loss)
    g2 = backward(tape, loss)
    assert g1.keys() == g2.keys()
    for k in g1:
        np.testing.assert_array_equal(g1[k], g2[k])


def test_tape_topological_order():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        ops.sum(ops.tanh(ops.mul(x, x)))
    for i, node in enumerate(tape.nodes):
        assert all(p is None or p < i for p in node.parents)


def test_gradient_buffers_match_shapes():
    rng = np.random.default_rng(4)
    params = [Tensor(rng.normal(size=s), requires_grad=True) for s in [(3, 4), (3,), (4,)]]
    with Tape() as tape:
        loss = ops.sum(ops.tanh(ops.linear(ops.mul(params[2], 2.0), params[0], params[1])))
    g = backward(tape, loss)
    for p in params:
        assert tape.grad(g, p).shape == p.shape


@pytest.mark.parametrize("name,make,build", gradcases.cases(), ids=[c[0] for c in gradcases.cases()])
def test_primitive_matches_finite_differences(name, make, build):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for trial in range(4):
        d = int(rng.integers(4, 17))
        err = fd.check(build, make(rng, d))
        assert err < 1e-4, f"{name} trial {trial}: rel err {err:.2e}"


# --- checked construction & grad modes -----------------------------------

def test_nonfinite_rejected():
    with pytest.raises(NonFiniteError):
        Tensor([1.0, np.nan])


def test_no_grad_skips_recording():
    x = Tensor([1.0], requires_grad=True)
    with Tape() as tape, no_grad():
        y = ops.mul(x, 3.0)
    assert len(tape) == 0 and not y.requires_grad


def test_grad_disabled_forbids_tapes():
    before = tape_counters()
    x = Tensor([1.0], requires_grad=True)
    with grad_disabled():
        ops.tanh(x)
        with pytest.raises(TapeAllocationError):
            Tape()
    assert tape_counters() == before


# --- AdamW ---------------------------------------------------------------

def test_adamw_zero_grad_no_decay_leaves_params():
    p = Tensor(np.array([1.5, -2.0]))
    st_ = OptimizerState(lr=0.1, total_steps=10, weight_decay=0.0)
    adamw_step([p], [np.zeros(2)], st_)
    np.testing.assert_array_equal(p.data, [1.5, -2.0])
    assert st_.step == 1


def test_adamw_degenerate_single_step():
    p = Tensor(np.array([1.0]))
    st_ = OptimizerState(lr=0.1, total_steps=10, weight_decay=0.0, beta1=0.0, beta2=0.0)
    adamw_step([p], [np.array([1.0])], st_)
    np.testing.assert_allclose(p.data, [0.9], atol=1e-8)


def test_adamw_at_total_steps_no_change():
    p = Tensor(np.array([1.0]))
    st_ = OptimizerState(lr=0.1, total_steps=5, step=5)
    assert st_.current_lr() == 0.0
    adamw_step([p], [np.array([3.0])], st_)
    np.testing.assert_array_equal(p.data, [1.0])


def test_poly_lr_schedule():
    assert poly_lr(1.0, 0, 4) == 1.0
    assert poly_lr(1.0, 2, 4) == 0.5
    assert poly_lr(1.0, 9, 4) == 0.0
    assert poly_lr(1.0, 1, 4, power=2.0) == pytest.approx(0.5625)


def test_adamw_shape_error():
    with pytest.raises(DimensionError):
        adamw_step([Tensor(np.ones(2))], [np.ones(3)], OptimizerState(lr=0.1, total_steps=2))
