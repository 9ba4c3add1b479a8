import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cloudadapt import fda
from cloudadapt.numerics import ContractError, DimensionError, Tensor, grad_disabled, ops, tape_counters
from cloudadapt.protocol.delay import download_bytes

import fd


def params(d=8, slot=(8, 3), hidden=6, seed=0, **kw):
    return fda.FdaParams.init(np.random.default_rng(seed), d, slot, hidden, **kw)


def zeroed(p, *names):
    arrays = p.arrays()
    for n in names:
        arrays[n] = np.zeros_like(arrays[n])
    return fda.FdaParams.from_arrays(arrays)


# --- aggregate_frames ----------------------------------------------------

def test_identical_frames_any_d():
    frames = np.tile(np.arange(5.0), (8, 1))
    for D in range(2, 9):
        np.testing.assert_array_equal(fda.aggregate_frames(frames, D, np.random.default_rng(D)).data, np.arange(5.0))


def test_d_equals_all_frames_is_mean():
    frames = np.random.default_rng(1).normal(size=(6, 4))
    np.testing.assert_allclose(fda.aggregate_frames(frames, 6, np.random.default_rng(0)).data, frames.mean(0),
                               rtol=0, atol=1e-15)


def test_hand_mean():
    out = fda.aggregate_frames(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]), 3, np.random.default_rng(0))
    np.testing.assert_allclose(out.data, [2 / 3, 2 / 3], rtol=0, atol=1e-15)


def test_batched_aggregate_uses_distinct_frames():
    idx = fda.sample_frame_indices(8, 3, np.random.default_rng(0), batch=500)
    assert idx.shape == (500, 3)
    assert all(len(set(row)) == 3 for row in idx)


@pytest.mark.parametrize("D", [0, 1, 9])
def test_bad_d(D):
    with pytest.raises(ContractError):
        fda.aggregate_frames(np.zeros((8, 4)), D, np.random.default_rng(0))


# --- projection and generation -------------------------------------------

def test_zero_projection_gives_zeros():
    p = zeroed(params(), "proj.w1", "proj.b1", "proj.w2", "proj.b2")
    np.testing.assert_array_equal(fda.project_embedding(np.ones(8), p).data, np.zeros(8))


def test_projection_shape_and_stability():
    x = np.random.default_rng(2).normal(size=8)
    a, b = fda.project_embedding(x, params()), fda.project_embedding(x, params())
    assert a.shape == (8,)
    assert a.data.tobytes() == b.data.tobytes()
    with pytest.raises(DimensionError):
        fda.project_embedding(np.ones(7), params())


def test_zero_hypernet_gives_uniform_prediction():
    p = zeroed(params(), "hyper.w2", "hyper.b2")
    head = fda.generate_parameters(np.ones(8), p, (8, 3))
    assert not head.weights.any() and not head.bias.any()
    logits, _ = fda.apply_generated_head(np.random.default_rng(0).normal(size=(5, 8)), head)
    np.testing.assert_array_equal(ops.softmax(logits), np.full((5, 3), 1 / 3))


def test_slot_arithmetic():
    assert fda.slot_size(192, 10) == 1930
    assert fda.slot_size(96, 1501) == 145_597
    assert download_bytes(96, 1501) == 582_388
    p = fda.FdaParams.init(np.random.default_rng(0), 192, (192, 10), hidden=4)
    head = fda.generate_parameters(np.ones(192), p, (192, 10))
    assert head.weights.shape == (10, 192) and head.bias.shape == (10,)


def test_slot_mismatch_raises():
    with pytest.raises(fda.ConfigurationError):
        fda.generate_parameters(np.ones(8), params(), (8, 4))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12))
def test_split_is_exact(in_dim, out_dim):
    raw = np.arange(fda.slot_size(in_dim, out_dim), dtype=float)
    W, b = fda.split_head(Tensor(raw[None]), (in_dim, out_dim))
    np.testing.assert_array_equal(np.concatenate([W.data[0].reshape(-1), b.data[0]]), raw)


def test_initial_heads_are_small():
    p = fda.FdaParams.init(np.random.default_rng(0), 192, (192, 10))
    head = fda.generate_parameters(fda.project_embedding(np.random.default_rng(1).normal(size=192), p).data, p,
                                   (192, 10))
    assert np.abs(head.flat()).max() < 0.1


# --- device head ---------------------------------------------------------

def test_identity_head():
    x = np.random.default_rng(0).normal(size=(3, 4))
    logits, _ = fda.apply_generated_head(x, fda.GeneratedHead(np.eye(4), np.zeros(4)))
    np.testing.assert_array_equal(logits, x)


def test_bias_only_head_predicts_last_class():
    head = fda.GeneratedHead(np.zeros((5, 4)), [0, 0, 0, 0, 10])
    _, pred = fda.apply_generated_head(np.random.default_rng(0).normal(size=(20, 4)), head)
    assert np.all(pred == 4)


def test_head_matches_dot_product_oracle():
    rng = np.random.default_rng(3)
    head = fda.GeneratedHead(rng.normal(size=(6, 9)), rng.normal(size=6))
    x = rng.normal(size=9)
    logits, pred = fda.apply_generated_head(x, head)
    oracle = [sum(head.weights[o, i] * x[i] for i in range(9)) + head.bias[o] for o in range(6)]
    np.testing.assert_allclose(logits, oracle, rtol=0, atol=1e-12)
    assert pred == int(np.argmax(oracle))


def test_head_rejects_bad_shapes_and_nan():
    with pytest.raises(DimensionError):
        fda.GeneratedHead(np.zeros((2, 3)), np.zeros(3))
    with pytest.raises(ValueError):
        fda.GeneratedHead(np.full((2, 3), np.nan), np.zeros(2))
    with pytest.raises(DimensionError):
        fda.apply_generated_head(np.zeros(4), fda.GeneratedHead(np.zeros((2, 3)), np.zeros(2)))


def test_device_head_is_tape_free_and_same_under_ban():
    rng = np.random.default_rng(4)
    head = fda.GeneratedHead(rng.normal(size=(3, 5)), rng.normal(size=3))
    x = rng.normal(size=(7, 5))
    before = tape_counters()
    _, free = fda.apply_generated_head(x, head)
    with grad_disabled(process_wide=True):
        _, banned = fda.apply_generated_head(x, head)
    assert tape_counters() == before
    np.testing.assert_array_equal(free, banned)


def test_pool_frames_is_plain_mean():
    F = np.random.default_rng(5).normal(size=(2, 8, 4))
    np.testing.assert_array_equal(fda.pool_frames(F), F.mean(axis=-2))


# --- training path -------------------------------------------------------

def test_generation_gradient_matches_finite_differences():
    rng = np.random.default_rng(6)
    p = fda.FdaParams.init(rng, 4, (4, 3), hidden=4, final_std=0.5)
    names = list(p)
    F_g, x, y = rng.normal(size=(2, 4)), rng.normal(size=(2, 4)), np.array([0, 2])

    def build(*tensors):
        q = fda.FdaParams(dict(zip(names, tensors)))
        W, b = fda.split_head(fda.hyper_forward(fda.project_embedding(F_g, q), q), (4, 3))
        logits = ops.add(ops.reshape(ops.batched_matvec(W, x), (2, 3)), b)
        return ops.softmax_cross_entropy(logits, y)

    assert fd.check(build, [p[n].data.copy() for n in names]) < 1e-4


def test_distinct_inputs_give_distinct_heads():
    p = params(final_std=0.5)
    rng = np.random.default_rng(7)
    a = fda.generate_parameters(fda.project_embedding(rng.normal(size=8), p).data, p, (8, 3))
    b = fda.generate_parameters(fda.project_embedding(rng.normal(size=8) + 2, p).data, p, (8, 3))
    assert np.abs(a.weights - b.weights).max() > 0
