import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rltrack.nn import (
    Adagrad,
    Adam,
    BadMagicError,
    GraphError,
    LayerSpec,
    ManifestMismatchError,
    Network,
    NonFiniteGradientError,
    ShapeError,
    Tensor,
    TruncatedWeightsError,
    UnsupportedVersionError,
    backward,
    check_gradients,
    load_weights,
    ops,
    save_weights,
)
from rltrack.nn.serialization import encode_weights


def conv_oracle(x, w, stride, padding):
    """Nested-loop cross-correlation, zero padding, TF 'same' convention."""
    H, W, C = x.shape
    kh, kw, _, F = w.shape
    if padding == "same":
        Ho, Wo = math.ceil(H / stride), math.ceil(W / stride)
        ph = max((Ho - 1) * stride + kh - H, 0)
        pw = max((Wo - 1) * stride + kw - W, 0)
        top, left = ph // 2, pw // 2
    else:
        Ho, Wo = (H - kh) // stride + 1, (W - kw) // stride + 1
        top = left = 0
    out = np.zeros((Ho, Wo, F))
    for i in range(Ho):
        for j in range(Wo):
            for f in range(F):
                acc = 0.0
                for a in range(kh):
                    for b in range(kw):
                        y, x_ = i * stride + a - top, j * stride + b - left
                        if 0 <= y < H and 0 <= x_ < W:
                            acc += float(np.dot(x[y, x_], w[a, b, :, f]))
                out[i, j, f] = acc
    return out


# conv2d


def test_conv_identity_kernel():
    x = np.random.default_rng(0).random((5, 6, 1)).astype(np.float32)
    out = ops.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), stride=1, padding="same")
    np.testing.assert_array_equal(out.data, x)


def test_conv_same_padding_stride3_on_120():
    x = Tensor(np.zeros((120, 120, 3)))
    out = ops.conv2d(x, Tensor(np.zeros((7, 7, 3, 16))), stride=3, padding="same")
    assert out.shape == (40, 40, 16)


def test_conv_all_ones_valid():
    out = ops.conv2d(Tensor(np.ones((3, 3, 1))), Tensor(np.ones((3, 3, 1, 1))), stride=1, padding="valid")
    assert out.shape == (1, 1, 1)
    assert out.data[0, 0, 0] == 9.0


@pytest.mark.parametrize("H,k,stride,padding", [(7, 3, 1, "same"), (8, 3, 2, "same"), (10, 5, 3, "valid"), (11, 7, 3, "same")])
def test_conv_matches_nested_loop_oracle(H, k, stride, padding):
    rng = np.random.default_rng(H * 10 + k)
    x = rng.normal(size=(H, H + 1, 2))
    w = rng.normal(size=(k, k, 2, 3))
    got = ops.conv2d(Tensor(x), Tensor(w), stride=stride, padding=padding).data
    np.testing.assert_allclose(got, conv_oracle(x, w, stride, padding), rtol=1e-10, atol=1e-10)


def test_conv_channel_mismatch_rejected():
    with pytest.raises(ShapeError, match="channels"):
        ops.conv2d(Tensor(np.zeros((5, 5, 3))), Tensor(np.zeros((3, 3, 2, 4))))


# maxpool


def test_maxpool_single_window():
    out = ops.maxpool2x2(Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])[..., None]))
    assert out.data.reshape(-1).tolist() == [4.0]


def test_maxpool_odd_dims_floor():
    assert ops.maxpool2x2(Tensor(np.zeros((9, 9, 2)))).shape == (4, 4, 2)


def test_maxpool_constant_input():
    out = ops.maxpool2x2(Tensor(np.full((6, 4, 1), 2.5)))
    assert np.all(out.data == 2.5)


def test_maxpool_backward_routes_to_argmax_only():
    x = Tensor(np.array([[1.0, 5.0], [3.0, 4.0]])[..., None], requires_grad=True)
    out = ops.maxpool2x2(x)
    backward(out, np.ones(out.shape))
    np.testing.assert_array_equal(x.grad[..., 0], [[0.0, 1.0], [0.0, 0.0]])


# dense / activations / dropout


def test_dense_examples():
    x = Tensor(np.array([[1.0, 2.0]]))
    np.testing.assert_array_equal(ops.dense(x, Tensor(np.eye(2)), Tensor(np.zeros(2))).data, [[1.0, 2.0]])
    np.testing.assert_array_equal(ops.dense(x, Tensor(np.eye(2)), Tensor(np.ones(2))).data, [[2.0, 3.0]])
    z = ops.dense(Tensor(np.zeros((1, 3))), Tensor(np.ones((3, 2))), Tensor(np.array([0.5, -1.0])))
    np.testing.assert_array_equal(z.data, [[0.5, -1.0]])
    with pytest.raises(ShapeError):
        ops.dense(Tensor(np.zeros((1, 3))), Tensor(np.zeros((2, 2))))


def test_activations():
    np.testing.assert_array_equal(ops.relu(Tensor(np.array([-1.0, 2.0]))).data, [0.0, 2.0])
    assert ops.sigmoid(Tensor(np.array([0.0]))).data[0] == 0.5
    assert ops.sigmoid(Tensor(np.array([math.log(3.0)]))).data[0] == pytest.approx(0.75, abs=1e-12)
    big = ops.sigmoid(Tensor(np.array([-200.0, 200.0], dtype=np.float32))).data
    assert np.all(big > 0) and np.all(big < 1)


def test_dropout_passthrough_cases():
    x = Tensor(np.arange(10.0))
    rng = np.random.default_rng(0)
    assert np.array_equal(ops.dropout(x, 1.0, True, rng).data, x.data)
    assert np.array_equal(ops.dropout(x, 0.7, False, rng).data, x.data)


def test_dropout_monte_carlo_fraction():
    x = Tensor(np.ones(100_000))
    out = ops.dropout(x, 0.7, True, np.random.default_rng(123)).data
    survivors = out[out != 0]
    assert abs(survivors.size / out.size - 0.7) < 0.01
    np.testing.assert_allclose(survivors, 1.0 / 0.7)


def test_dropout_deterministic_under_seed():
    x = Tensor(np.ones(1000))
    a = ops.dropout(x, 0.5, True, np.random.default_rng(5)).data
    b = ops.dropout(x, 0.5, True, np.random.default_rng(5)).data
    assert np.array_equal(a, b)


# backward


def test_dense_squared_loss_hand_derivation():
    # y = x.w + b, loss = 0.5 * sum((y - t)^2)  =>  dw = x^T (y - t), db = (y - t)
    x = Tensor(np.array([[1.0, 2.0]]))
    w = Tensor(np.array([[0.5, -1.0], [0.25, 2.0]]), requires_grad=True)
    b = Tensor(np.array([0.1, 0.2]), requires_grad=True)
    t = np.array([[1.0, 1.0]])
    y = ops.dense(x, w, b)  # [1.1, 3.2]
    backward(y, y.data - t)  # residual [0.1, 2.2]
    np.testing.assert_allclose(w.grad, [[0.1, 2.2], [0.2, 4.4]])
    np.testing.assert_allclose(b.grad, [0.1, 2.2])


def test_zero_upstream_gives_zero_grads():
    rng = np.random.default_rng(0)
    w = Tensor(rng.normal(size=(3, 3, 2, 4)), requires_grad=True)
    out = ops.relu(ops.conv2d(Tensor(rng.normal(size=(6, 6, 2))), w))
    backward(out, np.zeros(out.shape))
    assert np.all(w.grad == 0)


def test_backward_without_forward_rejected():
    net = Network()
    with pytest.raises(GraphError):
        net.backward(np.ones(1))
    with pytest.raises(GraphError):
        backward(Tensor(np.ones(2), requires_grad=True), np.ones(2))


def _layer_gradcheck(build, inputs, seed=0):
    """Check d(sum(out * R))/d(inputs) against central differences."""
    rng = np.random.default_rng(seed)
    out = build()
    R = rng.normal(size=out.shape)
    for t in inputs.values():
        t.grad = None
    backward(out, R)
    analytic = {k: t.grad.copy() for k, t in inputs.items()}

    def loss():
        return float(np.sum(build().data * R))

    return check_gradients(loss, analytic, inputs, eps=1e-3)


@pytest.mark.parametrize("stride,padding", [(1, "same"), (3, "same"), (2, "valid")])
def test_gradcheck_conv(stride, padding):
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(size=(2, 9, 8, 3)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 3, 3, 2)), requires_grad=True)
    b = Tensor(rng.normal(size=2), requires_grad=True)
    res = _layer_gradcheck(lambda: ops.conv2d(x, w, b, stride, padding), {"x": x, "w": w, "b": b})
    assert res.passed(1e-3), res


def test_gradcheck_maxpool_dense_activations():
    rng = np.random.default_rng(2)
    # well-separated values keep pooling argmax and relu signs away from kinks
    x = Tensor(rng.permutation(50).reshape(1, 5, 5, 2) * 0.1 + 0.05, requires_grad=True)
    assert _layer_gradcheck(lambda: ops.maxpool2x2(x), {"x": x}).passed()
    v = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    b = Tensor(rng.normal(size=5), requires_grad=True)
    assert _layer_gradcheck(lambda: ops.dense(v, w, b), {"v": v, "w": w, "b": b}).passed()
    s = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    assert _layer_gradcheck(lambda: ops.sigmoid(s), {"s": s}).passed()
    r = Tensor(np.sign(rng.normal(size=(4, 3))) * rng.uniform(0.1, 1.0, size=(4, 3)), requires_grad=True)
    assert _layer_gradcheck(lambda: ops.relu(r), {"r": r}).passed()


def test_gradcheck_concat_reshape_dropout():
    rng = np.random.default_rng(3)
    a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    c = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
    assert _layer_gradcheck(lambda: ops.reshape(ops.concat([a, c], axis=1), (7, 2)), {"a": a, "c": c}).passed()
    d = Tensor(rng.normal(size=(5, 6)), requires_grad=True)
    res = _layer_gradcheck(lambda: ops.dropout(d, 0.7, True, np.random.default_rng(9)), {"d": d})
    assert res.passed()


# optimizers


def test_adagrad_zero_gradient_keeps_params():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adagrad([p], learning_rate=0.1)
    opt.step([np.zeros(2)])
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert opt.state.step_count == 1


def test_adagrad_closed_form_accumulator():
    p = Tensor(np.array([0.0]), requires_grad=True)
    opt = Adagrad([p], learning_rate=0.1)
    opt.step([np.array([1.0])])
    assert p.data[0] == pytest.approx(-0.1 / (1.0 + 1e-8), abs=1e-12)
    opt.step([np.array([1.0])])
    assert p.data[0] == pytest.approx(-0.1 / (1.0 + 1e-8) - 0.1 / (math.sqrt(2) + 1e-8), abs=1e-12)


def test_adam_first_step_bias_corrected():
    p = Tensor(np.array([0.0]), requires_grad=True)
    Adam([p], learning_rate=1e-4).step([np.array([1.0])])
    assert p.data[0] == pytest.approx(-1e-4, rel=1e-6)


def test_optimizer_rejects_nan():
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam([p])
    with pytest.raises(NonFiniteGradientError):
        opt.step([np.array([np.nan])])
    assert p.data[0] == 1.0 and opt.state.step_count == 0


# serialization


def test_weights_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"match.a": rng.normal(size=(3, 4)).astype(np.float32), "policy.b": np.float32([1.5, -0.0, 1e-30])}
    path = tmp_path / "w.rdtw"
    save_weights(tensors, path)
    back = load_weights(path)
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].tobytes() == tensors[k].tobytes()


def test_weights_layout_header(tmp_path):
    blob = encode_weights({"ab": np.zeros((2,), np.float32)})
    assert blob[:4] == b"RDTW"
    assert struct.unpack("<III", blob[4:16]) == (1, 1, 2)
    assert blob[16:18] == b"ab"
    assert len(blob) == 4 + 8 + 4 + 2 + 4 + 4 + 8


def test_weights_bad_magic(tmp_path):
    path = tmp_path / "w.rdtw"
    path.write_bytes(b"XXXX" + encode_weights({"a": np.zeros(1, np.float32)})[4:])
    with pytest.raises(BadMagicError):
        load_weights(path)


def test_weights_bad_version(tmp_path):
    blob = bytearray(encode_weights({"a": np.zeros(1, np.float32)}))
    blob[4:8] = struct.pack("<I", 7)
    path = tmp_path / "w.rdtw"
    path.write_bytes(bytes(blob))
    with pytest.raises(UnsupportedVersionError):
        load_weights(path)


def test_weights_truncated_dense_payload(tmp_path):
    # header declares a 3712x2048 tensor, but only a few floats follow
    name = b"match.fc1.w"
    blob = b"RDTW" + struct.pack("<II", 1, 1) + struct.pack("<I", len(name)) + name
    blob += struct.pack("<I", 2) + struct.pack("<II", 3712, 2048) + np.zeros(100, "<f4").tobytes()
    path = tmp_path / "w.rdtw"
    path.write_bytes(blob)
    with pytest.raises(TruncatedWeightsError):
        load_weights(path)


def test_weights_manifest_mismatch(tmp_path):
    path = tmp_path / "w.rdtw"
    save_weights({"a": np.zeros((2, 3), np.float32)}, path)
    with pytest.raises(ManifestMismatchError):
        load_weights(path, expected={"a": (3, 2)})
    with pytest.raises(ManifestMismatchError):
        load_weights(path, expected={"b": (2, 3)})


# layer specs


def test_layer_spec_invariants():
    with pytest.raises(ValueError):
        LayerSpec("conv", stride=1, out=4)  # kernel missing
    with pytest.raises(ValueError):
        LayerSpec("dropout")  # keep_prob missing
    with pytest.raises(ValueError):
        LayerSpec("relu", keep_prob=0.5)
    with pytest.raises(ValueError):
        LayerSpec("dropout", keep_prob=1.5)
    with pytest.raises(ValueError):
        LayerSpec("conv", kernel=(3, 3), stride=0, out=4)


@settings(max_examples=40, deadline=None)
@given(
    h=st.integers(3, 30),
    k=st.integers(1, 3),
    stride=st.integers(1, 3),
    padding=st.sampled_from(["same", "valid"]),
)
def test_conv_output_size_property(h, k, stride, padding):
    out = ops.conv2d(Tensor(np.zeros((h, h, 1))), Tensor(np.zeros((k, k, 1, 1))), stride=stride, padding=padding)
    expected = math.ceil(h / stride) if padding == "same" else (h - k) // stride + 1
    assert out.shape[:2] == (expected, expected)


@settings(max_examples=30, deadline=None)
@given(h=st.integers(2, 13), w=st.integers(2, 13))
def test_maxpool_shape_and_upper_bound_property(h, w):
    x = np.random.default_rng(h * 31 + w).normal(size=(h, w, 2))
    out = ops.maxpool2x2(Tensor(x)).data
    assert out.shape == (h // 2, w // 2, 2)
    assert np.all(out <= x.max())


def test_frozen_switches_replay_same_pattern():
    from rltrack.nn import ops

    rng = np.random.default_rng(9)
    x = rng.normal(size=(1, 4, 4, 2))
    with ops.frozen_switches() as tape:
        base = ops.maxpool2x2(ops.relu(Tensor(x))).data
    with ops.frozen_switches(tape):
        again = ops.maxpool2x2(ops.relu(Tensor(x))).data
    np.testing.assert_array_equal(base, again)
    # a negated input keeps the recorded pattern, so the ops act linearly
    with ops.frozen_switches(tape):
        neg = ops.maxpool2x2(ops.relu(Tensor(-x))).data
    np.testing.assert_allclose(neg, -base)
