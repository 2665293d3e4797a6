import numpy as np
import pytest

from moedet import nn


def test_silu_zero_is_zero():
    assert nn.silu(nn.as_tensor(0.0)).item() == 0.0


def test_softmax_uniform_on_equal_logits():
    out = nn.softmax(nn.as_tensor([0.0, 0.0, 0.0, 0.0]), axis=0)
    assert np.allclose(out.data, 0.25)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(3)
    with nn.use_dtype(np.float64):
        z = nn.as_tensor(rng.normal(size=(16, 7)) * 10)
        p = nn.softmax(z, axis=1)
    assert np.all(p.data >= 0)
    assert np.allclose(p.data.sum(axis=1), 1.0, atol=1e-12)


def test_conv2d_identity_kernel():
    rng = np.random.default_rng(0)
    x = nn.as_tensor(rng.normal(size=(2, 3, 5, 5)))
    w = np.zeros((3, 3, 1, 1), dtype=np.float32)
    for c in range(3):
        w[c, c, 0, 0] = 1.0
    out = nn.conv2d(x, nn.as_tensor(w), stride=1, padding=0)
    assert np.array_equal(out.data, x.data)


def test_conv2d_shape_mismatch_names_op():
    x = nn.as_tensor(np.zeros((1, 3, 4, 4)))
    w = nn.as_tensor(np.zeros((2, 5, 3, 3)))
    with pytest.raises(nn.ShapeMismatchError, match="conv2d"):
        nn.conv2d(x, w)


def test_evaluate_referentially_transparent():
    rng = np.random.default_rng(7)
    x = nn.as_tensor(rng.normal(size=(2, 4, 6, 6)))
    w = nn.parameter(rng.normal(size=(4, 4, 3, 3)) * 0.2)

    def run():
        return nn.conv2d(nn.silu(x), w, stride=1, padding=1).data

    assert np.array_equal(run(), run())


def test_global_avg_pool_constant_exact():
    x = nn.as_tensor(np.full((3, 2, 5, 7), 1.625, dtype=np.float32))
    out = nn.global_avg_pool(x)
    assert np.all(out.data == np.float32(1.625))


def test_softmax_sum_gradient_is_zero():
    with nn.use_dtype(np.float64):
        z = nn.parameter(np.array([0.3, -1.2, 2.0, 0.1]))
        loss = nn.reduce_sum(nn.softmax(z, axis=0))
        loss.backward()
    assert np.allclose(z.grad, 0.0, atol=1e-12)


def test_silu_gradient_at_zero():
    with nn.use_dtype(np.float64):
        x = nn.parameter(np.array(0.0))
        nn.silu(x).backward()
    assert x.grad == pytest.approx(0.5, abs=1e-15)


def test_gradient_accumulates_across_reuse():
    with nn.use_dtype(np.float64):
        x = nn.parameter(np.array(3.0))
        loss = nn.add(nn.mul(x, x), x)  # x^2 + x -> grad 2x + 1
        loss.backward()
    assert x.grad == pytest.approx(7.0)


def test_backward_rejects_non_scalar():
    x = nn.parameter(np.zeros((2, 2)))
    with pytest.raises(nn.NonScalarLossError):
        nn.mul(x, x).backward()


def test_top_k_ties_break_to_lowest_index():
    idx = nn.top_k_indices(np.array([1.0, 3.0, 3.0, 0.0]), 2)
    assert idx.tolist() == [1, 2]
    idx = nn.top_k_indices(np.array([[2.0, 2.0, 2.0]]), 2)
    assert idx.tolist() == [[0, 1]]


def test_no_grad_skips_graph():
    x = nn.parameter(np.ones((2, 2)))
    with nn.no_grad():
        y = nn.mul(x, x)
    assert not y.requires_grad and y._parents == ()


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    tensors = {
        "a.weight": rng.normal(size=(3, 4)).astype(np.float32),
        "b.bias": rng.normal(size=(7,)).astype(np.float32),
        "c.scalar": np.float32(2.5),
    }
    path = tmp_path / "model.ckpt"
    nn.save_checkpoint(path, tensors)
    loaded = nn.load_checkpoint(path)
    assert set(loaded) == set(tensors)
    for name in tensors:
        assert np.array_equal(np.asarray(tensors[name], dtype=np.float32), loaded[name])
    raw = path.read_bytes()
    assert raw[:4] == b"MDF1"


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(Exception, match="magic"):
        nn.load_checkpoint(path)
