import numpy as np
import pytest

from fnodyn import autodiff as ad
from fnodyn.rng import KeyedRng


def fd_grad(fn, tensors, h=1e-5):
    """Central-difference gradients of a scalar-valued fn of the given leaves."""
    grads = []
    for t in tensors:
        fd = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        fd_flat = fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn().item()
            flat[i] = orig - h
            fm = fn().item()
            flat[i] = orig
            fd_flat[i] = (fp - fm) / (2.0 * h)
        grads.append(fd)
    return grads


def check_grads(fn, tensors, tol=1e-5, h=1e-5):
    for t in tensors:
        t.zero_grad()
    loss = fn()
    loss.backward()
    fd = fd_grad(fn, tensors, h=h)
    for t, g_fd in zip(tensors, fd):
        assert t.grad is not None, "missing gradient"
        scale = max(np.linalg.norm(g_fd), np.linalg.norm(t.grad), 1e-12)
        rel = np.linalg.norm(t.grad - g_fd) / scale
        assert rel <= tol, f"gradient mismatch: rel err {rel:.3e}"


def rand(shape, seed, scale=1.0, offset=0.0):
    return KeyedRng(seed, "gradcheck").normal(size=shape) * scale + offset


def scalarize(t, seed=0):
    proj = ad.constant(KeyedRng(seed, "proj").normal(size=t.shape))
    return (t * proj).sum()


def test_square_gradient_value():
    x = ad.parameter(3.0)
    (x * x).backward()
    assert x.grad == pytest.approx(6.0, abs=1e-12)


def test_fanout_accumulates():
    x = ad.parameter(np.array([1.5]))
    (x + x).sum().backward()
    assert x.grad[0] == pytest.approx(2.0)


def test_sum_gradient_is_ones():
    x = ad.parameter(np.arange(5.0))
    x.sum().backward()
    assert np.array_equal(x.grad, np.ones(5))


@pytest.mark.parametrize("op,positive", [
    (ad.tanh, False), (ad.sigmoid, False), (ad.gelu, False),
    (ad.exp, False), (ad.sin, False), (ad.cos, False),
    (ad.sqrt, True), (ad.neg, False),
])
def test_unary_primitives(op, positive):
    data = rand((3, 4), seed=11, offset=2.0 if positive else 0.0)
    if positive:
        data = np.abs(data) + 0.5
    x = ad.parameter(data)
    check_grads(lambda: scalarize(op(x), seed=1), [x])


def test_relu_gradient_away_from_kink():
    data = rand((4, 3), seed=12)
    data[np.abs(data) < 0.1] = 0.5  # keep FD probes off the kink
    x = ad.parameter(data)
    check_grads(lambda: scalarize(ad.relu(x), seed=2), [x])


@pytest.mark.parametrize("op", [ad.add, ad.sub, ad.mul, ad.div])
def test_binary_primitives(op):
    a = ad.parameter(rand((2, 5), seed=13))
    b = ad.parameter(np.abs(rand((2, 5), seed=14)) + 1.0)
    check_grads(lambda: scalarize(op(a, b), seed=3), [a, b])


@pytest.mark.parametrize("op", [ad.add, ad.mul])
def test_binary_broadcast_leading_dims(op):
    a = ad.parameter(rand((4, 2, 5), seed=15))
    b = ad.parameter(rand((5,), seed=16))
    check_grads(lambda: scalarize(op(a, b), seed=4), [a, b])


def test_atan2_gradient():
    y = ad.parameter(rand((6,), seed=17, offset=1.5))
    x = ad.parameter(rand((6,), seed=18, offset=2.0))
    check_grads(lambda: scalarize(ad.atan2(y, x), seed=5), [y, x])


def test_matmul_gradient_vs_fd():
    a = ad.parameter(rand((3, 4), seed=19))
    b = ad.parameter(rand((4, 2), seed=20))
    check_grads(lambda: scalarize(a @ b, seed=6), [a, b], tol=1e-6, h=1e-5)


def test_matmul_batched_gradient():
    a = ad.parameter(rand((2, 6, 3), seed=21))
    b = ad.parameter(rand((3, 4), seed=22))
    check_grads(lambda: scalarize(a @ b, seed=7), [a, b], tol=1e-6)


def test_transpose_reshape_gradients():
    x = ad.parameter(rand((2, 3, 4), seed=23))
    check_grads(lambda: scalarize(x.transpose(2, 0, 1), seed=8), [x])
    check_grads(lambda: scalarize(x.reshape(4, 6), seed=9), [x])


def test_slice_concat_gradients():
    x = ad.parameter(rand((3, 8), seed=24))
    y = ad.parameter(rand((3, 5), seed=25))

    def fn():
        left = ad.slice_axis(x, 1, 0, 4)
        joined = ad.concat([left, y], axis=1)
        return scalarize(joined, seed=10)

    check_grads(fn, [x, y])


def test_reduction_gradients():
    x = ad.parameter(rand((4, 5), seed=26))
    check_grads(lambda: (x.sum(axis=1) * ad.constant(np.arange(4.0))).sum(), [x])
    check_grads(lambda: (x.mean(axis=0) * ad.constant(np.arange(5.0))).sum(), [x])
    check_grads(lambda: x.mean(), [x])


def test_rfft_irfft_roundtrip_and_gradients():
    x = ad.parameter(rand((2, 16), seed=27))
    spec = ad.rfft_node(x)
    back = ad.irfft_node(spec, 16)
    assert np.allclose(back.data, x.data, atol=1e-12)
    check_grads(lambda: scalarize(ad.rfft_node(x), seed=11), [x])
    z = ad.parameter(rand((2, 9, 2), seed=28))
    check_grads(lambda: scalarize(ad.irfft_node(z, 16), seed=12), [z])


def test_rfft_odd_length_gradient():
    x = ad.parameter(rand((15,), seed=29))
    check_grads(lambda: scalarize(ad.irfft_node(ad.rfft_node(x), 15), seed=13), [x])


def test_complex_pointwise_matmul_values_and_gradients():
    v = ad.parameter(rand((2, 3, 5, 2), seed=30))
    w = ad.parameter(rand((5, 4, 3, 2), seed=31))
    out = ad.complex_pointwise_matmul(v, w)
    vc = v.data[..., 0] + 1j * v.data[..., 1]
    wc = w.data[..., 0] + 1j * w.data[..., 1]
    expected = np.einsum("bik,koi->bok", vc, wc)
    assert np.allclose(out.data[..., 0], expected.real, atol=1e-12)
    assert np.allclose(out.data[..., 1], expected.imag, atol=1e-12)
    check_grads(lambda: scalarize(ad.complex_pointwise_matmul(v, w), seed=14), [v, w])


def test_spectral_chain_gradient():
    # rfft -> complex contraction -> irfft on a length-16 input
    x = ad.parameter(rand((1, 2, 16), seed=32))
    w = ad.parameter(rand((4, 2, 2, 2), seed=33, scale=0.5))

    def fn():
        spec = ad.rfft_node(x)
        kept = ad.slice_axis(spec, 2, 0, 4)
        mixed = ad.complex_pointwise_matmul(kept, w)
        zeros = ad.constant(np.zeros((1, 2, 9 - 4, 2)))
        full = ad.concat([mixed, zeros], axis=2)
        return scalarize(ad.irfft_node(full, 16), seed=15)

    check_grads(fn, [x, w], tol=1e-5)


def test_dft_modes_matches_rfft_slice():
    x = ad.parameter(rand((3, 20), seed=34))
    a = ad.dft_modes(x, 6)
    b = ad.slice_axis(ad.rfft_node(x), 1, 0, 6)
    assert np.allclose(a.data, b.data, atol=1e-10)


def test_idft_modes_matches_zero_padded_irfft():
    z = ad.parameter(rand((3, 6, 2), seed=35))
    a = ad.idft_modes(z, 20)
    b = ad.irfft_node(z, 20)
    assert np.allclose(a.data, b.data, atol=1e-10)


def test_dft_idft_gradients():
    x = ad.parameter(rand((2, 12), seed=36))
    check_grads(lambda: scalarize(ad.idft_modes(ad.dft_modes(x, 5), 12), seed=16), [x])


def test_dropout_mask_deterministic_and_eval_identity():
    x = ad.parameter(np.ones((100, 100)))
    key = (7, "dropout", 0)
    a = ad.dropout(x, 0.4, True, key)
    b = ad.dropout(x, 0.4, True, key)
    assert np.array_equal(a.data, b.data)
    c = ad.dropout(x, 0.4, True, (7, "dropout", 1))
    assert not np.array_equal(a.data, c.data)
    kept = a.data != 0.0
    assert abs(kept.mean() - 0.6) < 0.03
    assert np.allclose(a.data[kept], 1.0 / 0.6)
    ev = ad.dropout(x, 0.4, False, key)
    assert np.array_equal(ev.data, x.data)


def test_dropout_gradient_matches_mask():
    x = ad.parameter(rand((10, 10), seed=37))
    key = (9, "dropmask")
    out = ad.dropout(x, 0.3, True, key)
    out.sum().backward()
    scale = np.where(out.data != 0.0, 1.0 / 0.7, 0.0)
    assert np.allclose(x.grad, scale)


def test_backward_deterministic():
    def run():
        x = ad.parameter(rand((8, 8), seed=38))
        w = ad.parameter(rand((8, 8), seed=39))
        y = ad.tanh(x @ w) + x
        (y * y).sum().backward()
        return x.grad.copy(), w.grad.copy()

    g1 = run()
    g2 = run()
    assert np.array_equal(g1[0], g2[0])
    assert np.array_equal(g1[1], g2[1])


def test_backward_requires_scalar():
    x = ad.parameter(np.ones(3))
    with pytest.raises(ValueError):
        (x * 2).backward()


def test_no_grad_suppresses_graph():
    x = ad.parameter(np.ones(4))
    with ad.no_grad():
        y = ad.tanh(x) + 1.0
    assert not y.requires_grad and y._parents == ()


def test_shape_mismatch_raises_before_node_creation():
    a = ad.parameter(np.ones((2, 3)))
    b = ad.parameter(np.ones((4, 5)))
    with pytest.raises(ValueError):
        ad.matmul(a, b)


def test_grad_allocated_only_for_requires_grad():
    x = ad.parameter(np.ones(3))
    c = ad.constant(np.ones(3))
    (x * c).sum().backward()
    assert x.grad is not None
    assert c.grad is None
