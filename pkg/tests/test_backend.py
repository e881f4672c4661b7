import numpy as np
import pytest

from tar3d.backend import (
    AdamW,
    NumericsError,
    ShapeError,
    Tensor,
    affine,
    apply_rotary,
    attention,
    bce_with_logits,
    check_finite,
    concat,
    cosine_lr,
    cross_entropy,
    embedding,
    gelu,
    grad_check,
    grid_sample,
    layer_norm,
    log_softmax,
    matmul,
    no_grad,
    relu,
    reshape,
    sigmoid,
    slice_axis,
    softmax,
    tanh,
    texp,
    tlog,
    transpose,
    tsum,
    upsample_nearest2x,
)
from tar3d.backend.nn import ParameterStore

rng = np.random.default_rng(42)


def t64(*shape):
    return Tensor(rng.normal(size=shape))


class TestForwardExamples:
    def test_softmax_symmetry(self):
        out = softmax(Tensor(np.zeros(3)))
        assert np.allclose(out.data, 1.0 / 3.0, atol=1e-12)

    def test_matmul_identity(self):
        a = rng.normal(size=(3, 3))
        out = matmul(Tensor(np.eye(3)), Tensor(a))
        assert np.allclose(out.data, a)

    def test_matmul_shape_mismatch_reports_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
            matmul(t64(2, 3), t64(4, 2))

    def test_add_broadcast_mismatch(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 3))) + Tensor(np.zeros((4,)))

    def test_bilinear_center_of_2x2(self):
        plane = Tensor(np.array([[[0.0], [1.0]], [[2.0], [3.0]]]))
        out = grid_sample(plane, np.array([[0.0, 0.0]]))
        assert out.data[0, 0] == pytest.approx(1.5, abs=1e-12)

    def test_softmax_rows_sum_to_one(self):
        out = softmax(t64(5, 7))
        assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-6)

    def test_reshape_roundtrip_identity(self):
        x = t64(3, 4, 5)
        y = reshape(reshape(x, (5, 12)), (3, 4, 5))
        assert np.array_equal(x.data, y.data)

    def test_causal_attention_ignores_future(self):
        q = t64(1, 6, 8)
        k = t64(1, 6, 8)
        v = t64(1, 6, 8)
        base = attention(q, k, v, causal=True).data.copy()
        k2 = k.data.copy()
        v2 = v.data.copy()
        k2[0, 4:] += 3.0
        v2[0, 4:] -= 2.0
        pert = attention(q, Tensor(k2), Tensor(v2), causal=True).data
        assert np.array_equal(base[0, :4], pert[0, :4])
        assert not np.allclose(base[0, 4:], pert[0, 4:])

    def test_sigmoid_matches_closed_form(self):
        x = np.array([-30.0, -1.0, 0.0, 1.0, 30.0])
        out = sigmoid(Tensor(x))
        assert np.allclose(out.data, 1.0 / (1.0 + np.exp(-x)))

    def test_cross_entropy_uniform(self):
        logits = Tensor(np.zeros((4, 7)))
        loss = cross_entropy(logits, np.array([0, 3, 5, 6]))
        assert float(loss.data) == pytest.approx(np.log(7), rel=1e-12)

    def test_bce_at_logit_zero(self):
        loss = bce_with_logits(Tensor(np.zeros(9)), np.array([0, 1] * 4 + [1], dtype=float))
        assert float(loss.data) == pytest.approx(np.log(2), rel=1e-12)

    def test_rotary_preserves_norm(self):
        x = t64(4, 3, 8)
        ang = rng.normal(size=(3, 4))
        y = apply_rotary(x, np.cos(ang), np.sin(ang))
        assert np.allclose(np.linalg.norm(y.data, axis=-1),
                           np.linalg.norm(x.data, axis=-1), atol=1e-5)

    def test_upsample_nearest_values(self):
        x = Tensor(np.arange(4.0).reshape(2, 2, 1))
        y = upsample_nearest2x(x)
        assert y.data.shape == (4, 4, 1)
        assert np.array_equal(y.data[:2, :2, 0], np.zeros((2, 2)))
        assert np.array_equal(y.data[2:, 2:, 0], 3 * np.ones((2, 2)))

    def test_check_finite_raises(self):
        with pytest.raises(NumericsError):
            check_finite(Tensor(np.array([1.0, np.nan])), "loss")


class TestAutogradMechanics:
    def test_sum_of_squares_example(self):
        x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        (x * x).sum().backward()
        assert np.allclose(x.grad, [2.0, 4.0, 6.0])
        err = grad_check(lambda t: (t * t).sum(), Tensor(np.array([1.0, 2.0, 3.0])))
        assert err < 1e-6

    def test_no_grad_blocks_graph(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = (x * x).sum()
        assert y._backward is None and not y.requires_grad

    def test_backward_needs_scalar(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ShapeError):
            (x * x).backward()

    def test_grad_accumulates_over_reuse(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = x * x + x * 3.0
        y.sum().backward()
        assert np.allclose(x.grad, [7.0])

    def test_constant_leaves_get_no_grad(self):
        x = Tensor(np.ones(3), requires_grad=True)
        c = Tensor(np.ones(3))
        (x * c).sum().backward()
        assert c.grad is None

    def test_duplicate_parameter_name_rejected(self):
        store = ParameterStore()
        store.param("w", np.zeros(2))
        with pytest.raises(ValueError, match="duplicate"):
            store.param("w", np.zeros(2))

    def test_grad_check_rejects_float32(self):
        with pytest.raises(ValueError):
            grad_check(lambda t: t.sum(), Tensor(np.zeros(2, dtype=np.float32)))


def _with_const(shape, op):
    const = Tensor(rng.normal(size=shape))
    return lambda C: lambda t: (op(t, const) * C).sum()


OPS = [
    ("matmul", _with_const((6, 4), matmul), (3, 6), (3, 4)),
    ("add", _with_const((5, 4), lambda t, c: t + c), (5, 4), (5, 4)),
    ("mul", _with_const((5, 4), lambda t, c: t * c), (5, 4), (5, 4)),
    ("softmax", lambda C: lambda t: (softmax(t) * C).sum(), (5, 6), (5, 6)),
    ("log_softmax", lambda C: lambda t: (log_softmax(t) * C).sum(), (5, 6), (5, 6)),
    ("sigmoid", lambda C: lambda t: (sigmoid(t) * C).sum(), (7,), (7,)),
    ("tanh", lambda C: lambda t: (tanh(t) * C).sum(), (7,), (7,)),
    ("relu", lambda C: lambda t: (relu(t) * C).sum(), (7,), (7,)),
    ("gelu", lambda C: lambda t: (gelu(t) * C).sum(), (7,), (7,)),
    ("exp", lambda C: lambda t: (texp(t) * C).sum(), (7,), (7,)),
    ("concat", lambda C: lambda t: (concat([t, t * 2.0], axis=1) * C).sum(), (3, 2), (3, 4)),
    ("reshape", lambda C: lambda t: (reshape(t, (8, 3)) * C).sum(), (4, 6), (8, 3)),
    ("transpose", lambda C: lambda t: (transpose(t, (2, 0, 1)) * C).sum(), (2, 3, 4), (4, 2, 3)),
    ("slice", lambda C: lambda t: (slice_axis(t, 1, 1, 4) * C).sum(), (3, 6), (3, 3)),
    ("upsample", lambda C: lambda t: (upsample_nearest2x(t) * C).sum(), (3, 2, 2), (6, 4, 2)),
    ("sum_axis", lambda C: lambda t: (tsum(t, axis=1) * C).sum(), (4, 5), (4,)),
]


class TestGradChecks:
    @pytest.mark.parametrize("name,make,in_shape,c_shape", OPS, ids=[o[0] for o in OPS])
    def test_op_gradient(self, name, make, in_shape, c_shape):
        C = Tensor(rng.normal(size=c_shape))
        err = grad_check(make(C), Tensor(rng.normal(size=in_shape)))
        assert err < 1e-4, f"{name}: {err}"

    def test_log_gradient(self):
        err = grad_check(lambda t: tlog(t).sum(), Tensor(rng.uniform(0.5, 2.0, size=(6,))))
        assert err < 1e-4

    def test_affine_gradients(self):
        x0 = rng.normal(size=(5, 4))
        w0 = rng.normal(size=(4, 3))
        b0 = rng.normal(size=(3,))
        C = Tensor(rng.normal(size=(5, 3)))
        for make, x in [
            (lambda t: (affine(t, Tensor(w0), Tensor(b0)) * C).sum(), x0),
            (lambda t: (affine(Tensor(x0), t, Tensor(b0)) * C).sum(), w0),
            (lambda t: (affine(Tensor(x0), Tensor(w0), t) * C).sum(), b0),
        ]:
            assert grad_check(make, Tensor(x.copy())) < 1e-4

    def test_attention_gradients(self):
        q0 = rng.normal(size=(2, 3, 4))
        k0 = rng.normal(size=(2, 5, 4))
        v0 = rng.normal(size=(2, 5, 4))
        C = Tensor(rng.normal(size=(2, 3, 4)))
        assert grad_check(lambda t: (attention(t, Tensor(k0), Tensor(v0)) * C).sum(),
                          Tensor(q0.copy())) < 1e-4
        assert grad_check(lambda t: (attention(Tensor(q0), t, Tensor(v0)) * C).sum(),
                          Tensor(k0.copy())) < 1e-4
        assert grad_check(lambda t: (attention(Tensor(q0), Tensor(k0), t) * C).sum(),
                          Tensor(v0.copy())) < 1e-4
        assert grad_check(lambda t: (attention(t, t, t, causal=True) ** 2.0).sum(),
                          Tensor(rng.normal(size=(2, 4, 4)))) < 1e-4

    def test_layer_norm_gradients(self):
        g = Tensor(rng.normal(size=(5,)))
        b = Tensor(rng.normal(size=(5,)))
        C = Tensor(rng.normal(size=(3, 5)))
        assert grad_check(lambda t: (layer_norm(t, g, b) * C).sum(),
                          Tensor(rng.normal(size=(3, 5)))) < 1e-4
        x = Tensor(rng.normal(size=(3, 5)))
        assert grad_check(lambda t: (layer_norm(x, t, b) * C).sum(),
                          Tensor(rng.normal(size=(5,)))) < 1e-4

    def test_embedding_gradient(self):
        ids = np.array([0, 2, 2, 1])
        C = Tensor(rng.normal(size=(4, 3)))
        assert grad_check(lambda t: (embedding(t, ids) * C).sum(),
                          Tensor(rng.normal(size=(4, 3)))) < 1e-4

    def test_grid_sample_gradient(self):
        uv = rng.uniform(-1, 1, size=(9, 2))
        assert grad_check(lambda t: (grid_sample(t, uv) ** 2.0).sum(),
                          Tensor(rng.normal(size=(4, 5, 3)))) < 1e-4

    def test_rotary_gradient(self):
        ang = rng.normal(size=(3, 2))
        cos, sin = np.cos(ang), np.sin(ang)
        C = Tensor(rng.normal(size=(3, 4)))
        assert grad_check(lambda t: (apply_rotary(t, cos, sin) * C).sum(),
                          Tensor(rng.normal(size=(3, 4)))) < 1e-4

    def test_loss_gradients(self):
        targets = np.array([1, 0, 3])
        assert grad_check(lambda t: cross_entropy(t, targets),
                          Tensor(rng.normal(size=(3, 5)))) < 1e-4
        labels = np.array([1.0, 0.0, 1.0, 1.0])
        assert grad_check(lambda t: bce_with_logits(t, labels),
                          Tensor(rng.normal(size=(4,)))) < 1e-4


class TestOptim:
    def test_adamw_minimizes_quadratic(self):
        x = Tensor(np.array([5.0, -3.0]), requires_grad=True)
        opt = AdamW([x], lr=0.1)
        for _ in range(200):
            opt.zero_grad()
            loss = (x * x).sum()
            loss.backward()
            opt.step()
        assert float((x.data ** 2).sum()) < 1e-3

    def test_cosine_schedule_endpoints(self):
        assert cosine_lr(1.0, 0, 100) == pytest.approx(1.0)
        assert cosine_lr(1.0, 99, 100) == pytest.approx(0.01)
        assert cosine_lr(1.0, 50, 100) == pytest.approx(0.505, abs=0.01)
