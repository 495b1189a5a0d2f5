import subprocess
import sys

import numpy as np
import pytest

from jointdrive.numerics import (FullyMaskedError, GradCheckError, Param, ShapeError, Tensor,
                                 adam_step, debug_checks, grad_check, make_op, steplr)
from jointdrive.numerics import tensor as T
from jointdrive.numerics.nn import GRUCell, LayerNorm
from jointdrive.numerics.tensor import NumericError


def leaf(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def test_softmax_symmetric():
    out = T.softmax(Tensor([0.0, 0.0]))
    np.testing.assert_array_equal(out.data, [0.5, 0.5])


def test_matmul_identity():
    a = np.random.default_rng(0).normal(size=(3, 3))
    np.testing.assert_array_equal(T.matmul(Tensor(np.eye(3)), Tensor(a)).data, a)


def test_gru_zero_weights_gives_zero_state():
    # z = sigmoid(0) = 0.5, candidate = tanh(0) = 0, h' = 0.5*0 + 0.5*0
    x = Tensor(np.random.default_rng(1).normal(size=(2, 5)))
    h = Tensor(np.zeros((2, 4)))
    z = Tensor(np.zeros((12, 5)))
    out = T.gru_cell(x, h, z, Tensor(np.zeros((12, 4))), Tensor(np.zeros(12)), Tensor(np.zeros(12)))
    np.testing.assert_array_equal(out.data, np.zeros((2, 4)))


def _op_cases():
    """Scalar-valued closures over random leaves, one per vocabulary op."""
    rng = np.random.default_rng(42)
    cases = {}

    a, b = leaf(rng, 2, 3, 4), leaf(rng, 4, 5)
    cases["matmul"] = (lambda: T.tanh(T.matmul(a, b)).sum(), [a, b])
    x, y = leaf(rng, 3, 4), leaf(rng, 4)
    w = Tensor(rng.normal(size=(3, 4)))
    cases["add_sub_mul_broadcast"] = (lambda: ((x + y) * w - y * x).sum(), [x, y])
    r = leaf(rng, 5, 6)
    cases["relu"] = (lambda: (T.relu(r) * w[:1, :1]).sum(), [r])
    s = leaf(rng, 2, 3, 5)
    sw = Tensor(rng.normal(size=(2, 3, 5)))
    mask = np.zeros((2, 3, 5), dtype=bool)
    mask[..., -2:] = True
    cases["softmax_masked"] = (lambda: (T.softmax(s, mask) * sw).sum(), [s])
    ln_x, ln_w, ln_b = leaf(rng, 4, 6), leaf(rng, 6), leaf(rng, 6)
    lw = Tensor(rng.normal(size=(4, 6)))
    cases["layer_norm"] = (lambda: (T.layer_norm(ln_x, ln_w, ln_b) * lw).sum(), [ln_x, ln_w, ln_b])
    li_x, li_w, li_b = leaf(rng, 3, 5), leaf(rng, 2, 5), leaf(rng, 2)
    cases["linear"] = (lambda: T.tanh(T.linear(li_x, li_w, li_b)).sum(), [li_x, li_w, li_b])
    cx, cw, cb = leaf(rng, 2, 3, 7, 7), leaf(rng, 4, 3, 3, 3), leaf(rng, 4)
    cases["conv2d_stride2_pad1"] = (lambda: T.tanh(T.conv2d(cx, cw, cb, stride=2, padding=1)).sum(),
                                    [cx, cw, cb])
    px = leaf(rng, 2, 3, 8, 8)
    pw = Tensor(rng.normal(size=(2, 3, 2, 2)))
    cases["avg_pool2d"] = (lambda: (T.avg_pool2d(px, 4) * pw).sum(), [px])
    ux = leaf(rng, 2, 3, 3)
    uw = Tensor(rng.normal(size=(2, 7, 5)))
    cases["upsample_bilinear"] = (lambda: (T.upsample_bilinear(ux, (7, 5)) * uw).sum(), [ux])
    gx = leaf(rng, 2, 3, 6, 6)
    rows = rng.uniform(-1.5, 6.5, size=(3, 4, 4))
    cols = rng.uniform(-1.5, 6.5, size=(3, 4, 4))
    gw = Tensor(rng.normal(size=(3, 3, 4, 4)))
    cases["grid_sample"] = (lambda: (T.grid_sample(gx, rows, cols, [0, 1, 1]) * gw).sum(), [gx])
    g_x, g_h = leaf(rng, 2, 3), leaf(rng, 2, 4)
    g_wi, g_wh, g_bi, g_bh = leaf(rng, 12, 3), leaf(rng, 12, 4), leaf(rng, 12), leaf(rng, 12)
    cases["gru_cell"] = (lambda: (T.gru_cell(g_x, g_h, g_wi, g_wh, g_bi, g_bh) * w[:2, :]).sum(),
                         [g_x, g_h, g_wi, g_wh, g_bi, g_bh])
    emb = leaf(rng, 5, 3)
    ew = Tensor(rng.normal(size=(4, 3)))
    cases["embedding"] = (lambda: (T.embedding(emb, [0, 3, 3, 1]) * ew).sum(), [emb])
    c1, c2 = leaf(rng, 2, 3), leaf(rng, 2, 2)
    cases["concat"] = (lambda: (T.concat([c1, c2], axis=1) * Tensor(np.arange(10.0).reshape(2, 5))).sum(),
                       [c1, c2])
    l1p = leaf(rng, 4, 2)
    l1t = rng.normal(size=(4, 2))
    cases["l1_loss"] = (lambda: T.l1_loss(l1p, l1t), [l1p])
    bl = leaf(rng, 3, 4)
    bt = (rng.uniform(size=(3, 4)) > 0.5).astype(float)
    cases["bce_with_logits"] = (lambda: T.bce_with_logits(bl, bt), [bl])
    cu = leaf(rng, 5, 2)
    cases["cumsum"] = (lambda: (T.cumsum(cu, axis=0) * Tensor(np.arange(10.0).reshape(5, 2))).sum(), [cu])
    return cases


OP_CASES = _op_cases()


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_every_op_passes_grad_check(name):
    f, params = OP_CASES[name]
    report = grad_check(f, params, tol=1e-3)
    assert report.passed, (name, report.per_param)


def test_grad_check_square():
    w = Tensor(np.array(3.0), requires_grad=True)
    report = grad_check(lambda: w * w, [w])
    assert report.max_rel_error < 1e-6
    assert w.grad == pytest.approx(6.0)


def test_grad_check_detects_corrupted_backward():
    rng = np.random.default_rng(3)
    x = leaf(rng, 4)

    def corrupted_square(t):
        return make_op(t.data ** 2, (t,), lambda g: (g * 2.0 * t.data * 1.01,), "bad_square")

    report = grad_check(lambda: corrupted_square(x).sum(), [x], tol=1e-3)
    assert not report.passed
    assert report.max_rel_error > 1e-3


def test_grad_check_rejects_non_finite():
    x = Tensor(np.array([0.0]), requires_grad=True)
    with pytest.raises(GradCheckError, match="arg0"), np.errstate(divide="ignore", invalid="ignore"):
        grad_check(lambda: T.log(T.abs_(x)).sum(), [x])


def test_softmax_rows_normalized_and_nonnegative():
    rng = np.random.default_rng(5)
    out = T.softmax(Tensor(rng.normal(scale=5.0, size=(6, 9)))).data
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-9)


def test_softmax_fully_masked_row_is_error():
    with pytest.raises(FullyMaskedError):
        T.softmax(Tensor(np.zeros((2, 3))), np.array([[False, True, True], [True, True, True]]))


def test_layer_norm_statistics():
    rng = np.random.default_rng(6)
    ln = LayerNorm(16)
    out = ln(Tensor(rng.normal(3.0, 7.0, size=(10, 16)))).data
    assert np.all(np.abs(out.mean(axis=-1)) < 1e-6)
    assert np.all(np.abs(out.var(axis=-1) - 1.0) < 1e-4)


def test_grid_sample_integer_coordinates_exact():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(1, 2, 5, 6))
    rr, cc = np.meshgrid(np.arange(5.0), np.arange(6.0), indexing="ij")
    out = T.grid_sample(Tensor(x), rr[None], cc[None]).data
    np.testing.assert_array_equal(out, x)


def test_grid_sample_outside_is_zero():
    x = Tensor(np.ones((1, 1, 4, 4)))
    out = T.grid_sample(x, np.full((1, 2, 2), 10.0), np.full((1, 2, 2), -7.0)).data
    np.testing.assert_array_equal(out, 0.0)


def test_shape_mismatch_reports_both_shapes():
    with pytest.raises(ShapeError) as err:
        T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))
    assert "(2, 3)" in str(err.value) and "(4,)" in str(err.value)
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_debug_checks_catch_non_finite():
    with debug_checks(), np.errstate(invalid="ignore"):
        with pytest.raises(NumericError):
            T.log(Tensor(np.array([-1.0])))
    with np.errstate(invalid="ignore"):
        T.log(Tensor(np.array([-1.0])))  # silent outside debug mode


def test_gru_module_shapes():
    cell = GRUCell(2, 8, seed=1, prefix="g")
    h = cell(Tensor(np.zeros((3, 2))), Tensor(np.zeros((3, 8))))
    assert h.shape == (3, 8)
    assert [n for n, _ in cell.named_parameters()] == ["g.b_hh", "g.b_ih", "g.w_hh", "g.w_ih"]


# ------------------------------------------------------------------ Adam
def _scalar_param(v):
    return Param("w", Tensor(np.array([v])))


def test_adam_zero_grad_leaves_param():
    p = _scalar_param(1.5)
    adam_step([p], [np.zeros(1)])
    assert p.data[0] == 1.5 and p.step_count == 1


def test_adam_first_step_moves_by_lr():
    p = _scalar_param(1.0)
    adam_step([p], [np.ones(1)], lr=3e-4)
    assert abs(p.data[0] - (1.0 - 3e-4)) < 1e-9


def test_adam_constant_gradient_monotone():
    p = _scalar_param(1.0)
    values = []
    for _ in range(2):
        adam_step([p], [np.ones(1)])
        values.append(p.data[0])
    assert values[1] < values[0] < 1.0


def test_adam_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_step([_scalar_param(1.0)], [np.ones(2)])


@pytest.mark.parametrize("epoch,lr", [(0, 3e-4), (3, 1.5e-4), (7, 7.5e-5), (2, 3e-4)])
def test_steplr(epoch, lr):
    assert steplr(epoch) == pytest.approx(lr, rel=1e-12)


def test_steplr_negative():
    with pytest.raises(ValueError):
        steplr(-1)


_DETERMINISM_SCRIPT = """
import numpy as np, hashlib
from jointdrive.numerics import tensor as T
from jointdrive.numerics.nn import Linear
rng = np.random.default_rng(11)
x = T.Tensor(rng.normal(size=(4, 8)))
lin = Linear(8, 8, seed=3, prefix="l")
y = T.softmax(T.layer_norm(lin(x), lin.bias.tensor, lin.bias.tensor))
loss = y.sum() * 2.0 + T.tanh(lin(x)).sum()
loss.backward()
h = hashlib.sha256(y.data.tobytes() + lin.weight.tensor.grad.tobytes()).hexdigest()
print(h)
"""


def test_bit_identical_across_processes():
    outs = [subprocess.run([sys.executable, "-c", _DETERMINISM_SCRIPT], capture_output=True, text=True,
                           check=True).stdout for _ in range(2)]
    assert outs[0] == outs[1] and len(outs[0].strip()) == 64
