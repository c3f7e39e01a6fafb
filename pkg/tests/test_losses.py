import math

import numpy as np
import pytest

from ducos.autodiff import Parameter, Tensor, backward
from ducos.fusion import FusionTrace
from ducos.losses import lagrangian_total, loss_cf, loss_gr, loss_rec


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# ----------------------------------------------------------------------- L_rec
def test_rec_examples():
    z = np.random.default_rng(0).uniform(1, 5, size=(1, 4, 4))
    assert loss_rec(t64(z), z).data == 0
    assert abs(loss_rec(t64(z + 0.3), z).data - 0.3) < 1e-12
    y = z.copy()
    y[..., :2] += 2
    assert abs(loss_rec(t64(y), z).data - 1) < 1e-12


def test_rec_masks_invalid_pixels():
    z = np.array([[[1.0, 0.0], [2.0, 0.0]]])
    y = t64([[[1.5, 9.0], [2.5, -4.0]]], grad=True)
    loss = loss_rec(y, z)
    assert abs(loss.data - 0.5) < 1e-12
    backward(loss)
    np.testing.assert_array_equal(y.grad[..., 1], 0)


def test_rec_needs_valid_pixels():
    with pytest.raises(ValueError):
        loss_rec(t64(np.ones((1, 2, 2))), np.zeros((1, 2, 2)))


# ------------------------------------------------------------------------ L_cf
def trace(h_d, h_f):
    return FusionTrace(h_d=t64(h_d), h_f=t64(h_f))


def test_cf_examples():
    h = np.random.default_rng(0).uniform(size=(1, 1, 3, 3))
    assert loss_cf([trace(h, h)] * 4).data == 0
    assert abs(loss_cf([trace(h + 0.1, h)] * 4).data - 0.01) < 1e-12
    probe = trace([[0.0, 1.0], [0.0, 1.0]], [[0.0, 0.0], [1.0, 1.0]])
    assert abs(loss_cf([probe]).data - 0.5) < 1e-15


def test_cf_averages_stages():
    z = np.zeros((2, 2))
    traces = [trace(z + d, z) for d in (0.0, 0.1, 0.2, 0.3)]
    assert abs(loss_cf(traces).data - (0 + 0.01 + 0.04 + 0.09) / 4) < 1e-12


def test_cf_missing_trace():
    with pytest.raises(ValueError):
        loss_cf([])
    with pytest.raises(ValueError):
        loss_cf([FusionTrace()])


# ------------------------------------------------------------------------ L_gr
def gr_strip_loop(y_row, r_row, eps=1e-8):
    def norm(v):
        lo, hi = min(v), max(v)
        return [(x - lo) / (hi - lo + eps) for x in v]

    def grad(v):
        n = len(v)
        out = []
        for j in range(n):
            if j == 0:
                d = v[1] - v[0]
            elif j == n - 1:
                d = v[n - 1] - v[n - 2]
            else:
                d = (v[j + 1] - v[j - 1]) / 2
            out.append(math.sqrt(d * d + eps * eps))
        return out

    gy, gr = grad(norm(y_row)), grad(norm(r_row))
    return sum(abs(a - b) for a, b in zip(gy, gr)) / len(gy)


def test_gr_step_vs_ramp_matches_loop():
    step = [1.0] * 4 + [3.0] * 4
    ramp = [0.1 * j for j in range(8)]
    # a strip two rows tall: identical rows make the vertical derivative exactly 0
    y = np.array([[step, step]])
    r = np.array([[ramp, ramp]])
    got = loss_gr(t64(y), r).data
    assert abs(got - gr_strip_loop(step, ramp)) < 1e-6


def test_gr_affine_invariance_and_constants():
    rng = np.random.default_rng(0)
    y = rng.uniform(1, 5, size=(1, 9, 9))
    assert loss_gr(t64(y), 3.0 * y - 2.0).data < 1e-6
    assert loss_gr(t64(np.full((1, 5, 5), 2.0)), np.full((1, 5, 5), 7.0)).data == 0


def test_gr_normalizes_each_sample_alone():
    rng = np.random.default_rng(1)
    y = rng.uniform(size=(2, 1, 6, 6))
    rel = y.copy()
    rel[1] = rel[1] * 10 + 5
    assert loss_gr(t64(y), rel).data < 1e-6


def test_gr_shape_mismatch():
    with pytest.raises(ValueError):
        loss_gr(t64(np.ones((1, 4, 4))), np.ones((1, 4, 5)))


def test_losses_nonnegative():
    rng = np.random.default_rng(2)
    for _ in range(20):
        y, z, r = rng.normal(size=(3, 1, 6, 6))
        assert loss_rec(t64(y), np.abs(z) + 0.1).data >= 0
        assert loss_gr(t64(y), r).data >= 0


# ------------------------------------------------------------------ Lagrangian
def test_lagrangian_examples():
    one, half, fifth = t64(1.0), t64(0.5), t64(0.2)
    assert lagrangian_total(one, half, fifth, 0.0, 0.0).data == 1.0
    assert abs(lagrangian_total(one, half, fifth, 0.01, 0.05).data - 1.015) < 1e-15
    a = lagrangian_total(one, half, fifth, 0.01, 0.0).data - 1.0
    b = lagrangian_total(one, half, fifth, 0.02, 0.0).data - 1.0
    assert abs(b - 2 * a) < 1e-15


def test_lagrangian_rejects_negative_multipliers():
    with pytest.raises(ValueError):
        lagrangian_total(t64(1.0), t64(1.0), t64(1.0), -0.1, 0.0)
    with pytest.raises(ValueError):
        lagrangian_total(t64(1.0), t64(1.0), t64(1.0), 0.0, -1e-9)


def test_lagrangian_gradient_is_weighted_sum():
    rng = np.random.default_rng(3)
    w0 = rng.normal(size=(1, 5, 5))
    z = rng.uniform(1, 2, size=(1, 5, 5))
    rel = rng.uniform(size=(1, 5, 5))
    lam, mu = 0.3, 0.7

    def grad_of(fn):
        w = Parameter(w0.copy())
        backward(fn(w))
        return w.grad

    g_rec = grad_of(lambda w: loss_rec(w, z))
    g_cf = grad_of(lambda w: ((w - 1.0) * (w - 1.0)).mean())
    g_gr = grad_of(lambda w: loss_gr(w, rel))
    g_all = grad_of(lambda w: lagrangian_total(loss_rec(w, z), ((w - 1.0) * (w - 1.0)).mean(), loss_gr(w, rel), lam, mu))
    np.testing.assert_allclose(g_all, g_rec + lam * g_cf + mu * g_gr, atol=1e-6)
