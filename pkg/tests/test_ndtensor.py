import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import gradcases
from stgan import ndtensor as nd
from stgan.ndtensor import Tensor


@pytest.mark.parametrize("name", sorted(gradcases.OP_CASES))
def test_op_gradients_match_finite_differences(name):
    assert gradcases.worst_error(gradcases.OP_CASES[name]) < gradcases.TOL


def test_forward_examples():
    assert nd.sigmoid(Tensor(0.0)).item() == 0.5
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(nd.matmul(a, Tensor(np.eye(2))).data, a.data)
    np.testing.assert_allclose(nd.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3)


def test_backward_examples():
    x = Tensor(3.0, requires_grad=True)
    nd.backward(x * x)
    assert x.grad == pytest.approx(6.0)
    x = Tensor(0.0, requires_grad=True)
    nd.backward(nd.sigmoid(x))
    assert x.grad == pytest.approx(0.25)


def test_double_backward_of_cube():
    x = Tensor(2.0, requires_grad=True)
    (g,) = nd.grad(x ** 3, [x], create_graph=True)
    assert g.item() == pytest.approx(12.0)
    (gg,) = nd.grad(g, [x])
    assert gg.item() == pytest.approx(12.0)


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        nd.backward(x * 2.0)


def test_backward_overwrites_unless_accumulating():
    x = Tensor(1.0, requires_grad=True)
    nd.backward(x * 2.0)
    nd.backward(x * 2.0)
    assert x.grad == 2.0
    nd.backward(x * 2.0, accumulate=True)
    assert x.grad == 4.0


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(4,\)"):
        nd.add(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))


def test_log_is_floored():
    assert math.isfinite(nd.log(Tensor(0.0)).item())


def test_sigmoid_extreme_inputs_stay_finite():
    out = nd.sigmoid(Tensor([-800.0, 800.0])).data
    np.testing.assert_array_equal(out, [0.0, 1.0])
    assert np.all(np.isfinite(nd.log_sigmoid(Tensor([-800.0, 800.0])).data))


def test_graph_nodes_follow_their_inputs():
    a = Tensor(np.ones(2), requires_grad=True)
    out = nd.tsum(nd.tanh(a * 2.0) + a)
    nodes = nd.trace(out)
    position = {n.output: k for k, n in enumerate(nodes)}
    for n in nodes:
        # constants without grad are not recorded as nodes
        assert all(position[i] < position[n.output] for i in n.inputs if i in position)


def test_no_grad_records_nothing():
    a = Tensor(np.ones(2), requires_grad=True)
    with nd.no_grad():
        out = a * 2.0
    assert not out.requires_grad


# -- Adam ----------------------------------------------------------------------

def test_adam_first_step_is_minus_lr_sign():
    p = Tensor(0.0, requires_grad=True)
    p.grad = np.array(0.5)
    nd.Adam([p], lr=1e-3).step()
    assert p.item() == pytest.approx(-1e-3, rel=1e-6)


def test_adam_two_steps_constant_grad():
    # hand-unrolled: m_hat = v_hat = 1 each step, so each step moves lr * 1/(1 + eps)
    p = Tensor(0.0, requires_grad=True)
    opt = nd.Adam([p], lr=0.1)
    for _ in range(2):
        p.grad = np.array(1.0)
        opt.step()
    assert p.item() == pytest.approx(-0.2, rel=1e-7)


def test_adam_zero_grad_is_identity():
    p = Tensor([1.0, -2.0], requires_grad=True)
    opt = nd.Adam([p], lr=0.5)
    for _ in range(5):
        p.grad = np.zeros(2)
        opt.step()
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_rejects_missing_grad():
    p = Tensor(0.0, requires_grad=True)
    with pytest.raises(ValueError):
        nd.Adam([p]).step()


def test_adam_state_counts_steps():
    p = Tensor(0.0, requires_grad=True)
    opt = nd.Adam([p])
    for t in range(1, 4):
        p.grad = np.array(1.0)
        opt.step()
        assert opt.state.t == t


# -- clipping ------------------------------------------------------------------

def _grads(*values):
    out = []
    for v in values:
        t = Tensor(np.zeros_like(np.asarray(v, dtype=float)), requires_grad=True)
        t.grad = np.asarray(v, dtype=float)
        out.append(t)
    return out


def test_clip_examples():
    ps = _grads([3.0, 4.0])
    assert nd.clip_global_norm(ps, 5.0) == pytest.approx(5.0)
    np.testing.assert_allclose(ps[0].grad, [3.0, 4.0])
    ps = _grads([3.0, 4.0])
    assert nd.clip_global_norm(ps, 2.5) == pytest.approx(5.0)
    np.testing.assert_allclose(ps[0].grad, [1.5, 2.0])
    ps = _grads([0.0, 0.0])
    assert nd.clip_global_norm(ps, 1.0) == 0.0


def test_clip_rejects_nan():
    with pytest.raises(FloatingPointError):
        nd.clip_global_norm(_grads([np.nan, 1.0]), 1.0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 6), elements=st.floats(-100, 100)),
       st.floats(0.01, 50))
def test_clip_is_idempotent(g, bound):
    once = _grads(g)
    nd.clip_global_norm(once, bound)
    twice = _grads(once[0].grad)
    nd.clip_global_norm(twice, bound)
    np.testing.assert_allclose(twice[0].grad, once[0].grad, rtol=1e-12, atol=1e-300)
    assert np.linalg.norm(once[0].grad) <= bound * (1 + 1e-12)


# -- properties ----------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_forward_and_backward_are_deterministic(seed):
    def run():
        rng = np.random.default_rng(seed)
        w = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        x = Tensor(rng.standard_normal((2, 4)))
        loss = nd.tsum(nd.tanh(nd.linear(x, w)) ** 2)
        nd.backward(loss)
        return loss.item(), w.grad.copy()

    (l1, g1), (l2, g2) = run(), run()
    assert l1 == l2
    assert np.array_equal(g1, g2)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (2, 5), elements=st.floats(-30, 30)))
def test_softmax_rows_sum_to_one(x):
    np.testing.assert_allclose(nd.softmax(Tensor(x)).data.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(nd.log_softmax(Tensor(x)).data <= 0)


def test_finite_difference_check_on_linear_loss_is_exact():
    rng = np.random.default_rng(0)
    w = Tensor(rng.standard_normal(4), requires_grad=True)
    x = rng.standard_normal(4)
    report = nd.finite_difference_check(lambda: nd.tsum(w * x), [w])
    assert report.max_rel_error < 1e-9


def test_finite_difference_check_on_softmax_cross_entropy():
    rng = np.random.default_rng(3)
    w = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
    x = rng.standard_normal((4, 3))
    y = rng.integers(0, 5, size=4)

    def loss():
        logp = nd.log_softmax(nd.linear(Tensor(x), w))
        return -nd.tsum(logp[np.arange(4), y])

    assert nd.finite_difference_check(loss, [w]).max_rel_error < 1e-4
