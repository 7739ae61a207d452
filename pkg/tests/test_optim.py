import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import adam_reference, radam_reference
from specdisc.optim import Lookahead, RAdam, lookahead_sync, make_optimizer, radam_step, rectification, sma_length
from specdisc.tensor import Tensor


def quadratic_run(steps=500, lr=1e-2, x0=1.0):
    x = Tensor(np.array([x0]), requires_grad=True)
    opt = make_optimizer([x], lr=lr)
    for _ in range(steps):
        x.grad = 2 * x.data
        opt.step()
    return float(x.data[0])


def test_quadratic_converges():
    """x^2 from x=1 at lr 1e-2: |x| < 1e-3 after 500 steps."""
    assert abs(quadratic_run()) < 1e-3


def test_quadratic_converges_in_500_lookahead_cycles():
    """Counting one slow-weight sync (k=5 inner steps) as a step."""
    assert abs(quadratic_run(steps=500 * 5)) < 1e-3


def test_radam_matches_reference():
    rng = np.random.default_rng(5)
    x0, target = rng.normal(size=6), rng.normal(size=6)

    def grad(x):
        return 2 * (x - target) + 0.3 * np.cos(3 * x)

    ref = radam_reference(x0, grad, 80, 1e-2)
    p = Tensor(x0.copy(), requires_grad=True)
    opt = RAdam([p], lr=1e-2)
    for expected in ref:
        p.grad = grad(p.data)
        opt.step()
        np.testing.assert_allclose(p.data, expected, rtol=1e-12, atol=1e-14)


def test_rho_at_step_one_uses_momentum_branch():
    assert sma_length(1, 0.999) <= 4
    assert rectification(1, 0.999) is None
    p, m, v = np.array([1.0]), np.zeros(1), np.zeros(1)
    radam_step(p, np.array([0.5]), m, v, t=1, lr=0.1)
    # momentum only: p -= lr * m / (1 - beta1) with m = 0.1 * g
    assert p[0] == 1.0 - 0.1 * (0.1 * 0.5) / (1 - 0.9)


def test_first_adaptive_step():
    t = next(t for t in range(1, 100) if sma_length(t, 0.999) > 4)
    assert t == 5
    assert sma_length(4, 0.999) <= 4 < sma_length(5, 0.999)
    assert rectification(t, 0.999) is not None


def test_matches_adam_when_rectification_disabled():
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=7)
    target = rng.normal(size=7)

    def grad(x):
        return 2 * (x - target) + np.sin(x)

    ref = adam_reference(x0, grad, 60, 3e-2)
    p = Tensor(x0.copy(), requires_grad=True)
    opt = RAdam([p], lr=3e-2, rectify=False, force_adaptive=True)
    for expected in ref:
        p.grad = grad(p.data)
        opt.step()
        np.testing.assert_allclose(p.data, expected, rtol=1e-12, atol=1e-12)


def test_zero_grad_leaves_parameters_unchanged():
    p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    opt = make_optimizer([p])
    for _ in range(12):
        p.grad = np.zeros(3)
        opt.step()
    np.testing.assert_array_equal(p.data, [1.0, -2.0, 3.0])


def test_non_finite_grad_raises():
    p = Tensor(np.zeros(3), requires_grad=True)
    opt = RAdam([p])
    for bad in (np.nan, np.inf):
        p.grad = np.array([0.0, bad, 0.0])
        with pytest.raises(FloatingPointError):
            opt.step()


def test_step_counter_and_second_moment():
    rng = np.random.default_rng(1)
    p = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    opt = RAdam([p])
    for i in range(1, 8):
        p.grad = rng.normal(size=(3, 4))
        opt.step()
        assert opt.t == i
        assert np.all(opt.v[0] >= 0)


def test_chunked_update_equals_single_block():
    """Large tensors are updated in blocks; the result must not depend on that."""
    rng = np.random.default_rng(2)
    n = 100_003
    p0, g = rng.normal(size=n), rng.normal(size=n)
    big = [p0.copy(), np.zeros(n), np.zeros(n)]
    radam_step(big[0], g, big[1], big[2], t=9, lr=1e-3)
    small = [p0[:10].copy(), np.zeros(10), np.zeros(10)]
    radam_step(small[0], g[:10], small[1], small[2], t=9, lr=1e-3)
    np.testing.assert_array_equal(big[0][:10], small[0])


def test_non_contiguous_parameter_updated_in_place():
    base = np.arange(12.0).reshape(3, 4)
    view = base.T
    m, v = np.zeros_like(view), np.zeros_like(view)
    radam_step(view, np.ones_like(view), m, v, t=1, lr=0.5)
    assert np.all(base != np.arange(12.0).reshape(3, 4))


class TestLookahead:
    def test_hand_case(self):
        fast, slow = [np.array([2.0])], [np.array([0.0])]
        lookahead_sync(fast, slow, 0.5)
        assert fast[0][0] == 1.0 and slow[0][0] == 1.0

    def test_alpha_one_keeps_fast_weights(self):
        fast, slow = [np.array([2.0, -3.0])], [np.array([0.5, 0.5])]
        lookahead_sync(fast, slow, 1.0)
        np.testing.assert_array_equal(fast[0], [2.0, -3.0])
        np.testing.assert_array_equal(slow[0], [2.0, -3.0])

    def run(self, alpha, steps, k=5):
        p = Tensor(np.array([1.0, -1.0]), requires_grad=True)
        opt = Lookahead(RAdam([p], lr=0.1), k=k, alpha=alpha)
        traj = []
        for i in range(steps):
            p.grad = np.array([1.0, 2.0]) * (i + 1)
            opt.step()
            traj.append(p.data.copy())
        return traj, opt

    def test_alpha_zero_resets_to_snapshot(self):
        traj, _ = self.run(0.0, 10)
        np.testing.assert_array_equal(traj[4], [1.0, -1.0])
        np.testing.assert_array_equal(traj[9], [1.0, -1.0])

    def test_sync_exactly_every_k_steps(self):
        k = 5
        p = Tensor(np.array([0.0]), requires_grad=True)
        opt = Lookahead(RAdam([p], lr=0.1), k=k, alpha=0.5)
        syncs = []
        for i in range(1, 16):
            p.grad = np.array([1.0])
            before = [s.copy() for s in opt.slow]
            opt.step()
            if not np.array_equal(before[0], opt.slow[0]):
                syncs.append(i)
        assert syncs == [5, 10, 15]

    def test_transparent_before_first_sync(self):
        traj, _ = self.run(0.5, 4)
        p = Tensor(np.array([1.0, -1.0]), requires_grad=True)
        bare = RAdam([p], lr=0.1)
        for i, expected in enumerate(traj):
            p.grad = np.array([1.0, 2.0]) * (i + 1)
            bare.step()
            assert p.data.tobytes() == expected.tobytes()

    def test_state_round_trip_is_bitwise(self):
        rng = np.random.default_rng(3)
        params = [Tensor(rng.normal(size=(2, 3)), requires_grad=True), Tensor(rng.normal(size=4), requires_grad=True)]
        opt = make_optimizer(params)
        for _ in range(7):
            for p in params:
                p.grad = rng.normal(size=p.shape)
            opt.step()
        state = opt.state_dict()
        clones = [Tensor(p.data.copy(), requires_grad=True) for p in params]
        other = make_optimizer(clones)
        other.load_state_dict(state)
        for _ in range(6):
            grads = [rng.normal(size=p.shape) for p in params]
            for a, b, g in zip(params, clones, grads):
                a.grad, b.grad = g, g.copy()
            opt.step()
            other.step()
        for a, b in zip(params, clones):
            assert a.data.tobytes() == b.data.tobytes()
        assert other.state_dict()["t"] == opt.state_dict()["t"] == 13

    def test_invalid_k(self):
        with pytest.raises(ValueError):
            Lookahead(RAdam([]), k=0)


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0, 1))
def test_sync_is_convex_combination(theta, phi, alpha):
    fast, slow = [np.array([theta])], [np.array([phi])]
    lookahead_sync(fast, slow, alpha)
    assert fast[0][0] == slow[0][0]
    assert min(theta, phi) - 1e-12 <= fast[0][0] <= max(theta, phi) + 1e-12
