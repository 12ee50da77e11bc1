"""ADAM update behavior and the plateau annealer."""

import numpy as np
import pytest

from melflow.autodiff import Tensor, backward
from melflow.optim import Adam, PlateauAnnealer


def test_first_step_moves_opposite_gradient():
    w = Tensor(np.zeros(4), requires_grad=True)
    w.grad = np.array([1.0, -2.0, 0.5, -0.1])
    opt = Adam({"w": w}, lr=0.01, weight_decay=0.0)
    opt.step()
    # bias-corrected first step is ~ -lr * sign(g)
    np.testing.assert_allclose(w.data, -0.01 * np.sign(w.grad), rtol=1e-4)


def test_zero_grad_zero_decay_leaves_params_unchanged():
    w = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    w.grad = np.zeros(2)
    opt = Adam({"w": w}, lr=0.1, weight_decay=0.0)
    opt.step()
    np.testing.assert_array_equal(w.data, [1.0, -2.0])


def test_missing_grad_skipped():
    w = Tensor(np.array([3.0]), requires_grad=True)
    opt = Adam({"w": w}, lr=0.1, weight_decay=0.0)
    opt.step()
    np.testing.assert_array_equal(w.data, [3.0])


def test_scalar_descent_oracle():
    """100 steps on f(w) = (w - 3)^2 from w=0 with lr 0.1 lands near 3."""
    w = Tensor(np.array([0.0]), requires_grad=True)
    opt = Adam({"w": w}, lr=0.1, weight_decay=0.0)
    for _ in range(100):
        opt.zero_grad()
        loss = ((w - 3.0) * (w - 3.0)).sum()
        backward(loss)
        opt.step()
    assert abs(w.data[0] - 3.0) < 0.05


def test_nonfinite_gradient_names_parameter():
    w = Tensor(np.zeros(2), requires_grad=True)
    w.grad = np.array([np.nan, 0.0])
    opt = Adam({"bad_weight": w})
    with pytest.raises(FloatingPointError, match="bad_weight"):
        opt.step()


def test_decoupled_weight_decay_shrinks_without_grad_coupling():
    w = Tensor(np.array([10.0]), requires_grad=True)
    w.grad = np.zeros(1)
    opt = Adam({"w": w}, lr=0.1, weight_decay=0.01)
    opt.step()
    # only the decay path moves the parameter
    np.testing.assert_allclose(w.data, [10.0 * (1 - 0.1 * 0.01)])


def test_plateau_annealer_two_events_quarter_lr():
    w = Tensor(np.zeros(1), requires_grad=True)
    opt = Adam({"w": w}, lr=1e-4)
    ann = PlateauAnnealer(opt, factor=0.5, patience=2, floor=1e-9)
    ann.update(1.0)
    for _ in range(2):
        ann.update(1.0)
    for _ in range(2):
        ann.update(1.0)
    assert opt.lr == pytest.approx(0.25e-4)


def test_plateau_annealer_resets_on_improvement():
    w = Tensor(np.zeros(1), requires_grad=True)
    opt = Adam({"w": w}, lr=1e-3)
    ann = PlateauAnnealer(opt, factor=0.5, patience=3)
    ann.update(1.0)
    ann.update(1.0)
    ann.update(0.5)  # improvement resets the stale counter
    ann.update(0.5)
    ann.update(0.5)
    assert opt.lr == pytest.approx(1e-3)
