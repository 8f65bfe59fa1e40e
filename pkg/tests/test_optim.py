import numpy as np
import pytest

from pxiq.autograd import ShapeError, Tensor
from pxiq.optim import AdamState, adam_step


def test_defaults_match_training_recipe():
    state = AdamState()
    assert state.beta1 == 0.9 and state.beta2 == 0.999


def test_first_step_magnitude_is_learning_rate():
    # Closed form: from zero state with constant gradient g, the
    # bias-corrected update is lr * g / (|g| + eps) ~= lr * sign(g).
    p = Tensor(np.zeros(4), requires_grad=True)
    g = np.array([0.5, -2.0, 1e-3, 3.0], dtype=np.float32)
    state = AdamState()
    adam_step([p], [g], state, lr=0.01)
    expected = -0.01 * g / (np.abs(g) + state.eps)
    np.testing.assert_allclose(p.data, expected, rtol=1e-6)
    assert state.step == 1


def test_two_steps_match_reference_recurrence():
    rng = np.random.default_rng(0)
    p = Tensor(rng.normal(size=3).astype(np.float64), requires_grad=True)
    start = p.data.copy()
    g1 = rng.normal(size=3)
    g2 = rng.normal(size=3)
    state = AdamState()
    adam_step([p], [g1], state, lr=0.1)
    adam_step([p], [g2], state, lr=0.1)

    # Independent reference implementation of the update recurrence.
    m = np.zeros(3)
    v = np.zeros(3)
    x = start.copy()
    for t, g in enumerate([g1, g2], start=1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        mh = m / (1 - 0.9 ** t)
        vh = v / (1 - 0.999 ** t)
        x = x - 0.1 * mh / (np.sqrt(vh) + 1e-8)
    np.testing.assert_allclose(p.data, x, rtol=1e-12)


def test_zero_gradient_leaves_parameters_but_advances_counter():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    state = AdamState()
    adam_step([p], [np.zeros(2, dtype=np.float32)], state, lr=0.5)
    np.testing.assert_array_equal(p.data, [1.0, 2.0])
    adam_step([p], [None], state, lr=0.5)
    np.testing.assert_array_equal(p.data, [1.0, 2.0])
    assert state.step == 2


def test_uses_tensor_grad_when_grads_omitted():
    p = Tensor(np.array([1.0]), requires_grad=True)
    p.grad = np.array([2.0], dtype=np.float32)
    adam_step([p], None, AdamState(), lr=0.1)
    assert p.data[0] < 1.0


def test_shape_mismatch_is_an_error():
    p = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(ShapeError):
        adam_step([p], [np.zeros(4, dtype=np.float32)], AdamState(), lr=0.1)
    state = AdamState()
    adam_step([p], [np.zeros(3, dtype=np.float32)], state, lr=0.1)
    q = Tensor(np.zeros(5), requires_grad=True)
    with pytest.raises(ShapeError):
        adam_step([q], [np.zeros(5, dtype=np.float32)], state, lr=0.1)
