import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graspnet.errors import InvalidShapeError
from graspnet.model import GraspNetParams, init_params
from graspnet.optim import AdamState, adam_step
from oracles import adam_ref


def _one(theta, g, **kw):
    params = {"w": np.array([theta], np.float64)}
    state = AdamState.for_params(params, **kw)
    return adam_step(params, {"w": np.array([g], np.float64)}, state)


def test_first_step_hand_value():
    new, state = _one(0.0, 1.0, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8)
    # m_hat = v_hat = 1, so theta = -lr / (1 + eps)
    expected = -0.001 / (1 + 1e-8)
    assert abs(new["w"][0] - expected) <= 1e-10
    assert abs(new["w"][0] - (-0.000999999995)) <= 1e-10
    assert state.t == 1


def test_zero_gradient_leaves_params():
    p = init_params(0)
    new, state = adam_step(p, {k: np.zeros_like(v) for k, v in p.items()}, AdamState.for_params(p))
    assert new.equals(p) and state.t == 1


def test_beta1_zero_disables_momentum():
    params = {"w": np.zeros(3)}
    state = AdamState.for_params(params, beta1=0.0)
    for g in ([1.0, -2.0, 0.5], [0.3, 0.3, -4.0], [-1.0, 0.0, 2.0]):
        g = np.array(g)
        params, state = adam_step(params, {"w": g}, state)
        np.testing.assert_array_equal(state.m["w"], g)


@settings(max_examples=50, deadline=None)
@given(grads=st.lists(st.floats(-10, 10), min_size=1, max_size=6),
       b1=st.sampled_from([0.0, 0.5, 0.9]), lr=st.sampled_from([1e-3, 1e-2]))
def test_matches_textbook_reference(grads, b1, lr):
    params = {"w": np.array([0.25])}
    state = AdamState.for_params(params, lr=lr, beta1=b1)
    theta, m, v, t = 0.25, 0.0, 0.0, 0
    for g in grads:
        params, state = adam_step(params, {"w": np.array([g])}, state)
        theta, m, v, t = adam_ref(theta, g, m, v, t, lr, b1, 0.999, 1e-8)
        assert math.isclose(params["w"][0], theta, rel_tol=1e-12, abs_tol=1e-15)
    assert state.t == t == len(grads)


def test_step_counter_increments_and_inputs_untouched():
    p = init_params(1)
    g = {k: np.ones_like(v) for k, v in p.items()}
    s0 = AdamState.for_params(p)
    p1, s1 = adam_step(p, g, s0)
    p2, s2 = adam_step(p1, g, s1)
    assert (s0.t, s1.t, s2.t) == (0, 1, 2)
    assert not any(m.any() for m in s0.m.values())
    assert isinstance(p2, GraspNetParams) and p2["conv1.weight"].dtype == np.float32


def test_bit_deterministic():
    p = init_params(2)
    rng = np.random.default_rng(0)
    g = {k: rng.normal(size=v.shape).astype(np.float32) for k, v in p.items()}
    a, _ = adam_step(p, g, AdamState.for_params(p))
    b, _ = adam_step(p, g, AdamState.for_params(p))
    assert a.equals(b)


def test_shape_mismatch():
    params = {"w": np.zeros(3)}
    with pytest.raises(InvalidShapeError):
        adam_step(params, {"w": np.zeros(4)}, AdamState.for_params(params))
    with pytest.raises(InvalidShapeError):
        adam_step(params, {"x": np.zeros(3)}, AdamState.for_params(params))
