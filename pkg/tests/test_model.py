import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stabfilter.model import (
    BoxConstraints,
    LinearDynamics,
    ReferenceTrajectory,
    load_reference_csv,
    reference_window,
    rollout_open_loop,
    save_reference_csv,
    step,
    validate_reference,
)

from conftest import double_integrator

finite = st.floats(-10, 10, allow_nan=False)


def test_dynamics_validation():
    with pytest.raises(ValueError):
        LinearDynamics(np.eye(2), np.ones((3, 1)))
    with pytest.raises(ValueError):
        LinearDynamics(np.ones((2, 3)), np.ones((2, 1)))
    with pytest.raises(ValueError):
        LinearDynamics([[np.nan]], [[1.0]])
    d = LinearDynamics([[1.0]], [1.0])
    assert (d.n, d.m) == (1, 1)


def test_box_validation():
    with pytest.raises(ValueError):
        BoxConstraints([0.5], [1.0], [-1.0], [1.0])  # origin outside X
    with pytest.raises(ValueError):
        BoxConstraints([-1.0], [1.0], [0.0], [0.0])  # empty interior of U
    b = BoxConstraints([-1.0], [np.inf], [-1.0], [1.0])
    assert b.contains_state([100.0]) and not b.contains_state([-2.0])
    assert b.state_violation([-1.5]) == pytest.approx(0.5)


def test_step_identity_and_equilibrium():
    d = LinearDynamics(np.eye(2), np.zeros((2, 1)))
    np.testing.assert_array_equal(step(d, [1.0, 2.0], [7.0]), [1.0, 2.0])
    np.testing.assert_array_equal(step(double_integrator(), [0.0, 0.0], [0.0]), [0.0, 0.0])


def test_step_double_integrator_oracle():
    Ts = 0.1
    d = double_integrator(Ts)
    x, u = [0.0, 1.0], [1.0]
    # elementwise multiply-accumulate
    want = [sum(d.A[i, j] * x[j] for j in range(2)) + d.B[i, 0] * u[0] for i in range(2)]
    got = step(d, x, u)
    np.testing.assert_allclose(got, want, atol=1e-15)
    np.testing.assert_allclose(got, [0.105, 1.1], atol=1e-15)
    with pytest.raises(ValueError):
        step(d, [0.0], [1.0])


def test_rollout_examples():
    d = LinearDynamics(np.eye(2), np.zeros((2, 1)))
    xs = rollout_open_loop(d, [1.0, -1.0], np.zeros((3, 1)))
    assert xs.shape == (4, 2) and np.all(xs == [1.0, -1.0])
    dd = double_integrator(0.1)
    xs = rollout_open_loop(dd, [0, 0], [[1.0], [1.0]])
    # repeated step oracle; x_2 = (0.005 + 0.1 * 0.1 + 0.005, 0.2)
    oracle = [np.zeros(2)]
    for _ in range(2):
        oracle.append(step(dd, oracle[-1], [1.0]))
    np.testing.assert_allclose(xs, oracle, atol=1e-15)
    np.testing.assert_allclose(xs, [[0, 0], [0.005, 0.1], [0.02, 0.2]], atol=1e-15)
    assert not rollout_open_loop(dd, [0, 0], np.zeros((4, 1))).any()
    with pytest.raises(ValueError):
        rollout_open_loop(dd, [0, 0], np.zeros((0, 1)))


@settings(max_examples=50, deadline=None)
@given(arrays(float, 2, elements=finite), arrays(float, 2, elements=finite),
       arrays(float, (5, 1), elements=finite), arrays(float, (5, 1), elements=finite))
def test_rollout_superposition(x0, x1, u0, u1):
    d = double_integrator()
    lhs = rollout_open_loop(d, x0, u0) + rollout_open_loop(d, x1, u1) - rollout_open_loop(d, [0, 0], np.zeros((5, 1)))
    np.testing.assert_allclose(lhs, rollout_open_loop(d, x0 + x1, u0 + u1), atol=1e-9)
    assert rollout_open_loop(d, x0, u0).shape[0] == 6


def test_reference_window():
    z = ReferenceTrajectory.zeros(6, 2, 1)
    w = reference_window(z, 3, 2)
    assert w.x.shape == (3, 2) and not w.x.any() and not w.u.any()
    full = reference_window(z, 0, z.k_max)
    assert full.x.shape[0] == len(z)
    lin = ReferenceTrajectory(np.arange(20.0).reshape(10, 2), np.arange(10.0).reshape(10, 1))
    w = reference_window(lin, 5, 3)
    np.testing.assert_array_equal(w.x, lin.x[5:9])
    np.testing.assert_array_equal(w.u[:, 0], [5, 6, 7, 8])
    with pytest.raises(IndexError):
        reference_window(lin, 7, 3)


def _consistent_reference(T=8):
    d = double_integrator()
    u = 0.1 * np.sin(np.arange(T))[:, None]
    x = rollout_open_loop(d, [0.3, -0.2], u[:-1])
    return d, ReferenceTrajectory(x, u)


def test_validate_reference():
    d = double_integrator()
    box = BoxConstraints([-1.0, -1.0], [1.0, 1.0], [-1.0], [1.0])
    assert validate_reference(d, ReferenceTrajectory.zeros(5, 2, 1), box).ok

    d, ref = _consistent_reference()
    assert validate_reference(d, ref, box).ok
    x = ref.x.copy()
    x[3, 0] += 1e-3
    rep = validate_reference(d, ReferenceTrajectory(x, ref.u), box)
    # the perturbed point breaks the link into 3 and also the next link out of it
    assert 3 in rep.dynamics and rep.dynamics[0] == 3

    # sigma * x^r = x_hi + eps
    x = np.zeros((3, 2))
    x[1, 0] = (1.0 + 1e-12) / 1.05
    rep = validate_reference(LinearDynamics(np.eye(2), np.zeros((2, 1))), ReferenceTrajectory(x, np.zeros((3, 1))), box)
    assert rep.state_bounds == [1]


def test_reference_csv_roundtrip(tmp_path):
    _, ref = _consistent_reference()
    p = tmp_path / "ref.csv"
    save_reference_csv(ref, p)
    assert p.read_text().splitlines()[0] == "k,x1,x2,u1"
    back = load_reference_csv(p)
    np.testing.assert_array_equal(back.x, ref.x)
    np.testing.assert_array_equal(back.u, ref.u)
