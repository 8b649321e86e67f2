import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from stabfilter.costs import StabilityCost, stability_cost_J, stage_cost, terminal_cost
from stabfilter.model import BoxConstraints, LinearDynamics
from stabfilter.terminal import (
    RiccatiError,
    TerminalIngredients,
    TerminalSetError,
    certify_assumption5,
    dare_residual,
    load_ingredients,
    save_ingredients,
    solve_riccati,
    synthesize,
    terminal_controller,
    terminal_rollout,
    terminal_set_level,
)

from conftest import double_integrator


def _bisect(f, lo, hi, iters=200):
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.sign(f(mid)) == np.sign(f(lo)):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_riccati_scalar_bisection_oracle():
    P, K = solve_riccati(LinearDynamics([[0.5]], [[1.0]]), [[1.0]], [[1.0]])
    p = _bisect(lambda p: 0.25 * p - 0.25 * p * p / (1 + p) + 1 - p, 0.5, 10.0)
    assert P[0, 0] == pytest.approx(p, rel=1e-12)
    assert K[0, 0] == pytest.approx(-0.5 * p / (1 + p), rel=1e-12)


def test_riccati_deadbeat_plant():
    Q = np.diag([2.0, 3.0])
    P, K = solve_riccati(LinearDynamics(np.zeros((2, 2)), np.eye(2)), Q, np.eye(2))
    np.testing.assert_allclose(P, Q, atol=1e-14)
    np.testing.assert_allclose(K, 0.0, atol=1e-14)


def test_riccati_double_integrator_residual_and_scipy():
    d = double_integrator()
    P, K = solve_riccati(d, np.eye(2), np.eye(1))
    assert np.linalg.norm(dare_residual(d.A, d.B, np.eye(2), np.eye(1), P)) <= 1e-8 * np.linalg.norm(P)
    # independent oracle
    np.testing.assert_allclose(P, scipy.linalg.solve_discrete_are(d.A, d.B, np.eye(2), np.eye(1)), rtol=1e-10)
    assert np.max(np.abs(np.linalg.eigvals(d.A + d.B @ K))) < 1


def test_riccati_unstabilizable():
    with pytest.raises(RiccatiError):
        solve_riccati(LinearDynamics([[2.0]], [[0.0]]), [[1.0]], [[1.0]])


def test_terminal_set_level_examples():
    box = BoxConstraints([-1.0, -1.0], [1.0, 1.0], [-10.0], [10.0])
    K0 = np.zeros((1, 2))
    assert terminal_set_level(np.eye(2), K0, box) == pytest.approx(1.0)
    assert terminal_set_level(np.eye(2), K0, box, 0.5) == pytest.approx(0.5)
    box1 = BoxConstraints([-1.0, -np.inf], [1.0, np.inf], [-10.0], [10.0])
    P = np.diag([4.0, 1.0])
    tau = terminal_set_level(P, K0, box1)
    assert tau == pytest.approx(4.0)
    # dense boundary sampling: max |x1| on {x'Px = tau} touches the bound
    th = np.linspace(0, 2 * np.pi, 100001)
    x1 = np.sqrt(tau / 4.0) * np.cos(th)
    assert np.max(np.abs(x1)) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(ValueError):
        terminal_set_level(P, K0, box1, 0.0)


def test_terminal_set_origin_not_interior():
    box = BoxConstraints([0.0], [1.0], [-1.0], [1.0])
    with pytest.raises(TerminalSetError):
        terminal_set_level(np.eye(1), np.zeros((1, 1)), box)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(0.1, 1.0))
def test_terminal_set_level_monotone_in_tightening(hi, shrink):
    P, K = solve_riccati(double_integrator(), np.eye(2), np.eye(1))
    loose = BoxConstraints([-hi, -2.0], [hi, 2.0], [-1.0], [1.0])
    tight = BoxConstraints([-hi * shrink, -2.0], [hi * shrink, 2.0], [-1.0], [1.0])
    assert terminal_set_level(P, K, tight) <= terminal_set_level(P, K, loose) * (1 + 1e-12)


def test_certify_lqr_passes_and_perturbed_fails(di):
    dyn, box, cost, ti = di
    cert = certify_assumption5(dyn, cost, ti, box)
    assert cert.passed, cert
    assert cert.clf_max_eig <= 1e-8 and cert.samples == 1000
    bad = TerminalIngredients(ti.P, 1.5 * ti.K, ti.tau)
    cert = certify_assumption5(dyn, cost, bad, box)
    assert not cert.passed
    assert {"clf", "invariance"} & set(cert.failures)
    assert all(line.startswith(("PASS", "FAIL")) for line in cert.lines())


def test_terminal_controller_examples():
    ti = TerminalIngredients(np.eye(2), [[1.0, 0.0]], 1.0)
    np.testing.assert_allclose(terminal_controller(ti, [2.0, 5.0]), [2.0])
    np.testing.assert_allclose(terminal_controller(ti, [0.0, 0.0]), [0.0])
    np.testing.assert_allclose(terminal_controller(ti, [0.3, 0.7], ([0.3, 0.7], [0.25])), [0.25])
    with pytest.raises(ValueError):
        terminal_controller(ti, [1.0])


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 2 * np.pi), st.floats(0.0, 1.0))
def test_terminal_decrease_and_rollout_bound(angle, radius):
    dyn = double_integrator()
    box = BoxConstraints([-5.0, -2.0], [5.0, 2.0], [-1.0], [1.0])
    ti = synthesize(dyn, np.eye(2), np.eye(1), box)
    cost = StabilityCost(np.eye(2), np.eye(1), ti.P)
    L = np.linalg.cholesky(ti.P)
    x = np.sqrt(ti.tau) * radius * np.linalg.solve(L.T, [np.cos(angle), np.sin(angle)])
    assert ti.contains(x, tol=1e-12)
    y = x.copy()
    for _ in range(20):
        u = ti.K @ y
        y_next = dyn.A @ y + dyn.B @ u
        assert terminal_cost(cost, y_next) + stage_cost(cost, y, u) <= terminal_cost(cost, y) + 1e-9
        y = y_next
    u_seq = terminal_rollout(ti, dyn, x, 10)
    assert stability_cost_J(cost, dyn, x, u_seq) <= terminal_cost(cost, x) + 1e-9


def test_ingredients_roundtrip(tmp_path, di):
    ti = di[3]
    p = tmp_path / "ti.csv"
    save_ingredients(ti, p)
    back = load_ingredients(p)
    np.testing.assert_array_equal(back.P, ti.P)
    np.testing.assert_array_equal(back.K, ti.K)
    assert back.tau == ti.tau


def test_degenerate_ingredients():
    ti = TerminalIngredients.degenerate_for(2, 1)
    assert ti.degenerate
    assert ti.contains([0.0, 0.0]) and not ti.contains([1e-3, 0.0])
