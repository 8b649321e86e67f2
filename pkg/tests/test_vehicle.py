import numpy as np
import pytest
import scipy.linalg

from stabfilter import config as cfgmod
from stabfilter.condensed import Prediction
from stabfilter.filter import assemble_problem
from stabfilter.model import validate_reference
from stabfilter.vehicle import (
    X0,
    SingleTrackParams,
    build_scenario,
    discretize_zoh,
    lane_change_reference,
    linearize_single_track,
    quintic_blend,
    single_track_rhs,
    vehicle_box,
)

P = SingleTrackParams()


def _fd_jacobians(p, h=1e-5):
    x0, u0 = p.x_lin, np.zeros(2)
    A = np.zeros((6, 6))
    B = np.zeros((6, 2))
    for i in range(6):
        e = np.zeros(6)
        e[i] = h
        A[:, i] = (single_track_rhs(p, x0 + e, u0) - single_track_rhs(p, x0 - e, u0)) / (2 * h)
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        B[:, j] = (single_track_rhs(p, x0, u0 + e) - single_track_rhs(p, x0, u0 - e)) / (2 * h)
    return A, B


def _taylor_expm(M, terms=30):
    out, term = np.eye(M.shape[0]), np.eye(M.shape[0])
    for k in range(1, terms):
        term = term @ M / k
        out = out + term
    return out


def test_linearization_matches_finite_differences():
    A, B = linearize_single_track(P)
    A_fd, B_fd = _fd_jacobians(P)
    assert np.abs(A - A_fd).max() <= 1e-6
    assert np.abs(B - B_fd).max() <= 1e-6
    assert A[1, 2] == pytest.approx(10.0)


def test_params_validation():
    with pytest.raises(ValueError):
        SingleTrackParams(mass=0.0)
    with pytest.raises(ValueError):
        SingleTrackParams(v_lin=0.0)


def test_zoh_closed_forms():
    d = discretize_zoh(np.zeros((2, 2)), [[1.0], [2.0]], 0.1)
    np.testing.assert_allclose(d.A, np.eye(2), atol=1e-15)
    np.testing.assert_allclose(d.B, [[0.1], [0.2]], atol=1e-15)
    a, b, Ts = -1.5, 2.0, 0.3
    d = discretize_zoh([[a]], [[b]], Ts)
    assert d.A[0, 0] == pytest.approx(np.exp(a * Ts), rel=1e-14)
    assert d.B[0, 0] == pytest.approx((np.exp(a * Ts) - 1) / a * b, rel=1e-13)
    with pytest.raises(ValueError):
        discretize_zoh([[a]], [[b]], 0.0)


def test_zoh_vehicle_against_taylor_oracle():
    A_c, B_c = linearize_single_track(P)
    Ts = 0.02
    d = discretize_zoh(A_c, B_c, Ts)
    aug = np.zeros((8, 8))
    aug[:6, :6] = A_c
    aug[:6, 6:] = B_c
    E = np.linalg.matrix_power(_taylor_expm(aug * Ts / 16), 16)
    assert np.abs(E[:6, :6] - d.A).max() <= 1e-12 * max(1.0, np.abs(d.A).max())
    assert np.abs(E[:6, 6:] - d.B).max() <= 1e-12 * max(1.0, np.abs(d.B).max())
    # inverse check: exp(A Ts) exp(-A Ts) = I
    assert np.abs(d.A @ scipy.linalg.expm(-A_c * Ts) - np.eye(6)).max() <= 1e-12


def test_quintic_blend():
    assert quintic_blend(0.0, 0.0, 1.0, 2.0, 4.0) == 2.0
    assert quintic_blend(1.0, 0.0, 1.0, 2.0, 4.0) == 4.0
    assert quintic_blend(0.5, 0.0, 1.0, 2.0, 4.0) == pytest.approx(3.0)


@pytest.fixture(scope="module")
def scenario():
    return build_scenario()


def test_reference_is_consistent_and_interior(scenario):
    rep = validate_reference(scenario.dyn, scenario.reference, vehicle_box())
    assert rep.ok, str(rep)
    assert scenario.reference.tightening == 1.05
    assert len(scenario.reference) >= scenario.T + scenario.cfg.N + 1
    # the maneuver is already under way at k = 0, so x(0) starts slightly off the reference
    gap = np.linalg.norm(X0 - scenario.reference.x[0])
    assert 0 < gap < 0.1


def test_reference_rejects_bad_timing():
    d = discretize_zoh(*linearize_single_track(P), 0.02)
    ref = lane_change_reference(d, 200, changes=[(0.0, 0.3, 0.9)])
    assert not validate_reference(d, ref, vehicle_box()).ok


def test_scenario_constants(scenario):
    cfg = scenario.cfg
    assert (cfg.N, cfg.zeta_min, cfg.gamma, cfg.zeta_policy) == (30, 0.1, 1.0, "adaptive")
    np.testing.assert_array_equal(scenario.x0, [0, -0.5, 0, 0, 0, 0])
    np.testing.assert_array_equal(scenario.cost.Q, np.eye(6))
    np.testing.assert_array_equal(scenario.cost.R, np.eye(2))
    pred = Prediction(scenario.dyn, cfg.N)
    r = scenario.make_filter().window(1)
    p, _ = assemble_problem(cfg, pred, scenario.cost, scenario.ingredients, scenario.box, scenario.x0,
                            np.zeros(2), r_window=r, V_prev=1.0, ell_prev=0.1)
    assert p.d == 61


def test_bundled_config_builds_same_scenario(scenario):
    sc = cfgmod.build(cfgmod.load_config(cfgmod.bundled_config("vehicle")))
    np.testing.assert_array_equal(sc.dyn.A, scenario.dyn.A)
    np.testing.assert_array_equal(sc.reference.x, scenario.reference.x)
    np.testing.assert_array_equal(sc.ingredients.P, scenario.ingredients.P)
    assert sc.ingredients.tau == scenario.ingredients.tau
    assert sc.cfg == scenario.cfg and sc.T == scenario.T


def test_short_run_two_phases():
    sc = build_scenario(T=60, onset=30)
    log = sc.run()
    assert sc.verify(log).passed
    assert log.certified[:30].mean() >= 0.9
    assert not log.certified[30:].any()
