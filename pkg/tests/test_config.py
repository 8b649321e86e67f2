import numpy as np
import pytest
import yaml

from stabfilter import config as cfgmod
from stabfilter.config import ConfigError
from stabfilter.sim import Composite, DestabilizingFeedback
from conftest import double_integrator


def _raw(name="double_integrator", overrides=()):
    return cfgmod.load_config(cfgmod.bundled_config(name), list(overrides))


def test_bundled_configs_present_and_build():
    names = cfgmod.bundled_names()
    assert {"double_integrator", "warm_start", "adaptive_zeta", "safety_only", "identity", "vehicle"} <= set(names)
    for name in names:
        sc = cfgmod.build(_raw(name))
        assert sc.x0.shape == (sc.dyn.n,)
    with pytest.raises(ConfigError):
        cfgmod.bundled_config("nope")


def test_double_integrator_config_matches_fixture(di):
    dyn, box, cost, ti = di
    sc = cfgmod.build(_raw())
    np.testing.assert_allclose(sc.dyn.A, dyn.A)
    np.testing.assert_allclose(sc.dyn.B, dyn.B)
    np.testing.assert_allclose(sc.ingredients.P, ti.P)
    assert sc.cfg.N == 10 and sc.cfg.zeta_min == 0.5 and sc.T == 300
    assert isinstance(sc.policy, DestabilizingFeedback)


def test_overrides():
    path, value = cfgmod.parse_override("filter.zeta_min=0.3")
    assert path == ["filter", "zeta_min"] and value == 0.3
    assert cfgmod.parse_override("run.x0=[1, 2]")[1] == [1, 2]
    raw = _raw(overrides=["filter.zeta_min=0.3", "run.new.deep=1"])
    assert raw["filter"]["zeta_min"] == 0.3 and raw["run"]["new"]["deep"] == 1
    base = _raw()
    assert {k: v for k, v in raw["filter"].items() if k != "zeta_min"} == {k: v for k, v in base["filter"].items() if k != "zeta_min"}
    for bad in ("nokey", "=3", "filter.N.x=1"):
        with pytest.raises(ConfigError):
            _raw(overrides=[bad])


def test_number_coercion():
    # YAML 1.1 keeps 1e-3 as a string
    sc = cfgmod.build(_raw(overrides=["run.convergence_tol=1e-3", "filter.zeta_min=5e-1"]))
    assert sc.convergence_tol == 1e-3 and sc.cfg.zeta_min == 0.5
    with pytest.raises(ConfigError):
        cfgmod.build(_raw(overrides=["filter.N=2.5"]))
    with pytest.raises(ConfigError):
        cfgmod.build(_raw(overrides=["filter.zeta_min=abc"]))


@pytest.mark.parametrize("override", [
    "plant.B=[[1.0, 0.0]]",
    "cost.Q=[[1.0]]",
    "run.x0=[1.0]",
    "box.u_lo=[-1.0, -1.0]",
    "policy.gain=[[1.0]]",
    "policy.type=unknown",
    "plant.type=unknown",
    "reference.type=file",
    "terminal.type=file",
    "filter.mode=Other",
    "filter.zeta_min=2.0",
    "run.T=0",
    "filter.degenerate_terminal=true",
])
def test_invalid_fields_rejected_before_solving(override):
    with pytest.raises(ConfigError):
        cfgmod.build(_raw(overrides=[override]))


def test_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        cfgmod.load_config(tmp_path / "missing.yaml")
    p = tmp_path / "bad.yaml"
    p.write_text("plant: [unclosed")
    with pytest.raises(ConfigError):
        cfgmod.load_config(p)
    p.write_text("- a list\n")
    with pytest.raises(ConfigError):
        cfgmod.load_config(p)
    p.write_text(yaml.safe_dump({"plant": {}, "extra": 1}))
    with pytest.raises(ConfigError):
        cfgmod.load_config(p)


def test_relative_files_and_recorded_policy(tmp_path):
    raw = _raw()
    np.savetxt(tmp_path / "trace.csv", np.zeros((300, 1)), delimiter=",")
    raw["policy"] = {"type": "recorded", "file": "trace.csv"}
    raw.pop("_base")
    p = tmp_path / "c.yaml"
    cfgmod.dump_config(raw, p)
    sc = cfgmod.build(cfgmod.load_config(p))
    assert sc.policy.trace.shape == (300, 1)
    short = cfgmod.load_config(p, ["run.T=400"])
    with pytest.raises(ConfigError):
        cfgmod.build(short)


def test_ts_discretizes_continuous_matrices():
    raw = _raw(overrides=["plant.A=[[0.0, 1.0], [0.0, 0.0]]", "plant.B=[[0.0], [1.0]]", "plant.Ts=0.2"])
    sc = cfgmod.build(raw)
    np.testing.assert_allclose(sc.dyn.A, double_integrator(0.2).A, atol=1e-14)
    np.testing.assert_allclose(sc.dyn.B, double_integrator(0.2).B, atol=1e-14)


def test_vehicle_composite_policy():
    sc = cfgmod.build(_raw("vehicle"))
    assert isinstance(sc.policy, Composite)
    assert [s for s, _ in sc.policy.schedule] == [0, 250]
    np.testing.assert_allclose(sc.policy.schedule[1][1].gain, -sc.ingredients.K)


def test_dump_roundtrip(tmp_path):
    raw = _raw(overrides=["filter.zeta_min=0.3"])
    cfgmod.dump_config(raw, tmp_path / "eff.yaml")
    back = yaml.safe_load((tmp_path / "eff.yaml").read_text())
    assert back == {k: v for k, v in raw.items() if not k.startswith("_")}
