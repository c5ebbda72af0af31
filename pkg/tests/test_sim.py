from dataclasses import replace

import numpy as np
import pytest

from conftest import cached_run
from guardforce import traceio
from guardforce.scenarios import (SWEEP_GRIDS, EnvironmentSpec, ReferenceSpec, Scenario, apply_overrides,
                                  builtin_scenarios, dump_config, get_scenario, load_config)
from guardforce.sim import Trace, compute_metrics, run_scenario


def synthetic(force, F_max=5.0, dt=0.02):
    n = len(force)
    z = np.zeros(n)
    zn = np.zeros((n, 6))
    b = np.zeros(n, dtype=bool)
    return Trace(t=np.arange(n) * dt, q=np.zeros((n, 6)), qd=np.zeros((n, 6)), qd_nom=np.zeros((n, 6)),
                 x=z, xd=z, xdd=z, force=np.asarray(force, dtype=float), b_fc=z, sigma=z, z1=zn, z2=zn, z3=zn,
                 active=b, lam=z, feasible=~b, in_contact=b, violation=b, x_ref=z,
                 meta={"F_max": F_max, "dt": dt})


def test_metrics_zero_force():
    m = compute_metrics(synthetic(np.zeros(50)))
    assert m.violations == 0 and m.max_force == 0.0


def test_metrics_single_violation():
    f = np.full(50, 4.0)
    f[20] = 5.2
    m = compute_metrics(synthetic(f))
    assert m.violations == 1 and m.max_force == pytest.approx(5.2)


def test_metrics_constant_tail():
    m = compute_metrics(synthetic(np.full(40, 3.0)))
    assert m.steady_force == pytest.approx(3.0)
    assert m.steady_band == pytest.approx(2.0)


def test_builtin_constants():
    t = builtin_scenarios()
    s = t["test1_spring"].safety
    assert (s.F_max, s.l, s.K_pri) == (5.0, 10.0, 200.0)
    fc = t["force_control"]
    assert (fc.controller.F_d, fc.safety.F_max, fc.safety.l) == (4.0, 9.0, 1.2)
    assert (fc.controller.k_p, fc.controller.k_i) == (1e-5, 1e-2)
    assert SWEEP_GRIDS["sweep_l"] == ("safety.l", (2.0, 5.0, 10.0))
    assert t["test3_hybrid"].safety.F_max == 3.0
    e = t["test1_spring"].estimator
    assert (e.L1, e.L2) == (110.0, 3000.0)


def test_unknown_scenario():
    with pytest.raises(KeyError, match="test1_spring"):
        get_scenario("nope")


def test_scenario_validation():
    with pytest.raises(ValueError):
        Scenario(controller=replace(Scenario().controller, kind="pid"))
    with pytest.raises(ValueError):
        Scenario(robot="planar2")
    with pytest.raises(ValueError):
        Scenario(dt=0.0)


def test_config_round_trip(tmp_path):
    s = get_scenario("test2_sponge")
    p = tmp_path / "s.yaml"
    p.write_text(dump_config(s))
    assert load_config(p) == s


def test_config_precedence(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("schema: 1\nbase: test1_spring\nsafety:\n  F_max: 4.0\n  l: 7.0\n")
    from_file = load_config(p)
    assert from_file.safety.F_max == 4.0 and from_file.safety.l == 7.0
    assert from_file.safety.K_pri == 200.0  # from the built-in
    top = apply_overrides(from_file, ["F_max=3.5"])
    assert top.safety.F_max == 3.5 and top.safety.l == 7.0


def test_config_errors(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("schema: 2\n")
    with pytest.raises(ValueError, match="schema"):
        load_config(p)
    p.write_text("schema: 1\nsafety:\n  bogus: 1\n")
    with pytest.raises(ValueError, match="bogus"):
        load_config(p)
    with pytest.raises(ValueError):
        apply_overrides(get_scenario("test1_spring"), ["safety.nope=1"])
    with pytest.raises(ValueError):
        apply_overrides(get_scenario("test1_spring"), ["F_max"])


def test_square_reference_levels():
    r = ReferenceSpec()
    assert r(0.0) == (0.045, 0.0)
    assert r(5.0 + 9.0)[0] == pytest.approx(-0.005)
    assert r(5.0 + 19.0)[0] == pytest.approx(0.045)
    x, v = r(5.0 + 1.0)
    assert v == pytest.approx(-0.02) and x == pytest.approx(0.025)


def test_empty_space_filter_is_inert():
    s = replace(get_scenario("test1_spring"), environment=EnvironmentSpec(kind="none"), duration=10.0)
    a, b = run_scenario(s), run_scenario(s.baseline())
    assert np.all(a.force == 0) and not a.in_contact.any()
    np.testing.assert_array_equal(a.q, b.q)
    np.testing.assert_array_equal(a.qd, b.qd)


def test_square_gives_repeated_contact():
    tr = cached_run("test1_spring")
    c = tr.in_contact.astype(int)
    assert np.count_nonzero(np.diff(c) == 1) >= 2
    assert np.count_nonzero(np.diff(c) == -1) >= 2


def test_soft_spring_override_respects_limit():
    s = apply_overrides(get_scenario("test1_spring"), ["environment.stiffness=500"])
    m = compute_metrics(run_scenario(s))
    assert m.max_force <= 5.0 * 1.01 and m.violations == 0


def test_active_ticks_slow_the_approach():
    tr = cached_run("test1_spring")
    sel = tr.active
    assert sel.any() and np.all(tr.lam[sel] > 0)
    # the filtered joint rates differ from nominal only where a row is active
    moved = np.any(tr.qd != tr.qd_nom, axis=1)
    assert not np.any(moved & ~sel)


def test_runs_are_deterministic():
    s = replace(get_scenario("test3_hybrid"), duration=8.0)
    a, b = run_scenario(s), run_scenario(s)
    for f in ("q", "qd", "force", "b_fc", "sigma", "lam"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))


def test_dynamic_scenario_holds_limit():
    tr = cached_run("dynamic_planar2")
    assert compute_metrics(tr).max_force <= 1.01
    assert compute_metrics(cached_run("dynamic_planar2", baseline=True)).max_force > 1.01


# ---------------------------------------------------------------- traceio

def test_csv_header():
    text = traceio.dumps(cached_run("test1_spring"))
    head = text.split("\n", 1)[0]
    assert head == "t,q1,q2,q3,q4,q5,q6,qd1,qd2,qd3,qd4,qd5,qd6,x,z_force,b_fc_z,sigma,active,violation"


def test_csv_round_trip_is_exact_on_quantized_values():
    tr = cached_run("test1_spring")
    tab = traceio.loads(traceio.dumps(tr))
    assert tab.equals(traceio.quantize(tr))
    assert traceio.dumps(tab) == traceio.dumps(tr)
    np.testing.assert_allclose(tab.force, tr.force, rtol=1e-11, atol=1e-15)


def test_csv_line_endings(tmp_path):
    p = traceio.write_trace(cached_run("test1_spring"), tmp_path / "t.csv")
    raw = p.read_bytes()
    assert b"\r" not in raw and raw.endswith(b"\n")
    assert traceio.read_trace(p).equals(traceio.quantize(cached_run("test1_spring")))


def test_csv_bad_header():
    with pytest.raises(ValueError):
        traceio.loads("a,b\n1,2\n")
    with pytest.raises(ValueError):
        traceio.loads("")


def test_metrics_text_round_trip():
    m = compute_metrics(cached_run("test1_spring"))
    back = traceio.loads_metrics(traceio.dumps_metrics(m, {"scenario": "test1_spring"}))
    assert back["scenario"] == "test1_spring"
    assert back["violations"] == m.violations
    assert back["max_force"] == pytest.approx(m.max_force, rel=1e-11)
