import numpy as np
import pytest

from thermodamage import studies
from thermodamage.config import parse_config
from thermodamage.studies import (
    MANUFACTURED_PROFILES,
    Interpolants,
    StudyError,
    StudyTable,
    delta_study,
    interpolant_distance,
    manufactured_heat_study,
    max_relative_change,
    regularization_study,
    tau_refinement_study,
)
from thermodamage.verification import CheckRecord, VerificationReport

EQUILIBRIUM = """
[mesh]
resolution = 9
[material]
p_exponent = 3
gradient_mode = laplacian
[initial]
theta0 = constant 0.5
chi0 = constant 1
[time]
T = 0.5
tau = 0.0625
"""


def test_interpolants_at_nodes(damage_run):
    traj, _ = damage_run
    ip = Interpolants(traj)
    for k in (0, 7, 64):
        t = traj.times[k]
        for fn in (ip.upper, ip.lower, ip.linear):
            assert np.array_equal(fn("theta", t)[0, :, 0], traj.states[k].theta)
    mid = 0.5 * (traj.times[3] + traj.times[4])
    assert np.allclose(ip.linear("chi", mid)[0, :, 0], 0.5 * (traj.states[3].chi + traj.states[4].chi))
    assert np.allclose(ip.upper("chi", mid)[0, :, 0], traj.states[4].chi)
    assert np.allclose(ip.lower("chi", mid)[0, :, 0], traj.states[3].chi)
    assert np.allclose(ip.rate("chi", mid)[0, :, 0], (traj.states[4].chi - traj.states[3].chi) / traj.states[4].tau)


def test_stability_estimate(damage_run):
    ip = Interpolants(damage_run[0])
    for name in ("theta", "chi", "u", "v"):
        lhs, rhs = ip.stability_estimate(name)
        assert lhs <= rhs * (1 + 1e-12)


def test_distance_to_self_is_zero(damage_run):
    traj, _ = damage_run
    for f, nrm, kind, _ in studies.DISTANCES:
        assert interpolant_distance(traj, traj, f, nrm, kind) == 0.0


def test_distance_between_constant_trajectories(damage_run):
    # [DERIVED] two states differing by a constant c in theta: L2(0,T;L2) distance = c sqrt(T |Omega|)
    traj, _ = damage_run
    other = traj.copy()
    for s in other.states:
        s.theta = s.theta + 0.25
    assert interpolant_distance(traj, other, "theta", "L2", "L2") == pytest.approx(0.25)
    assert interpolant_distance(traj, other, "theta", "H1", "L2") == pytest.approx(0.25)
    assert interpolant_distance(traj, other, "theta", "L2", "C0") == pytest.approx(0.25)


def test_equilibrium_refinement_has_zero_distances():
    cfg = parse_config(EQUILIBRIUM)
    table = tau_refinement_study(cfg, levels=3)
    for *_, col in studies.DISTANCES:
        assert np.allclose(table.column(col)[1:], 0.0, atol=1e-14)
    with pytest.raises(ValueError):
        tau_refinement_study(cfg, levels=2)


def test_delta_study_zero_only_and_preconditions(damage_config):
    cfg = parse_config(EQUILIBRIUM)
    table = delta_study(cfg, deltas=[0.0])
    assert np.allclose(table.rows[0][1:], 0.0)
    with pytest.raises(ValueError):
        delta_study(damage_config)


def test_regularization_sufficient_truncation_identical():
    cfg = parse_config(EQUILIBRIUM)
    table = regularization_study(cfg, nus=(), Ms=(1e3,))
    assert table.rows[0][2:5] == [0.0, 0.0, 0.0]


def test_small_truncation_level_resolved_by_doubling(damage_config):
    cfg = damage_config.with_tau(1 / 16)
    table = regularization_study(cfg, nus=(), Ms=(0.3, 1e4))
    small, large = table.rows
    assert small[-1] > 0.3
    assert max(small[2:5]) <= 1e-8 and max(large[2:5]) <= 1e-8


def test_yosida_schedule_decreases_chi_distance(damage_config):
    cfg = damage_config.with_tau(1 / 16)
    table = regularization_study(cfg, nus=(1e-1, 5e-2, 2.5e-2, 1.25e-2))
    d = table.column("chi_C0L2")
    assert np.all(np.diff(d) < 0)


def test_study_aborts_on_failed_verification(damage_config, monkeypatch):
    bad = VerificationReport([CheckRecord("x", 1.0, (), 0.0, False)])
    monkeypatch.setattr(studies, "verify_trajectory", lambda traj: bad)
    with pytest.raises(StudyError) as exc:
        tau_refinement_study(damage_config.with_tau(1 / 8), levels=3)
    assert exc.value.report is bad


def test_max_relative_change():
    assert max_relative_change([{"a": 1.0}, {"a": 1.0}]) == 0.0
    assert max_relative_change([{"a": 1.0}, {"a": 2.0}]) == pytest.approx(0.5)


def test_study_table_text():
    t = StudyTable(["a", "b"], [[1, 0.5]], {"note": 3})
    assert t.to_text().splitlines() == ["a\tb", "1\t0.5", "# note: 3"]
    assert t.column("b").tolist() == [0.5]


@pytest.mark.parametrize("profile", sorted(MANUFACTURED_PROFILES))
def test_manufactured_time_profiles_first_order(profile):
    # [DERIVED] backward Euler: observed orders approach 1; the quadratic profile from above
    orders = manufactured_heat_study("time", 3, profile).column("order")[1:]
    assert np.all(orders > 0.95)
    if profile == "quadratic":
        assert np.all(orders >= 1.0)


def test_manufactured_rejects_unknown_kind():
    with pytest.raises(ValueError):
        manufactured_heat_study("space-time")
    with pytest.raises(ValueError):
        manufactured_heat_study("time", profile="cubic")
