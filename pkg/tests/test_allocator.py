# tests/test_allocator.py

import math

import numpy as np
import pytest

from app.models.enums import SweepParameter
from app.schemas.config import RunConfig
from app.schemas.device import ChannelParams, DeviceProfile
from app.services import allocation_service as alloc
from app.services import link_service
from app.services.quant_service import level_for_demand, payload_bits
from app.utils.exceptions import InfeasibleBudget, InvalidMultiplier
from app.utils.rng import stream

BITS = 37_000_000 * 7


def _pi_min(profile, channel, bits=BITS):
    return alloc.split_bounds(profile, channel, bits).pi_min


def test_split_bounds_example(channel):
    profile = DeviceProfile(T_max_s=16.64)
    bounds = alloc.split_bounds(profile, channel, BITS)
    assert bounds.theta_min == pytest.approx(0.1, rel=1e-12)
    rate = link_service.rate(channel, profile.P_max)
    assert bounds.pi_min == pytest.approx(BITS / (16.64 * rate), rel=1e-12)
    assert bounds.feasible


def test_split_bounds_without_payload(profile, channel):
    bounds = alloc.split_bounds(profile, channel, 0)
    assert (bounds.pi_min, bounds.pi_cap) == (0.0, 0.0)
    assert bounds.theta_cap == 1.0


def test_theta_of_nu(profile):
    nu_one = 2.0 * profile.tau * profile.cycles**3 / profile.T_max**2
    assert alloc.theta_of_nu(profile, nu_one) == pytest.approx(1.0, rel=1e-12)
    assert alloc.theta_of_nu(profile, 8.0 * nu_one) == pytest.approx(0.5, rel=1e-12)
    assert alloc.theta_of_nu(
        profile, alloc.nu_of_theta(profile, 0.3)
    ) == pytest.approx(0.3, rel=1e-12)


@pytest.mark.parametrize("nu", [0.0, -1.0])
def test_theta_of_nu_rejects_non_positive(profile, nu):
    with pytest.raises(InvalidMultiplier):
        alloc.theta_of_nu(profile, nu)


def test_phi_is_increasing_in_pi(profile, channel):
    pis = np.linspace(_pi_min(profile, channel), 1.0, 200)
    values = [alloc.phi(profile, channel, BITS, p, 1.0) for p in pis]
    assert np.all(np.diff(values) > 0)
    assert values[0] < 0
    assert values[-1] < 1.0


def test_phi_without_payload_is_nu(profile, channel):
    assert alloc.phi(profile, channel, 0, 0.3, 2.5) == 2.5


def test_phi_matches_finite_difference(profile, channel):
    rng = stream(11)
    lo = _pi_min(profile, channel)
    for _ in range(100):
        pi = float(rng.uniform(lo, 0.99))
        nu = float(10 ** rng.uniform(-3, 2))
        h = 1e-6 * pi
        e_plus = link_service.energy_curve(profile, channel, BITS, 0.5, pi + h)
        e_minus = link_service.energy_curve(profile, channel, BITS, 0.5, pi - h)
        fd = float(e_plus - e_minus) / (2 * h)
        value = alloc.phi(profile, channel, BITS, pi, nu)
        assert value - nu == pytest.approx(fd, rel=1e-5, abs=1e-9)
        if abs(value) > 1e-4 * abs(fd) + 1e-8:
            assert math.copysign(1.0, value) == math.copysign(1.0, fd + nu)


def test_bisect_pi_finds_root(profile, channel):
    nu = -alloc.phi(profile, channel, BITS, 0.3, 0.0)
    lo = _pi_min(profile, channel)
    pi = alloc.bisect_pi(profile, channel, BITS, nu, lo, 1.0, 1e-10)
    assert pi == pytest.approx(0.3, abs=1e-9)


def test_bisect_pi_agrees_with_grid_scan(profile, channel):
    nu = 0.5
    lo = _pi_min(profile, channel)
    pi = alloc.bisect_pi(profile, channel, BITS, nu, lo, 1.0, 1e-9)
    grid = np.linspace(lo, 1.0, 100_001)
    cost = link_service.energy_curve(profile, channel, BITS, 0.5, grid) + nu * grid
    step = grid[1] - grid[0]
    assert abs(grid[np.argmin(cost)] - pi) <= 2 * step


def test_bisect_pi_clamps_to_endpoints(profile, channel):
    lo = _pi_min(profile, channel)
    assert alloc.bisect_pi(profile, channel, BITS, 1e6, lo, 1.0, 1e-9) == lo
    assert alloc.bisect_pi(profile, channel, BITS, 1e-12, lo, 1.0, 1e-9) == 1.0


def test_pi_bracket_straddles_root(profile, channel):
    nu = 0.5
    lo = _pi_min(profile, channel)
    a, b = alloc.pi_bracket(profile, channel, BITS, nu, lo, 1.0, 1e-8)
    assert 0 < b - a <= 1e-8
    assert alloc.phi(profile, channel, BITS, a, nu) <= 0
    assert alloc.phi(profile, channel, BITS, b, nu) >= 0
    pi = alloc.bisect_pi(profile, channel, BITS, nu, lo, 1.0, 1e-8)
    residuals = [abs(alloc.phi(profile, channel, BITS, p, nu)) for p in (a, b)]
    assert abs(alloc.phi(profile, channel, BITS, pi, nu)) == min(residuals)


def test_pi_bracket_rejects_bad_interval(profile, channel):
    with pytest.raises(ValueError):
        alloc.pi_bracket(profile, channel, BITS, 1.0, 0.5, 0.5, 1e-8)
    with pytest.raises(ValueError):
        alloc.pi_bracket(profile, channel, BITS, 1.0, 0.1, 0.5, 0.0)


def test_solve_meets_budget_and_stationarity(profile, channel):
    decision, trace = alloc.solve(profile, channel, lam=1e-6)
    assert len(trace) <= 30
    assert (decision.levels, decision.bit_width) == (128, 7)
    assert decision.payload_bits == BITS
    assert decision.theta + decision.pi <= 1.0 + 1e-12
    assert 1.0 - (decision.theta + decision.pi) <= 1e-9
    assert not (decision.clamped_theta or decision.clamped_pi)
    assert decision.theta == pytest.approx(
        alloc.theta_of_nu(profile, decision.nu), rel=1e-12
    )
    residual = alloc.phi(profile, channel, BITS, decision.pi, decision.nu)
    assert abs(residual) <= 1e-6 * decision.nu
    assert profile.f_min <= decision.f <= profile.f_max
    assert profile.P_min <= decision.P <= profile.P_max
    assert decision.E_total == pytest.approx(decision.E_cmp + decision.E_com)
    assert decision.T_cmp == pytest.approx(decision.theta * profile.T_max)


def test_solve_decision_is_stationary_by_finite_difference(profile, channel):
    decision, _ = alloc.solve(profile, channel, lam=1e-6)
    theta, pi, nu = decision.theta, decision.pi, decision.nu

    def energy(t, p):
        return float(link_service.energy_curve(profile, channel, BITS, t, p))

    h = 1e-6 * theta
    d_theta = (energy(theta + h, pi) - energy(theta - h, pi)) / (2 * h)
    assert abs(d_theta + nu) <= 1e-6 * nu
    h = 1e-6 * pi
    d_pi = (energy(theta, pi + h) - energy(theta, pi - h)) / (2 * h)
    assert abs(d_pi + nu) <= 1e-6 * nu


def test_solve_uses_given_bit_width(profile, channel):
    decision, _ = alloc.solve(profile, channel, bit_width=4)
    assert (decision.levels, decision.payload_bits) == (16, 37_000_000 * 4)


def test_solve_reports_infeasible_budget(channel):
    profile = DeviceProfile(T_max_s=1.0)
    with pytest.raises(InfeasibleBudget) as excinfo:
        alloc.solve(profile, channel, device_id=4)
    assert excinfo.value.device_id == 4
    assert excinfo.value.exit_code == 2


def test_solve_beats_even_split(profile, channel):
    decision, _ = alloc.solve(profile, channel)
    even = alloc.even_split_decision(profile, channel)
    assert (even.theta, even.pi, even.nu) == (0.5, 0.5, 0.0)
    assert decision.E_total <= even.E_total * (1 + 1e-9)


def test_solve_matches_oracle(profile, channel):
    decision, _ = alloc.solve(profile, channel)
    theta, energy = alloc.oracle_grid_search(profile, channel, BITS)
    assert decision.E_total == pytest.approx(energy, rel=1e-3)
    assert decision.E_total <= energy * (1 + 1e-9)
    assert decision.theta == pytest.approx(theta, abs=1e-3)
    assert 1.0 - (decision.theta + decision.pi) <= 1e-9


@pytest.mark.slow
def test_solve_matches_oracle_on_random_profiles():
    rng = stream(2024)
    checked = 0
    for _ in range(1000):
        profile = DeviceProfile(
            T_max_s=float(rng.uniform(8.0, 25.0)),
            Delta=float(rng.choice([1.0, 0.5, 0.2])),
            tau=float(10 ** rng.uniform(-27, -25)),
            M=int(rng.integers(1_000_000, 40_000_000)),
        )
        channel = ChannelParams(d_m=float(rng.uniform(20.0, 80.0)))
        _, bit_width = level_for_demand(profile.demand)
        bits = payload_bits(profile.model_size, bit_width)
        if not alloc.split_bounds(profile, channel, bits).feasible:
            continue
        decision, trace = alloc.solve(profile, channel)
        _, energy = alloc.oracle_grid_search(profile, channel, bits)
        assert len(trace) <= 30
        assert decision.E_total <= energy * (1 + 1e-3)
        assert decision.E_total >= energy * (1 - 1e-3)
        checked += 1
    assert checked > 500


def test_oracle_without_payload_spends_whole_budget_computing(profile, channel):
    theta, energy = alloc.oracle_grid_search(profile, channel, 0, resolution=1e-3)
    assert theta == 1.0
    expected = link_service.comp_energy(profile, profile.cycles / profile.T_max)
    assert energy == pytest.approx(expected)


def test_oracle_curve_has_single_trough(profile, channel):
    theta, energy = alloc.oracle_curve(profile, channel, BITS, resolution=1e-4)
    signs = np.sign(np.diff(energy))
    changes = np.count_nonzero(signs[1:] != signs[:-1])
    assert changes <= 1
    assert signs[0] < 0 < signs[-1]


def test_trace_width_halves(profile, channel):
    lam = 1e-6
    _, trace = alloc.solve(profile, channel, lam=lam)
    widths = [row.nu_hi - row.nu_lo for row in trace.rows]
    assert widths[0] == pytest.approx(trace.nu_scale / 4, rel=1e-9)
    assert widths[-1] <= lam * trace.nu_scale
    for prev, cur in zip(widths, widths[1:]):
        assert cur == pytest.approx(prev / 2, rel=1e-8)
    assert len(trace) == math.ceil(math.log2(0.5 / lam)) <= 30
    assert all(row.nu_lo < row.nu_hi for row in trace.rows)
    assert [row.iteration for row in trace.rows] == list(range(1, len(trace) + 1))
    frame = alloc.nu_trace_frame(trace)
    assert list(frame.columns) == [
        "iteration",
        "nu_lo",
        "nu_hi",
        "theta",
        "pi",
        "E_total",
    ]


def test_cheap_computation_clamps_theta(channel):
    profile = DeviceProfile(tau=1e-33)
    decision, _ = alloc.solve(profile, channel)
    bounds = alloc.split_bounds(profile, channel, decision.payload_bits)
    assert decision.clamped_theta
    assert decision.theta == bounds.theta_min
    assert decision.theta + decision.pi == pytest.approx(1.0, abs=1e-5)


def test_expensive_computation_clamps_pi(channel):
    profile = DeviceProfile(tau=1e-22)
    decision, _ = alloc.solve(profile, channel)
    bounds = alloc.split_bounds(profile, channel, decision.payload_bits)
    assert decision.clamped_pi
    assert decision.pi == bounds.pi_min
    assert decision.P == pytest.approx(profile.P_max, rel=1e-9)


def test_allocate_fleet_marks_infeasible_devices(small_config):
    profiles = small_config.profiles()
    profiles[1] = profiles[1].model_copy(update={"T_max": 1.0})
    frame, infeasible = alloc.allocate_fleet(profiles, small_config.channels())
    assert infeasible == 1
    assert list(frame.columns) == alloc.ALLOCATE_COLUMNS
    assert list(frame["status"]) == ["OK", "INFEASIBLE", "OK"]
    assert math.isnan(frame.loc[1, "E_total"])


def test_allocate_fleet_bits_follow_demand(small_config):
    frame, infeasible = alloc.allocate_fleet(
        small_config.profiles(), small_config.channels(), oracle=True, resolution=1e-4
    )
    assert infeasible == 0
    assert list(frame["bits"]) == [6, 7, 8]
    assert list(frame.columns) == alloc.ALLOCATE_COLUMNS + alloc.ORACLE_COLUMNS
    np.testing.assert_allclose(frame["E_total"], frame["E_oracle"], rtol=1e-3)


def test_sweeps_are_monotone(small_config):
    profiles, channels = small_config.profiles(), small_config.channels()
    t_frame, flagged = alloc.sweep_frame(
        profiles, channels, SweepParameter.T_MAX, np.linspace(13.0, 18.0, 6)
    )
    assert flagged == 0
    assert np.all(np.diff(t_frame["E_total_fleet"]) < 0)
    assert list(t_frame.columns)[-2:] == ["E_even_split_fleet", "E_total_fleet"]
    defaults = RunConfig()
    d_frame, flagged = alloc.sweep_frame(
        defaults.profiles(),
        defaults.channels(),
        SweepParameter.DISTANCE,
        np.linspace(45.0, 90.0, 10),
    )
    assert flagged == 0
    assert np.all(np.diff(d_frame["E_total_fleet"]) > 0)


def test_sweep_never_loses_to_even_split(small_config):
    frame, flagged = alloc.sweep_frame(
        small_config.profiles(),
        small_config.channels(),
        SweepParameter.T_MAX,
        np.linspace(13.0, 18.0, 6),
    )
    assert flagged == 0
    assert np.all(np.isfinite(frame["E_even_split_fleet"]))
    assert np.all(frame["E_total_fleet"] <= frame["E_even_split_fleet"] * (1 + 1e-9))
    for k in range(small_config.K):
        optimised = frame[f"E_total_device{k}"]
        even = frame[f"E_even_split_device{k}"]
        assert np.all(optimised <= even * (1 + 1e-9))
    np.testing.assert_allclose(
        frame["E_even_split_fleet"],
        frame[[f"E_even_split_device{k}" for k in range(small_config.K)]].sum(axis=1),
    )


def test_even_split_breaking_bounds_leaves_baseline_empty(small_config):
    # Half of a 5 s round is too short to upload 8-bit updates from 90 m
    channels = [
        c.model_copy(update={"distance": 90.0}) for c in small_config.channels()
    ]
    frame, flagged = alloc.sweep_frame(
        small_config.profiles(), channels, SweepParameter.T_MAX, [5.0]
    )
    assert flagged == 0
    assert math.isfinite(frame.loc[0, "E_total_fleet"])
    assert math.isnan(frame.loc[0, "E_even_split_device2"])
    assert math.isnan(frame.loc[0, "E_even_split_fleet"])


def test_sweep_flags_infeasible_points(small_config):
    frame, flagged = alloc.sweep_frame(
        small_config.profiles(),
        small_config.channels(),
        SweepParameter.T_MAX,
        [1.0, 15.0],
    )
    assert flagged == 1
    assert list(frame["status"]) == ["INFEASIBLE", "OK"]
    assert math.isnan(frame.loc[0, "E_total_fleet"])
