# app/services/allocation_service.py

import logging
import math
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from app.core.config import settings
from app.models.enums import Objective, SweepParameter
from app.schemas.allocation import (
    AllocationDecision,
    NuTrace,
    NuTraceRow,
    SplitBounds,
)
from app.schemas.device import ChannelParams, DeviceProfile
from app.services import link_service
from app.services.quant_service import level_for_demand, payload_bits
from app.utils.exceptions import InfeasibleBudget, InfeasibleSplit, InvalidMultiplier

logger = logging.getLogger(__name__)
audit_logger = logging.getLogger("audit")

# Below this, 2^x(1 - x ln2) - 1 is evaluated from its series
_SERIES_CUTOFF = 1e-4
# exp() overflows past this argument
_EXP_LIMIT = 700.0
# Factor-two bracketing steps cover the whole double range
_MAX_WIDENINGS = 2100
_MAX_OUTER = 200
_MAX_SETTLE = 30
_NU_FLOOR = 1e-300
_NU_CEIL = 1e300
# Inner pi tolerance, relative to pi_min, while settling onto the budget
_SETTLE_PI_TOL = 1e-14


def _codec(profile: DeviceProfile, bit_width: Optional[int]) -> tuple[int, int, int]:
    """(levels, bit_width, payload bits) for the device's upload."""
    if bit_width is None:
        levels, b = level_for_demand(profile.demand)
    else:
        if bit_width < 1:
            raise ValueError("bit_width must be >= 1")
        levels, b = 1 << bit_width, bit_width
    return levels, b, payload_bits(profile.model_size, b)


def split_bounds(profile: DeviceProfile, ch: ChannelParams, bits: int) -> SplitBounds:
    T = profile.T_max
    theta_min = profile.cycles / (profile.f_max * T)
    theta_cap = min(1.0, profile.cycles / (profile.f_min * T))
    if bits == 0:
        pi_min = pi_cap = 0.0
    else:
        pi_min = bits / (T * link_service.rate(ch, profile.P_max))
        pi_cap = min(1.0, bits / (T * link_service.rate(ch, profile.P_min)))
    return SplitBounds(
        theta_min=theta_min,
        pi_min=pi_min,
        theta_cap=theta_cap,
        pi_cap=pi_cap,
        bits=bits,
    )


def theta_of_nu(profile: DeviceProfile, nu: float) -> float:
    """Unclamped stationary theta = (2 tau (IDC)^3 / (nu T^2))^(1/3)."""
    if not nu > 0:
        raise InvalidMultiplier(f"multiplier must be positive, got {nu}")
    T = profile.T_max
    return float(np.cbrt(2.0 * profile.tau * profile.cycles**3 / (nu * T * T)))


def nu_of_theta(profile: DeviceProfile, theta: float) -> float:
    """Inverse of theta_of_nu."""
    T = profile.T_max
    return 2.0 * profile.tau * profile.cycles**3 / (theta**3 * T * T)


def _dcom(profile, ch, bits, pi, objective) -> float:
    """dE_com/dpi at pi."""
    T = profile.T_max
    KT = link_service.noise_power(ch) / link_service.channel_gain(ch) * T
    y = math.log(2.0) * bits / (ch.bandwidth * T * pi)
    if objective == Objective.PRINTED:
        if y > _EXP_LIMIT:
            return -math.inf
        return -KT * y * math.exp(y) / pi
    if y < _SERIES_CUTOFF:
        return -KT * (y * y / 2.0 + y**3 / 3.0 + y**4 / 8.0)
    if y > _EXP_LIMIT:
        return -math.inf
    return KT * (math.expm1(y) - y * math.exp(y))


def phi(
    profile: DeviceProfile,
    ch: ChannelParams,
    bits: float,
    pi: float,
    nu: float,
    objective: Objective = Objective.CORRECTED,
) -> float:
    """
    Stationarity residual in pi: dE_com/dpi + nu.

    Strictly increasing in pi, tends to nu as pi grows and to -inf as pi
    shrinks to zero. A zero payload gives phi = nu.
    """
    if not pi > 0:
        raise ValueError("pi must be positive")
    if bits == 0:
        return float(nu)
    return _dcom(profile, ch, bits, pi, objective) + nu


def pi_bracket(
    profile: DeviceProfile,
    ch: ChannelParams,
    bits: float,
    nu: float,
    pi_lo: float,
    pi_hi: float,
    lam: float,
    objective: Objective = Objective.CORRECTED,
) -> tuple[float, float]:
    """
    Final interval of the pi bisection. Collapses onto an endpoint when phi
    keeps one sign over the whole interval.
    """
    if not pi_lo < pi_hi:
        raise ValueError("pi_lo must be < pi_hi")
    if not lam > 0:
        raise ValueError("tolerance must be positive")
    if phi(profile, ch, bits, pi_lo, nu, objective) > 0:
        return pi_lo, pi_lo
    if phi(profile, ch, bits, pi_hi, nu, objective) < 0:
        return pi_hi, pi_hi
    lo, hi = pi_lo, pi_hi
    while hi - lo > lam:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if phi(profile, ch, bits, mid, nu, objective) > 0:
            hi = mid
        else:
            lo = mid
    return lo, hi


def bisect_pi(
    profile: DeviceProfile,
    ch: ChannelParams,
    bits: float,
    nu: float,
    pi_lo: float,
    pi_hi: float,
    lam: float,
    objective: Objective = Objective.CORRECTED,
) -> float:
    """
    Root of phi on [pi_lo, pi_hi] to within `lam`, or the clamped endpoint.
    Of the final interval's ends, returns the one with the smaller |phi|.
    """
    lo, hi = pi_bracket(profile, ch, bits, nu, pi_lo, pi_hi, lam, objective)
    if lo == hi:
        return lo
    f_lo = abs(phi(profile, ch, bits, lo, nu, objective))
    f_hi = abs(phi(profile, ch, bits, hi, nu, objective))
    return lo if f_lo <= f_hi else hi


class _Stationary:
    """theta(nu) and pi(nu) over a device's feasible box."""

    def __init__(self, profile, ch, bits, bounds: SplitBounds, pi_tol, objective):
        self.profile = profile
        self.ch = ch
        self.bits = bits
        self.objective = objective
        self.theta_min = bounds.theta_min
        self.theta_hi = min(bounds.theta_cap, 1.0 - bounds.pi_min)
        self.pi_min = bounds.pi_min
        self.pi_hi = min(bounds.pi_cap, 1.0 - bounds.theta_min)
        self.pi_tol = pi_tol

    def theta(self, nu: float) -> tuple[float, bool]:
        raw = theta_of_nu(self.profile, nu)
        if raw <= self.theta_min:
            return self.theta_min, True
        return min(raw, self.theta_hi), False

    def pi(self, nu: float) -> tuple[float, bool]:
        if self.bits == 0:
            return 0.0, False
        if self.pi_hi <= self.pi_min:
            return self.pi_min, True
        p = bisect_pi(
            self.profile,
            self.ch,
            self.bits,
            nu,
            self.pi_min,
            self.pi_hi,
            self.pi_tol,
            self.objective,
        )
        return p, p == self.pi_min and (
            phi(self.profile, self.ch, self.bits, p, nu, self.objective) > 0
        )

    def total(self, nu: float) -> float:
        return self.theta(nu)[0] + self.pi(nu)[0]

    def at_caps(self, nu: float) -> bool:
        return self.theta(nu)[0] >= self.theta_hi and self.pi(nu)[0] >= self.pi_hi


def _initial_bracket(stat: _Stationary) -> tuple[float, float]:
    """
    Adjacent points nu_lo = nu_hi / 2 with theta + pi <= 1 at nu_hi and
    > 1 at nu_lo, stepping by factors of two from a stationarity estimate.
    The lower end stops early once both shares sit at their caps.
    """
    theta0 = min(max(0.5, stat.theta_min), stat.theta_hi)
    candidates = [nu_of_theta(stat.profile, theta0)]
    if stat.bits:
        pi0 = min(max(0.5, stat.pi_min), max(stat.pi_hi, stat.pi_min))
        slope = _dcom(stat.profile, stat.ch, stat.bits, pi0, stat.objective)
        candidates.append(-slope)
    nu = max([c for c in candidates if 0 < c < math.inf], default=1.0)
    nu = min(max(nu, _NU_FLOOR), _NU_CEIL)
    if stat.total(nu) <= 1.0:
        nu_hi = nu
        for _ in range(_MAX_WIDENINGS):
            if nu_hi / 2.0 < _NU_FLOOR:
                break
            if stat.total(nu_hi / 2.0) > 1.0 or stat.at_caps(nu_hi / 2.0):
                break
            nu_hi /= 2.0
        return nu_hi / 2.0, nu_hi
    nu_lo = nu
    for _ in range(_MAX_WIDENINGS):
        if stat.total(2.0 * nu_lo) <= 1.0 or 2.0 * nu_lo > _NU_CEIL:
            break
        nu_lo *= 2.0
    return nu_lo, 2.0 * nu_lo


def _settle(stat: _Stationary, nu_lo: float, nu_hi: float) -> Optional[float]:
    """
    Illinois false position for theta(nu) + pi(nu) = 1 inside the final
    bracket. Returns the evaluated nu with the largest total not above 1,
    or None when the bracket does not straddle the budget.
    """
    s_lo = stat.total(nu_lo) - 1.0
    s_hi = stat.total(nu_hi) - 1.0
    if s_hi > 0.0:
        return None
    if s_lo <= 0.0:
        return nu_lo if s_lo > s_hi else nu_hi
    best, best_s = nu_hi, s_hi
    side = 0
    for _ in range(_MAX_SETTLE):
        if best_s == 0.0:
            break
        nu = (nu_lo * s_hi - nu_hi * s_lo) / (s_hi - s_lo)
        if not nu_lo < nu < nu_hi:
            break
        s = stat.total(nu) - 1.0
        if s <= 0.0:
            nu_hi, s_hi = nu, s
            if s > best_s:
                best, best_s = nu, s
            if side == -1:
                s_lo /= 2.0
            side = -1
        else:
            nu_lo, s_lo = nu, s
            if side == 1:
                s_hi /= 2.0
            side = 1
    return best


def _decision(
    profile: DeviceProfile,
    ch: ChannelParams,
    theta: float,
    pi: float,
    nu: float,
    codec: tuple[int, int, int],
    objective: Objective,
    device_id: Optional[int] = None,
    clamped_theta: bool = False,
    clamped_pi: bool = False,
) -> AllocationDecision:
    levels, b, bits = codec
    split = link_service.total_energy_split(profile, ch, bits, theta, pi, objective)
    return AllocationDecision(
        device_id=device_id,
        theta=theta,
        pi=pi,
        nu=nu,
        levels=levels,
        bit_width=b,
        payload_bits=bits,
        f=split.f,
        P=split.P,
        E_cmp=split.E_cmp,
        E_com=split.E_com,
        E_total=split.E_cmp + split.E_com,
        T_cmp=theta * profile.T_max,
        T_com=pi * profile.T_max,
        clamped_theta=clamped_theta,
        clamped_pi=clamped_pi,
    )


def _require_feasible(bounds: SplitBounds, device_id: Optional[int]) -> None:
    if not bounds.feasible:
        audit_logger.warning(
            "Device %s infeasible: theta_min=%.6g pi_min=%.6g",
            device_id,
            bounds.theta_min,
            bounds.pi_min,
        )
        raise InfeasibleBudget(
            f"theta_min + pi_min = {bounds.theta_min + bounds.pi_min:.6g} > 1",
            device_id=device_id,
        )


def solve(
    profile: DeviceProfile,
    ch: ChannelParams,
    lam: Optional[float] = None,
    bit_width: Optional[int] = None,
    objective: Objective = Objective.CORRECTED,
    device_id: Optional[int] = None,
) -> tuple[AllocationDecision, NuTrace]:
    """
    Energy-minimal (theta, pi) split of one device.

    The outer loop bisects the multiplier nu at the midpoint of
    [nu_lo, nu_hi] until the interval, normalised by the bracket's initial
    upper end, is at most `lam`; theta(nu_hi) + pi(nu_hi) <= 1 throughout.
    The inner loop finds pi(nu) as the root of `phi`. theta and pi are
    clamped onto their feasible box, which realises the bound multipliers.
    The final bracket is then settled onto theta + pi = 1 by false position
    with a finer inner tolerance, so the decision stays stationary in both
    shares.

    Raises InfeasibleBudget when theta_min + pi_min > 1.
    """
    lam = settings.SOLVER_TOLERANCE if lam is None else lam
    if not lam > 0:
        raise ValueError("tolerance must be positive")
    codec = _codec(profile, bit_width)
    bounds = split_bounds(profile, ch, codec[2])
    _require_feasible(bounds, device_id)

    pi_tol = lam * 1e-2 * bounds.pi_min
    stat = _Stationary(profile, ch, codec[2], bounds, pi_tol, objective)
    nu_lo, nu_hi = _initial_bracket(stat)
    trace = NuTrace(nu_scale=nu_hi)
    for iteration in range(1, _MAX_OUTER + 1):
        if nu_hi - nu_lo <= lam * trace.nu_scale:
            break
        nu = 0.5 * (nu_lo + nu_hi)
        theta, _ = stat.theta(nu)
        pi, _ = stat.pi(nu)
        if theta + pi <= 1.0:
            nu_hi = nu
        else:
            nu_lo = nu
        energy = float(
            link_service.energy_curve(profile, ch, codec[2], theta, pi, objective)
        )
        trace.rows.append(
            NuTraceRow(
                iteration=iteration,
                nu_lo=nu_lo,
                nu_hi=nu_hi,
                theta=theta,
                pi=pi,
                E_total=energy,
            )
        )
        logger.debug(
            "Iteration %d: nu in [%.6g, %.6g] theta=%.6g pi=%.6g",
            iteration,
            nu_lo,
            nu_hi,
            theta,
            pi,
        )

    fine = _Stationary(
        profile, ch, codec[2], bounds, _SETTLE_PI_TOL * bounds.pi_min, objective
    )
    nu = _settle(fine, nu_lo, nu_hi)
    if nu is None:
        nu, fine = nu_hi, stat
    theta, clamped_theta = fine.theta(nu)
    pi, clamped_pi = fine.pi(nu)
    decision = _decision(
        profile,
        ch,
        theta,
        pi,
        nu,
        codec,
        objective,
        device_id=device_id,
        clamped_theta=clamped_theta,
        clamped_pi=clamped_pi,
    )
    if clamped_theta or clamped_pi:
        logger.warning(
            "Device %s clamped (theta=%s, pi=%s)",
            device_id,
            clamped_theta,
            clamped_pi,
        )
    logger.info(
        "Device %s: theta=%.6f pi=%.6f E_total=%.6g J after %d iterations",
        device_id,
        decision.theta,
        decision.pi,
        decision.E_total,
        len(trace),
    )
    audit_logger.info(
        "allocation device=%s bits=%d f=%.6g P=%.6g E_cmp=%.6g E_com=%.6g",
        device_id,
        decision.payload_bits,
        decision.f,
        decision.P,
        decision.E_cmp,
        decision.E_com,
    )
    return decision, trace


def even_split_decision(
    profile: DeviceProfile,
    ch: ChannelParams,
    bit_width: Optional[int] = None,
    objective: Objective = Objective.CORRECTED,
    device_id: Optional[int] = None,
) -> AllocationDecision:
    """Half the budget each for computation and upload, without optimisation."""
    codec = _codec(profile, bit_width)
    return _decision(profile, ch, 0.5, 0.5, 0.0, codec, objective, device_id)


def oracle_curve(
    profile: DeviceProfile,
    ch: ChannelParams,
    bits: int,
    resolution: Optional[float] = None,
    objective: Objective = Objective.CORRECTED,
) -> tuple[np.ndarray, np.ndarray]:
    """Energy along theta in [theta_min, 1 - pi_min] with pi = 1 - theta."""
    resolution = settings.ORACLE_RESOLUTION if resolution is None else resolution
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    bounds = split_bounds(profile, ch, bits)
    _require_feasible(bounds, None)
    hi = min(bounds.theta_cap, 1.0 - bounds.pi_min)
    n = max(2, math.ceil((hi - bounds.theta_min) / resolution) + 1)
    theta = np.linspace(bounds.theta_min, hi, n)
    pi = np.minimum(1.0 - theta, bounds.pi_cap)
    return theta, link_service.energy_curve(profile, ch, bits, theta, pi, objective)


def oracle_grid_search(
    profile: DeviceProfile,
    ch: ChannelParams,
    bits: int,
    resolution: Optional[float] = None,
    objective: Objective = Objective.CORRECTED,
) -> tuple[float, float]:
    """Brute-force (theta, E_total) minimiser used to validate `solve`."""
    theta, energy = oracle_curve(profile, ch, bits, resolution, objective)
    idx = int(np.argmin(energy))
    return float(theta[idx]), float(energy[idx])


def nu_trace_frame(trace: NuTrace) -> pd.DataFrame:
    columns = ["iteration", "nu_lo", "nu_hi", "theta", "pi", "E_total"]
    return pd.DataFrame([row.model_dump() for row in trace.rows], columns=columns)


ALLOCATE_COLUMNS = [
    "device_id",
    "status",
    "L",
    "bits",
    "payload_bits",
    "theta",
    "pi",
    "nu",
    "f",
    "P",
    "E_cmp",
    "E_com",
    "E_total",
    "T_cmp",
    "T_com",
    "clamped_theta",
    "clamped_pi",
]
ORACLE_COLUMNS = ["theta_oracle", "E_oracle"]


def allocate_fleet(
    profiles: Sequence[DeviceProfile],
    channels: Sequence[ChannelParams],
    lam: Optional[float] = None,
    objective: Objective = Objective.CORRECTED,
    oracle: bool = False,
    resolution: Optional[float] = None,
) -> tuple[pd.DataFrame, int]:
    """
    Solve every device independently. Infeasible devices become rows with
    status INFEASIBLE; the count of such rows is returned alongside.
    """
    rows = []
    infeasible = 0
    for k, (profile, ch) in enumerate(zip(profiles, channels)):
        try:
            decision, _ = solve(profile, ch, lam, objective=objective, device_id=k)
        except InfeasibleBudget:
            infeasible += 1
            rows.append({"device_id": k, "status": "INFEASIBLE"})
            continue
        row = {
            "device_id": k,
            "status": "OK",
            "L": decision.levels,
            "bits": decision.bit_width,
            "payload_bits": decision.payload_bits,
            "theta": decision.theta,
            "pi": decision.pi,
            "nu": decision.nu,
            "f": decision.f,
            "P": decision.P,
            "E_cmp": decision.E_cmp,
            "E_com": decision.E_com,
            "E_total": decision.E_total,
            "T_cmp": decision.T_cmp,
            "T_com": decision.T_com,
            "clamped_theta": decision.clamped_theta,
            "clamped_pi": decision.clamped_pi,
        }
        if oracle:
            row["theta_oracle"], row["E_oracle"] = oracle_grid_search(
                profile, ch, decision.payload_bits, resolution, objective
            )
        rows.append(row)
    columns = ALLOCATE_COLUMNS + (ORACLE_COLUMNS if oracle else [])
    return pd.DataFrame(rows, columns=columns), infeasible


def _even_split_energy(
    profile: DeviceProfile, ch: ChannelParams, objective: Objective, k: int
) -> float:
    try:
        decision = even_split_decision(profile, ch, objective=objective, device_id=k)
    except InfeasibleSplit:
        return float("nan")
    return decision.E_total


def sweep_frame(
    profiles: Sequence[DeviceProfile],
    channels: Sequence[ChannelParams],
    parameter: SweepParameter,
    values: Sequence[float],
    lam: Optional[float] = None,
    objective: Objective = Objective.CORRECTED,
) -> tuple[pd.DataFrame, int]:
    """
    Fleet energy as one parameter varies for every device, next to the
    50/50 baseline split. A point with any infeasible device is flagged and
    has no fleet total; a device whose even split breaks its f or P bounds
    leaves the baseline fleet total empty.
    """
    K = len(profiles)
    columns = ["parameter", "value", "status"]
    columns += [f"E_total_device{k}" for k in range(K)]
    columns += [f"E_even_split_device{k}" for k in range(K)]
    columns += ["E_even_split_fleet", "E_total_fleet"]
    rows = []
    flagged = 0
    for value in values:
        value = float(value)
        if parameter == SweepParameter.T_MAX:
            point_profiles = [p.model_copy(update={"T_max": value}) for p in profiles]
            point_channels = list(channels)
        else:
            point_profiles = list(profiles)
            point_channels = [
                c.model_copy(update={"distance": value}) for c in channels
            ]
        frame, infeasible = allocate_fleet(
            point_profiles, point_channels, lam, objective
        )
        row = {"parameter": parameter.value, "value": value}
        row["status"] = "INFEASIBLE" if infeasible else "OK"
        even = [
            _even_split_energy(p, c, objective, k)
            for k, (p, c) in enumerate(zip(point_profiles, point_channels))
        ]
        for k in range(K):
            row[f"E_total_device{k}"] = frame.loc[k, "E_total"]
            row[f"E_even_split_device{k}"] = even[k]
        # NaN propagates through the sum
        row["E_even_split_fleet"] = float(np.sum(even))
        row["E_total_fleet"] = (
            float("nan") if infeasible else float(frame["E_total"].sum())
        )
        flagged += bool(infeasible)
        rows.append(row)
        logger.info(
            "Sweep %s=%.6g: fleet energy %.6g J (even split %.6g J)",
            parameter.value,
            value,
            row["E_total_fleet"],
            row["E_even_split_fleet"],
        )
    return pd.DataFrame(rows, columns=columns), flagged
