# app/services/link_service.py

import logging
import math
from typing import NamedTuple

import numpy as np

from app.models.enums import Objective
from app.schemas.device import ChannelParams, DeviceProfile
from app.utils.exceptions import FrequencyOutOfRange, InfeasibleSplit, ZeroRate
from app.utils.units import dbm_per_mhz_to_w_per_hz

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)

# Relative slack when checking recovered f and P against their bounds
BOUND_SLACK = 1e-9


class EnergySplit(NamedTuple):
    E_cmp: float
    E_com: float
    f: float
    P: float


def noise_psd_w_per_hz(dbm_per_mhz: float) -> float:
    return dbm_per_mhz_to_w_per_hz(dbm_per_mhz)


def channel_gain(ch: ChannelParams) -> float:
    """|h|^2 * d^-eta"""
    return ch.gain * ch.distance ** (-ch.eta)


def noise_power(ch: ChannelParams) -> float:
    """N0 * B, in W"""
    return ch.noise_psd * ch.bandwidth


def snr(ch: ChannelParams, P: float) -> float:
    return channel_gain(ch) * P / noise_power(ch)


def _check_frequency(profile: DeviceProfile, f: float) -> None:
    if not (profile.f_min <= f <= profile.f_max):
        raise FrequencyOutOfRange(
            f"f={f:.6g} Hz outside [{profile.f_min:.6g}, {profile.f_max:.6g}]"
        )


def comp_time(profile: DeviceProfile, f: float) -> float:
    """I*D*C / f"""
    _check_frequency(profile, f)
    return profile.cycles / f


def comp_energy(profile: DeviceProfile, f: float) -> float:
    """tau * f^2 * I*D*C"""
    _check_frequency(profile, f)
    return profile.tau * f * f * profile.cycles


def rate(ch: ChannelParams, P: float) -> float:
    """Shannon rate B*log2(1 + SNR) in bits/s."""
    if P < 0:
        raise ValueError("transmit power must be non-negative")
    return ch.bandwidth * math.log1p(snr(ch, P)) / LN2


def power_for_rate(ch: ChannelParams, r: float) -> float:
    """Inverse of `rate`: the power that sustains `r` bits/s (inf on overflow)."""
    try:
        growth = math.expm1(LN2 * r / ch.bandwidth)
    except OverflowError:
        return math.inf
    return growth * noise_power(ch) / channel_gain(ch)


def comm_time(bits: float, r: float) -> float:
    if r <= 0:
        raise ZeroRate(f"cannot transmit {bits} bits at rate {r}")
    return bits / r


def comm_energy(P: float, t: float) -> float:
    if P < 0 or t < 0:
        raise ValueError("power and time must be non-negative")
    return P * t


def _onto_bounds(value: float, lo: float, hi: float, name: str) -> float:
    if value < lo * (1 - BOUND_SLACK) or value > hi * (1 + BOUND_SLACK):
        raise InfeasibleSplit(
            f"implied {name}={value:.6g} outside [{lo:.6g}, {hi:.6g}]"
        )
    return min(max(value, lo), hi)


def total_energy_split(
    profile: DeviceProfile,
    ch: ChannelParams,
    bits: float,
    theta: float,
    pi: float,
    objective: Objective = Objective.CORRECTED,
) -> EnergySplit:
    """
    Energy of a device that computes for theta*T_max and transmits `bits`
    in pi*T_max.

    f and P are recovered at equality with the budget shares and must lie
    within the profile bounds. With the corrected objective
    E_com = P * pi * T_max; the printed one drops the pi factor.
    """
    if not 0 < theta <= 1:
        raise InfeasibleSplit(f"theta={theta} outside (0, 1]")
    if not (0 < pi <= 1 or (bits == 0 and pi == 0)):
        raise InfeasibleSplit(f"pi={pi} outside (0, 1]")
    T = profile.T_max
    f = _onto_bounds(profile.cycles / (theta * T), profile.f_min, profile.f_max, "f")
    E_cmp = comp_energy(profile, f)
    if bits == 0:
        return EnergySplit(E_cmp=E_cmp, E_com=0.0, f=f, P=0.0)
    P = power_for_rate(ch, bits / (pi * T))
    P = _onto_bounds(P, profile.P_min, profile.P_max, "P")
    t_com = pi * T if objective == Objective.CORRECTED else T
    return EnergySplit(E_cmp=E_cmp, E_com=comm_energy(P, t_com), f=f, P=P)


def energy_curve(
    profile: DeviceProfile,
    ch: ChannelParams,
    bits: float,
    theta: np.ndarray,
    pi: np.ndarray,
    objective: Objective = Objective.CORRECTED,
) -> np.ndarray:
    """
    Vectorised E_cmp + E_com over arrays of (theta, pi) without bound checks.
    Callers keep the arrays inside the feasible box.
    """
    theta = np.asarray(theta, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    T = profile.T_max
    e_cmp = profile.tau * profile.cycles**3 / (theta * theta * T * T)
    if bits == 0:
        return e_cmp
    scale = noise_power(ch) / channel_gain(ch)
    with np.errstate(over="ignore"):
        power = np.expm1(LN2 * bits / (pi * T * ch.bandwidth)) * scale
    t_com = pi * T if objective == Objective.CORRECTED else T
    return e_cmp + power * t_com
