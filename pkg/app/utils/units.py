# app/utils/units.py


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def dbm_per_mhz_to_w_per_hz(dbm_per_mhz: float) -> float:
    """-95 dBm/MHz -> 10^-12.5 W per 10^6 Hz -> 10^-18.5 W/Hz."""
    return dbm_to_watt(dbm_per_mhz) / 1e6
