"""Unit conversions used throughout the package."""

import numpy as np


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(watt):
    return 10.0 * np.log10(np.asarray(watt, dtype=float)) + 30.0


def dbm_per_hz_to_watt_per_hz(dbm_hz):
    # -174 dBm/Hz -> 10**-20.4 W/Hz
    return dbm_to_watt(dbm_hz)
