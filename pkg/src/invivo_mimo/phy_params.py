"""
802.11n HT numerology and MCS tables (MCS 0-15, one BCC encoder).

Everything downstream is table driven from here: subcarrier layouts,
coded/data bits per OFDM symbol, symbol timing and PHY data rates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from functools import lru_cache

import numpy as np

SUBCARRIER_SPACING_HZ = 312.5e3
DEFAULT_CARRIER_HZ = 2.4e9

SERVICE_BITS = 16
TAIL_BITS = 6

# OFDM symbol duration in microseconds per guard interval (ns).
SYMBOL_DURATION_US = {800: Fraction(4), 400: Fraction(18, 5)}


class Modulation(str, Enum):
    BPSK = "BPSK"
    QPSK = "QPSK"
    QAM16 = "QAM16"
    QAM64 = "QAM64"

    @property
    def bits_per_symbol(self) -> int:
        return {"BPSK": 1, "QPSK": 2, "QAM16": 4, "QAM64": 6}[self.value]


# (modulation, code rate) for the single-stream indices 0-7; 8-15 repeat them on 2 streams.
_BASE_MCS = (
    (Modulation.BPSK, Fraction(1, 2)),
    (Modulation.QPSK, Fraction(1, 2)),
    (Modulation.QPSK, Fraction(3, 4)),
    (Modulation.QAM16, Fraction(1, 2)),
    (Modulation.QAM16, Fraction(3, 4)),
    (Modulation.QAM64, Fraction(2, 3)),
    (Modulation.QAM64, Fraction(3, 4)),
    (Modulation.QAM64, Fraction(5, 6)),
)


@dataclass(frozen=True)
class Numerology:
    bandwidth: int
    fft_size: int
    n_sd: int
    n_sp: int
    data_indices: tuple[int, ...]
    pilot_indices: tuple[int, ...]
    carrier_freq: float = DEFAULT_CARRIER_HZ

    @property
    def used_indices(self) -> tuple[int, ...]:
        """Data and pilot subcarriers, ascending."""
        return tuple(sorted(self.data_indices + self.pilot_indices))

    @property
    def n_used(self) -> int:
        return self.n_sd + self.n_sp

    @property
    def interleaver_cols(self) -> int:
        return 13 if self.bandwidth == 20 else 18

    @property
    def interleaver_rot(self) -> int:
        return 11 if self.bandwidth == 20 else 29

    def symbol_duration(self, guard_interval: int) -> Fraction:
        return symbol_duration(guard_interval)

    def subcarrier_freqs(self, indices=None) -> np.ndarray:
        if indices is None:
            indices = self.used_indices
        return self.carrier_freq + np.asarray(indices, dtype=float) * SUBCARRIER_SPACING_HZ


@dataclass(frozen=True)
class McsEntry:
    index: int
    n_ss: int
    modulation: Modulation
    code_rate: Fraction
    n_bpscs: int
    n_cbps: int
    n_dbps: int

    @property
    def n_cbpss(self) -> int:
        """Coded bits per OFDM symbol per spatial stream."""
        return self.n_cbps // self.n_ss


def symbol_duration(guard_interval: int) -> Fraction:
    try:
        return SYMBOL_DURATION_US[guard_interval]
    except KeyError:
        raise ValueError(f"unsupported guard interval {guard_interval} ns (use 800 or 400)") from None


@lru_cache(maxsize=None)
def get_numerology(bandwidth: int = 20, carrier_freq: float = DEFAULT_CARRIER_HZ) -> Numerology:
    if bandwidth == 20:
        edge, fft_size = 28, 64
        pilots = (-21, -7, 7, 21)
        used = [k for k in range(-edge, edge + 1) if k != 0]
    elif bandwidth == 40:
        edge, fft_size = 58, 128
        pilots = (-53, -25, -11, 11, 25, 53)
        # DC plus the two neighbours are nulled at 40 MHz
        used = [k for k in range(-edge, edge + 1) if abs(k) > 1]
    else:
        raise ValueError(f"unsupported bandwidth {bandwidth} MHz (use 20 or 40)")
    data = tuple(k for k in used if k not in pilots)
    return Numerology(
        bandwidth=bandwidth,
        fft_size=fft_size,
        n_sd=len(data),
        n_sp=len(pilots),
        data_indices=data,
        pilot_indices=pilots,
        carrier_freq=float(carrier_freq),
    )


@lru_cache(maxsize=None)
def mcs_lookup(index: int, bandwidth: int = 20) -> McsEntry:
    """Return the HT MCS entry for ``index`` (0-15) at ``bandwidth`` MHz."""
    if not isinstance(index, (int, np.integer)) or not 0 <= index <= 15:
        raise ValueError(f"MCS index must be in 0..15, got {index!r}")
    numerology = get_numerology(bandwidth)
    modulation, rate = _BASE_MCS[index % 8]
    n_ss = 1 if index < 8 else 2
    n_bpscs = modulation.bits_per_symbol
    n_cbps = numerology.n_sd * n_bpscs * n_ss
    n_dbps = n_cbps * rate
    if n_dbps.denominator != 1:
        raise AssertionError(f"non-integer N_DBPS for MCS {index}")
    return McsEntry(
        index=int(index),
        n_ss=n_ss,
        modulation=modulation,
        code_rate=rate,
        n_bpscs=n_bpscs,
        n_cbps=n_cbps,
        n_dbps=int(n_dbps),
    )


def data_rate_exact(entry: McsEntry, guard_interval: int = 800) -> Fraction:
    """PHY rate in Mbit/s as an exact fraction (bits per microsecond)."""
    return Fraction(entry.n_dbps) / symbol_duration(guard_interval)


def data_rate(entry: McsEntry, bandwidth: int = 20, guard_interval: int = 800) -> float:
    """PHY data rate in Mbit/s, rounded to 0.1 Mbit/s."""
    if entry.n_cbps != mcs_lookup(entry.index, bandwidth).n_cbps:
        raise ValueError(f"MCS entry {entry.index} was not built for {bandwidth} MHz")
    exact = data_rate_exact(entry, guard_interval)
    # round half up on the exact value, not on a binary float
    tenths = math.floor(exact * 10 + Fraction(1, 2))
    return tenths / 10


def num_symbols(entry: McsEntry, psdu_bytes: int) -> int:
    """OFDM symbols needed for a PSDU: ceil((16 + 8L + 6) / N_DBPS)."""
    if psdu_bytes < 1:
        raise ValueError("psdu_bytes must be >= 1")
    n_bits = SERVICE_BITS + 8 * psdu_bytes + TAIL_BITS
    return -(-n_bits // entry.n_dbps)


def rate_table(bandwidth: int = 20, guard_interval: int = 800) -> list[dict]:
    rows = []
    for index in range(16):
        entry = mcs_lookup(index, bandwidth)
        rows.append({
            "mcs": index,
            "streams": entry.n_ss,
            "modulation": entry.modulation.value,
            "code_rate": str(entry.code_rate),
            "n_dbps": entry.n_dbps,
            "rate_mbps": data_rate(entry, bandwidth, guard_interval),
        })
    return rows
