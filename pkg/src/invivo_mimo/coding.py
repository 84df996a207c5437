"""
Bit-domain FEC chain: scrambler, K=7 BCC (133/171 octal), puncturing and
a soft-decision Viterbi decoder.

Bit blocks are 1-D ``uint8`` arrays of 0/1. Soft blocks are 1-D float64
LLR arrays with the convention LLR > 0 means bit 0 is more likely; an
erased (punctured) position carries exactly 0.0.
"""
from __future__ import annotations

from fractions import Fraction

import numba
import numpy as np

CONSTRAINT_LENGTH = 7
N_STATES = 1 << (CONSTRAINT_LENGTH - 1)
G0 = 0o133
G1 = 0o171

# keep-masks over the interleaved A0 B0 A1 B1 ... mother-code output
PUNCTURE_PATTERNS: dict[Fraction, np.ndarray] = {
    Fraction(1, 2): np.array([1, 1], dtype=bool),
    Fraction(2, 3): np.array([1, 1, 1, 0], dtype=bool),
    Fraction(3, 4): np.array([1, 1, 1, 0, 0, 1], dtype=bool),
    Fraction(5, 6): np.array([1, 1, 1, 0, 0, 1, 1, 0, 0, 1], dtype=bool),
}


def _as_bits(block) -> np.ndarray:
    bits = np.asarray(block, dtype=np.uint8).reshape(-1)
    if bits.size and bits.max() > 1:
        raise ValueError("bit block may only contain 0 and 1")
    return bits


def _as_rate(rate) -> Fraction:
    rate = Fraction(rate)
    if rate not in PUNCTURE_PATTERNS:
        raise ValueError(f"unsupported code rate {rate} (use 1/2, 2/3, 3/4 or 5/6)")
    return rate


def scrambler_sequence(seed: int, length: int) -> np.ndarray:
    """Output of the x^7 + x^4 + 1 LFSR started from the 7-bit state ``seed``."""
    if not 0 < seed < 128:
        raise ValueError(f"scrambler seed must be a non-zero 7-bit value, got {seed}")
    period = np.empty(127, dtype=np.uint8)
    state = seed
    for i in range(127):
        fb = ((state >> 6) ^ (state >> 3)) & 1
        state = ((state << 1) | fb) & 0x7F
        period[i] = fb
    reps = -(-length // 127)
    return np.tile(period, reps)[:length]


def scramble(block, seed: int) -> np.ndarray:
    bits = _as_bits(block)
    return bits ^ scrambler_sequence(seed, bits.size)


descramble = scramble


def _tap_vector(generator: int) -> np.ndarray:
    # bit (K-1-d) of the octal generator is the tap at delay d
    return np.array([(generator >> (CONSTRAINT_LENGTH - 1 - d)) & 1 for d in range(CONSTRAINT_LENGTH)],
                    dtype=np.int64)


_TAPS_A = _tap_vector(G0)
_TAPS_B = _tap_vector(G1)


def bcc_encode(block) -> np.ndarray:
    """Rate-1/2 mother code, zero initial state, output interleaved as A0 B0 A1 B1 ..."""
    bits = _as_bits(block).astype(np.int64)
    n = bits.size
    out = np.empty(2 * n, dtype=np.uint8)
    out[0::2] = np.convolve(bits, _TAPS_A)[:n] & 1
    out[1::2] = np.convolve(bits, _TAPS_B)[:n] & 1
    return out


def puncture(block, rate) -> np.ndarray:
    rate = _as_rate(rate)
    bits = np.asarray(block).reshape(-1)
    mask = PUNCTURE_PATTERNS[rate]
    if bits.size % mask.size:
        raise ValueError(f"length {bits.size} is not a multiple of the rate-{rate} period {mask.size}")
    return bits[np.tile(mask, bits.size // mask.size)]


def depuncture(soft, rate) -> np.ndarray:
    """Re-insert erasures (0.0) where :func:`puncture` deleted bits."""
    rate = _as_rate(rate)
    llrs = np.asarray(soft, dtype=np.float64).reshape(-1)
    mask = PUNCTURE_PATTERNS[rate]
    kept = int(mask.sum())
    if llrs.size % kept:
        raise ValueError(f"length {llrs.size} is not a multiple of {kept} kept bits per rate-{rate} period")
    full_mask = np.tile(mask, llrs.size // kept)
    out = np.zeros(full_mask.size, dtype=np.float64)
    out[full_mask] = llrs
    return out


def _branch_table() -> tuple[np.ndarray, np.ndarray]:
    """Coded output bits (A, B) for each (next_state, predecessor lsb)."""
    out_a = np.empty((N_STATES, 2), dtype=np.int8)
    out_b = np.empty((N_STATES, 2), dtype=np.int8)
    for ns in range(N_STATES):
        bit = ns >> 5
        for lsb in range(2):
            prev = ((ns & 31) << 1) | lsb
            reg = (bit << 6) | prev
            out_a[ns, lsb] = bin(reg & G0).count("1") & 1
            out_b[ns, lsb] = bin(reg & G1).count("1") & 1
    return out_a, out_b


_OUT_A, _OUT_B = _branch_table()


@numba.njit(cache=True)
def _viterbi_kernel(llr_a, llr_b, out_a, out_b, terminated):
    n = llr_a.size
    n_states = out_a.shape[0]
    metric = np.full(n_states, -np.inf)
    metric[0] = 0.0
    new_metric = np.empty(n_states)
    decisions = np.empty((n, n_states), dtype=np.uint8)
    for t in range(n):
        la = 0.5 * llr_a[t]
        lb = 0.5 * llr_b[t]
        for ns in range(n_states):
            base = (ns & 31) << 1
            m0 = metric[base] + la * (1 - 2 * out_a[ns, 0]) + lb * (1 - 2 * out_b[ns, 0])
            m1 = metric[base + 1] + la * (1 - 2 * out_a[ns, 1]) + lb * (1 - 2 * out_b[ns, 1])
            if m1 > m0:
                new_metric[ns] = m1
                decisions[t, ns] = 1
            else:
                new_metric[ns] = m0
                decisions[t, ns] = 0
        # renormalise so long blocks do not drift
        top = new_metric.max()
        for s in range(n_states):
            metric[s] = new_metric[s] - top
    state = 0
    if not terminated:
        state = int(np.argmax(metric))
    bits = np.empty(n, dtype=np.uint8)
    for t in range(n - 1, -1, -1):
        bits[t] = state >> 5
        state = ((state & 31) << 1) | decisions[t, state]
    return bits


def viterbi_decode(soft, terminated: bool = True, hard: bool = False) -> np.ndarray:
    """Maximum-likelihood decoding of the 64-state trellis.

    ``soft`` holds depunctured LLR pairs (A, B) per information bit.
    With ``terminated`` the survivor ending in state 0 is traced back,
    otherwise the best final state is used. ``hard`` slices the LLRs to
    +/-1 first, which makes the path metric a Hamming distance.
    """
    llrs = np.asarray(soft, dtype=np.float64).reshape(-1)
    if llrs.size % 2:
        raise ValueError(f"soft block length must be even, got {llrs.size}")
    if not np.all(np.isfinite(llrs)):
        raise ValueError("soft block contains non-finite LLRs")
    if hard:
        llrs = np.sign(llrs)
    if llrs.size == 0:
        return np.zeros(0, dtype=np.uint8)
    return _viterbi_kernel(np.ascontiguousarray(llrs[0::2]), np.ascontiguousarray(llrs[1::2]),
                           _OUT_A, _OUT_B, bool(terminated))


def hard_llr(bits, magnitude: float = 1.0) -> np.ndarray:
    """Map bits to noiseless LLRs: 0 -> +magnitude, 1 -> -magnitude."""
    return magnitude * (1.0 - 2.0 * np.asarray(bits, dtype=np.float64))
