"""
Coded bits <-> frequency-domain OFDM grid.

TX: stream parser, per-stream 802.11n interleaver (with frequency rotation
for the second stream), Gray-mapped BPSK/QPSK/16-QAM/64-QAM, pilot insertion.
RX: per-subcarrier ZF/MMSE equalisation and max-log LLR demapping.

The grid has no time-domain waveform behind it; the channel is applied per
subcarrier (the guard interval is assumed to absorb the delay spread).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coding import scrambler_sequence
from .phy_params import McsEntry, Modulation, Numerology

# 1/sqrt of the mean energy of the unnormalised integer constellation
_NORM = {
    Modulation.BPSK: 1.0,
    Modulation.QPSK: 1.0 / np.sqrt(2.0),
    Modulation.QAM16: 1.0 / np.sqrt(10.0),
    Modulation.QAM64: 1.0 / np.sqrt(42.0),
}

# post-SNR is capped so noiseless links still produce finite LLRs
MAX_POST_SNR = 1e12

_PILOT_POLARITY = 1 - 2 * scrambler_sequence(0x7F, 127).astype(np.int8)

_PILOT_PATTERNS = {
    (20, 1): [[1, 1, 1, -1]],
    (20, 2): [[1, 1, -1, -1], [1, -1, -1, 1]],
    (40, 1): [[1, 1, 1, -1, -1, 1]],
    (40, 2): [[1, 1, -1, -1, -1, -1], [1, 1, 1, -1, 1, 1]],
}
# data symbols follow L-SIG and two HT-SIG symbols in the polarity sequence
_PILOT_OFFSET = 3


class SingularChannelError(np.linalg.LinAlgError):
    pass


@dataclass
class FrequencyGrid:
    """Frequency-domain OFDM symbols.

    ``data`` has shape (n_sym, n_streams, n_sd) over ``numerology.data_indices``
    and ``pilots`` has shape (n_sym, n_streams, n_sp) over ``pilot_indices``.
    At the receiver the stream axis indexes receive antennas.
    """

    data: np.ndarray
    pilots: np.ndarray
    numerology: Numerology

    @property
    def n_sym(self) -> int:
        return self.data.shape[0]

    @property
    def n_streams(self) -> int:
        return self.data.shape[1]

    def used(self) -> np.ndarray:
        """All used subcarriers in ascending index order, shape (n_sym, n_streams, n_used)."""
        order = np.argsort(self.numerology.data_indices + self.numerology.pilot_indices)
        return np.concatenate([self.data, self.pilots], axis=2)[:, :, order]

    @classmethod
    def from_used(cls, values: np.ndarray, numerology: Numerology) -> FrequencyGrid:
        used = numerology.used_indices
        pos = {k: i for i, k in enumerate(used)}
        data_pos = [pos[k] for k in numerology.data_indices]
        pilot_pos = [pos[k] for k in numerology.pilot_indices]
        return cls(values[:, :, data_pos], values[:, :, pilot_pos], numerology)

    def data_energy(self) -> float:
        return float(np.sum(np.abs(self.data) ** 2))


@dataclass
class EqualizedGrid:
    estimates: np.ndarray
    post_snr: np.ndarray


def _stream_block(n_bpscs: int) -> int:
    return max(1, n_bpscs // 2)


def stream_parse(bits, n_ss: int, n_bpscs: int) -> np.ndarray:
    """Round-robin ``max(1, n_bpscs/2)`` bits at a time onto ``n_ss`` streams.

    Returns an array of shape (n_ss, len(bits) // n_ss). Works on LLRs too.
    """
    values = np.asarray(bits).reshape(-1)
    s = _stream_block(n_bpscs)
    if values.size % (s * n_ss):
        raise ValueError(f"{values.size} bits do not split into {n_ss} streams of {s}-bit blocks")
    return values.reshape(-1, n_ss, s).transpose(1, 0, 2).reshape(n_ss, -1)


def stream_deparse(streams, n_bpscs: int) -> np.ndarray:
    streams = np.asarray(streams)
    n_ss = streams.shape[0]
    s = _stream_block(n_bpscs)
    if streams.shape[1] % s:
        raise ValueError(f"stream length {streams.shape[1]} is not a multiple of {s}")
    return streams.reshape(n_ss, -1, s).transpose(1, 0, 2).reshape(-1)


def interleaver_permutation(n_bpscs: int, stream_index: int, numerology: Numerology) -> np.ndarray:
    """Output position of each input bit for one OFDM symbol of one stream."""
    n_col = numerology.interleaver_cols
    n_row = (4 if numerology.bandwidth == 20 else 6) * n_bpscs
    n_cbpss = numerology.n_sd * n_bpscs
    n_rot = numerology.interleaver_rot
    s = _stream_block(n_bpscs)
    k = np.arange(n_cbpss)
    i = n_row * (k % n_col) + k // n_col
    j = s * (i // s) + (i + n_cbpss - (n_col * i) // n_cbpss) % s
    shift = ((2 * stream_index) % 3 + 3 * (stream_index // 3)) * n_rot * n_bpscs
    return (j - shift) % n_cbpss


def interleave(stream_bits, n_bpscs: int, stream_index: int, numerology: Numerology) -> np.ndarray:
    """Interleave the last axis (one OFDM symbol, ``n_sd * n_bpscs`` bits)."""
    values = np.asarray(stream_bits)
    n = numerology.n_sd * n_bpscs
    if values.shape[-1] != n:
        raise ValueError(f"expected {n} bits per symbol, got {values.shape[-1]}")
    perm = interleaver_permutation(n_bpscs, stream_index, numerology)
    out = np.empty_like(values)
    out[..., perm] = values
    return out


def deinterleave(stream_bits, n_bpscs: int, stream_index: int, numerology: Numerology) -> np.ndarray:
    values = np.asarray(stream_bits)
    n = numerology.n_sd * n_bpscs
    if values.shape[-1] != n:
        raise ValueError(f"expected {n} bits per symbol, got {values.shape[-1]}")
    perm = interleaver_permutation(n_bpscs, stream_index, numerology)
    return values[..., perm]


def _axis_levels(n_axis_bits: int) -> np.ndarray:
    """Gray-coded PAM levels indexed by the axis label (first bit is MSB)."""
    labels = np.arange(1 << n_axis_bits)
    gray_rank = labels.copy()
    shift = labels >> 1
    while shift.any():
        gray_rank ^= shift
        shift >>= 1
    return 2 * gray_rank - ((1 << n_axis_bits) - 1)


def _axis_bits(modulation: Modulation) -> tuple[int, int]:
    nb = modulation.bits_per_symbol
    if modulation is Modulation.BPSK:
        return 1, 0
    return nb // 2, nb // 2


def constellation(modulation: Modulation) -> np.ndarray:
    """Normalised points indexed by the label with the first bit as MSB."""
    modulation = Modulation(modulation)
    n_i, n_q = _axis_bits(modulation)
    levels_i = _axis_levels(n_i)
    if n_q == 0:
        pts = levels_i.astype(complex)
    else:
        levels_q = _axis_levels(n_q)
        pts = (levels_i[:, None] + 1j * levels_q[None, :]).reshape(-1)
    return pts * _NORM[modulation]


def _pack(bits: np.ndarray) -> np.ndarray:
    weights = 1 << np.arange(bits.shape[-1] - 1, -1, -1)
    return bits.astype(np.int64) @ weights


def map_symbols(bits, modulation) -> np.ndarray:
    modulation = Modulation(modulation)
    bits = np.asarray(bits, dtype=np.uint8)
    nb = modulation.bits_per_symbol
    if bits.shape[-1] % nb:
        raise ValueError(f"{bits.shape[-1]} bits is not a multiple of {nb} for {modulation.value}")
    groups = bits.reshape(*bits.shape[:-1], -1, nb)
    return constellation(modulation)[_pack(groups)]


def _axis_llr(x: np.ndarray, n_axis_bits: int, scale: float) -> np.ndarray:
    """Max-log distance differences for one real axis, shape x.shape + (n_axis_bits,)."""
    levels = _axis_levels(n_axis_bits) * scale
    d2 = (x[..., None] - levels) ** 2
    labels = np.arange(levels.size)
    out = np.empty(x.shape + (n_axis_bits,))
    for b in range(n_axis_bits):
        ones = ((labels >> (n_axis_bits - 1 - b)) & 1).astype(bool)
        out[..., b] = d2[..., ones].min(axis=-1) - d2[..., ~ones].min(axis=-1)
    return out


def demap_llr(estimate, post_snr, modulation) -> np.ndarray:
    """Max-log LLRs (positive favours 0) for every bit of every estimate.

    Output has shape ``estimate.shape[:-1] + (estimate.shape[-1] * n_bpscs,)``
    with the bits of each symbol contiguous.
    """
    modulation = Modulation(modulation)
    z = np.asarray(estimate, dtype=complex)
    snr = np.broadcast_to(np.asarray(post_snr, dtype=float), z.shape)
    n_i, n_q = _axis_bits(modulation)
    scale = _NORM[modulation]
    parts = [_axis_llr(z.real, n_i, scale)]
    if n_q:
        parts.append(_axis_llr(z.imag, n_q, scale))
    llr = np.concatenate(parts, axis=-1) * snr[..., None]
    return llr.reshape(*z.shape[:-1], -1)


def pilot_values(numerology: Numerology, n_ss: int, n_sym: int, first_symbol: int = 0) -> np.ndarray:
    pattern = np.asarray(_PILOT_PATTERNS[(numerology.bandwidth, n_ss)], dtype=float)
    n_sp = pattern.shape[1]
    out = np.empty((n_sym, n_ss, n_sp), dtype=complex)
    for n in range(n_sym):
        sym = first_symbol + n
        polarity = _PILOT_POLARITY[(sym + _PILOT_OFFSET) % 127]
        rotated = np.roll(pattern, -(sym % n_sp), axis=1)
        out[n] = polarity * rotated
    return out


def assemble_grid(stream_symbols, numerology: Numerology, n_sym: int, first_symbol: int = 0) -> FrequencyGrid:
    """Place per-stream data symbols (shape (n_ss, n_sd * n_sym)) and pilots on a grid."""
    symbols = np.asarray(stream_symbols, dtype=complex)
    if symbols.ndim == 1:
        symbols = symbols[None, :]
    n_ss = symbols.shape[0]
    expected = numerology.n_sd * n_sym
    if symbols.shape[1] != expected:
        raise ValueError(f"expected {expected} symbols per stream for {n_sym} OFDM symbols, got {symbols.shape[1]}")
    data = symbols.reshape(n_ss, n_sym, numerology.n_sd).transpose(1, 0, 2)
    return FrequencyGrid(np.ascontiguousarray(data), pilot_values(numerology, n_ss, n_sym, first_symbol), numerology)


def modulate(coded_bits, entry: McsEntry, numerology: Numerology) -> FrequencyGrid:
    """Full TX mapping of a coded, padded bit block onto a grid."""
    bits = np.asarray(coded_bits, dtype=np.uint8)
    if bits.size % entry.n_cbps:
        raise ValueError(f"{bits.size} coded bits is not a whole number of {entry.n_cbps}-bit symbols")
    n_sym = bits.size // entry.n_cbps
    streams = stream_parse(bits, entry.n_ss, entry.n_bpscs).reshape(entry.n_ss, n_sym, entry.n_cbpss)
    symbols = np.empty((entry.n_ss, n_sym * numerology.n_sd), dtype=complex)
    for iss in range(entry.n_ss):
        inter = interleave(streams[iss], entry.n_bpscs, iss, numerology)
        symbols[iss] = map_symbols(inter, entry.modulation).reshape(-1)
    return assemble_grid(symbols, numerology, n_sym)


def demodulate(eq: EqualizedGrid, entry: McsEntry, numerology: Numerology) -> np.ndarray:
    """Inverse of :func:`modulate` in the LLR domain."""
    est = eq.estimates.transpose(1, 0, 2)
    snr = eq.post_snr.transpose(1, 0, 2)
    n_sym = est.shape[1]
    streams = np.empty((entry.n_ss, n_sym, entry.n_cbpss))
    for iss in range(entry.n_ss):
        llr = demap_llr(est[iss], snr[iss], entry.modulation)
        streams[iss] = deinterleave(llr, entry.n_bpscs, iss, numerology)
    return stream_deparse(streams.reshape(entry.n_ss, -1), entry.n_bpscs)


def equalize(received: FrequencyGrid, H, noise_var: float, method: str = "MMSE") -> EqualizedGrid:
    """Linear per-subcarrier detection of the data subcarriers.

    ``H`` is either an object with an ``at(indices)`` method (a channel
    response) or an array of shape (n_sd, n_rx, n_tx). MMSE estimates are
    bias-corrected so both detectors return unbiased symbol estimates;
    ``post_snr`` is the per-stream SINR after combining.
    """
    method = method.upper()
    if method not in ("ZF", "MMSE"):
        raise ValueError(f"unknown detector {method!r}")
    if hasattr(H, "at"):
        H = H.at(received.numerology.data_indices)
    H = np.asarray(H, dtype=complex)
    n_sd = received.data.shape[2]
    if H.ndim == 2:
        H = np.broadcast_to(H, (n_sd,) + H.shape)
    if H.shape[0] != n_sd or H.shape[1] != received.n_streams:
        raise ValueError(f"channel shape {H.shape} does not match received grid {received.data.shape}")
    if noise_var < 0:
        raise ValueError("noise_var must be non-negative")
    n_tx = H.shape[2]
    Hh = np.conj(np.swapaxes(H, 1, 2))
    gram = Hh @ H
    reg = noise_var if method == "MMSE" else 0.0
    if reg == 0.0:
        sv = np.linalg.svd(H, compute_uv=False)
        if np.any(sv[:, -1] <= 1e-10 * np.maximum(sv[:, 0], np.finfo(float).tiny)) or H.shape[1] < n_tx:
            raise SingularChannelError("channel Gram matrix is rank deficient")
    A = gram + reg * np.eye(n_tx)
    W = np.linalg.solve(A, Hh)
    G = W @ H
    gain = np.real(np.diagonal(G, axis1=1, axis2=2))

    y = received.data.transpose(2, 1, 0)
    x = (W @ y)
    safe_gain = np.where(gain > 0, gain, 1.0)
    x = np.where(gain[:, :, None] > 0, x / safe_gain[:, :, None], 0.0)

    interference = np.sum(np.abs(G) ** 2, axis=2) - np.abs(np.diagonal(G, axis1=1, axis2=2)) ** 2
    noise = noise_var * np.sum(np.abs(W) ** 2, axis=2)
    denom = np.maximum(interference, 0.0) + noise
    with np.errstate(divide="ignore", invalid="ignore"):
        snr = np.where(denom > 0, gain ** 2 / denom, MAX_POST_SNR)
    snr = np.where(gain > 0, np.minimum(snr, MAX_POST_SNR), 0.0)

    estimates = x.transpose(2, 1, 0)
    post = np.broadcast_to(snr.T[None, :, :], estimates.shape).copy()
    return EqualizedGrid(np.ascontiguousarray(estimates), post)
