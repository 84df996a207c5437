"""
Per-subcarrier MIMO channels and the thermal-noise link budget.

Channels come either from Touchstone v1 S-parameter exports (interpolated
onto the OFDM subcarriers) or from a parametric path-loss + Rician +
Kronecker-correlated multipath model. :func:`apply_channel` scales a
transmit grid to the configured radiated power, applies H and adds noise.
"""
from __future__ import annotations

import io
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .modem import FrequencyGrid
from .phy_params import Numerology

DEFAULT_TX_POWER_W = 0.412e-3
DEFAULT_NOISE_DBM = -101.0

_FREQ_UNITS = {"hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9}
_PORTS_FROM_SUFFIX = re.compile(r"\.s(\d+)p$", re.IGNORECASE)


class TouchstoneError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ChannelRangeError(ValueError):
    pass


def dbm_to_w(dbm: float) -> float:
    return 1e-3 * 10 ** (dbm / 10)


def w_to_dbm(watts: float) -> float:
    if watts <= 0:
        return float("-inf")
    return 10 * math.log10(watts / 1e-3)


@dataclass(frozen=True)
class LinkBudget:
    """Total radiated power and in-band thermal noise power, in watts.

    ``noise_power_w = 0`` gives a noiseless link (test use).
    """

    tx_power_w: float = DEFAULT_TX_POWER_W
    noise_power_w: float = dbm_to_w(DEFAULT_NOISE_DBM)
    bandwidth: int = 20

    def __post_init__(self):
        if not self.tx_power_w > 0:
            raise ValueError("tx_power_w must be > 0")
        if self.noise_power_w < 0:
            raise ValueError("noise_power_w must be >= 0")

    @classmethod
    def from_dbm(cls, tx_dbm: float, noise_dbm: float | None = DEFAULT_NOISE_DBM, bandwidth: int = 20):
        noise = 0.0 if noise_dbm is None else dbm_to_w(noise_dbm)
        return cls(dbm_to_w(tx_dbm), noise, bandwidth)

    @property
    def tx_power_dbm(self) -> float:
        return w_to_dbm(self.tx_power_w)

    @property
    def noise_dbm(self) -> float:
        return w_to_dbm(self.noise_power_w)


@dataclass(frozen=True)
class ScenarioDescriptor:
    scenario: int
    mimo_xy_mm: tuple[tuple[float, float], tuple[float, float]]
    siso_x_mm: float
    note: str = ("in-vivo MIMO pair 14 cm either side of the origin along Y; "
                 "SISO in-vivo antenna at the origin; ex-vivo antennas in the same plane")

    @property
    def distance_mm(self) -> float:
        return self.siso_x_mm


SCENARIOS = {
    1: ScenarioDescriptor(1, ((130.0, 50.0), (130.0, -50.0)), 130.0),
    2: ScenarioDescriptor(2, ((100.0, 50.0), (100.0, -50.0)), 100.0),
    3: ScenarioDescriptor(3, ((70.0, 30.0), (70.0, -30.0)), 70.0),
}


# --------------------------------------------------------------------------
# Touchstone
# --------------------------------------------------------------------------

@dataclass
class SParamNetwork:
    freqs: np.ndarray
    s: np.ndarray
    z0: float = 50.0
    comments: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=float)
        self.s = np.asarray(self.s, dtype=complex)
        if self.s.ndim != 3 or self.s.shape[1] != self.s.shape[2] or self.s.shape[0] != self.freqs.size:
            raise ValueError(f"S-parameter array shape {self.s.shape} does not match {self.freqs.size} frequencies")
        if np.any(np.diff(self.freqs) <= 0):
            raise ValueError("frequencies must be strictly increasing")

    @property
    def n_ports(self) -> int:
        return self.s.shape[1]

    def sparam(self, to_port: int, from_port: int) -> np.ndarray:
        """S_{to,from} over frequency, 1-based ports."""
        return self.s[:, to_port - 1, from_port - 1]


def _to_complex(a: np.ndarray, b: np.ndarray, fmt: str) -> np.ndarray:
    if fmt == "RI":
        return a + 1j * b
    if fmt == "DB":
        a = 10 ** (a / 20)
    return a * np.exp(1j * np.deg2rad(b))


def _parse_option_line(tokens: list[str], lineno: int) -> tuple[float, str, float]:
    unit, fmt, z0 = 1e9, "MA", 50.0
    i = 0
    while i < len(tokens):
        tok = tokens[i].upper()
        if tok.lower() in _FREQ_UNITS:
            unit = _FREQ_UNITS[tok.lower()]
        elif tok in ("S", "Y", "Z", "H", "G"):
            if tok != "S":
                raise TouchstoneError(f"parameter type {tok} is not supported, only S", lineno)
        elif tok in ("MA", "DB", "RI"):
            fmt = tok
        elif tok == "R":
            if i + 1 >= len(tokens):
                raise TouchstoneError("option line R without a value", lineno)
            try:
                z0 = float(tokens[i + 1])
            except ValueError:
                raise TouchstoneError(f"bad reference resistance {tokens[i + 1]!r}", lineno) from None
            i += 1
        else:
            raise TouchstoneError(f"unknown option {tokens[i]!r}", lineno)
        i += 1
    return unit, fmt, z0


def parse_touchstone(text, expected_ports: int | None = None) -> SParamNetwork:
    """Parse Touchstone v1 content (a string, file object or iterable of lines)."""
    if isinstance(text, str):
        lines: Iterable[str] = io.StringIO(text)
    else:
        lines = text
    unit, fmt, z0 = 1e9, "MA", 50.0
    seen_option = False
    n = expected_ports
    comments: list[str] = []
    records: list[np.ndarray] = []
    current: list[float] = []
    start_line = 0
    last_line = 0

    def need() -> int:
        return 1 + 2 * n * n

    for lineno, raw in enumerate(lines, start=1):
        line, _, comment = raw.partition("!")
        if comment.strip() and not records and not current:
            comments.append(comment.strip())
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if not seen_option:
                unit, fmt, z0 = _parse_option_line(line[1:].split(), lineno)
                seen_option = True
            continue
        if line.startswith("["):
            raise TouchstoneError(f"Touchstone v2 keyword {line.split()[0]} is not supported", lineno)
        try:
            values = [float(tok) for tok in line.split()]
        except ValueError as exc:
            raise TouchstoneError(f"malformed data row: {exc}", lineno) from None
        last_line = lineno
        if not current:
            if n is None:
                inferred = {3: 1, 9: 2}.get(len(values))
                if inferred is None:
                    raise TouchstoneError(
                        f"cannot infer port count from a {len(values)}-value row; pass expected_ports", lineno)
                n = inferred
            if len(values) % 2 == 0:
                raise TouchstoneError(
                    f"row has {len(values)} values, expected a frequency followed by complex pairs "
                    f"(wrong port count for a {n}-port file?)", lineno)
            if n == 2 and len(values) == 5 and records and values[0] <= records[-1][0]:
                break  # two-port noise parameters follow; not used
            start_line = lineno
        elif len(values) % 2:
            raise TouchstoneError(
                f"row has {len(values)} values but the {n}-port record started on line {start_line} "
                f"is incomplete (wrong port count?)", lineno)
        current.extend(values)
        if len(current) > need():
            raise TouchstoneError(
                f"record has {len(current)} values, expected {need()} for {n} ports", lineno)
        if len(current) == need():
            rec = np.asarray(current)
            if records and rec[0] <= records[-1][0]:
                raise TouchstoneError(
                    f"frequency {rec[0]:g} is not above the previous {records[-1][0]:g}", start_line)
            records.append(rec)
            current = []
    if current:
        raise TouchstoneError(
            f"truncated record: {len(current)} of {need()} values for a {n}-port file", last_line)
    if len(records) < 2:
        raise TouchstoneError(f"need at least 2 frequency points, found {len(records)}", last_line or None)

    data = np.vstack(records)
    freqs = data[:, 0] * unit
    pairs = data[:, 1:].reshape(len(records), n * n, 2)
    vals = _to_complex(pairs[..., 0], pairs[..., 1], fmt).reshape(len(records), n, n)
    if n == 2:
        # two-port order is S11 S21 S12 S22
        vals = vals.transpose(0, 2, 1)
    return SParamNetwork(freqs, vals, z0, comments)


def ports_from_path(path) -> int | None:
    m = _PORTS_FROM_SUFFIX.search(str(path))
    return int(m.group(1)) if m else None


def load_touchstone(path, expected_ports: int | None = None) -> SParamNetwork:
    path = Path(path)
    if expected_ports is None:
        expected_ports = ports_from_path(path)
    with path.open() as fh:
        return parse_touchstone(fh, expected_ports)


def serialize_touchstone(net: SParamNetwork, fmt: str = "RI") -> str:
    """Write a Touchstone v1 string with frequencies in Hz (exact float round trip for RI)."""
    fmt = fmt.upper()
    n = net.n_ports
    out = io.StringIO()
    for c in net.comments:
        out.write(f"! {c}\n")
    out.write(f"# Hz S {fmt} R {net.z0:.17g}\n")
    for f, mat in zip(net.freqs, net.s):
        if n == 2:
            mat = mat.T
        if fmt == "RI":
            a, b = mat.real, mat.imag
        elif fmt == "MA":
            a, b = np.abs(mat), np.rad2deg(np.angle(mat))
        elif fmt == "DB":
            a, b = 20 * np.log10(np.abs(mat)), np.rad2deg(np.angle(mat))
        else:
            raise ValueError(f"unknown format {fmt}")
        pairs = [f"{x:.17g} {y:.17g}" for x, y in zip(a.reshape(-1), b.reshape(-1))]
        if n <= 2:
            out.write(f"{f:.17g} " + " ".join(pairs) + "\n")
        else:
            for r in range(n):
                row = pairs[r * n:(r + 1) * n]
                for c0 in range(0, n, 4):
                    prefix = f"{f:.17g} " if r == 0 and c0 == 0 else "    "
                    out.write(prefix + " ".join(row[c0:c0 + 4]) + "\n")
    return out.getvalue()


# --------------------------------------------------------------------------
# Channel responses
# --------------------------------------------------------------------------

@dataclass
class ChannelResponse:
    """Complex H[k] of shape (n_sc, n_rx, n_tx) per subcarrier index."""

    subcarrier_indices: tuple[int, ...]
    subcarrier_freqs: np.ndarray
    H: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.subcarrier_indices = tuple(int(k) for k in self.subcarrier_indices)
        self.H = np.asarray(self.H, dtype=complex)
        if self.H.ndim != 3 or self.H.shape[0] != len(self.subcarrier_indices):
            raise ValueError(f"H shape {self.H.shape} does not match {len(self.subcarrier_indices)} subcarriers")
        if not np.all(np.isfinite(self.H)):
            raise ValueError("channel matrix has non-finite entries")
        self._pos = {k: i for i, k in enumerate(self.subcarrier_indices)}

    @property
    def n_rx(self) -> int:
        return self.H.shape[1]

    @property
    def n_tx(self) -> int:
        return self.H.shape[2]

    def at(self, indices) -> np.ndarray:
        try:
            rows = [self._pos[int(k)] for k in indices]
        except KeyError as exc:
            raise ValueError(f"subcarrier {exc.args[0]} is not covered by this channel") from None
        return self.H[rows]

    def sliced(self, n_rx: int, n_tx: int) -> ChannelResponse:
        """Top-left ``n_rx`` x ``n_tx`` sub-channel (e.g. the SISO slice of a 2x2 link)."""
        if n_rx > self.n_rx or n_tx > self.n_tx:
            raise ValueError(f"cannot take a {n_rx}x{n_tx} slice of a {self.n_rx}x{self.n_tx} channel")
        return ChannelResponse(self.subcarrier_indices, self.subcarrier_freqs,
                               self.H[:, :n_rx, :n_tx], dict(self.provenance))

    def scaled(self, amplitude: float) -> ChannelResponse:
        return ChannelResponse(self.subcarrier_indices, self.subcarrier_freqs,
                               self.H * amplitude, dict(self.provenance))

    @classmethod
    def flat(cls, numerology: Numerology, matrix, provenance: dict | None = None) -> ChannelResponse:
        matrix = np.atleast_2d(np.asarray(matrix, dtype=complex))
        idx = numerology.used_indices
        H = np.broadcast_to(matrix, (len(idx),) + matrix.shape).copy()
        return cls(idx, numerology.subcarrier_freqs(idx), H, provenance or {"source": "flat"})

    @classmethod
    def identity(cls, numerology: Numerology, n: int = 1) -> ChannelResponse:
        return cls.flat(numerology, np.eye(n), {"source": "identity", "n": n})


def default_port_map(n_ports: int) -> dict:
    if n_ports == 4:
        return {"tx": (1, 2), "rx": (3, 4)}
    if n_ports == 2:
        return {"tx": (1,), "rx": (2,)}
    raise ValueError(f"no default port map for a {n_ports}-port network; give tx/rx ports explicitly")


def to_channel_response(net: SParamNetwork, port_map: dict | None, subcarrier_freqs,
                        subcarrier_indices=None, source: str | None = None) -> ChannelResponse:
    """Interpolate transmission terms S[rx, tx] onto the subcarrier frequencies.

    Real and imaginary parts are interpolated linearly and independently.
    """
    port_map = port_map or default_port_map(net.n_ports)
    tx, rx = tuple(port_map["tx"]), tuple(port_map["rx"])
    for p in tx + rx:
        if not 1 <= p <= net.n_ports:
            raise ValueError(f"port {p} does not exist in a {net.n_ports}-port network")
    freqs = np.asarray(subcarrier_freqs, dtype=float)
    lo, hi = net.freqs[0], net.freqs[-1]
    bad = freqs[(freqs < lo) | (freqs > hi)]
    if bad.size:
        raise ChannelRangeError(
            f"subcarrier frequency {bad[0]:.6g} Hz is outside the network band {lo:.6g}-{hi:.6g} Hz")
    H = np.empty((freqs.size, len(rx), len(tx)), dtype=complex)
    for r, rp in enumerate(rx):
        for t, tp in enumerate(tx):
            trace = net.sparam(rp, tp)
            H[:, r, t] = np.interp(freqs, net.freqs, trace.real) + 1j * np.interp(freqs, net.freqs, trace.imag)
    if subcarrier_indices is None:
        subcarrier_indices = range(freqs.size)
    prov = {"source": "touchstone", "file": source, "tx_ports": tx, "rx_ports": rx}
    return ChannelResponse(tuple(subcarrier_indices), freqs, H, prov)


def channel_from_network(net: SParamNetwork, numerology: Numerology, port_map: dict | None = None,
                         source: str | None = None) -> ChannelResponse:
    idx = numerology.used_indices
    return to_channel_response(net, port_map, numerology.subcarrier_freqs(idx), idx, source)


@dataclass(frozen=True)
class SyntheticParams:
    """Parametric in-vivo link.

    Mean power gain follows ``path_gain_db - 10 * path_loss_exponent *
    log10(distance_mm / reference_mm)``. Small-scale structure is a Rician
    mix of a flat all-ones LOS matrix and an exponential power-delay profile
    of i.i.d. Rayleigh taps (``delay_spread_ns`` is the decay constant),
    spatially correlated by Kronecker factors ``rho_tx`` / ``rho_rx``.
    """

    path_gain_db: float = -49.0
    reference_mm: float = 50.0
    path_loss_exponent: float = 6.0
    distance_mm: float = 100.0
    rician_k: float = 1.0
    rho_tx: float = 0.3
    rho_rx: float = 0.3
    n_taps: int = 3
    delay_spread_ns: float = 50.0
    n_tx: int = 2
    n_rx: int = 2

    def __post_init__(self):
        if not self.path_loss_exponent > 0:
            raise ValueError("path_loss_exponent must be > 0")
        if not (0 <= self.rho_tx < 1 and 0 <= self.rho_rx < 1):
            raise ValueError("correlation coefficients must lie in [0, 1)")
        if self.rician_k < 0:
            raise ValueError("rician_k must be >= 0")
        if self.n_taps < 1:
            raise ValueError("n_taps must be >= 1")
        if self.distance_mm <= 0 or self.reference_mm <= 0:
            raise ValueError("distances must be > 0")
        if self.delay_spread_ns < 0:
            raise ValueError("delay_spread_ns must be >= 0")

    def mean_gain_db(self) -> float:
        return self.path_gain_db - 10 * self.path_loss_exponent * math.log10(self.distance_mm / self.reference_mm)


def exponential_correlation(n: int, rho: float) -> np.ndarray:
    idx = np.arange(n)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def power_delay_profile(n_taps: int, delay_spread_ns: float, bandwidth: int) -> tuple[np.ndarray, np.ndarray]:
    """Tap delays (s) at the sample spacing and normalised exponential powers."""
    delays = np.arange(n_taps) / (bandwidth * 1e6)
    if delay_spread_ns == 0:
        powers = np.zeros(n_taps)
        powers[0] = 1.0
    else:
        powers = np.exp(-delays / (delay_spread_ns * 1e-9))
    return delays, powers / powers.sum()


def synthetic_channel(params: SyntheticParams, numerology: Numerology, seed) -> ChannelResponse:
    rng = np.random.default_rng(seed)
    n_rx, n_tx = params.n_rx, params.n_tx
    delays, powers = power_delay_profile(params.n_taps, params.delay_spread_ns, numerology.bandwidth)
    g = (rng.standard_normal((params.n_taps, n_rx, n_tx))
         + 1j * rng.standard_normal((params.n_taps, n_rx, n_tx))) / np.sqrt(2)
    l_rx = np.linalg.cholesky(exponential_correlation(n_rx, params.rho_rx))
    l_tx = np.linalg.cholesky(exponential_correlation(n_tx, params.rho_tx))
    g = l_rx @ g @ l_tx.T

    idx = numerology.used_indices
    offsets = np.asarray(idx, dtype=float) * (numerology.subcarrier_freqs([1])[0] - numerology.carrier_freq)
    phase = np.exp(-2j * np.pi * offsets[:, None] * delays[None, :])
    nlos = np.einsum("kl,lrt->krt", phase * np.sqrt(powers)[None, :], g)

    k = params.rician_k
    los = np.ones((n_rx, n_tx), dtype=complex)
    H = math.sqrt(k / (k + 1)) * los + math.sqrt(1 / (k + 1)) * nlos
    H *= 10 ** (params.mean_gain_db() / 20)
    prov = {"source": "synthetic", "seed": repr(seed), "distance_mm": params.distance_mm,
            "mean_gain_db": params.mean_gain_db()}
    return ChannelResponse(idx, numerology.subcarrier_freqs(idx), H, prov)


# --------------------------------------------------------------------------
# Link application and budget
# --------------------------------------------------------------------------

def tx_amplitude(budget: LinkBudget, n_used: int, n_ss: int, power_mode: str = "total") -> float:
    """Per-stream amplitude on each used subcarrier for unit-energy symbols."""
    p_sc = budget.tx_power_w / n_used
    if power_mode == "total":
        return math.sqrt(p_sc / n_ss)
    if power_mode == "per_antenna":
        return math.sqrt(p_sc)
    raise ValueError(f"unknown power mode {power_mode!r}")


def noise_variance(budget: LinkBudget, n_used: int) -> float:
    return budget.noise_power_w / n_used


def noise_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


def apply_channel(grid: FrequencyGrid, chan: ChannelResponse, budget: LinkBudget, seed,
                  power_mode: str = "total") -> tuple[FrequencyGrid, float]:
    """Return the received grid and the per-subcarrier complex noise variance."""
    numerology = grid.numerology
    if grid.n_streams != chan.n_tx:
        raise ValueError(f"grid has {grid.n_streams} streams but the channel has {chan.n_tx} inputs")
    used = numerology.used_indices
    H = chan.at(used)
    x = grid.used()
    amp = tx_amplitude(budget, len(used), grid.n_streams, power_mode)
    y = amp * np.einsum("krt,ntk->nrk", H, x)
    var = noise_variance(budget, len(used))
    if var > 0:
        rng = noise_generator(seed)
        noise = rng.standard_normal(y.shape + (2,)) @ np.array([1.0, 1j])
        y = y + math.sqrt(var / 2) * noise
    return FrequencyGrid.from_used(y, numerology), var


@dataclass
class LinkReport:
    subcarrier_indices: tuple[int, ...]
    rx_power_w: np.ndarray        # (n_sc, n_rx), per subcarrier
    rx_power_total_w: float       # band total, averaged over receive antennas
    rx_power_dbm: float
    snr_db: float
    subcarrier_snr_db: np.ndarray


def link_budget_report(chan: ChannelResponse, budget: LinkBudget, power_mode: str = "total") -> LinkReport:
    n_sc = len(chan.subcarrier_indices)
    amp = tx_amplitude(budget, n_sc, chan.n_tx, power_mode)
    per_sc = amp ** 2 * np.sum(np.abs(chan.H) ** 2, axis=2)
    total = float(np.mean(per_sc.sum(axis=0)))
    rx_dbm = w_to_dbm(total)
    noise_dbm = budget.noise_dbm
    snr = rx_dbm - noise_dbm if total > 0 else float("-inf")
    sc_noise = budget.noise_power_w / n_sc
    with np.errstate(divide="ignore"):
        sc_snr = 10 * np.log10(per_sc.mean(axis=1) / sc_noise) if sc_noise > 0 else np.full(n_sc, np.inf)
    return LinkReport(chan.subcarrier_indices, per_sc, total, rx_dbm, snr, sc_snr)
