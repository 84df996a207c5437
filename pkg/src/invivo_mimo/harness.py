"""
Monte-Carlo link engine: TX chain -> channel -> RX chain, error counting,
Wilson intervals and the MCS / distance sweeps.

Every frame draws its randomness from ``SeedSequence(seed, spawn_key=(frame, purpose))``
so counts depend only on the master seed and the frame indices, never on
how frames are split across workers or runs.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import coding, modem
from .channel import (ChannelResponse, LinkBudget, SyntheticParams, apply_channel,
                      channel_from_network, load_touchstone, synthetic_channel, tx_amplitude)
from .phy_params import (SERVICE_BITS, TAIL_BITS, data_rate, get_numerology, mcs_lookup,
                         num_symbols)

log = logging.getLogger(__name__)

Z_95 = 1.96

# Two reference BER levels used when annotating results: a strict one for
# error-sensitive links and a looser "minimum usable" one. Neither is
# treated as the pass mark.
BER_TARGETS = (1e-6, 1e-3)

_PAYLOAD, _NOISE, _CHANNEL = 0, 1, 2
_FIXED_FRAME = 2**32 - 1  # spawn key slot for frame-independent channel draws

CSV_FIELDS = ("mode", "mcs", "rate_mbps", "bandwidth_mhz", "gi_ns", "distance_mm", "tx_power_dbm",
              "noise_dbm", "frames", "bits", "bit_errors", "ber", "ber_ci_low", "ber_ci_high",
              "frame_errors", "fer", "seed")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelSource:
    """Where per-frame channel matrices come from.

    ``identity``: flat ``gain_db`` times the identity. ``touchstone``: an
    S-parameter file (``path``, ``port_map``), or one file per distance in
    ``distance_files``. ``synthetic``: :class:`SyntheticParams`.
    """

    kind: str = "identity"
    gain_db: float = 0.0
    path: str | None = None
    port_map: dict | None = None
    synthetic: SyntheticParams | None = None
    distance_files: dict | None = None
    distance_mm: float | None = None

    def __post_init__(self):
        if self.kind not in ("identity", "touchstone", "synthetic"):
            raise ConfigError(f"unknown channel kind {self.kind!r}")
        if self.kind == "touchstone" and not (self.path or self.distance_files):
            raise ConfigError("touchstone channel needs a path or distance_files")
        if self.kind == "synthetic" and self.synthetic is None:
            object.__setattr__(self, "synthetic", SyntheticParams())

    @property
    def distance(self) -> float | None:
        if self.kind == "synthetic":
            return self.synthetic.distance_mm
        return self.distance_mm


@dataclass(frozen=True)
class SimConfig:
    mcs: int = 0
    bandwidth: int = 20
    guard_interval: int = 800
    psdu_bytes: int = 1000
    n_frames: int = 10000
    seed: int = 0
    detector: str = "MMSE"
    channel: ChannelSource = field(default_factory=ChannelSource)
    budget: LinkBudget = field(default_factory=LinkBudget)
    regeneration: str | None = None
    frame_offset: int = 0
    decoding: str = "soft"
    bypass_fec: bool = False
    power_mode: str = "total"
    carrier_freq: float = 2.4e9

    def __post_init__(self):
        if self.n_frames < 1:
            raise ConfigError("n_frames must be >= 1")
        if self.psdu_bytes < 1:
            raise ConfigError("psdu_bytes must be >= 1")
        if self.detector.upper() not in ("ZF", "MMSE"):
            raise ConfigError(f"unknown detector {self.detector!r}")
        if self.decoding not in ("soft", "hard"):
            raise ConfigError(f"decoding must be 'soft' or 'hard', got {self.decoding!r}")
        if self.regeneration not in (None, "per_frame", "fixed"):
            raise ConfigError(f"unknown regeneration policy {self.regeneration!r}")
        if self.power_mode not in ("total", "per_antenna"):
            raise ConfigError(f"unknown power mode {self.power_mode!r}")
        if self.frame_offset < 0:
            raise ConfigError("frame_offset must be >= 0")
        mcs_lookup(self.mcs, self.bandwidth)

    @property
    def policy(self) -> str:
        if self.regeneration is not None:
            return self.regeneration
        return "per_frame" if self.channel.kind == "synthetic" else "fixed"


@dataclass
class SimResult:
    mode: str
    mcs: int
    rate_mbps: float
    bandwidth_mhz: int
    gi_ns: int
    distance_mm: float | None
    tx_power_dbm: float
    noise_dbm: float
    frames: int
    bits: int
    bit_errors: int
    ber: float
    ber_ci_low: float
    ber_ci_high: float
    frame_errors: int
    fer: float
    seed: int
    elapsed: float = 0.0
    config: SimConfig | None = None

    def row(self) -> dict:
        return {name: getattr(self, name) for name in CSV_FIELDS}

    def meets(self, target: float) -> bool | None:
        """True if the whole interval is at or below ``target``, False if it is
        entirely above, None when the run is too short to tell."""
        if self.ber_ci_high <= target:
            return True
        if self.ber_ci_low > target:
            return False
        return None

    def annotations(self, targets=BER_TARGETS) -> dict[float, str]:
        words = {True: "met", False: "missed", None: "inconclusive"}
        return {t: words[self.meets(t)] for t in targets}


def ber_confidence(errors: int, bits: int, z: float = Z_95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if bits < 1 or not 0 <= errors <= bits:
        raise ValueError(f"need bits >= 1 and 0 <= errors <= bits, got {errors}/{bits}")
    p = errors / bits
    z2 = z * z
    denom = 1 + z2 / bits
    center = (p + z2 / (2 * bits)) / denom
    half = z / denom * math.sqrt(p * (1 - p) / bits + z2 / (4 * bits * bits))
    low = 0.0 if errors == 0 else max(0.0, min(p, center - half))
    high = 1.0 if errors == bits else min(1.0, max(p, center + half))
    return low, high


def _frame_rng(seed: int, frame: int, purpose: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(frame, purpose))


@lru_cache(maxsize=32)
def _network(path: str):
    return load_touchstone(path)


def _touchstone_path(source: ChannelSource) -> str:
    if source.path:
        return source.path
    if source.distance_mm is None:
        raise ConfigError("touchstone source has distance_files but no distance selected")
    for key, path in (source.distance_files or {}).items():
        if float(key) == float(source.distance_mm):
            return path
    raise ConfigError(f"no touchstone file for distance {source.distance_mm:g} mm")


def build_channel(config: SimConfig, frame: int) -> ChannelResponse:
    """Channel realisation (sliced to n_ss x n_ss) seen by ``frame``."""
    entry = mcs_lookup(config.mcs, config.bandwidth)
    numerology = get_numerology(config.bandwidth, config.carrier_freq)
    n = entry.n_ss
    source = config.channel
    if source.kind == "identity":
        return ChannelResponse.flat(numerology, 10 ** (source.gain_db / 20) * np.eye(n),
                                    {"source": "identity", "gain_db": source.gain_db})
    if source.kind == "touchstone":
        path = _touchstone_path(source)
        if not Path(path).is_file():
            raise FileNotFoundError(f"touchstone file not found: {path}")
        chan = channel_from_network(_network(str(path)), numerology, source.port_map, str(path))
    else:
        key = _FIXED_FRAME if config.policy == "fixed" else frame
        chan = synthetic_channel(source.synthetic, numerology, _frame_rng(config.seed, key, _CHANNEL))
    if chan.n_tx < n or chan.n_rx < n:
        raise ConfigError(f"MCS {config.mcs} needs {n} streams but the channel is {chan.n_rx}x{chan.n_tx}")
    return chan.sliced(n, n)


def simulate_frame(config: SimConfig, frame: int, chan: ChannelResponse) -> tuple[int, int]:
    """Run one frame end to end; returns (bit_errors, bits)."""
    entry = mcs_lookup(config.mcs, config.bandwidth)
    numerology = get_numerology(config.bandwidth, config.carrier_freq)
    rng = np.random.default_rng(_frame_rng(config.seed, frame, _PAYLOAD))
    n_sym = num_symbols(entry, config.psdu_bytes)

    if config.bypass_fec:
        payload = rng.integers(0, 2, n_sym * entry.n_cbps, dtype=np.uint8)
        coded = payload
    else:
        n_payload = 8 * config.psdu_bytes
        payload = rng.integers(0, 2, n_payload, dtype=np.uint8)
        scrambler_seed = int(rng.integers(1, 128))
        data = np.zeros(n_sym * entry.n_dbps, dtype=np.uint8)
        data[SERVICE_BITS:SERVICE_BITS + n_payload] = payload
        data = coding.scramble(data, scrambler_seed)
        tail = SERVICE_BITS + n_payload
        data[tail:tail + TAIL_BITS] = 0
        coded = coding.puncture(coding.bcc_encode(data), entry.code_rate)

    grid = modem.modulate(coded, entry, numerology)
    received, noise_var = apply_channel(grid, chan, config.budget, _frame_rng(config.seed, frame, _NOISE),
                                        config.power_mode)
    amp = tx_amplitude(config.budget, numerology.n_used, entry.n_ss, config.power_mode)
    eq = modem.equalize(received, chan.scaled(amp), noise_var, config.detector)
    llr = modem.demodulate(eq, entry, numerology)

    if config.bypass_fec:
        decided = (llr < 0).astype(np.uint8)
        return int(np.count_nonzero(decided != payload)), payload.size

    soft = coding.depuncture(llr, entry.code_rate)[:2 * (tail + TAIL_BITS)]
    decoded = coding.viterbi_decode(soft, terminated=True, hard=config.decoding == "hard")
    recovered = coding.descramble(decoded, scrambler_seed)[SERVICE_BITS:tail]
    return int(np.count_nonzero(recovered != payload)), payload.size


def _run_frames(config: SimConfig, start: int, stop: int) -> tuple[int, int, int]:
    bit_errors = bits = frame_errors = 0
    fixed = None
    for frame in range(start, stop):
        try:
            if config.policy == "fixed":
                if fixed is None:
                    fixed = build_channel(config, frame)
                chan = fixed
            else:
                chan = build_channel(config, frame)
            errs, n = simulate_frame(config, frame, chan)
        except (OSError, ValueError) as exc:
            raise type(exc)(f"frame {frame}: {exc}") from exc
        bit_errors += errs
        bits += n
        frame_errors += errs > 0
    return bit_errors, bits, frame_errors


def _chunks(start: int, count: int, parts: int) -> list[tuple[int, int]]:
    parts = max(1, min(parts, count))
    edges = np.linspace(start, start + count, parts + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _mode(n_ss: int) -> str:
    return "SISO" if n_ss == 1 else "MIMO"


def run_link(config: SimConfig, workers: int = 1) -> SimResult:
    """Simulate ``config.n_frames`` frames starting at ``config.frame_offset``."""
    entry = mcs_lookup(config.mcs, config.bandwidth)
    t0 = time.perf_counter()
    # resolve the channel once up front so configuration errors surface early
    build_channel(config, config.frame_offset)
    spans = _chunks(config.frame_offset, config.n_frames, workers)
    if workers > 1 and len(spans) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_frames, config, a, b) for a, b in spans]
            parts = [f.result() for f in futures]
    else:
        parts = [_run_frames(config, a, b) for a, b in spans]
    bit_errors = sum(p[0] for p in parts)
    bits = sum(p[1] for p in parts)
    frame_errors = sum(p[2] for p in parts)
    low, high = ber_confidence(bit_errors, bits)
    elapsed = time.perf_counter() - t0
    log.info("MCS %d: %d/%d bit errors, %d/%d frame errors (%.1f s)",
             config.mcs, bit_errors, bits, frame_errors, config.n_frames, elapsed)
    return SimResult(
        mode=_mode(entry.n_ss),
        mcs=config.mcs,
        rate_mbps=data_rate(entry, config.bandwidth, config.guard_interval),
        bandwidth_mhz=config.bandwidth,
        gi_ns=config.guard_interval,
        distance_mm=config.channel.distance,
        tx_power_dbm=config.budget.tx_power_dbm,
        noise_dbm=config.budget.noise_dbm,
        frames=config.n_frames,
        bits=bits,
        bit_errors=bit_errors,
        ber=bit_errors / bits,
        ber_ci_low=low,
        ber_ci_high=high,
        frame_errors=frame_errors,
        fer=frame_errors / config.n_frames,
        seed=config.seed,
        elapsed=elapsed,
        config=config,
    )


def sweep_mcs(base: SimConfig, mcs_list, mode: str, workers: int = 1) -> list[SimResult]:
    """One row per MCS, in the given order, all sharing the base seed (paired channels and noise)."""
    mode = mode.upper()
    allowed = {"SISO": range(0, 8), "MIMO": range(8, 16)}.get(mode)
    if allowed is None:
        raise ValueError(f"mode must be SISO or MIMO, got {mode!r}")
    mcs_list = list(mcs_list)
    for m in mcs_list:
        if m not in allowed:
            raise ValueError(f"MCS {m} does not match {mode} mode ({allowed.start}-{allowed.stop - 1})")
    return [run_link(replace(base, mcs=m), workers) for m in mcs_list]


def with_distance(base: SimConfig, distance_mm: float) -> SimConfig:
    source = base.channel
    if source.kind == "synthetic":
        source = replace(source, synthetic=replace(source.synthetic, distance_mm=float(distance_mm)))
    elif source.kind == "touchstone":
        if not source.distance_files:
            raise ConfigError("distance sweep over touchstone data needs distance_files")
        source = replace(source, path=None, distance_mm=float(distance_mm))
        _touchstone_path(source)
    else:
        raise ConfigError("distance sweep needs a synthetic or per-distance touchstone channel")
    return replace(base, channel=source)


def sweep_distance(base: SimConfig, distances_mm, mcs_list, workers: int = 1) -> list[SimResult]:
    """One row per (distance, mcs), distance-major."""
    rows = []
    for d in distances_mm:
        cfg = with_distance(base, d)
        for m in mcs_list:
            rows.append(run_link(replace(cfg, mcs=m), workers))
    return rows


def config_to_dict(config: SimConfig) -> dict:
    return asdict(config)
