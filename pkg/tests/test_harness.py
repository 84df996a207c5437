import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from invivo_mimo.channel import LinkBudget, SyntheticParams
from invivo_mimo.harness import (BER_TARGETS, ChannelSource, ConfigError, SimConfig, ber_confidence, build_channel,
                                 run_link, sweep_distance, sweep_mcs)
from invivo_mimo.phy_params import data_rate, mcs_lookup

NOISELESS = LinkBudget(noise_power_w=0.0)


def synthetic(distance=110.0, **kw):
    return ChannelSource(kind="synthetic", synthetic=SyntheticParams(distance_mm=distance, **kw))


def counts(r):
    return (r.bits, r.bit_errors, r.frames, r.frame_errors)


def test_wilson_zero_errors():
    n = 1000
    low, high = ber_confidence(0, n)
    assert low == 0 and math.isclose(high, 1.96 ** 2 / (n + 1.96 ** 2))


def test_wilson_all_errors():
    low, high = ber_confidence(50, 50)
    assert high == 1 and low < 1


@given(st.integers(1, 10**7), st.floats(0, 1))
def test_wilson_contains_estimate(bits, frac):
    errors = int(frac * bits)
    low, high = ber_confidence(errors, bits)
    assert 0 <= low <= errors / bits <= high <= 1


def test_wilson_rejects():
    with pytest.raises(ValueError):
        ber_confidence(3, 0)
    with pytest.raises(ValueError):
        ber_confidence(5, 4)


@pytest.mark.parametrize("mcs", [0, 5, 8, 15])
@pytest.mark.parametrize("detector", ["ZF", "MMSE"])
def test_noiseless_identity(mcs, detector):
    r = run_link(SimConfig(mcs=mcs, n_frames=5, psdu_bytes=300, budget=NOISELESS, detector=detector))
    assert r.bit_errors == 0 and r.frame_errors == 0 and r.bits == 5 * 2400
    assert r.mode == ("SISO" if mcs < 8 else "MIMO")


def test_buried_signal_coin_flip():
    cfg = SimConfig(mcs=0, n_frames=126, channel=ChannelSource(gain_db=-200.0))
    r = run_link(cfg)
    assert r.bits >= 1_000_000
    assert abs(r.ber - 0.5) < 0.01


def test_worker_count_invariance():
    cfg = SimConfig(mcs=12, n_frames=12, psdu_bytes=200, seed=5, channel=synthetic(125.0))
    one = run_link(cfg, workers=1)
    many = run_link(cfg, workers=3)
    assert one.bit_errors > 0
    assert counts(one) == counts(many)


def test_restartable_split():
    cfg = SimConfig(mcs=13, n_frames=10, psdu_bytes=200, seed=9, channel=synthetic(125.0))
    whole = run_link(cfg)
    a = run_link(replace(cfg, n_frames=4))
    b = run_link(replace(cfg, n_frames=6, frame_offset=4))
    assert whole.bit_errors == a.bit_errors + b.bit_errors
    assert whole.frame_errors == a.frame_errors + b.frame_errors
    assert whole.bits == a.bits + b.bits


def test_channel_policy():
    cfg = SimConfig(mcs=8, n_frames=1, channel=synthetic())
    assert cfg.policy == "per_frame"
    assert not np.array_equal(build_channel(cfg, 0).H, build_channel(cfg, 1).H)
    fixed = replace(cfg, regeneration="fixed")
    assert np.array_equal(build_channel(fixed, 0).H, build_channel(fixed, 7).H)
    # SISO sees the top-left element of the same realisation
    siso = replace(fixed, mcs=0)
    assert np.array_equal(build_channel(siso, 3).H[:, 0, 0], build_channel(fixed, 3).H[:, 0, 0])
    assert SimConfig(channel=ChannelSource()).policy == "fixed"


def test_config_validation():
    with pytest.raises(ConfigError):
        SimConfig(n_frames=0)
    with pytest.raises(ConfigError):
        SimConfig(psdu_bytes=0)
    with pytest.raises(ConfigError):
        SimConfig(detector="ML")
    with pytest.raises(ValueError):
        SimConfig(mcs=16)
    with pytest.raises(ConfigError):
        ChannelSource(kind="touchstone")


def test_touchstone_errors(tmp_path, data_dir):
    missing = SimConfig(channel=ChannelSource(kind="touchstone", path=str(tmp_path / "nope.s4p")), n_frames=1)
    with pytest.raises(FileNotFoundError, match="nope.s4p"):
        run_link(missing)
    two_port = SimConfig(mcs=8, n_frames=1,
                         channel=ChannelSource(kind="touchstone", path=str(data_dir / "invivo_siso.s2p")))
    with pytest.raises(ConfigError, match="2 streams"):
        run_link(two_port)


def test_touchstone_link(data_dir):
    cfg = SimConfig(mcs=10, n_frames=5, psdu_bytes=200,
                    channel=ChannelSource(kind="touchstone", path=str(data_dir / "invivo_2x2.s4p")))
    r = run_link(cfg)
    assert r.ber == 0 and r.config.policy == "fixed"


def test_sweep_mcs_rows():
    base = SimConfig(n_frames=2, psdu_bytes=100, budget=NOISELESS)
    assert sweep_mcs(base, [], "SISO") == []
    rows = sweep_mcs(base, [10, 8, 9], "MIMO")
    assert [r.mcs for r in rows] == [10, 8, 9]
    for r in rows:
        assert r.rate_mbps == data_rate(mcs_lookup(r.mcs), 20, 800)
    paired = sweep_mcs(base, [2], "SISO") + sweep_mcs(base, [10], "MIMO")
    assert [r.rate_mbps for r in paired] == [19.5, 39.0]
    with pytest.raises(ValueError):
        sweep_mcs(base, [3], "MIMO")
    with pytest.raises(ValueError):
        sweep_mcs(base, [9], "SISO")


def test_sweep_distance_degenerate():
    base = SimConfig(mcs=13, n_frames=3, psdu_bytes=200, seed=2, channel=synthetic(100.0))
    rows = sweep_distance(base, [120.0], [13])
    direct = run_link(replace(base, channel=synthetic(120.0)))
    assert len(rows) == 1 and rows[0].distance_mm == 120.0
    assert counts(rows[0]) == counts(direct)


def test_sweep_distance_touchstone_files(data_dir):
    path = str(data_dir / "invivo_2x2.s4p")
    base = SimConfig(mcs=8, n_frames=1, psdu_bytes=50,
                     channel=ChannelSource(kind="touchstone", distance_files={70.0: path, 100.0: path}))
    rows = sweep_distance(base, [70, 100], [8, 9])
    assert [(r.distance_mm, r.mcs) for r in rows] == [(70, 8), (70, 9), (100, 8), (100, 9)]
    with pytest.raises(ConfigError, match="130"):
        sweep_distance(base, [130], [8])
    with pytest.raises(ConfigError):
        sweep_distance(SimConfig(n_frames=1), [70], [0])


def test_ber_monotone_in_distance_coarse():
    base = SimConfig(mcs=13, n_frames=30, psdu_bytes=500, seed=4, regeneration="fixed", channel=synthetic())
    rows = sweep_distance(base, [90, 110, 130], [13])
    for near, far in zip(rows, rows[1:]):
        assert far.ber >= near.ber or far.ber_ci_high >= near.ber_ci_low


def test_ber_non_increasing_in_power():
    base = SimConfig(mcs=12, n_frames=30, psdu_bytes=500, seed=6, regeneration="fixed", channel=synthetic(120.0))
    rows = [run_link(replace(base, budget=LinkBudget(tx_power_w=p))) for p in (0.2e-3, 0.412e-3, 1e-3)]
    assert rows[0].bit_errors > 0
    for weak, strong in zip(rows, rows[1:]):
        assert strong.ber <= weak.ber or strong.ber_ci_low <= weak.ber_ci_high


def test_hard_decoding_worse_than_soft():
    base = SimConfig(mcs=12, n_frames=20, psdu_bytes=500, seed=6, regeneration="fixed", channel=synthetic(120.0))
    soft = run_link(base)
    hard = run_link(replace(base, decoding="hard"))
    assert hard.ber > soft.ber


def test_target_annotations():
    clean = run_link(SimConfig(mcs=0, n_frames=2, psdu_bytes=300, budget=NOISELESS))
    assert clean.annotations() == {1e-6: "inconclusive", 1e-3: "met"}
    noisy = run_link(SimConfig(mcs=0, n_frames=2, psdu_bytes=100, channel=ChannelSource(gain_db=-200.0)))
    assert noisy.annotations() == {1e-6: "missed", 1e-3: "missed"}
    assert BER_TARGETS == (1e-6, 1e-3)


def test_distance_grid_cardinality():
    base = SimConfig(n_frames=1, psdu_bytes=20, channel=synthetic())
    rows = sweep_distance(base, range(70, 131, 5), [11, 12, 13, 14])
    assert len(rows) == 52
    assert sorted({r.distance_mm for r in rows}) == list(range(70, 131, 5))
