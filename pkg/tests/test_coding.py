import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invivo_mimo.coding import (bcc_encode, depuncture, descramble, hard_llr, puncture, scramble,
                                scrambler_sequence, viterbi_decode)

RATES = ["1/2", "2/3", "3/4", "5/6"]

# 127-bit sequence of the x^7+x^4+1 scrambler from the all-ones state, as tabulated for 802.11
ALL_ONES_SEQUENCE = (
    "00001110" "11110010" "11001001" "00000010" "00100110" "00101110" "10110110" "00001100"
    "11010100" "11100111" "10110100" "00101010" "11111010" "01010001" "10111000" "1111111"
)


def lfsr_reference(seed, n):
    """Bit-by-bit 7-stage register; reg[i] holds state bit i (reg[0] newest)."""
    reg = [(seed >> i) & 1 for i in range(7)]
    out = []
    for _ in range(n):
        fb = reg[6] ^ reg[3]
        reg = [fb] + reg[:-1]
        out.append(fb)
    return np.array(out, dtype=np.uint8)


def encode_reference(bits):
    """Shift-register encoder written directly from the 133/171 octal taps."""
    g0 = [1, 0, 1, 1, 0, 1, 1]
    g1 = [1, 1, 1, 1, 0, 0, 1]
    reg = [0] * 7
    out = []
    for b in bits:
        reg = [int(b)] + reg[:-1]
        out.append(sum(r & g for r, g in zip(reg, g0)) % 2)
        out.append(sum(r & g for r, g in zip(reg, g1)) % 2)
    return np.array(out, dtype=np.uint8)


def test_scrambler_all_ones_table():
    expected = np.array([int(c) for c in ALL_ONES_SEQUENCE], dtype=np.uint8)
    assert np.array_equal(scrambler_sequence(0x7F, 127), expected)


@pytest.mark.parametrize("seed", [1, 0x2A, 0x5D, 0x7F])
def test_scramble_zero_input_is_lfsr(seed):
    out = scramble(np.zeros(300, dtype=np.uint8), seed)
    assert np.array_equal(out, lfsr_reference(seed, 300))
    assert np.array_equal(out[:127], out[127:254])


def test_scrambler_zero_seed():
    with pytest.raises(ValueError):
        scramble([0, 1, 1], 0)


@given(st.lists(st.integers(0, 1), min_size=1, max_size=400), st.integers(1, 127))
def test_scramble_involution(bits, seed):
    assert np.array_equal(descramble(scramble(bits, seed), seed), np.array(bits, dtype=np.uint8))


def test_encode_impulse_response():
    out = bcc_encode([1, 0, 0, 0, 0, 0, 0])
    assert np.array_equal(out, encode_reference([1, 0, 0, 0, 0, 0, 0]))
    assert "".join(map(str, out)) == "11011111001011"


def test_encode_zero_and_length():
    assert not bcc_encode(np.zeros(50, dtype=np.uint8)).any()
    rng = np.random.default_rng(0)
    for n in (1, 7, 100):
        x = rng.integers(0, 2, n)
        out = bcc_encode(x)
        assert out.size == 2 * n
        assert np.array_equal(out, encode_reference(x))


def test_encode_linearity():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a, b = rng.integers(0, 2, (2, 64))
        assert np.array_equal(bcc_encode(a ^ b), bcc_encode(a) ^ bcc_encode(b))


def test_puncture_lengths():
    x = np.arange(60)
    assert np.array_equal(puncture(x, "1/2"), x)
    assert puncture(np.zeros(12), "3/4").size == 8
    assert puncture(np.zeros(20), "5/6").size == 12
    assert puncture(np.zeros(8), "2/3").size == 6
    with pytest.raises(ValueError):
        puncture(np.zeros(10), "3/4")
    with pytest.raises(ValueError):
        puncture(np.zeros(12), "7/8")


def test_puncture_depuncture_positions():
    ramp = np.arange(1, 13, dtype=float)
    kept = puncture(ramp, "3/4")
    # A0 B0 A1 B2 of each six-bit period survive
    assert np.array_equal(kept, [1, 2, 3, 6, 7, 8, 9, 12])
    back = depuncture(kept, "3/4")
    assert np.array_equal(back, [1, 2, 3, 0, 0, 6, 7, 8, 9, 0, 0, 12])
    ramp20 = np.arange(1, 21, dtype=float)
    assert np.array_equal(puncture(ramp20, "5/6"), [1, 2, 3, 6, 7, 10, 11, 12, 13, 16, 17, 20])
    assert np.array_equal(puncture(np.arange(1, 9), "2/3"), [1, 2, 3, 5, 6, 7])


@pytest.mark.parametrize("rate", RATES)
def test_depuncture_inverse(rate):
    x = np.random.default_rng(2).standard_normal(120) + 5
    p = puncture(x, rate)
    d = depuncture(p, rate)
    assert d.size == x.size
    mask = d != 0
    assert np.array_equal(d[mask], x[mask])
    assert np.array_equal(puncture(d, rate), p)
    if rate != "1/2":
        with pytest.raises(ValueError):
            depuncture(np.ones(p.size + 1), rate)


def test_depuncture_unknown_rate():
    with pytest.raises(ValueError):
        depuncture(np.ones(6), "7/8")


def _message(rng, n):
    return np.concatenate([rng.integers(0, 2, n).astype(np.uint8), np.zeros(6, np.uint8)])


def test_noiseless_round_trip():
    rng = np.random.default_rng(3)
    for n in (1, 10, 500):
        x = _message(rng, n)
        assert np.array_equal(viterbi_decode(hard_llr(bcc_encode(x), 20.0)), x)


def test_single_flip_exhaustive():
    rng = np.random.default_rng(4)
    x = _message(rng, 1000)
    llr = hard_llr(bcc_encode(x), 4.0)
    for pos in range(llr.size):
        flipped = llr.copy()
        flipped[pos] = -flipped[pos]
        assert np.array_equal(viterbi_decode(flipped), x), pos


def test_erasures_and_odd_length():
    out = viterbi_decode(np.zeros(40))
    assert out.size == 20
    with pytest.raises(ValueError):
        viterbi_decode(np.zeros(41))
    with pytest.raises(ValueError):
        viterbi_decode([np.inf, 0.0])


def test_scale_invariance():
    rng = np.random.default_rng(5)
    x = _message(rng, 300)
    llr = hard_llr(bcc_encode(x), 1.0) + rng.normal(0, 1.2, 2 * x.size)
    ref = viterbi_decode(llr)
    for scale in (0.01, 0.5, 3.7, 1e4):
        assert np.array_equal(viterbi_decode(llr * scale), ref)


def _codebook(k):
    msgs = ((np.arange(1 << k)[:, None] >> np.arange(k - 1, -1, -1)) & 1).astype(np.uint8)
    full = np.hstack([msgs, np.zeros((1 << k, 6), np.uint8)])
    return full, np.array([encode_reference(m) for m in full])


@pytest.mark.parametrize("k", [4, 8])
def test_hard_decision_matches_brute_force(k):
    msgs, book = _codebook(k)
    rng = np.random.default_rng(6 + k)
    for i in rng.choice(len(msgs), min(64, len(msgs)), replace=False):
        rx = book[i].copy()
        rx[rng.choice(rx.size, 3, replace=False)] ^= 1
        dist = np.count_nonzero(book != rx, axis=1)
        dec = viterbi_decode(hard_llr(rx), hard=True)
        assert np.count_nonzero(bcc_encode(dec) != rx) == dist.min()
        if np.count_nonzero(dist == dist.min()) == 1:
            assert np.array_equal(dec, msgs[dist.argmin()])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 120), st.sampled_from(RATES), st.integers(1, 127), st.integers(0, 2**32 - 1))
def test_coding_chain_identity_property(n, rate, seed, rng_seed):
    _chain_round_trip(np.random.default_rng(rng_seed), n, rate, seed)


def _chain_round_trip(rng, n, rate, seed):
    period = {"1/2": 1, "2/3": 2, "3/4": 3, "5/6": 5}[rate]
    total = -(-(n + 6) // period) * period
    x = np.zeros(total, np.uint8)
    x[:n] = rng.integers(0, 2, n)
    s = scramble(x, seed)
    s[n:n + 6] = 0
    coded = puncture(bcc_encode(s), rate)
    soft = depuncture(hard_llr(coded, 8.0), rate)[:2 * (n + 6)]
    dec = viterbi_decode(soft)
    assert np.array_equal(descramble(dec, seed)[:n], x[:n])


def test_coding_chain_identity_1000_trials():
    rng = np.random.default_rng(7)
    for trial in range(1000):
        _chain_round_trip(rng, int(rng.integers(1, 200)), RATES[trial % 4], int(rng.integers(1, 128)))
