from fractions import Fraction

import pytest

from invivo_mimo.phy_params import (Modulation, data_rate, get_numerology, mcs_lookup, num_symbols,
                                    rate_table)

STANDARD_20MHZ_LGI = [6.5, 13, 19.5, 26, 39, 52, 58.5, 65, 13, 26, 39, 52, 78, 104, 117, 130]


def test_mcs13_entry():
    e = mcs_lookup(13, 20)
    assert (e.n_ss, e.modulation, e.code_rate, e.n_dbps) == (2, Modulation.QAM64, Fraction(2, 3), 416)
    # 416 bits per 4 us symbol
    assert Fraction(e.n_dbps, 4) == 104


def test_mcs2_entry():
    e = mcs_lookup(2, 20)
    assert (e.n_ss, e.modulation, e.code_rate, e.n_dbps) == (1, Modulation.QPSK, Fraction(3, 4), 78)
    assert Fraction(e.n_dbps, 4) == Fraction(39, 2)


@pytest.mark.parametrize("index,bw", [(16, 20), (-1, 20), (3, 80), (3, 10)])
def test_mcs_lookup_rejects(index, bw):
    with pytest.raises(ValueError):
        mcs_lookup(index, bw)


@pytest.mark.parametrize("bw", [20, 40])
@pytest.mark.parametrize("index", range(16))
def test_entry_invariants(index, bw):
    e = mcs_lookup(index, bw)
    num = get_numerology(bw)
    assert e.n_cbps == num.n_sd * e.n_bpscs * e.n_ss
    assert Fraction(e.n_cbps) * e.code_rate == e.n_dbps
    assert e.n_ss == (1 if index < 8 else 2)


def test_numerology_layouts():
    n20, n40 = get_numerology(20), get_numerology(40)
    assert (n20.n_sd, n20.n_sp, n20.fft_size) == (52, 4, 64)
    assert (n40.n_sd, n40.n_sp, n40.fft_size) == (108, 6, 128)
    for n in (n20, n40):
        assert not set(n.data_indices) & set(n.pilot_indices)
        assert 0 not in n.data_indices and 0 not in n.pilot_indices
    assert n20.symbol_duration(800) == 4


@pytest.mark.parametrize("index,expected", [(13, 104.0), (10, 39.0), (2, 19.5), (11, 52.0), (12, 78.0), (14, 117.0)])
def test_quoted_rates(index, expected):
    assert data_rate(mcs_lookup(index, 20), 20, 800) == expected


def test_full_rate_table_and_doubling():
    rates = [data_rate(mcs_lookup(i, 20), 20, 800) for i in range(16)]
    assert rates == STANDARD_20MHZ_LGI
    for k in range(8):
        assert rates[k + 8] == 2 * rates[k]


def test_short_gi_and_40mhz_rates():
    assert data_rate(mcs_lookup(7, 20), 20, 400) == 72.2
    assert data_rate(mcs_lookup(15, 40), 40, 400) == 300.0
    assert data_rate(mcs_lookup(0, 40), 40, 800) == 13.5
    with pytest.raises(ValueError):
        data_rate(mcs_lookup(0, 20), 20, 600)


def test_num_symbols_examples():
    assert num_symbols(mcs_lookup(0), 100) == 32
    assert num_symbols(mcs_lookup(13), 1000) == 20


def test_num_symbols_exact_fit():
    # 40 MHz MCS 0 carries 54 bits per symbol = 16 + 8*4 + 6
    e40 = mcs_lookup(0, 40)
    assert e40.n_dbps == 54
    assert num_symbols(e40, 4) == 1
    assert num_symbols(e40, 5) == 2
    with pytest.raises(ValueError):
        num_symbols(e40, 0)


def test_num_symbols_monotone():
    entries = sorted((mcs_lookup(i) for i in range(16)), key=lambda e: e.n_dbps)
    for e in entries:
        counts = [num_symbols(e, L) for L in range(1, 400)]
        assert all(a <= b for a, b in zip(counts, counts[1:]))
    for L in (1, 57, 1000, 4095):
        counts = [num_symbols(e, L) for e in entries]
        assert all(a >= b for a, b in zip(counts, counts[1:]))


def test_rate_table_rows():
    rows = rate_table(20, 800)
    assert len(rows) == 16 and rows[13]["rate_mbps"] == 104.0
