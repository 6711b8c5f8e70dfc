import csv
import io

import pytest
from hypothesis import given
from hypothesis import strategies as st

from crvq.bitbudget import CSV_HEADER, avg_bits_crvq, avg_bits_vq, sweep, to_csv


def test_vq_anchor_m1_d8_e8():
    rep = avg_bits_vq(4096, 4096, 1, 8, 8)
    assert rep.avg_bits == 1.001953125
    assert rep.code_bits == 1.0 and rep.permutation_bits == 0.0


def test_vq_m2_d16_e8():
    # 2*8/16 + 2^(8-20)*2*16
    assert avg_bits_vq(4096, 4096, 2, 16, 8).avg_bits == 1.0 + 2.0 ** -12 * 2 * 16


def test_vq_matches_closed_form_for_4096():
    for m, d, e in [(1, 4, 6), (2, 8, 10), (3, 16, 12)]:
        assert avg_bits_vq(4096, 4096, m, d, e).avg_bits == pytest.approx(m * e / d + 2.0 ** (e - 20) * m * d)


def test_vq_codebook_amortises():
    small = avg_bits_vq(256, 256, 1, 8, 8).codebook_bits
    big = avg_bits_vq(65536, 65536, 1, 8, 8).codebook_bits
    assert big < small and big == 2 ** 8 * 8 * 16 / 65536 ** 2


def test_crvq_raw_lambda_example():
    rep = avg_bits_crvq(4096, 4096, 4, 8, 8, 0.02, round_lambda=False)
    assert rep.avg_bits == pytest.approx(1 + 0.06 + 0.0078125 + 0.00390625, rel=1e-12)
    assert rep.avg_bits == pytest.approx(1.07171875, rel=1e-12)


def test_crvq_rounded_lambda_example():
    # ceil(0.02 * 4096 / 8) * 8 = 88 important columns
    rep = avg_bits_crvq(4096, 4096, 4, 8, 8, 0.02)
    assert rep.code_bits == 1 + 3 * (88 / 4096)
    assert rep.avg_bits == pytest.approx(1.076171875, rel=1e-12)


def test_crvq_lambda_zero():
    rep = avg_bits_crvq(4096, 4096, 4, 8, 8, 0.0)
    assert rep.code_bits == 1.0
    assert rep.codebook_bits == 2 ** 8 * 4 * 8 * 16 / 4096 ** 2
    assert rep.permutation_bits == 16 / 4096


def test_crvq_m1_code_bits():
    assert avg_bits_crvq(512, 1024, 1, 8, 6, 0.37).code_bits == 6 / 8


def test_crvq_reduces_to_vq():
    a = avg_bits_crvq(1024, 2048, 1, 8, 8, 0.0, index_bits=0)
    b = avg_bits_vq(1024, 2048, 1, 8, 8)
    assert a.avg_bits == b.avg_bits


def test_sweep_rise_and_rowcount():
    rows = sweep(4096, 4096, 1, [8], [12, 14, 16], [0.0])
    by_e = {r.e: r.avg_bits for r in rows}
    assert by_e[16] > by_e[14] > by_e[12]
    rows = sweep(4096, 4096, 2, [4, 8, 16], range(6, 17), [0.0, 0.02])
    assert len(rows) == 3 * 11 * 2
    for r in rows:
        assert abs(r.avg_bits - (r.code_bits + r.codebook_bits + r.permutation_bits)) <= 1e-12


def test_csv_header():
    text = to_csv(sweep(4096, 4096, 1, [8], [8], [0.0]))
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == CSV_HEADER == ["m", "d", "e", "lambda", "avg_bits", "code_bits", "codebook_bits",
                                     "permutation_bits"]
    assert float(rows[1][4]) == avg_bits_crvq(4096, 4096, 1, 8, 8, 0.0).avg_bits


def test_invalid_lambda():
    with pytest.raises(ValueError):
        avg_bits_crvq(16, 16, 2, 8, 8, 1.5)


@given(st.integers(1, 4), st.sampled_from([4, 8, 16]), st.integers(1, 12), st.floats(0, 1))
def test_monotone_in_m_lambda_e(m, d, e, lam):
    M = N = 4096
    base = avg_bits_crvq(M, N, m, d, e, lam)
    assert avg_bits_crvq(M, N, m + 1, d, e, lam).avg_bits >= base.avg_bits
    assert avg_bits_crvq(M, N, m, d, e + 1, lam).avg_bits >= base.avg_bits
    assert avg_bits_crvq(M, N, m, d, e, min(1.0, lam + 0.05)).avg_bits >= base.avg_bits
    assert min(base.code_bits, base.codebook_bits, base.permutation_bits) >= 0
