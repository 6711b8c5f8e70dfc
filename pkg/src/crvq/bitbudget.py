"""Average bits-per-weight accounting for VQ and channel-relaxed VQ.

All figures are per weight of an ``M x N`` matrix. By default codebook
values count as 16-bit floats and permutation indices as 16 bits, which
matches the published accounting. Pass ``value_bits=32, index_bits=32``
to predict the size of an on-disk ``CRVQP1`` artifact instead.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

from .importance import important_cols

CSV_HEADER = ["m", "d", "e", "lambda", "avg_bits", "code_bits", "codebook_bits", "permutation_bits"]


@dataclass(frozen=True)
class BitReport:
    avg_bits: float
    code_bits: float
    codebook_bits: float
    permutation_bits: float
    M: int
    N: int
    m: int
    d: int
    e: int
    lam: float = 0.0

    def to_dict(self) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lam")
        return out

    def csv_row(self) -> list:
        return [self.m, self.d, self.e, self.lam, self.avg_bits, self.code_bits,
                self.codebook_bits, self.permutation_bits]


def _check(M, N, m, d, e):
    for name, v in (("M", M), ("N", N), ("m", m), ("d", d), ("e", e)):
        if v <= 0:
            raise ValueError(f"{name} must be positive, got {v}")


def _report(code, book, perm, M, N, m, d, e, lam):
    return BitReport(code + book + perm, code, book, perm, M, N, m, d, e, lam)


def avg_bits_vq(M: int, N: int, m: int, d: int, e: int, *, value_bits: int = 16) -> BitReport:
    """Plain additive VQ: ``m`` codebooks, every vector coded in each."""
    _check(M, N, m, d, e)
    code = m * e / d
    book = (2 ** e) * m * d * value_bits / (M * N)
    return _report(code, book, 0.0, M, N, m, d, e, 0.0)


def avg_bits_crvq(M: int, N: int, m: int, d: int, e: int, lam: float, *,
                  value_bits: int = 16, index_bits: int = 16,
                  round_lambda: bool = True) -> BitReport:
    """One basic codebook everywhere plus ``m - 1`` extended codebooks on the important columns.

    With ``round_lambda`` the important fraction is rounded up to whole
    vector groups, exactly as the quantizer does. ``index_bits=0`` drops
    the permutation term.
    """
    _check(M, N, m, d, e)
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    lam_eff = important_cols(N, lam, d) / N if round_lambda else lam
    code = e / d + (m - 1) * lam_eff * e / d
    book = (2 ** e) * m * d * value_bits / (M * N)
    perm = index_bits * N / (M * N)
    return _report(code, book, perm, M, N, m, d, e, lam)


def sweep(M: int, N: int, m: int, d_range, e_range, lambda_list, **kwargs) -> list[BitReport]:
    rows = []
    for d in d_range:
        for e in e_range:
            for lam in lambda_list:
                rows.append(avg_bits_crvq(M, N, m, d, e, lam, **kwargs))
    return rows


def to_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in reports:
        writer.writerow([repr(x) if isinstance(x, float) else x for x in r.csv_row()])
    return buf.getvalue()
