"""Binary formats for dense matrices (``CRVQT1``) and quantized layers (``CRVQP1``).

Everything is little-endian.

``CRVQT1``::

    magic "CRVQT1" | u32 M | u32 N | u8 dtype (0 = float32) | M*N float32, row-major

``CRVQP1``::

    magic "CRVQP1" | u32 M | u32 N | u16 d | u16 e | u16 m | u32 n_important_cols | u64 seed
    u32 forward permutation, N entries
    float32 codebooks, m * 2**e * d values (basic first, then extended)
    m code streams, each e-bit LSB-first packed and padded to a whole byte;
    stream 0 holds M*N/d codes, the others M*n_important_cols/d codes
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import (BadMagic, CorruptCodeStream, NonFiniteValue, TrailingBytes, TruncatedFile,
                     UnsupportedDtype, VersionMismatch)
from .importance import ChannelPermutation
from .layer import CalibrationSet, QuantConfig, QuantizedLayer

MATRIX_MAGIC = b"CRVQT1"
LAYER_MAGIC = b"CRVQP1"
_MATRIX_HEADER = struct.Struct("<6sIIB")
_LAYER_HEADER = struct.Struct("<6sIIHHHIQ")
DTYPE_F32 = 0


# -- bit packing --------------------------------------------------------------


def pack_codes(codes, e: int) -> bytes:
    """Pack integers ``< 2**e`` into ``e``-bit little-endian fields."""
    codes = np.asarray(codes, dtype=np.uint32).reshape(-1)
    if codes.size and int(codes.max()) >= (1 << e):
        raise ValueError(f"code {int(codes.max())} does not fit in {e} bits")
    bits = ((codes[:, None] >> np.arange(e, dtype=np.uint32)) & 1).astype(np.uint8)
    return np.packbits(bits.reshape(-1), bitorder="little").tobytes()


def packed_size(n: int, e: int) -> int:
    return (n * e + 7) // 8


def unpack_codes(buf, n: int, e: int) -> np.ndarray:
    raw = np.frombuffer(buf, dtype=np.uint8)
    if raw.size != packed_size(n, e):
        raise CorruptCodeStream(f"code stream holds {raw.size} bytes, expected {packed_size(n, e)}")
    bits = np.unpackbits(raw, count=n * e, bitorder="little").reshape(n, e)
    return bits.astype(np.int64) @ (np.int64(1) << np.arange(e, dtype=np.int64))


# -- dense matrices -------------------------------------------------------------


def matrix_to_bytes(W) -> bytes:
    W = np.asarray(W)
    if W.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {W.shape}")
    W32 = np.ascontiguousarray(W, dtype="<f4")
    if not np.all(np.isfinite(W32)):
        raise NonFiniteValue("matrix contains NaN or infinite values")
    M, N = W32.shape
    return _MATRIX_HEADER.pack(MATRIX_MAGIC, M, N, DTYPE_F32) + W32.tobytes()


def matrix_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 6 or buf[:6] != MATRIX_MAGIC:
        raise BadMagic(f"not a CRVQT1 file (magic {bytes(buf[:6])!r})")
    if len(buf) < _MATRIX_HEADER.size:
        raise TruncatedFile("header is truncated")
    _, M, N, dtype = _MATRIX_HEADER.unpack_from(buf)
    if dtype != DTYPE_F32:
        raise UnsupportedDtype(f"unsupported dtype code {dtype}")
    need = _MATRIX_HEADER.size + 4 * M * N
    if len(buf) < need:
        raise TruncatedFile(f"payload holds {len(buf) - _MATRIX_HEADER.size} bytes, expected {4 * M * N}")
    if len(buf) > need:
        raise TrailingBytes(f"{len(buf) - need} unexpected bytes after payload")
    W = np.frombuffer(buf, dtype="<f4", count=M * N, offset=_MATRIX_HEADER.size)
    W = W.astype(np.float32).reshape(M, N)
    if not np.all(np.isfinite(W)):
        raise NonFiniteValue("matrix contains NaN or infinite values")
    return W


def save_matrix(W, path) -> None:
    data = matrix_to_bytes(W)
    with open(path, "wb") as fh:
        fh.write(data)


def load_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return matrix_from_bytes(fh.read())


def load_calibration(path) -> CalibrationSet:
    """Activations ``X`` (N x O) stored as a CRVQT1 matrix."""
    return CalibrationSet(X=load_matrix(path))


# -- quantized layers -------------------------------------------------------------


def layer_to_bytes(layer: QuantizedLayer) -> bytes:
    layer.validate()
    cfg = layer.config
    M, N = layer.dims
    parts = [
        _LAYER_HEADER.pack(LAYER_MAGIC, M, N, cfg.d, cfg.e, cfg.m, layer.n_important_cols, cfg.seed),
        np.ascontiguousarray(layer.perm.forward, dtype="<u4").tobytes(),
    ]
    for C in layer.codebooks:
        C32 = np.ascontiguousarray(C, dtype="<f4")
        if not np.all(np.isfinite(C32)):
            raise NonFiniteValue("codebook contains NaN or infinite values")
        parts.append(C32.tobytes())
    for q in layer.codes:
        parts.append(pack_codes(q, cfg.e))
    return b"".join(parts)


def layer_from_bytes(buf: bytes) -> QuantizedLayer:
    if len(buf) < 6 or buf[:5] != LAYER_MAGIC[:5]:
        raise BadMagic(f"not a CRVQP file (magic {bytes(buf[:6])!r})")
    if buf[:6] != LAYER_MAGIC:
        raise VersionMismatch(f"unsupported format version {bytes(buf[5:6])!r}")
    if len(buf) < _LAYER_HEADER.size:
        raise CorruptCodeStream("header is truncated")
    _, M, N, d, e, m, n_imp, seed = _LAYER_HEADER.unpack_from(buf)
    if d == 0 or not 1 <= e <= 16 or m == 0 or N % d or n_imp % d or n_imp > N:
        raise CorruptCodeStream(f"inconsistent header (M={M} N={N} d={d} e={e} m={m} n_imp={n_imp})")
    off = _LAYER_HEADER.size
    k = 1 << e

    def take(nbytes):
        nonlocal off
        if off + nbytes > len(buf):
            raise CorruptCodeStream("file ends inside the payload")
        chunk = buf[off:off + nbytes]
        off += nbytes
        return chunk

    forward = np.frombuffer(take(4 * N), dtype="<u4").astype(np.int64)
    try:
        perm = ChannelPermutation.from_forward(forward)
    except ValueError as exc:
        raise CorruptCodeStream("stored permutation is not a bijection") from exc
    codebooks = []
    for _ in range(m):
        C = np.frombuffer(take(4 * k * d), dtype="<f4").astype(np.float32).reshape(k, d)
        if not np.all(np.isfinite(C)):
            raise CorruptCodeStream("codebook contains NaN or infinite values")
        codebooks.append(C)
    codes = []
    for t in range(m):
        groups = N // d if t == 0 else n_imp // d
        n = M * groups
        codes.append(unpack_codes(take(packed_size(n, e)), n, e).reshape(M, groups))
    if off != len(buf):
        raise CorruptCodeStream(f"{len(buf) - off} unexpected bytes after the last code stream")
    cfg = QuantConfig(d=d, e=e, m=m, lam=n_imp / N if N else 0.0, seed=seed)
    return QuantizedLayer(cfg, perm, n_imp, codebooks, codes, (M, N))


def save_quantized(layer: QuantizedLayer, path) -> None:
    data = layer_to_bytes(layer)
    with open(path, "wb") as fh:
        fh.write(data)


def load_quantized(path) -> QuantizedLayer:
    with open(path, "rb") as fh:
        return layer_from_bytes(fh.read())


def file_bits(path) -> int:
    return 8 * os.path.getsize(path)
