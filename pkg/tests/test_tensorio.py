import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crvq.bitbudget import avg_bits_crvq
from crvq.errors import (BadMagic, CorruptCodeStream, NonFiniteValue, TruncatedFile, VersionMismatch)
from crvq.importance import ChannelPermutation
from crvq.layer import QuantConfig, QuantizedLayer
from crvq.tensorio import (layer_from_bytes, layer_to_bytes, load_matrix, load_quantized, pack_codes,
                           save_matrix, save_quantized, unpack_codes)


def random_layer(rng, M, N, d, e, m, n_imp):
    cfg = QuantConfig(d=d, e=e, m=m, lam=n_imp / N, seed=int(rng.integers(2 ** 63)))
    books = [rng.standard_normal((1 << e, d)).astype(np.float32) for _ in range(m)]
    codes = [rng.integers(0, 1 << e, size=(M, N // d))]
    codes += [rng.integers(0, 1 << e, size=(M, n_imp // d)) for _ in range(m - 1)]
    perm = ChannelPermutation.from_forward(rng.permutation(N))
    return QuantizedLayer(cfg, perm, n_imp, books, codes, (M, N))


def test_matrix_roundtrip(tmp_path):
    W = np.array([[1, 2, 3, 4], [5, 6, 7, 8]], dtype=np.float32)
    save_matrix(W, tmp_path / "w.crvqt")
    back = load_matrix(tmp_path / "w.crvqt")
    assert back.dtype == np.float32
    np.testing.assert_array_equal(back, W)
    raw = (tmp_path / "w.crvqt").read_bytes()
    assert raw[:6] == b"CRVQT1" and len(raw) == 6 + 4 + 4 + 1 + 32
    assert raw[6:10] == (2).to_bytes(4, "little") and raw[14] == 0


def test_matrix_bad_magic(tmp_path):
    p = tmp_path / "bad.crvqt"
    p.write_bytes(b"XXXXXX" + bytes(20))
    with pytest.raises(BadMagic):
        load_matrix(p)


def test_matrix_truncated(tmp_path):
    p = tmp_path / "w.crvqt"
    save_matrix(np.ones((3, 3)), p)
    p.write_bytes(p.read_bytes()[:-1])
    with pytest.raises(TruncatedFile):
        load_matrix(p)


def test_matrix_nonfinite(tmp_path):
    with pytest.raises(NonFiniteValue):
        save_matrix(np.array([[np.nan]]), tmp_path / "x")
    raw = bytearray(b"CRVQT1" + (1).to_bytes(4, "little") * 2 + b"\x00")
    raw += np.array([np.inf], dtype="<f4").tobytes()
    (tmp_path / "y").write_bytes(bytes(raw))
    with pytest.raises(NonFiniteValue):
        load_matrix(tmp_path / "y")


def test_large_matrix_resave_identical(tmp_path):
    rng = np.random.default_rng(0)
    W = rng.standard_normal((4096, 4096), dtype=np.float32)
    a, b = tmp_path / "a.crvqt", tmp_path / "b.crvqt"
    save_matrix(W, a)
    save_matrix(load_matrix(a), b)
    assert hashlib.sha256(a.read_bytes()).digest() == hashlib.sha256(b.read_bytes()).digest()


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 16), st.integers(0, 200), st.integers(0, 2 ** 31))
def test_pack_roundtrip_and_length(e, n, seed):
    codes = np.random.default_rng(seed).integers(0, 1 << e, size=n)
    buf = pack_codes(codes, e)
    assert len(buf) == (n * e + 7) // 8
    np.testing.assert_array_equal(unpack_codes(buf, n, e), codes)


def test_pack_bit_order():
    # 3-bit fields 5 (101), 3 (011), LSB first: 1,0,1, 1,1,0 -> 0b00011101
    assert pack_codes([5, 3], 3) == bytes([0b00011101])
    assert pack_codes([0xABC], 12) == bytes([0xBC, 0x0A])


def test_layer_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    layer = random_layer(rng, 12, 32, 8, 5, 3, 16)
    save_quantized(layer, tmp_path / "l.crvqp")
    back = load_quantized(tmp_path / "l.crvqp")
    assert back.dims == layer.dims and back.n_important_cols == 16
    assert back.config.seed == layer.config.seed
    np.testing.assert_array_equal(back.perm.forward, layer.perm.forward)
    for a, b in zip(back.codes, layer.codes):
        np.testing.assert_array_equal(a, b)
    assert back.decode().tobytes() == layer.decode().tobytes()


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.sampled_from([1, 2, 4, 8]), st.integers(1, 10),
       st.integers(1, 4), st.integers(0, 2 ** 31))
def test_layer_roundtrip_property(M, groups, d, e, m, seed):
    rng = np.random.default_rng(seed)
    N = groups * d
    n_imp = int(rng.integers(0, groups + 1)) * d
    layer = random_layer(rng, M, N, d, e, m, n_imp)
    back = layer_from_bytes(layer_to_bytes(layer))
    assert back.decode().tobytes() == layer.decode().tobytes()
    assert layer_to_bytes(back) == layer_to_bytes(layer)


def test_layer_stream_lengths():
    rng = np.random.default_rng(2)
    M, N, d, e, m, n_imp = 5, 24, 8, 3, 2, 8
    layer = random_layer(rng, M, N, d, e, m, n_imp)
    buf = layer_to_bytes(layer)
    header = 6 + 4 + 4 + 2 * 3 + 4 + 8
    expect = header + 4 * N + m * (1 << e) * d * 4 + (M * 3 * e + 7) // 8 + (M * 1 * e + 7) // 8
    assert len(buf) == expect


def test_layer_truncated_is_corrupt():
    layer = random_layer(np.random.default_rng(3), 4, 16, 8, 4, 2, 8)
    buf = layer_to_bytes(layer)
    with pytest.raises(CorruptCodeStream):
        layer_from_bytes(buf[:-1])
    with pytest.raises(CorruptCodeStream):
        layer_from_bytes(buf + b"\x00")


def test_layer_bad_magic_and_version():
    layer = random_layer(np.random.default_rng(4), 2, 8, 8, 2, 1, 0)
    buf = layer_to_bytes(layer)
    with pytest.raises(BadMagic):
        layer_from_bytes(b"XXXXXX" + buf[6:])
    with pytest.raises(VersionMismatch):
        layer_from_bytes(b"CRVQP2" + buf[6:])


def test_layer_bad_permutation():
    layer = random_layer(np.random.default_rng(5), 2, 8, 4, 2, 1, 0)
    buf = bytearray(layer_to_bytes(layer))
    off = 6 + 4 + 4 + 6 + 4 + 8
    buf[off:off + 8] = (0).to_bytes(4, "little") * 2  # two columns mapped to 0
    with pytest.raises(CorruptCodeStream):
        layer_from_bytes(bytes(buf))


def test_payload_bits_4096():
    rng = np.random.default_rng(6)
    M = N = 4096
    layer = random_layer(rng, M, N, 8, 8, 1, 0)
    bits = 8 * len(layer_to_bytes(layer)) / (M * N)
    assert 1.0023 <= bits <= 1.0123
    pred = avg_bits_crvq(M, N, 1, 8, 8, 0.0, value_bits=32, index_bits=32).avg_bits
    assert pred <= bits <= pred * 1.01
