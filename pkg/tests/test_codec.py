import math
import struct
import zlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ecocompress.codec import (
    Bitstream,
    CompressedModel,
    bit_account,
    compress_model,
    compression_report,
    decode,
    decompress_model,
    empirical_pmd,
    encode,
    from_bytes,
    read_ecm,
    to_bytes,
    write_ecm,
)
from ecocompress.codec import arith
from ecocompress.codec.pmd import EmpiricalPMD
from ecocompress.discrete import Codebook
from ecocompress.errors import ContractError, CorruptStreamError, IntegrityError
from ecocompress.layers import QuantizedDense

THREE = Codebook.from_values([3.2, 1.9, 0.7])
THREE_W = THREE.values[[0, 1, 0, 2, 1, 2, 1, 0]]  # 0.7 x3, 1.9 x3, 3.2 x2


def entropy_bits(counts):
    n = sum(counts)
    return -sum(c * math.log2(c / n) for c in counts if c)


def random_layer(r, K=None, shape=None):
    K = K or int(r.integers(1, 34))
    shape = shape or (int(r.integers(1, 12)), int(r.integers(1, 12)))
    cb = Codebook.from_values(np.sort(r.choice(np.arange(-200, 200), K, replace=False)) / 64.0)
    probs = r.dirichlet(np.full(cb.K, 0.4))
    w = cb.values[r.choice(cb.K, size=shape, p=probs)]
    return QuantizedDense(w, r.normal(size=shape[1]).astype(np.float32), cb)


# -- empirical PMD and accounting --------------------------------------------
def test_three_value_pmd_and_account():
    pmd = empirical_pmd(THREE_W, THREE)
    np.testing.assert_array_equal(pmd.counts, [3, 3, 2])
    np.testing.assert_allclose(pmd.probs, [0.375, 0.375, 0.25], rtol=0, atol=1e-15)
    acc = bit_account(pmd, THREE, 0)
    assert acc.payload_bits == pytest.approx(8 * 1.5612781244591327, abs=1e-9)
    assert acc.payload_bits == pytest.approx(12.49, abs=0.005)
    assert acc.pmd_bits == pytest.approx(9.0, abs=1e-12)
    assert acc.codebook_bits == 96


def test_pmd_single_value_and_counting(rng):
    cb = Codebook(np.array([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(empirical_pmd(np.full(5, -1.0), cb).counts, [5, 0, 0])
    idx = rng.integers(0, 3, 200)
    naive = [sum(1 for i in idx if i == k) for k in range(3)]
    np.testing.assert_array_equal(empirical_pmd(cb.values[idx], cb).counts, naive)
    assert bit_account(empirical_pmd(np.zeros(4), Codebook(np.array([0.0]))), Codebook(np.array([0.0])),
                       0).payload_bits == 0.0


@given(counts=st.lists(st.integers(0, 500), min_size=1, max_size=33).filter(lambda c: sum(c) > 0))
def test_payload_matches_entropy_formula(counts):
    pmd = EmpiricalPMD(np.array(counts))
    cb = Codebook(np.arange(len(counts), dtype=np.float64))
    assert bit_account(pmd, cb, 0).payload_bits == pytest.approx(entropy_bits(counts), rel=1e-9, abs=1e-9)


def test_pmd_rejects_foreign_values():
    with pytest.raises(IntegrityError):
        empirical_pmd(np.array([0.5]), Codebook(np.array([0.0, 1.0])))


# -- arithmetic coder --------------------------------------------------------
def test_single_symbol_source_is_empty():
    cb = Codebook(np.array([0.0]))
    pmd = empirical_pmd(np.zeros(100), cb)
    stream = encode(np.zeros(100), pmd, cb)
    assert stream.n_bits <= 64
    np.testing.assert_array_equal(decode(stream, pmd, cb, 100), np.zeros(100))


def test_uniform_binary_length(rng):
    cb = Codebook(np.array([0.0, 1.0]))
    w = np.repeat([0.0, 1.0], 512)
    rng.shuffle(w)
    stream = encode(w, empirical_pmd(w, cb), cb)
    assert 1024 <= stream.n_bits <= 1088


def test_three_value_stream_length():
    pmd = empirical_pmd(THREE_W, THREE)
    stream = encode(THREE_W, pmd, THREE)
    assert stream.n_bits <= 13 + 64
    np.testing.assert_array_equal(decode(stream, pmd, THREE, 8), THREE_W)


@given(seed=st.integers(0, 2 ** 32 - 1))
def test_roundtrip_and_length_bound(seed):
    r = np.random.default_rng(seed)
    layer = random_layer(r)
    pmd = empirical_pmd(layer.weights, layer.codebook)
    stream = encode(layer.weights, pmd, layer.codebook)
    out = decode(stream, pmd, layer.codebook, pmd.n)
    np.testing.assert_array_equal(out, layer.weights.ravel())
    assert stream.n_bits <= entropy_bits(pmd.counts) + 64


def test_large_layer_roundtrip(rng):
    cb = Codebook(np.linspace(-1, 1, 33).astype(np.float32).astype(np.float64))
    p = rng.dirichlet(np.full(33, 0.2))
    w = cb.values[rng.choice(33, size=200_000, p=p)]
    pmd = empirical_pmd(w, cb)
    stream = encode(w, pmd, cb)
    assert stream.n_bits <= entropy_bits(pmd.counts) + 64
    np.testing.assert_array_equal(decode(stream, pmd, cb, w.size), w)


def test_coder_rejects_bad_frequencies():
    with pytest.raises(ContractError):
        arith.cumulative([3, 0, 1])
    with pytest.raises(ContractError):
        arith.cumulative([arith.MAX_TOTAL, 1])


def test_truncated_stream_is_detected(rng):
    cb = Codebook(np.array([0.0, 1.0, 2.0]))
    w = cb.values[rng.integers(0, 3, 400)]
    pmd = empirical_pmd(w, cb)
    stream = encode(w, pmd, cb)
    bad = Bitstream(stream.data[:10], 80)
    with pytest.raises(CorruptStreamError):
        decode(bad, pmd, cb, w.size)


# -- container ---------------------------------------------------------------
def model_of(r, layers=3):
    return [random_layer(r) for _ in range(layers)]


def test_container_roundtrip_and_reread(tmp_path, rng):
    layers = model_of(rng)
    cm = compress_model(layers)
    path = tmp_path / "m.ecm"
    size = write_ecm(cm, path)
    assert size == path.stat().st_size
    back = read_ecm(path)
    for orig, dec in zip(layers, decompress_model(back)):
        np.testing.assert_array_equal(orig.weights, dec.weights)
        np.testing.assert_array_equal(orig.bias, dec.bias)
        assert orig.codebook == dec.codebook
    assert back.accounts() == cm.accounts()
    assert to_bytes(back) == to_bytes(cm)


@pytest.mark.parametrize("bits", [16, 32, 64])
def test_codebook_precisions(bits, rng):
    cb = Codebook.from_values([-0.3, 0.0, 0.7], bits)
    layer = QuantizedDense(cb.values[rng.integers(0, 3, (5, 4))], np.ones(4), cb)
    back = decompress_model(from_bytes(to_bytes(compress_model([layer]))))[0]
    np.testing.assert_array_equal(back.weights, layer.weights)
    assert back.codebook.bits == bits


def test_header_layout(rng):
    layer = QuantizedDense(np.zeros((2, 3)), np.zeros(3), Codebook(np.array([0.0])))
    data = to_bytes(compress_model([layer]))
    assert data[:4] == b"ECM1"
    assert struct.unpack_from("<HH", data, 4) == (1, 1)
    assert struct.unpack_from("<IHB", data, 8) == (6, 1, 32)
    assert struct.unpack("<I", data[-4:])[0] == zlib.crc32(data[:-4])


def test_container_corruption_is_detected(rng):
    data = bytearray(to_bytes(compress_model(model_of(rng, 2))))
    flipped = bytearray(data)
    flipped[len(data) // 2] ^= 0x40
    with pytest.raises(CorruptStreamError):
        from_bytes(bytes(flipped))
    with pytest.raises(CorruptStreamError):
        from_bytes(bytes(data[:-9]))
    bad_magic = bytearray(data)
    bad_magic[:4] = b"XXXX"
    body = bytes(bad_magic[:-4])
    with pytest.raises(CorruptStreamError):
        from_bytes(body + struct.pack("<I", zlib.crc32(body)))


def test_container_rejects_unknown_version(rng):
    data = bytearray(to_bytes(compress_model(model_of(rng, 1))))
    struct.pack_into("<H", data, 4, 9)
    body = bytes(data[:-4])
    with pytest.raises(CorruptStreamError):
        from_bytes(body + struct.pack("<I", zlib.crc32(body)))


# -- report ------------------------------------------------------------------
def test_report_all_zero_model():
    cb = Codebook(np.array([0.0]))
    layers = [QuantizedDense(np.zeros((10, 5)), np.zeros(5), cb), QuantizedDense(np.zeros((5, 2)), np.zeros(2), cb)]
    rep = compression_report(compress_model(layers))
    assert rep.sparsity_pct == 100.0 and rep.nonzero_pct == 0.0
    side = sum(math.log2(n) + 32 for n in (50, 10)) + 32 * 7
    assert rep.cr == pytest.approx(32 * 67 / side, rel=1e-12)


def test_report_hand_accounting():
    cb = Codebook(np.array([-1.0, 0.0, 1.0]))
    w1 = np.array([[0.0, 0.0, 1.0, -1.0]] * 4)          # counts (4, 8, 4), n=16
    w2 = np.array([[0.0], [0.0], [0.0], [1.0]])         # counts (0, 3, 1), n=4
    layers = [QuantizedDense(w1, np.zeros(4), cb), QuantizedDense(w2, np.zeros(1), cb)]
    rep = compression_report(compress_model(layers), error_rate=0.02)
    hand = [16 * 1.5 + 3 * 4 + 96, entropy_bits([3, 1]) + 3 * 2 + 96]
    for lr, h in zip(rep.layers, hand):
        assert abs(lr.total_bits - h) <= 1.0
    assert rep.cr == pytest.approx(32 * 25 / (sum(hand) + 32 * 5), rel=1e-12)
    assert rep.nonzero_pct == pytest.approx(100 * 9 / 20)
    assert rep.error_pct == pytest.approx(2.0)
    assert set(rep.row()) == {"model", "error_pct", "nonzero_pct", "cr", "cr_container"}
    assert "Error [%]" in rep.table() and "CR" in rep.table()
    assert rep.to_csv().splitlines()[0] == "model,error_pct,nonzero_pct,cr,cr_container"
