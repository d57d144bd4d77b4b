import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mxquant import codec
from mxquant.errors import DomainError, FormatError, ShapeError, TruncationError

GRID = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0]


def nearest_grid_oracle(v: float) -> float:
    """Scan every signed grid value; ties go to the even magnitude index."""
    best = None
    for idx, g in enumerate(GRID):
        for cand in (g, -g):
            d = abs(v - cand)
            key = (d, idx % 2)
            if best is None or key < best[0]:
                best = (key, cand)
    return best[1]


# -- fp4 element grid ------------------------------------------------------------

@pytest.mark.parametrize(
    "v, expected",
    [(0.0, 0.0), (5.1, 6.0), (2.5, 2.0), (-7.3, -6.0), (5.0, 4.0), (0.25, 0.0),
     (0.75, 1.0), (1.25, 1.0), (1.75, 2.0), (3.5, 4.0), (-2.5, -2.0), (100.0, 6.0)],
)
def test_fp4_nearest_examples(v, expected):
    assert codec.fp4_decode(codec.fp4_nearest(v)) == expected


def test_zero_encodes_to_positive_zero_code():
    assert codec.fp4_nearest(0.0) == 0


def test_fp4_nearest_rejects_nonfinite():
    with pytest.raises(DomainError):
        codec.fp4_nearest(float("nan"))
    with pytest.raises(DomainError):
        codec.fp4_encode([1.0, float("inf")])


def test_grid_is_bijective_over_codes():
    values = codec.fp4_decode(np.arange(16))
    assert sorted(set(np.abs(values).tolist())) == GRID
    assert values[0] == 0.0 and values[8] == 0.0
    assert not np.signbit(values[0]) and np.signbit(values[8])
    # every code is reproduced by encoding its own value
    assert np.array_equal(codec.fp4_encode(values), np.arange(16))


def test_midpoints_and_neighbours_match_oracle():
    pts = []
    for a, b in zip(GRID, GRID[1:]):
        m = (a + b) / 2
        pts += [m, np.nextafter(m, -np.inf), np.nextafter(m, np.inf)]
    pts += [6.0, 6.5, 7.999, 1e9]
    pts = np.array(pts + [-p for p in pts])
    got = codec.fp4_decode(codec.fp4_encode(pts))
    assert got.tolist() == [nearest_grid_oracle(p) for p in pts]


@settings(max_examples=500, deadline=None)
@given(st.floats(min_value=-20, max_value=20, allow_nan=False))
def test_fp4_matches_oracle(v):
    assert float(codec.fp4_decode(codec.fp4_nearest(v))) == nearest_grid_oracle(v)


@settings(max_examples=300, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50))
def test_fp4_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    assert codec.fp4_decode(codec.fp4_nearest(lo)) <= codec.fp4_decode(codec.fp4_nearest(hi))


# -- scales ---------------------------------------------------------------------------

def _block_with_max(m):
    b = np.zeros(32)
    b[3] = m
    return b


@pytest.mark.parametrize("amax, exp", [(5.0, 0), (6.0, 0), (1.0, -2), (4.0, 0), (7.99, 0), (8.0, 1), (0.3, -4)])
def test_block_scale_examples(amax, exp):
    assert codec.block_scale(_block_with_max(amax)) == exp
    assert codec.block_scale(_block_with_max(-amax)) == exp


def test_block_scale_matches_log2_formula():
    rng = np.random.default_rng(0)
    for amax in np.exp(rng.uniform(-30, 30, 2000)):
        assert codec.block_scale(_block_with_max(amax)) == math.floor(math.log2(amax)) - 2


def test_block_scale_zero_and_saturation():
    assert codec.block_scale(np.zeros(32)) == 0
    assert codec.block_scale(_block_with_max(2.0**130)) == 127
    assert codec.block_scale(_block_with_max(2.0**-140)) == -127
    assert codec.block_scale(_block_with_max(np.float32(np.finfo(np.float32).max))) == 125


# -- blocks ---------------------------------------------------------------------------

def test_quantize_block_all_ones():
    exp, codes = codec.quantize_block(np.ones(32))
    assert exp == -2
    assert np.all(codec.fp4_decode(codes) == 4.0)
    assert np.array_equal(codec.dequantize_block(exp, codes), np.ones(32, dtype=np.float32))


def test_quantize_block_clip_case():
    block = np.zeros(32)
    block[0] = 7.9
    exp, codes = codec.quantize_block(block)
    assert exp == 0
    rec = codec.dequantize_block(exp, codes)
    assert rec[0] == 6.0
    assert abs(rec[0] - 7.9) == pytest.approx(1.9)
    assert abs(rec[0] - 7.9) <= 2 * 2.0**exp


def test_all_zero_block_round_trip():
    exp, codes = codec.quantize_block(np.zeros(32))
    assert exp == 0 and not codes.any()
    assert not codec.dequantize_block(exp, codes).any()


def test_dequantize_block_examples():
    assert codec.dequantize_block(0, [7] * 32)[0] == 6.0
    assert codec.dequantize_block(-2, [6] * 32)[0] == 1.0


@pytest.mark.parametrize("exp", range(-6, 7))
def test_representable_blocks_are_fixed_points(exp):
    # each block carries a magnitude-4 anchor so its scale is exactly 2**exp
    for g in GRID:
        for sign in (1, -1):
            block = np.full(32, sign * g) * 2.0**exp
            block[-1] = 4.0 * 2.0**exp
            e, codes = codec.quantize_block(block)
            assert e == exp
            assert np.array_equal(codec.dequantize_block(e, codes), block.astype(np.float32))


# -- tensors --------------------------------------------------------------------------

def test_quantize_tensor_shapes():
    q = codec.quantize_tensor_mx(np.ones((1, 32), np.float32))
    assert q.num_groups == 1 and q.codes.size == 32
    assert codec.quantize_tensor_mx(np.ones((2, 64), np.float32)).num_groups == 4


def test_quantize_tensor_rejects_indivisible_cols():
    with pytest.raises(ShapeError):
        codec.quantize_tensor_mx(np.ones((2, 40), np.float32))


def test_tensor_quantization_matches_per_block_loop():
    rng = np.random.default_rng(1)
    t = (rng.standard_normal((5, 96)) * np.exp(rng.uniform(-5, 5, (5, 1)))).astype(np.float32)
    q = codec.quantize_tensor_mx(t)
    for r in range(5):
        for g in range(3):
            exp, codes = codec.quantize_block(t[r, g * 32:(g + 1) * 32])
            assert q.scales[r, g] == exp
            assert np.array_equal(q.codes[r, g * 32:(g + 1) * 32], codes)


def test_dequantize_all_zero_tensor():
    z = np.zeros((4, 32), np.float32)
    assert not codec.dequantize_tensor_mx(codec.quantize_tensor_mx(z)).any()


def test_error_bound_and_idempotence_on_random_tensors():
    rng = np.random.default_rng(2)
    for _ in range(20):
        t = (rng.standard_normal((8, 64)) * 10.0 ** rng.uniform(-3, 3)).astype(np.float32)
        q = codec.quantize_tensor_mx(t)
        rec = codec.dequantize_tensor_mx(q)
        scale = np.repeat(q.group_scales(), 32, axis=1)
        assert np.all(np.abs(rec.astype(np.float64) - t) <= 2 * scale)
        assert codec.quantize_tensor_mx(rec) == q


def test_empty_tensor():
    q = codec.quantize_tensor_mx(np.zeros((0, 32), np.float32))
    assert q.num_groups == 0
    assert codec.dequantize_tensor_mx(q).shape == (0, 32)


# -- MXQ4 files -----------------------------------------------------------------------

def test_nibble_packing_low_first_and_padding():
    assert codec.pack_nibbles([1, 2, 3]) == bytes([0x21, 0x03])
    assert codec.unpack_nibbles(bytes([0x21, 0x03]), 3).tolist() == [1, 2, 3]


def test_mxq4_layout():
    t = np.array([[1.0] * 32 + [-6.0] + [0.0] * 31], np.float32)
    raw = codec.mxq4_to_bytes(codec.quantize_tensor_mx(t))
    assert raw[:4] == b"MXQ4"
    assert raw[4:16] == (1).to_bytes(4, "little") + (64).to_bytes(4, "little") + (32).to_bytes(4, "little")
    assert raw[16:18] == bytes([0xFE, 0x00])  # exponents -2 and 0
    assert raw[18] == 0x66  # two codes of +4.0
    assert raw[18 + 16] == 0x0F  # -6.0 then +0 in the second group
    assert len(raw) == 16 + 2 + 32


def test_mxq4_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    q = codec.quantize_tensor_mx(rng.standard_normal((3, 64)).astype(np.float32))
    codec.save_mxq4(q, tmp_path / "q.mxq")
    assert codec.load_mxq4(tmp_path / "q.mxq") == q


def test_mxq4_odd_code_count_padding():
    q = codec.quantize_tensor_mx(np.ones((1, 1), np.float32), group_size=1)
    raw = codec.mxq4_to_bytes(q)
    assert len(raw) == 16 + 1 + 1
    assert codec.mxq4_from_bytes(raw) == q


def test_mxq4_errors():
    with pytest.raises(FormatError):
        codec.mxq4_from_bytes(b"NOPE" + bytes(12))
    raw = codec.mxq4_to_bytes(codec.quantize_tensor_mx(np.ones((1, 32), np.float32)))
    with pytest.raises(TruncationError):
        codec.mxq4_from_bytes(raw[:-1])


# -- integer quantization -------------------------------------------------------------

def int_oracle(x, bits):
    lo, hi = min(x), max(x)
    s = (hi - lo) / (2**bits - 1)
    z = -round(lo / s)
    return s, z, [min(max(round(v / s) + z, 0), 2**bits - 1) for v in x]


def test_int_quantize_examples():
    p, codes = codec.int_uniform_quantize(np.array([0.0, 15.0]), 4)
    assert (p.step, p.zero_point, codes.tolist()) == (1.0, 0, [0, 15])
    p, codes = codec.int_uniform_quantize(np.array([-1.0, 0.0, 2.0]), 4)
    assert p.step == pytest.approx(0.2) and p.zero_point == 5 and codes.tolist() == [0, 5, 15]


@pytest.mark.parametrize("c", [3.0, -2.5, 0.0, 1e-3])
def test_int_quantize_constant_is_exact(c):
    x = np.full(3, c)
    p, codes = codec.int_uniform_quantize(x, 4)
    assert np.array_equal(codec.int_uniform_dequantize(p, codes), x)
    assert 0 <= p.zero_point <= 15


def test_int_quantize_matches_formula_and_half_step_bound():
    rng = np.random.default_rng(4)
    for bits in (2, 4, 8):
        x = rng.uniform(-3, 2, 200)
        p, codes = codec.int_uniform_quantize(x, bits)
        s, z, ref = int_oracle(x.tolist(), bits)
        assert p.step == s and p.zero_point == z and codes.tolist() == ref
        rec = codec.int_uniform_dequantize(p, codes)
        assert np.all(np.abs(rec - x) <= s / 2 + 1e-12)


def test_int_quantize_rejects_one_bit():
    with pytest.raises(DomainError):
        codec.int_uniform_quantize(np.ones(3), 1)
