import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mipt.gf2 import pack_rows, rank_gf2, rank_packed
from oracles import naive_rank_gf2


@pytest.mark.parametrize("k", [1, 5, 64, 65, 130])
def test_identity_rank(k):
    assert rank_gf2(np.eye(k, dtype=np.uint8)) == k


def test_zero_rank():
    assert rank_gf2(np.zeros((7, 9), dtype=np.uint8)) == 0
    assert rank_gf2(np.zeros((0, 4), dtype=np.uint8)) == 0


def test_random_64x128_matches_naive(rng):
    for _ in range(5):
        m = rng.integers(0, 2, size=(64, 128), dtype=np.uint8)
        assert rank_gf2(m) == naive_rank_gf2(m)


def test_duplicate_rows():
    row = np.array([1, 0, 1, 1, 0], dtype=np.uint8)
    assert rank_gf2(np.stack([row, row, row ^ row])) == 1


def test_pack_rows_layout():
    bits = np.zeros((1, 70), dtype=np.uint8)
    bits[0, 0] = bits[0, 65] = 1
    packed = pack_rows(bits)
    assert packed.shape == (1, 2)
    assert packed[0, 0] == 1 and packed[0, 1] == 2


@given(st.integers(1, 20), st.integers(1, 140), st.integers(0, 2**32 - 1))
def test_rank_property(rows, cols, seed):
    m = np.random.default_rng(seed).integers(0, 2, size=(rows, cols), dtype=np.uint8)
    r = rank_packed(pack_rows(m), cols)
    assert r == naive_rank_gf2(m)
    assert r <= min(rows, cols)
