"""GF(2) rank on bit-packed rows."""

import numpy as np

from mipt import kernels


def pack_rows(bits):
    """Pack a 0/1 matrix of shape (m, k) into ``uint64`` words, column j -> word j//64, bit j%64."""
    bits = np.asarray(bits, dtype=np.uint8) & 1
    if bits.ndim != 2:
        raise ValueError("expected a 2-d bit matrix")
    m, k = bits.shape
    words = max(1, -(-k // 64))
    padded = np.zeros((m, words * 64), dtype=np.uint8)
    padded[:, :k] = bits
    packed = np.packbits(padded, axis=1, bitorder="little")
    return np.ascontiguousarray(packed).view("<u8").astype(np.uint64, copy=False).reshape(m, words)


def rank_gf2(matrix):
    """Row rank over GF(2) of a 0/1 matrix."""
    bits = np.asarray(matrix)
    if bits.size == 0:
        return 0
    return int(kernels.gf2_rank(pack_rows(bits), bits.shape[1]))


def rank_packed(rows, ncols):
    if rows.shape[0] == 0 or ncols == 0:
        return 0
    return int(kernels.gf2_rank(np.ascontiguousarray(rows, dtype=np.uint64), ncols))
