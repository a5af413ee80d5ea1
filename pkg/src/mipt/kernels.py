"""Hot inner loops: packed tableau updates, GF(2) elimination, 2-qubit gates.

Each kernel has a ``*_nb`` (numba) and ``*_np`` (numpy) implementation with
identical semantics; the unsuffixed name is bound to the active backend.

Packed layout: a Pauli row over ``n`` qubits is two ``uint64`` word arrays
``x`` and ``z`` of length ``ceil(n / 64)``; qubit ``q`` lives in word
``q >> 6`` at bit ``q & 63``. Sign bits are ``uint8`` (0 -> +1, 1 -> -1).
"""

import numpy as np

from mipt._accel import USE_NUMBA, njit

ONE = np.uint64(1)


# ---------------------------------------------------------------- popcount


@njit
def _popcount64(v):
    v = v - ((v >> np.uint64(1)) & np.uint64(0x5555555555555555))
    v = (v & np.uint64(0x3333333333333333)) + ((v >> np.uint64(2)) & np.uint64(0x3333333333333333))
    v = (v + (v >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return (v * np.uint64(0x0101010101010101)) >> np.uint64(56)


# ------------------------------------------------------- pauli product phase


@njit
def _product_phase_nb(x1, z1, x2, z2):
    # exponent g (mod 4) in P1 * P2 = i^g P3, summed over words
    plus = 0
    minus = 0
    for w in range(x1.shape[0]):
        a, b, c, d = x1[w], z1[w], x2[w], z2[w]
        X1 = a & ~b
        Y1 = a & b
        Z1 = ~a & b
        X2 = c & ~d
        Y2 = c & d
        Z2 = ~c & d
        plus += np.int64(_popcount64((X1 & Y2) | (Y1 & Z2) | (Z1 & X2)))
        minus += np.int64(_popcount64((X1 & Z2) | (Y1 & X2) | (Z1 & Y2)))
    return (plus - minus) % 4


@njit
def rowmul_nb(x, z, r, h, i):
    """Row ``h`` <- row ``i`` * row ``h`` (Aaronson-Gottesman rowsum)."""
    g = _product_phase_nb(x[i], z[i], x[h], z[h])
    total = (2 * r[h] + 2 * r[i] + g) % 4
    r[h] = total // 2
    for w in range(x.shape[1]):
        x[h, w] ^= x[i, w]
        z[h, w] ^= z[i, w]


@njit
def rowmul_many_nb(x, z, r, targets, src):
    for k in range(targets.shape[0]):
        rowmul_nb(x, z, r, targets[k], src)


@njit
def rowmul_into_nb(x, z, r, dst, srcs):
    """Clear row ``dst`` and accumulate the product of rows ``srcs`` into it."""
    r[dst] = 0
    for w in range(x.shape[1]):
        x[dst, w] = 0
        z[dst, w] = 0
    for k in range(srcs.shape[0]):
        rowmul_nb(x, z, r, dst, srcs[k])


def _product_phase_np(x1, z1, x2, z2):
    X1 = x1 & ~z1
    Y1 = x1 & z1
    Z1 = ~x1 & z1
    X2 = x2 & ~z2
    Y2 = x2 & z2
    Z2 = ~x2 & z2
    plus = np.bitwise_count((X1 & Y2) | (Y1 & Z2) | (Z1 & X2)).sum(axis=-1, dtype=np.int64)
    minus = np.bitwise_count((X1 & Z2) | (Y1 & X2) | (Z1 & Y2)).sum(axis=-1, dtype=np.int64)
    return (plus - minus) % 4


def rowmul_np(x, z, r, h, i):
    g = _product_phase_np(x[i], z[i], x[h], z[h])
    r[h] = ((2 * int(r[h]) + 2 * int(r[i]) + int(g)) % 4) // 2
    x[h] ^= x[i]
    z[h] ^= z[i]


def rowmul_many_np(x, z, r, targets, src):
    if targets.shape[0] == 0:
        return
    g = _product_phase_np(x[src][None, :], z[src][None, :], x[targets], z[targets])
    r[targets] = ((2 * r[targets].astype(np.int64) + 2 * int(r[src]) + g) % 4 // 2).astype(np.uint8)
    x[targets] ^= x[src]
    z[targets] ^= z[src]


def rowmul_into_np(x, z, r, dst, srcs):
    r[dst] = 0
    x[dst] = 0
    z[dst] = 0
    for s in srcs.tolist():
        rowmul_np(x, z, r, dst, s)


# ------------------------------------------------------ 2-qubit Clifford gate


@njit
def apply_gate_nb(x, z, r, q0, q1, tbits, tsign):
    """Conjugate every row by a 2-qubit Clifford given as a 16-entry table.

    Local index ``x0 | z0<<1 | x1<<2 | z1<<3``; ``tbits`` holds the image in
    the same encoding and ``tsign`` the sign flip.
    """
    w0 = q0 >> 6
    s0 = np.uint64(q0 & 63)
    w1 = q1 >> 6
    s1 = np.uint64(q1 & 63)
    m0 = ONE << s0
    m1 = ONE << s1
    for i in range(x.shape[0]):
        idx = (
            ((x[i, w0] >> s0) & ONE)
            | (((z[i, w0] >> s0) & ONE) << np.uint64(1))
            | (((x[i, w1] >> s1) & ONE) << np.uint64(2))
            | (((z[i, w1] >> s1) & ONE) << np.uint64(3))
        )
        out = np.uint64(tbits[idx])
        r[i] ^= tsign[idx]
        x[i, w0] = (x[i, w0] & ~m0) | ((out & ONE) << s0)
        z[i, w0] = (z[i, w0] & ~m0) | (((out >> np.uint64(1)) & ONE) << s0)
        x[i, w1] = (x[i, w1] & ~m1) | (((out >> np.uint64(2)) & ONE) << s1)
        z[i, w1] = (z[i, w1] & ~m1) | (((out >> np.uint64(3)) & ONE) << s1)


@njit
def apply_layer_nb(x, z, r, q0s, q1s, gate_ids, table_bits, table_sign):
    for k in range(q0s.shape[0]):
        g = gate_ids[k]
        apply_gate_nb(x, z, r, q0s[k], q1s[k], table_bits[g], table_sign[g])


def apply_gate_np(x, z, r, q0, q1, tbits, tsign):
    w0, s0 = q0 >> 6, np.uint64(q0 & 63)
    w1, s1 = q1 >> 6, np.uint64(q1 & 63)
    idx = (
        ((x[:, w0] >> s0) & ONE)
        | (((z[:, w0] >> s0) & ONE) << np.uint64(1))
        | (((x[:, w1] >> s1) & ONE) << np.uint64(2))
        | (((z[:, w1] >> s1) & ONE) << np.uint64(3))
    ).astype(np.intp)
    out = tbits[idx].astype(np.uint64)
    r ^= tsign[idx]
    m0 = ~(ONE << s0)
    m1 = ~(ONE << s1)
    x[:, w0] = (x[:, w0] & m0) | ((out & ONE) << s0)
    z[:, w0] = (z[:, w0] & m0) | (((out >> np.uint64(1)) & ONE) << s0)
    x[:, w1] = (x[:, w1] & m1) | (((out >> np.uint64(2)) & ONE) << s1)
    z[:, w1] = (z[:, w1] & m1) | (((out >> np.uint64(3)) & ONE) << s1)


def apply_layer_np(x, z, r, q0s, q1s, gate_ids, table_bits, table_sign):
    for q0, q1, g in zip(q0s.tolist(), q1s.tolist(), gate_ids.tolist()):
        apply_gate_np(x, z, r, q0, q1, table_bits[g], table_sign[g])


# ----------------------------------------------------------- GF(2) rank


@njit
def gf2_rank_nb(rows, ncols):
    m = rows.shape[0]
    a = rows.copy()
    rank = 0
    for c in range(ncols):
        if rank == m:
            break
        w = c >> 6
        bit = ONE << np.uint64(c & 63)
        piv = -1
        for i in range(rank, m):
            if a[i, w] & bit:
                piv = i
                break
        if piv < 0:
            continue
        if piv != rank:
            for k in range(a.shape[1]):
                t = a[piv, k]
                a[piv, k] = a[rank, k]
                a[rank, k] = t
        for i in range(rank + 1, m):
            if a[i, w] & bit:
                for k in range(w, a.shape[1]):
                    a[i, k] ^= a[rank, k]
        rank += 1
    return rank


def gf2_rank_np(rows, ncols):
    a = np.array(rows, dtype=np.uint64, copy=True)
    m = a.shape[0]
    rank = 0
    for c in range(ncols):
        if rank == m:
            break
        w, bit = c >> 6, ONE << np.uint64(c & 63)
        hits = np.flatnonzero(a[rank:, w] & bit)
        if hits.size == 0:
            continue
        piv = rank + hits[0]
        if piv != rank:
            a[[rank, piv]] = a[[piv, rank]]
        below = rank + 1 + np.flatnonzero(a[rank + 1:, w] & bit)
        a[below] ^= a[rank]
        rank += 1
    return rank


# ------------------------------------------------- statevector 2-qubit gate


@njit
def sv_apply_2q_nb(psi, u, q0, q1, n):
    # qubit q is bit (n - 1 - q) of the basis index
    b0 = n - 1 - q0
    b1 = n - 1 - q1
    lo = min(b0, b1)
    hi = max(b0, b1)
    m0 = 1 << b0
    m1 = 1 << b1
    quarter = psi.shape[0] >> 2
    for k in range(quarter):
        # insert zero bits at positions lo and hi
        i = k
        i = ((i >> lo) << (lo + 1)) | (i & ((1 << lo) - 1))
        i = ((i >> hi) << (hi + 1)) | (i & ((1 << hi) - 1))
        i00 = i
        i01 = i | m1
        i10 = i | m0
        i11 = i | m0 | m1
        a0 = psi[i00]
        a1 = psi[i01]
        a2 = psi[i10]
        a3 = psi[i11]
        psi[i00] = u[0, 0] * a0 + u[0, 1] * a1 + u[0, 2] * a2 + u[0, 3] * a3
        psi[i01] = u[1, 0] * a0 + u[1, 1] * a1 + u[1, 2] * a2 + u[1, 3] * a3
        psi[i10] = u[2, 0] * a0 + u[2, 1] * a1 + u[2, 2] * a2 + u[2, 3] * a3
        psi[i11] = u[3, 0] * a0 + u[3, 1] * a1 + u[3, 2] * a2 + u[3, 3] * a3


def sv_apply_2q_np(psi, u, q0, q1, n):
    t = psi.reshape((2,) * n)
    out = np.tensordot(u.reshape(2, 2, 2, 2), t, axes=([2, 3], [q0, q1]))
    out = np.moveaxis(out, [0, 1], [q0, q1])
    psi[:] = out.reshape(-1)


if USE_NUMBA:
    rowmul = rowmul_nb
    rowmul_many = rowmul_many_nb
    rowmul_into = rowmul_into_nb
    apply_gate = apply_gate_nb
    apply_layer = apply_layer_nb
    gf2_rank = gf2_rank_nb
    sv_apply_2q = sv_apply_2q_nb
else:
    rowmul = rowmul_np
    rowmul_many = rowmul_many_np
    rowmul_into = rowmul_into_np
    apply_gate = apply_gate_np
    apply_layer = apply_layer_np
    gf2_rank = gf2_rank_np
    sv_apply_2q = sv_apply_2q_np
