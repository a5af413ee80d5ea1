"""Compare the numba and numpy kernel backends.

Run ``python benchmarks/bench_kernels.py``. Each kernel is timed in both
variants on identical inputs, outputs are checked for equality, and an
end-to-end Clifford trajectory is timed in a subprocess per backend via
``MIPT_DISABLE_NUMBA``.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from mipt import _accel, kernels
from mipt.circuit import CircuitSpec, layer_pairs
from mipt.clifford2q import clifford_tables
from mipt.dense import haar_2q
from mipt.stabilizer import StabilizerTableau


def best_of(func, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        func()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_layer(n, depth, repeat, rng):
    _, bits, sign = clifford_tables()
    q0, q1 = layer_pairs(n)
    ids = rng.integers(0, bits.shape[0], size=(depth, q0.size)).astype(np.int64)
    base = StabilizerTableau(n)
    out = {}
    for name, fn in (("numba", kernels.apply_layer_nb), ("numpy", kernels.apply_layer_np)):
        def run():
            tab = base.copy()
            for row in ids:
                fn(*tab._gate_rows(), q0, q1, row, bits, sign)
            return tab
        run()  # warm-up / JIT
        out[name] = (best_of(run, repeat), run())
    assert out["numba"][1] == out["numpy"][1]
    return {k: v[0] for k, v in out.items()}


def bench_rank(nrows, ncols, repeat, rng):
    words = (ncols + 63) // 64
    rows = rng.integers(0, 2**63, size=(nrows, words), dtype=np.uint64)
    if ncols % 64:
        rows[:, -1] &= np.uint64((1 << (ncols % 64)) - 1)
    res = {}
    for name, fn in (("numba", kernels.gf2_rank_nb), ("numpy", kernels.gf2_rank_np)):
        fn(rows.copy(), ncols)
        res[name] = (best_of(lambda: fn(rows.copy(), ncols), repeat), fn(rows.copy(), ncols))
    assert res["numba"][1] == res["numpy"][1]
    return {k: v[0] for k, v in res.items()}


def bench_sv(n, repeat, rng):
    psi = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
    psi /= np.linalg.norm(psi)
    u = haar_2q(rng)
    res = {}
    for name, fn in (("numba", kernels.sv_apply_2q_nb), ("numpy", kernels.sv_apply_2q_np)):
        # the kernel updates its buffer in place
        buf = psi.copy()
        fn(buf, u, 1, n - 2, n)
        res[name] = (best_of(lambda: fn(psi.copy(), u, 1, n - 2, n), repeat), buf)
    assert np.allclose(res["numba"][1], res["numpy"][1], atol=1e-12)
    return {k: v[0] for k, v in res.items()}


def end_to_end(n, p, disable):
    env = dict(os.environ, MIPT_DISABLE_NUMBA="1" if disable else "0")
    code = (
        "import time; from mipt.circuit import CircuitSpec, run_clifford;"
        f"run_clifford(CircuitSpec({n}, 4, {p}, seed=0));"
        f"t=time.perf_counter(); run_clifford(CircuitSpec({n}, {n}, {p}, seed=1));"
        "print(time.perf_counter()-t)"
    )
    proc = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(proc.stdout.strip())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        print("numba is not installed; the numba column runs the uncompiled loops")
    rng = np.random.default_rng(args.seed)
    rows = [
        (f"clifford layers n={args.n} x8", bench_layer(args.n, 8, args.repeat, rng)),
        (f"gf2 rank {args.n}x{2 * args.n}", bench_rank(args.n, 2 * args.n, args.repeat, rng)),
        ("statevector 2q gate n=18", bench_sv(18, args.repeat, rng)),
    ]
    print(f"{'kernel':34s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speedup':>8s}")
    for name, t in rows:
        print(f"{name:34s} {1e3 * t['numba']:11.3f} {1e3 * t['numpy']:11.3f} {t['numpy'] / t['numba']:8.2f}")
    nb, npy = end_to_end(args.n, 0.2, False), end_to_end(args.n, 0.2, True)
    print(f"{'trajectory n=L=' + str(args.n) + ' p=0.2':34s} {1e3 * nb:11.1f} {1e3 * npy:11.1f} {npy / nb:8.2f}")


if __name__ == "__main__":
    main()
