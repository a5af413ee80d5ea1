"""Ensemble sweeps, fits, finite-size collapse, infidelity sweeps and bounds."""

import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import make_smoothing_spline
from scipy.optimize import least_squares, minimize_scalar

from mipt import dense, dqite
from mipt._io import atomic_write, csv_bytes
from mipt.circuit import CircuitSpec, derive_seed, run_clifford, simulate
from mipt.regions import cluster_regions

P_C = 0.16
STATS = ("median", "mean")


def _p_key(p):
    return int(round(p * 1_000_000_000))


def _map(func, tasks, jobs):
    if jobs and jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(func, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    return [func(t) for t in tasks]


def aggregate(samples, stat):
    """Ensemble statistic and its standard error along axis 0."""
    x = np.sort(np.asarray(samples, dtype=float), axis=0)
    k = x.shape[0]
    sd = x.std(axis=0, ddof=1) if k > 1 else np.zeros(x.shape[1:])
    if stat == "median":
        # large-sample standard error of the median for a normal parent
        return np.median(x, axis=0), math.sqrt(math.pi / 2) * sd / math.sqrt(k)
    if stat == "mean":
        vals = np.array([math.fsum(col) / k for col in x.T]) if x.ndim == 2 else np.array(math.fsum(x) / k)
        return vals, sd / math.sqrt(k)
    raise ValueError(f"stat must be one of {STATS}")


# ------------------------------------------------------- mutual information


@dataclass
class MutualInfoCurve:
    n: int
    L: int
    p: float
    r_values: list
    stat: str
    values: np.ndarray
    stderr: np.ndarray
    n_traj: int
    samples: np.ndarray = field(default=None, repr=False)

    def rows(self):
        return [
            {"n": self.n, "L": self.L, "p": float(self.p), "r": int(r), "stat": self.stat,
             "value": float(v), "stderr": float(s), "n_traj": self.n_traj}
            for r, v, s in zip(self.r_values, self.values, self.stderr)
        ]


MI_HEADER = ["n", "L", "p", "r", "stat", "value", "stderr", "n_traj"]


def trajectory_mutual_info(task):
    """``I(A,C)(r)`` for every ``r`` on the final state of one Clifford trajectory."""
    n, L, p, seed, r_values = task
    tab = run_clifford(CircuitSpec(n=n, L=L, p=p, gate_family="clifford", seed=seed))
    out = []
    for r in r_values:
        a, c = cluster_regions(n, r)
        out.append(max(0.0, tab.mutual_info(a, c)))
    return out


def sweep_mutual_info(grid, r_values, n_traj, stat="median", master_seed=0, jobs=1):
    """One curve per ``(n, L, p)`` in ``grid`` over ``n_traj`` independent trajectories."""
    if stat not in STATS:
        raise ValueError(f"stat must be one of {STATS}")
    r_values = [int(r) for r in r_values]
    tasks, index = [], []
    for n, L, p in grid:
        for r in r_values:
            cluster_regions(n, r)  # validates geometry before any work
        for t in range(n_traj):
            seed = derive_seed(master_seed, n, L, _p_key(p), t)
            tasks.append((n, L, p, seed, r_values))
            index.append((n, L, p))
    results = _map(trajectory_mutual_info, tasks, jobs)
    curves = []
    for n, L, p in grid:
        samples = np.array([res for key, res in zip(index, results) if key == (n, L, p)])
        vals, err = aggregate(samples, stat)
        curves.append(MutualInfoCurve(n, L, p, r_values, stat, vals, err, n_traj, samples))
    return curves


# ---------------------------------------------------------------- fitting


@dataclass
class ExpFit:
    a: float
    b: float
    d: float
    e: float
    residual: float
    degenerate: bool = False

    def __call__(self, x):
        return stretched_exp(np.asarray(x, dtype=float), self.a, self.b, self.d, self.e)


def stretched_exp(x, a, b, d, e):
    return a * np.exp(-b * np.power(np.abs(x), d)) + e


def fit_exponential(x, y, fix_e=None, seed=0, restarts=10):
    """Least-squares fit of ``a exp(-b x^d) + e``.

    ``fix_e`` pins the offset (0 for the decaying branch); ``None`` fits it.
    Trust-region damped least squares from one heuristic start plus
    ``restarts - 1`` seeded random starts; the best cost wins.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 5:
        raise ValueError("need at least 5 (x, y) points")
    if np.ptp(y) <= 1e-12 * max(1.0, np.abs(y).max()):
        e = float(y.mean()) if fix_e is None else float(fix_e)
        a = 0.0 if fix_e is None else float(y.mean() - fix_e)
        return ExpFit(a, 0.0, 1.0, e, float(np.sum((y - a - e) ** 2)), degenerate=True)
    free_e = fix_e is None
    xs = np.abs(x).max() or 1.0

    def unpack(th):
        a, b, d = th[:3]
        return a, b, d, (th[3] if free_e else fix_e)

    def resid(th):
        return stretched_exp(x, *unpack(th)) - y

    lo = [-np.inf, 0.0, 0.05] + ([-np.inf] if free_e else [])
    hi = [np.inf, np.inf, 5.0] + ([np.inf] if free_e else [])
    rng = np.random.default_rng(seed)
    e0 = float(y[np.argmax(np.abs(x))]) if free_e else fix_e
    i0 = np.argmin(np.abs(x))
    starts = [[float(y[i0] - e0), 1.0 / xs, 1.0] + ([e0] if free_e else [])]
    for _ in range(restarts - 1):
        th = [float(y[i0] - e0) * rng.uniform(0.5, 2.0), rng.uniform(0.01, 3.0) / xs ** rng.uniform(0.3, 1.5),
              rng.uniform(0.3, 2.0)]
        if free_e:
            th.append(e0 + rng.normal(scale=0.1 * (np.ptp(y) + 1e-12)))
        starts.append(th)
    best = None
    for th in starts:
        th = np.clip(th, np.array(lo) + 1e-12, np.array(hi) - 1e-12)
        try:
            sol = least_squares(resid, th, bounds=(lo, hi), method="trf", x_scale="jac", max_nfev=4000)
        except (ValueError, FloatingPointError):
            continue
        if np.all(np.isfinite(sol.x)) and (best is None or sol.cost < best.cost):
            best = sol
    if best is None:
        raise RuntimeError("stretched-exponential fit did not converge from any start")
    a, b, d, e = (float(v) for v in unpack(best.x))
    deg = abs(a) < 1e-9 * max(1.0, np.abs(y).max()) or b < 1e-9
    return ExpFit(a, b, d, e, float(2 * best.cost), degenerate=deg)


# --------------------------------------------------------------- collapse


@dataclass
class CollapseResult:
    nu: float
    p_c: float
    branch: str
    residual: float
    degenerate: bool = False
    points: list = field(default_factory=list, repr=False)
    fit: ExpFit = None

    def to_dict(self):
        d = {"nu": self.nu, "p_c": self.p_c, "branch": self.branch, "residual": self.residual,
             "degenerate": self.degenerate, "points": self.points}
        if self.fit is not None:
            d["fit"] = asdict(self.fit)
        return d


COLLAPSE_LAM = 1e-3


def collapse_x(p, n, p_c, nu):
    """Scaling variable ``|p - p_c| n^(1/ν)``."""
    return np.abs(np.asarray(p, dtype=float) - p_c) * np.asarray(n, dtype=float) ** (1.0 / nu)


def collapse_objective(points, p_c, nu, lam=COLLAPSE_LAM):
    """Relative residual of one smoothing-spline master curve through the rescaled data."""
    n, p, y = (np.asarray(c, dtype=float) for c in zip(*points))
    # log abscissa: changing ν shifts each size rigidly, keeping the spline scale fixed
    x = np.log(collapse_x(p, n, p_c, nu))
    x = (x - x.min()) / (np.ptp(x) or 1.0)
    ux, inv = np.unique(np.round(x, 12), return_inverse=True)
    uy = np.bincount(inv, weights=y) / np.bincount(inv)
    if len(ux) < 5:
        return float("inf")
    spl = make_smoothing_spline(ux, uy, lam=lam)
    ss = float(np.sum((y - y.mean()) ** 2)) or 1.0
    return float(np.sum((spl(x) - y) ** 2)) / ss


def data_collapse(points, p_c=P_C, nu_bounds=(0.3, 3.0), branch=None, grid=41, lam=COLLAPSE_LAM):
    """Find ``ν`` minimising the collapse residual of ``points = [(n, p, I), ...]``.

    Coarse log-spaced scan of ``nu_bounds`` then bounded golden-section
    refinement around the best grid point. ``degenerate`` flags a flat
    objective or an optimum pinned to the interval edge.
    """
    points = [(int(n), float(p), float(v)) for n, p, v in points]
    lo, hi = nu_bounds
    if not 0 < lo < hi:
        raise ValueError("degenerate nu search interval")
    if len({n for n, _, _ in points}) < 3:
        raise ValueError("collapse needs at least three system sizes")
    if any(p == p_c for _, p, _ in points):
        raise ValueError("points at p == p_c carry no scaling information")
    if branch is None:
        ps = [p for _, p, _ in points]
        branch = "area" if min(ps) > p_c else "volume" if max(ps) < p_c else "mixed"
    nus = np.geomspace(lo, hi, grid)
    obj = np.array([collapse_objective(points, p_c, nu, lam) for nu in nus])
    k = int(np.argmin(obj))
    a, b = nus[max(k - 1, 0)], nus[min(k + 1, grid - 1)]
    res = minimize_scalar(lambda v: collapse_objective(points, p_c, v, lam), bracket=None,
                          bounds=(a, b), method="bounded", options={"xatol": 1e-4})
    nu, best = (float(res.x), float(res.fun)) if res.fun <= obj[k] else (float(nus[k]), float(obj[k]))
    finite = obj[np.isfinite(obj)]
    flat = finite.size == 0 or np.ptp(finite) <= 1e-6 * max(finite.max(), 1e-12)
    edge = k in (0, grid - 1)
    return CollapseResult(nu, p_c, branch, best, bool(flat or edge), [list(t) for t in points])


def collapsed_curve(result):
    """Rescaled ``(x, y)`` arrays for a collapse result."""
    n, p, y = (np.asarray(c, dtype=float) for c in zip(*result.points))
    x = collapse_x(p, n, result.p_c, result.nu)
    order = np.argsort(x, kind="stable")
    return x[order], y[order]


def synthetic_collapse_points(nu, master, ns=(32, 64, 128), ps=None, p_c=P_C, noise=0.0, seed=0):
    """Data ``I = master(|p - p_c| n^(1/ν))`` for planted-ν recovery checks."""
    if ps is None:
        ps = np.linspace(p_c + 0.02, p_c + 0.34, 9)
    rng = np.random.default_rng(seed)
    pts = []
    for n in ns:
        for p in ps:
            v = float(master(collapse_x(p, n, p_c, nu)))
            pts.append((n, float(p), v * (1 + noise * rng.normal())))
    return pts


def collapse_from_curves(curves, p_c=P_C, stat="mean", **kw):
    """Collapse points at ``r = n/16`` from mutual-information curves carrying samples."""
    pts = []
    for c in curves:
        if c.n % 16:
            raise ValueError(f"n={c.n} is not divisible by 16")
        r = c.n // 16
        j = c.r_values.index(r)
        vals, _ = aggregate(c.samples[:, j : j + 1], stat)
        pts.append((c.n, c.p, float(vals[0])))
    return data_collapse(pts, p_c=p_c, **kw)


def collapse_points(ns, ps, n_traj, stat="mean", master_seed=0, jobs=1):
    """``(n, p, I(r = n/16))`` from Clifford sweeps at depth ``L = n``."""
    pts = []
    for n in ns:
        if n % 16:
            raise ValueError(f"n={n} is not divisible by 16")
        curves = sweep_mutual_info([(n, n, p) for p in ps], [n // 16], n_traj, stat=stat,
                                   master_seed=master_seed, jobs=jobs)
        for c in curves:
            pts.append((c.n, c.p, float(c.values[0])))
    return pts


def collapse_branch(points, branch, p_c=P_C, nu_bounds=(0.3, 3.0), seed=0):
    """Collapse one branch and fit its master curve; the area branch pins the offset to 0."""
    res = data_collapse(points, p_c=p_c, nu_bounds=nu_bounds, branch=branch)
    x, y = collapsed_curve(res)
    res.fit = fit_exponential(x, y, fix_e=0.0 if branch == "area" else None, seed=seed)
    return res


# ------------------------------------------------------- infidelity sweep


INFIDELITY_HEADER = ["n", "L", "p", "r", "beta", "trajectory_id", "infidelity",
                     "exact_infidelity", "closed_form_infidelity", "outcome", "born_p"]


def beta_grid(spec):
    """Parse ``start:stop:step`` (inclusive stop) or a comma list into floats."""
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ValueError(f"bad beta grid {spec!r}")
        start, stop, step = (float(v) for v in parts)
        if step <= 0 or stop < start or start < 0:
            raise ValueError(f"bad beta grid {spec!r}")
        k = int(math.floor((stop - start) / step + 1e-9))
        return [round(start + i * step, 12) for i in range(k + 1)]
    return [float(v) for v in spec.split(",")]


def _sweep_one(task):
    n, L, p, t, seed, r_values, betas, cfg, qubit, target = task
    spec = CircuitSpec(n=n, L=L, p=p, gate_family="haar", seed=seed)
    _, state = simulate(spec)
    probs = [dense.born_probability(state, qubit, m) for m in (0, 1)]
    if target == "sampled":
        u = np.random.default_rng(derive_seed(seed, 0xF1D)).random()
        m = 0 if u < probs[0] else 1
        if probs[m] <= dqite.MIN_BORN:
            m = 1 - m
        outcomes = [(m, 1.0)]
    else:
        outcomes = [(m, probs[m]) for m in (0, 1) if probs[m] > dqite.MIN_BORN]
    bmax = max(betas)
    dt = cfg.dtau
    steps_at = []
    for b in betas:
        k = int(round(b / dt))
        if abs(k * dt - b) > 1e-9:
            raise ValueError(f"beta {b} is not a multiple of dtau {dt}")
        steps_at.append(k)
    rows = []
    for m, w in outcomes:
        target_state, _ = dense.project_z(state, qubit, m)
        h = dqite.outcome_hamiltonian(m, qubit)
        weights, levels = dense.level_weights(state, h)
        exact = [1.0 - dense.fidelity(dense.imaginary_evolve(state, h, b), target_state) for b in betas]
        closed = [1.0 - dense.exact_fidelity_closed_form(weights, levels, b) for b in betas]
        for r in r_values:
            c = dqite.QiteConfig(**{**cfg.__dict__, "beta": max(bmax, dt), "r": r, "track_fidelity": True})
            c.dtau = dt
            if bmax > 0:
                ps, _ = dqite.deterministic_postselect(state, qubit, m, c)
                fid = ps.diagnostics["fidelity"]
            else:
                fid = [dense.fidelity(state, target_state)]
            for b, k, ex, cf in zip(betas, steps_at, exact, closed):
                rows.append({"n": n, "L": L, "p": p, "r": r, "beta": b, "trajectory_id": t,
                             "infidelity": 1.0 - fid[k], "exact_infidelity": ex,
                             "closed_form_infidelity": cf, "outcome": m, "born_p": probs[m], "_w": w})
    if target == "born-weighted":
        merged = {}
        for row in rows:
            key = (row["r"], row["beta"])
            acc = merged.setdefault(key, dict(row, infidelity=0.0, exact_infidelity=0.0,
                                              closed_form_infidelity=0.0, outcome=-1, born_p=1.0))
            for col in ("infidelity", "exact_infidelity", "closed_form_infidelity"):
                acc[col] += row["_w"] * row[col]
        rows = list(merged.values())
    for row in rows:
        row.pop("_w")
    return rows


def infidelity_sweep(grid, r_values, betas, config, n_traj, master_seed=0, qubit=0,
                     target="sampled", jobs=1):
    """DQITE infidelity against the projected state for every trajectory, ``r`` and ``β``.

    ``grid`` holds ``(n, L, p)``; gates are Haar. The postselected outcome on
    ``qubit`` is drawn from its Born distribution (``target="sampled"``) or
    both outcomes are averaged with Born weights (``"born-weighted"``).
    Every row also carries the exact nonunitary infidelity and its closed form.
    """
    if target not in ("sampled", "born-weighted"):
        raise ValueError("target must be 'sampled' or 'born-weighted'")
    betas = sorted(float(b) for b in betas)
    if betas[0] < 0:
        raise ValueError("beta must be nonnegative")
    tasks = []
    for n, L, p in grid:
        if n > dense.DENSE_CAP:
            raise ValueError(f"n={n} exceeds the dense cap {dense.DENSE_CAP}")
        for t in range(n_traj):
            seed = derive_seed(master_seed, n, L, _p_key(p), t)
            tasks.append((n, L, p, t, seed, list(r_values), betas, config, qubit, target))
    rows = [row for chunk in _map(_sweep_one, tasks, jobs) for row in chunk]
    rows.sort(key=lambda r: (r["n"], r["L"], r["p"], r["r"], r["trajectory_id"], r["outcome"], r["beta"]))
    return rows


def mean_infidelity(rows, **match):
    vals = [r["infidelity"] for r in rows if all(abs(r[k] - v) < 1e-12 for k, v in match.items())]
    if not vals:
        raise ValueError(f"no rows match {match}")
    return math.fsum(vals) / len(vals)


# ------------------------------------------------------------------ bounds


@dataclass
class FailureBound:
    M: int
    n: int
    poly_value: float
    delta: float
    bound: float
    first_order: float
    degenerate: bool = False


def eval_poly(n, M, coeffs, degrees):
    """``sum_i c_i n^a_i M^b_i`` with ``degrees[i] = (a_i, b_i)``."""
    if len(coeffs) != len(degrees):
        raise ValueError("coeffs and degrees differ in length")
    return math.fsum(c * n**a * M**b for c, (a, b) in zip(coeffs, degrees))


def failure_probability_bound(M, n, poly=((1.0,), ((0, 0),))):
    """Probability that some outcome of an observed trajectory falls below ``δ = 1/(M poly)``."""
    if M < 1 or n < 1:
        raise ValueError("need M >= 1 and n >= 1")
    pv = eval_poly(n, M, *poly)
    if not pv > 0:
        raise ValueError("poly(n, M) must be positive")
    delta = 1.0 / (M * pv)
    if delta >= 1:
        return FailureBound(M, n, pv, delta, 1.0, 1.0 / pv, degenerate=True)
    bound = -math.expm1(M * math.log1p(-delta))
    return FailureBound(M, n, pv, delta, bound, 1.0 / pv, degenerate=False)


def eval_bounds_report(P, M, epsilon, delta_gap=dqite.GAP, dtau=0.1):
    """Budget, imaginary time, step count, cost estimates and the fidelity bound in one record."""
    eps_b = dqite.error_budget(epsilon, M)
    beta = dqite.required_beta(P, M, epsilon, delta_gap)
    n_beta = dqite.trotter_steps(beta, dtau)
    c = (1 - P) / P
    total = dqite.runtime_estimate(M, epsilon, delta_gap, c) if c > 0 else 0.0
    return {
        "P": P, "M": M, "epsilon": epsilon, "delta_gap": delta_gap, "dtau": dtau, "c": c,
        "epsilon_beta": eps_b, "beta": beta, "n_beta": n_beta,
        "step_runtime": dqite.step_runtime(n_beta, eps_b),
        "total_runtime_estimate": total,
        "fidelity_bound": float(dense.fidelity_bound(P, beta, delta_gap)),
        "fidelity_target": 1.0 - (epsilon / M) ** 2,
        "log": "natural",
    }


# ------------------------------------------------------ amplification gadget


@dataclass
class GadgetResult:
    k_amp: int
    m: int
    mode: str
    probabilities: list
    predicted: list
    final_fidelity: float
    predicted_fidelity: float


CH = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 1], [0, 0, 1, -1]], dtype=complex)
CH[2:, 2:] /= math.sqrt(2)


def gadget_amplitudes(k_amp):
    """``(α, β')`` with ``α/β' = 2^-k`` and ``α² + β'² = 1``."""
    ratio = 2.0 ** (-k_amp)
    beta_p = 1.0 / math.sqrt(1.0 + ratio * ratio)
    return ratio * beta_p, beta_p


def gadget_step_probability(k_amp, k):
    a, b = gadget_amplitudes(k_amp)
    return (a * a + b * b / 2 ** (k + 1)) / (a * a + b * b / 2**k)


def amplification_gadget(k_amp, m, mode="exact-projection", phi0=None, phi1=None, config=None):
    """Boost the small branch of ``α|0>|φ0> + β'|1>|φ1>`` with ``m`` controlled-Hadamard ancillas.

    Qubit 0 is the flag, qubit 1 carries ``φ0``/``φ1`` and qubits ``2..m+1``
    are the ancillas, postselected to ``|0>`` one at a time either by exact
    projection or by learned imaginary-time steps on the domain {flag, ancilla}.
    """
    if k_amp < 1:
        raise ValueError("k_amp must be >= 1")
    if m < 0:
        raise ValueError("m must be >= 0")
    n = 2 + m
    if n > dense.DENSE_CAP:
        raise ValueError(f"{n} qubits exceed the dense cap {dense.DENSE_CAP}")
    if mode not in ("exact-projection", "dqite"):
        raise ValueError("mode must be 'exact-projection' or 'dqite'")
    phi0 = np.array([1, 0], dtype=complex) if phi0 is None else np.asarray(phi0, dtype=complex)
    phi1 = np.array([1, 1], dtype=complex) / math.sqrt(2) if phi1 is None else np.asarray(phi1, dtype=complex)
    phi0, phi1 = phi0 / np.linalg.norm(phi0), phi1 / np.linalg.norm(phi1)
    a, b = gadget_amplitudes(k_amp)
    anc = np.zeros(1 << m, dtype=complex)
    anc[0] = 1.0
    small = np.kron(np.kron([1, 0], phi0), anc)
    two = a * small + b * np.kron(np.kron([0, 1], phi1), anc)
    state = dense.StateVector(n, two)
    target = dense.StateVector(n, small)
    for j in range(m):
        state = dense.apply_2q_unitary(state, CH, 0, 2 + j)
    if config is None and mode == "dqite":
        config = dqite.QiteConfig(beta=4.0, dtau=0.05, r=1)
    probs, pred = [], []
    for j in range(m):
        q = 2 + j
        probs.append(dense.born_probability(state, q, 0))
        pred.append(gadget_step_probability(k_amp, j))
        if mode == "exact-projection":
            state, _ = dense.project_z(state, q, 0)
        else:
            _, state = dqite.deterministic_postselect(state, q, 0, config, domain=(0, q))
    fid = dense.fidelity(state, target)
    return GadgetResult(k_amp, m, mode, probs, pred, fid, 1.0 / (1.0 + 2.0 ** (2 * k_amp - m)))


# ----------------------------------------------------------------- writers


def write_mutual_info_csv(path, curves):
    rows = [row for c in curves for row in c.rows()]
    atomic_write(path, csv_bytes(MI_HEADER, rows))


def write_infidelity_csv(path, rows):
    atomic_write(path, csv_bytes(INFIDELITY_HEADER, rows))


def write_json(path, doc):
    atomic_write(path, json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o)}")


def warn_if_degenerate(result):
    if result.degenerate:
        warnings.warn(f"collapse for branch {result.branch} is degenerate (flat or edge optimum)", stacklevel=2)
