"""Brickwork measured random circuits: generation, recording, replay, serialisation.

One layer applies the even sublayer ``(0,1), (2,3), ..., (n-2,n-1)`` and then
the odd sublayer ``(1,2), ..., (n-1,0)``. Between consecutive layers each
qubit is measured in Z with probability ``p``; there are ``L - 1`` such gaps
and no measurements before the first or after the last layer.

Randomness is split into independent streams keyed by
``(seed, purpose, layer)`` through :class:`numpy.random.SeedSequence`, and
each stream is consumed as one vector indexed by qubit (or gate slot), so
gate draws, measurement placement and outcomes never perturb each other.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from mipt import dense
from mipt.clifford2q import check_index, clifford_unitary
from mipt.stabilizer import ImpossibleOutcomeError, StabilizerTableau

FORMAT_VERSION = 1
DENSE_CIRCUIT_CAP = 20

GATE_STREAM = 0
SELECT_STREAM = 1
OUTCOME_STREAM = 2


class RecordFormatError(ValueError):
    """Malformed or incompatible trajectory record."""


def stream(seed, purpose, layer):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(purpose), int(layer))))


def derive_seed(master_seed, *key):
    """Child 64-bit seed for ``key`` (e.g. a trajectory id) under ``master_seed``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class CircuitSpec:
    n: int
    L: int
    p: float
    gate_family: str = "clifford"
    seed: int = 0
    initial_bitstring: str = None

    def __post_init__(self):
        if self.n < 4 or self.n % 2:
            raise ValueError(f"n must be even and >= 4, got {self.n}")
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        if self.gate_family not in ("clifford", "haar"):
            raise ValueError(f"unknown gate family {self.gate_family!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.initial_bitstring is not None:
            b = self.initial_bitstring
            if len(b) != self.n or set(b) - {"0", "1"}:
                raise ValueError("initial_bitstring must be n characters of 0/1")

    def to_dict(self):
        return {
            "n": self.n,
            "L": self.L,
            "p": self.p,
            "gate_family": self.gate_family,
            "seed": int(self.seed),
            "initial_bitstring": self.initial_bitstring,
        }


@dataclass
class GateEvent:
    layer: int
    sublayer: str
    qubits: tuple
    gate_ref: object  # Clifford index (int) or 4x4 complex matrix

    def unitary(self):
        if isinstance(self.gate_ref, (int, np.integer)):
            return clifford_unitary(int(self.gate_ref))
        return np.asarray(self.gate_ref, dtype=complex)

    def __eq__(self, other):
        if not isinstance(other, GateEvent):
            return NotImplemented
        same = (self.layer, self.sublayer, tuple(self.qubits)) == (other.layer, other.sublayer, tuple(other.qubits))
        a, b = self.gate_ref, other.gate_ref
        if isinstance(a, (int, np.integer)) or isinstance(b, (int, np.integer)):
            return same and a == b
        return same and np.array_equal(np.asarray(a), np.asarray(b))


@dataclass
class MeasurementEvent:
    layer_gap: int
    qubit: int
    outcome: int
    born_p: float


@dataclass
class TrajectoryRecord:
    spec: CircuitSpec
    gates: list = field(default_factory=list)
    measurements: list = field(default_factory=list)
    format_version: int = FORMAT_VERSION

    @property
    def M(self):
        return len(self.measurements)

    def events(self):
        """Gate and measurement events merged in execution order."""
        by_gap = {}
        for m in self.measurements:
            by_gap.setdefault(m.layer_gap, []).append(m)
        by_layer = {}
        for g in self.gates:
            by_layer.setdefault(g.layer, []).append(g)
        for k in range(self.spec.L):
            yield from by_layer.get(k, [])
            yield from by_gap.get(k, [])


def sublayer_pairs(n, which):
    if which == "even":
        return [(i, i + 1) for i in range(0, n, 2)]
    return [(i, (i + 1) % n) for i in range(1, n, 2)]


def layer_pairs(n):
    """``(q0s, q1s)`` arrays for one full layer, even sublayer first."""
    pairs = sublayer_pairs(n, "even") + sublayer_pairs(n, "odd")
    q0s = np.array([a for a, _ in pairs], dtype=np.int64)
    q1s = np.array([b for _, b in pairs], dtype=np.int64)
    return q0s, q1s


def _sublayer_of(slot, n):
    return "even" if slot < n // 2 else "odd"


# ------------------------------------------------------------------ drivers


def run_clifford(spec, record=None):
    """Simulate a Clifford-family trajectory; optionally append events to ``record``."""
    n = spec.n
    tab = StabilizerTableau(n, spec.initial_bitstring)
    q0s, q1s = layer_pairs(n)
    for k in range(spec.L):
        ids = stream(spec.seed, GATE_STREAM, k).integers(0, 11520, size=n)
        tab.apply_layer(q0s, q1s, ids)
        if record is not None:
            for s in range(n):
                record.gates.append(GateEvent(k, _sublayer_of(s, n), (int(q0s[s]), int(q1s[s])), int(ids[s])))
        if k == spec.L - 1:
            break
        for q, u in _gap_draws(spec, k):
            outcome, p = tab.measure(q, u)
            if record is not None:
                record.measurements.append(MeasurementEvent(k, q, outcome, p))
    return tab


def run_haar(spec, record=None):
    n = spec.n
    if n > DENSE_CIRCUIT_CAP:
        raise ValueError(f"haar family limited to n <= {DENSE_CIRCUIT_CAP}")
    state = dense.StateVector.zeros(n, spec.initial_bitstring)
    q0s, q1s = layer_pairs(n)
    for k in range(spec.L):
        rng = stream(spec.seed, GATE_STREAM, k)
        for s in range(n):
            u = dense.haar_2q(rng)
            state = dense.apply_2q_unitary(state, u, int(q0s[s]), int(q1s[s]))
            if record is not None:
                record.gates.append(GateEvent(k, _sublayer_of(s, n), (int(q0s[s]), int(q1s[s])), u))
        if k == spec.L - 1:
            break
        for q, u in _gap_draws(spec, k):
            p0 = dense.born_probability(state, q, 0)
            outcome = 0 if u < p0 else 1
            if (p0 if outcome == 0 else 1 - p0) <= dense.ZERO_PROB:
                outcome = 1 - outcome
            state, p = dense.project_z(state, q, outcome)
            if record is not None:
                record.measurements.append(MeasurementEvent(k, q, outcome, p))
    return state


def _gap_draws(spec, k):
    select = stream(spec.seed, SELECT_STREAM, k).random(spec.n)
    outcome_u = stream(spec.seed, OUTCOME_STREAM, k).random(spec.n)
    for q in np.flatnonzero(select < spec.p):
        yield int(q), float(outcome_u[q])


def simulate(spec):
    """Run one trajectory; returns ``(record, final_state)``."""
    record = TrajectoryRecord(spec)
    if spec.gate_family == "clifford":
        state = run_clifford(spec, record)
    else:
        state = run_haar(spec, record)
    return record, state


def generate_and_record(spec):
    return simulate(spec)[0]


def initial_state(spec):
    if spec.gate_family == "clifford":
        return StabilizerTableau(spec.n, spec.initial_bitstring)
    return dense.StateVector.zeros(spec.n, spec.initial_bitstring)


def apply_gate_event(state, g):
    if isinstance(state, StabilizerTableau):
        if not isinstance(g.gate_ref, (int, np.integer)):
            raise ValueError("stabilizer replay needs Clifford gate indices")
        return state.apply_clifford_2q(int(g.gate_ref), *g.qubits)
    return dense.apply_2q_unitary(state, g.unitary(), *g.qubits)


def replay_reference(record, dense_backend=False):
    """Apply every gate and force every recorded outcome; returns the final state.

    ``dense_backend=True`` replays a Clifford record on a statevector.
    """
    spec = record.spec
    if dense_backend or spec.gate_family == "haar":
        if spec.n > DENSE_CIRCUIT_CAP:
            raise ValueError(f"dense replay limited to n <= {DENSE_CIRCUIT_CAP}")
        state = dense.StateVector.zeros(spec.n, spec.initial_bitstring)
    else:
        state = StabilizerTableau(spec.n, spec.initial_bitstring)
    for ev in record.events():
        if isinstance(ev, GateEvent):
            state = apply_gate_event(state, ev)
        elif isinstance(state, StabilizerTableau):
            state.force(ev.qubit, ev.outcome)
        else:
            try:
                state, _ = dense.project_z(state, ev.qubit, ev.outcome)
            except dense.VanishingNormError as exc:
                raise ImpossibleOutcomeError(str(exc)) from exc
    return state


def validate_record(record):
    """Check the layer/gap interleaving and sublayer geometry; raises ``RecordFormatError``."""
    spec = record.spec
    n = spec.n
    expect = {s: sublayer_pairs(n, s) for s in ("even", "odd")}
    last = (-1, 0)
    for ev in record.events():
        if isinstance(ev, GateEvent):
            if not 0 <= ev.layer < spec.L or tuple(ev.qubits) not in expect[ev.sublayer]:
                raise RecordFormatError(f"bad gate event {ev}")
            key = (ev.layer, 0 if ev.sublayer == "even" else 1)
        else:
            if not 0 <= ev.layer_gap < spec.L - 1 or not 0 <= ev.qubit < n:
                raise RecordFormatError(f"bad measurement event {ev}")
            if ev.outcome not in (0, 1) or not 0 < ev.born_p <= 1:
                raise RecordFormatError(f"bad measurement event {ev}")
            key = (ev.layer_gap, 2)
        if key < last:
            raise RecordFormatError("events out of order")
        last = key
    per_layer = {}
    for g in record.gates:
        per_layer[g.layer] = per_layer.get(g.layer, 0) + 1
    if any(c != n for c in per_layer.values()) or len(per_layer) != spec.L:
        raise RecordFormatError("each layer must hold n gates")
    # list order must itself be an execution order
    order = [(g.layer, 0 if g.sublayer == "even" else 1) for g in record.gates]
    if order != sorted(order):
        raise RecordFormatError("gate list out of order")
    gaps = [(m.layer_gap, m.qubit) for m in record.measurements]
    if gaps != sorted(gaps):
        raise RecordFormatError("measurement list out of order")
    return True


# ------------------------------------------------------------ serialisation


def _gate_to_json(g):
    ref = g.gate_ref
    if isinstance(ref, (int, np.integer)):
        gate = int(ref)
    else:
        flat = np.asarray(ref, dtype=complex).reshape(-1)
        gate = [[float(v.real), float(v.imag)] for v in flat]
    return {"layer": g.layer, "sublayer": g.sublayer, "qubits": list(g.qubits), "gate": gate}


def to_dict(record):
    return {
        "format_version": record.format_version,
        "spec": record.spec.to_dict(),
        "gates": [_gate_to_json(g) for g in record.gates],
        "measurements": [
            {"layer_gap": m.layer_gap, "qubit": m.qubit, "outcome": m.outcome, "born_p": float(m.born_p)}
            for m in record.measurements
        ],
    }


def serialize(record):
    return json.dumps(to_dict(record), separators=(",", ":")).encode("utf-8")


def from_dict(doc):
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise RecordFormatError("missing format_version")
    if doc["format_version"] != FORMAT_VERSION:
        raise RecordFormatError(f"unsupported format_version {doc['format_version']}")
    try:
        spec = CircuitSpec(**doc["spec"])
        gates = []
        for g in doc["gates"]:
            ref = g["gate"]
            if isinstance(ref, int):
                check_index(ref)
            else:
                arr = np.asarray(ref, dtype=float)
                if arr.shape != (16, 2):
                    raise RecordFormatError("haar gate must be 16 [re, im] pairs")
                ref = (arr[:, 0] + 1j * arr[:, 1]).reshape(4, 4)
            gates.append(GateEvent(int(g["layer"]), g["sublayer"], tuple(g["qubits"]), ref))
        meas = [
            MeasurementEvent(int(m["layer_gap"]), int(m["qubit"]), int(m["outcome"]), float(m["born_p"]))
            for m in doc["measurements"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, RecordFormatError):
            raise
        raise RecordFormatError(f"malformed record: {exc}") from exc
    record = TrajectoryRecord(spec, gates, meas, FORMAT_VERSION)
    validate_record(record)
    return record


def deserialize(payload):
    try:
        doc = json.loads(payload)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise RecordFormatError(f"malformed record: {exc}") from exc
    return from_dict(doc)
