"""Qubit subsets and ring geometry."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SubsystemSpec:
    qubits: tuple

    def __post_init__(self):
        qs = tuple(int(q) for q in self.qubits)
        if any(b <= a for a, b in zip(qs, qs[1:])):
            raise ValueError(f"qubits must be strictly increasing, got {qs}")
        object.__setattr__(self, "qubits", qs)

    @classmethod
    def of(cls, qubits):
        """Build from any iterable, sorting it; duplicates are an error."""
        qs = sorted(int(q) for q in qubits)
        if len(set(qs)) != len(qs):
            raise ValueError(f"duplicate qubits in {qs}")
        return cls(tuple(qs))

    def __len__(self):
        return len(self.qubits)

    def __iter__(self):
        return iter(self.qubits)

    def validate(self, n):
        if self.qubits and (self.qubits[0] < 0 or self.qubits[-1] >= n):
            raise ValueError(f"region {self.qubits} out of range for n={n}")
        return self

    def complement(self, n):
        mine = set(self.qubits)
        return SubsystemSpec(tuple(q for q in range(n) if q not in mine))

    def union(self, other):
        return SubsystemSpec.of(set(self.qubits) | set(other.qubits))

    def isdisjoint(self, other):
        return not set(self.qubits) & set(other.qubits)


def as_region(region, n):
    """Coerce ``region`` (SubsystemSpec or iterable of ints) and range-check."""
    if not isinstance(region, SubsystemSpec):
        region = SubsystemSpec.of(region)
    return region.validate(n)


def ring_distance(i, j, n):
    d = abs(int(i) - int(j)) % n
    return min(d, n - d)


def domain_around(q, r, n):
    """Qubits within ring distance ``r`` of ``q`` (the measured qubit plus both buffers)."""
    if 2 * r + 1 > n:
        raise ValueError(f"domain of half-width {r} does not fit on {n} qubits")
    return SubsystemSpec.of((q + k) % n for k in range(-r, r + 1))


def cluster_regions(n, r, a=0):
    """Return ``(A, C)``: the single qubit ``a`` and all qubits farther than ``r`` from it."""
    if not 0 <= r < n // 2:
        raise ValueError(f"need 0 <= r < n/2, got r={r}, n={n}")
    far = [j for j in range(n) if ring_distance(a, j, n) > r]
    return SubsystemSpec((a,)), SubsystemSpec.of(far)


def ring_distances(n, a=0):
    j = np.arange(n)
    d = np.abs(j - a) % n
    return np.minimum(d, n - d)
