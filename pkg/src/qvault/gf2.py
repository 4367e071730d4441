"""GF(2) linear algebra on n-bit vectors packed into Python ints.

Bit ``n-1-i`` of a vector holds coordinate ``i``, matching the qubit order of
:mod:`qvault.qsim`, so a vector is also a register basis index.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np


def dot(a: int, b: int) -> int:
    return (a & b).bit_count() & 1


def rref(rows: Iterable[int], n: int) -> tuple[int, ...]:
    """Reduced row-echelon form, zero rows dropped, leading bits descending."""
    basis: list[int] = []
    for v in rows:
        v &= (1 << n) - 1
        for b in basis:
            if v ^ b < v:  # b's leading bit is set in v
                v ^= b
        if v:
            lead = v.bit_length() - 1
            basis = [b ^ v if (b >> lead) & 1 else b for b in basis]
            basis.append(v)
    return tuple(sorted(basis, reverse=True))


def rank(rows: Iterable[int], n: int) -> int:
    return len(rref(rows, n))


def span(rows: Iterable[int]) -> list[int]:
    """All vectors in the span, in ascending order."""
    out = [0]
    for r in rows:
        out += [x ^ r for x in out]
    return sorted(set(out))


@dataclass(frozen=True)
class Subspace:
    """Linear subspace of GF(2)^n kept as its canonical RREF basis."""

    n: int
    basis_rows: tuple[int, ...]

    def __post_init__(self):
        canon = rref(self.basis_rows, self.n)
        if len(canon) != len(self.basis_rows):
            raise ValueError("basis rows are not linearly independent")
        object.__setattr__(self, "basis_rows", canon)

    @classmethod
    def from_rows(cls, rows: Iterable[int], n: int) -> "Subspace":
        return cls(n, rref(rows, n))

    @classmethod
    def random(cls, n: int, dim: int, rng: np.random.Generator) -> "Subspace":
        """Uniformly random ``dim``-dimensional subspace.

        Rejection-samples full-rank generator sets; every subspace has the same
        number of ordered bases, so the induced distribution is uniform.
        """
        if not 0 <= dim <= n:
            raise ValueError("dimension out of range")
        while True:
            rows = [int(rng.integers(0, 1 << n)) for _ in range(dim)]
            canon = rref(rows, n)
            if len(canon) == dim:
                return cls(n, canon)

    @property
    def dim(self) -> int:
        return len(self.basis_rows)

    def pivots(self) -> tuple[int, ...]:
        return tuple(r.bit_length() - 1 for r in self.basis_rows)

    def contains(self, v: int) -> bool:
        for r in self.basis_rows:
            if (v >> (r.bit_length() - 1)) & 1:
                v ^= r
        return v == 0

    def __contains__(self, v: int) -> bool:
        return self.contains(v)

    def members(self) -> list[int]:
        return span(self.basis_rows)

    def __iter__(self) -> Iterator[int]:
        return iter(self.members())

    def __len__(self) -> int:
        return 1 << self.dim

    def dual(self) -> "Subspace":
        """Orthogonal complement under the standard dot product."""
        piv = self.pivots()
        free = [c for c in range(self.n) if c not in piv]
        rows = []
        for f in free:
            v = 1 << f
            for r, p in zip(self.basis_rows, piv):
                if (r >> f) & 1:
                    v |= 1 << p
            rows.append(v)
        return Subspace(self.n, rref(rows, self.n))

    def check_rows(self) -> tuple[int, ...]:
        """Rows ``w`` with ``v in self`` iff ``dot(v, w) == 0`` for every row."""
        return self.dual().basis_rows

    def to_bitstrings(self) -> list[str]:
        return [format(r, f"0{self.n}b") for r in self.basis_rows]


def parity_membership(check_rows: tuple[int, ...], xs: np.ndarray) -> np.ndarray:
    """Vectorized membership test against a set of parity-check rows."""
    xs = np.asarray(xs, dtype=np.uint64)
    ok = np.ones(xs.shape, dtype=bool)
    for w in check_rows:
        ok &= (np.bitwise_count(xs & np.uint64(w)) & 1) == 0
    return ok
