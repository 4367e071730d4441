"""Linear quantum state engine.

Honest protocol flows run on pure-state registers held behind :class:`StateHandle`
objects. A handle owns its register exclusively: every operation that changes or
moves a state consumes the input handle and, where a state survives, returns a
fresh one. There is no operation that yields two live handles from one, which is
how the engine models no-cloning.

Adversary-side analysis (counterfeiting channels) works on explicit
:class:`DensityMatrix` values and :class:`KrausChannel` maps instead.

Qubit ``0`` is the most significant bit of a basis-state index, so the register
index ``x`` corresponds to the bitstring ``format(x, "0{n}b")``.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from functools import lru_cache, reduce
from typing import Callable, Iterable, Sequence, Union

import numpy as np

NORM_TOL = 1e-9
CHANNEL_TP_TOL = 1e-7
# branch weights below this are numerical zero: the branch is never sampled
ZERO_WEIGHT = 1e-12
DEFAULT_MAX_QUBITS = 20

_S = 1 / np.sqrt(2)
_H = np.array([[_S, _S], [_S, -_S]], dtype=complex)


class QsimError(Exception):
    """Base error for the state engine."""


class ConsumedStateError(QsimError):
    """Raised when a consumed handle is used."""


class OmniscienceError(QsimError):
    """Raised when amplitude inspection is attempted outside test mode."""


class DimensionError(QsimError, ValueError):
    pass


class ChannelError(QsimError, ValueError):
    pass


class Basis(enum.Enum):
    COMPUTATIONAL = "C"
    DIAGONAL = "D"

    @classmethod
    def parse(cls, bases: Union[str, Sequence["Basis"], "Basis"]) -> tuple["Basis", ...]:
        """Accept a Basis, a sequence of them, or a string of ``C``/``D`` letters."""
        if isinstance(bases, Basis):
            return (bases,)
        if isinstance(bases, str):
            try:
                return tuple(cls(ch) for ch in bases.upper())
            except ValueError:
                raise ValueError(f"basis string must contain only C/D letters: {bases!r}") from None
        return tuple(b if isinstance(b, Basis) else cls(b) for b in bases)

    def vector(self, bit: int) -> np.ndarray:
        """Encoding of ``bit`` in this basis (``|+> -> 0``, ``|-> -> 1``)."""
        if self is Basis.COMPUTATIONAL:
            return np.array([1, 0] if bit == 0 else [0, 1], dtype=complex)
        return np.array([_S, _S] if bit == 0 else [_S, -_S], dtype=complex)


def _parse_bits(bits: Union[str, Sequence[int]]) -> tuple[int, ...]:
    if isinstance(bits, str):
        if set(bits) - {"0", "1"}:
            raise ValueError(f"bitstring must contain only 0/1: {bits!r}")
        return tuple(int(ch) for ch in bits)
    out = tuple(int(b) for b in bits)
    if any(b not in (0, 1) for b in out):
        raise ValueError("bits must be 0 or 1")
    return out


def bitstring(x: int, n: int) -> str:
    return format(x, f"0{n}b") if n else ""


class StateHandle:
    """Single-owner reference to a simulated register.

    The register is either a list of single-qubit factors (a product state) or a
    dense amplitude vector of length ``2**n``; product form is materialized into a
    dense vector only when an operation needs it.

    Handles cannot be copied, pickled or serialized.
    """

    __slots__ = ("_factors", "_amps", "n", "handle_id", "_live")

    def __init__(self, n: int, handle_id: int, *, factors=None, amps=None):
        self.n = n
        self.handle_id = handle_id
        self._factors = factors
        self._amps = amps
        self._live = True

    @property
    def mode(self) -> str:
        return "Live" if self._live else "Consumed"

    @property
    def live(self) -> bool:
        return self._live

    def _check(self):
        if not self._live:
            raise ConsumedStateError(f"state handle #{self.handle_id} has been consumed")

    def _take(self):
        """Consume the handle and hand its register to the caller."""
        self._check()
        self._live = False
        factors, amps = self._factors, self._amps
        self._factors = self._amps = None
        return factors, amps

    def _dense(self) -> np.ndarray:
        self._check()
        if self._amps is None:
            self._amps = reduce(np.kron, self._factors) if self.n else np.ones(1, complex)
            self._factors = None
        return self._amps

    def __copy__(self):
        raise TypeError("quantum state handles cannot be copied")

    def __deepcopy__(self, memo):
        raise TypeError("quantum state handles cannot be copied")

    def __reduce_ex__(self, protocol):
        raise TypeError("quantum state handles cannot be serialized")

    def __repr__(self):
        return f"<StateHandle #{self.handle_id} n={self.n} {self.mode}>"


@dataclass(frozen=True)
class OutcomeDistribution:
    probs: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if len(p) != len(self.labels):
            raise ValueError("probs and labels differ in length")
        if np.any(p < -NORM_TOL) or abs(p.sum() - 1) > NORM_TOL:
            raise ValueError("not a probability distribution")
        object.__setattr__(self, "probs", np.clip(p, 0.0, None))

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.labels, self.probs.tolist()))

    def __getitem__(self, label: str) -> float:
        return float(self.probs[self.labels.index(label)])


def shannon_entropy(dist: Union[OutcomeDistribution, Sequence[float]]) -> float:
    """Shannon entropy in bits, with ``0 log 0 = 0``."""
    p = dist.probs if isinstance(dist, OutcomeDistribution) else np.asarray(dist, dtype=float)
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


@dataclass(frozen=True)
class DensityMatrix:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        d = m.shape[0]
        if m.ndim != 2 or m.shape[1] != d or d & (d - 1):
            raise DimensionError(f"density matrix must be square with power-of-two size, got {m.shape}")
        if np.abs(m - m.conj().T).max() > NORM_TOL:
            raise ValueError("density matrix is not Hermitian")
        m = (m + m.conj().T) / 2
        if abs(np.trace(m).real - 1) > NORM_TOL:
            raise ValueError(f"density matrix trace is {np.trace(m).real}")
        if np.linalg.eigvalsh(m).min() < -NORM_TOL:
            raise ValueError("density matrix is not positive semidefinite")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_vector(cls, psi) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex)
        return cls(np.outer(psi, psi.conj()))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def n(self) -> int:
        return self.dim.bit_length() - 1

    def tensor(self, other: "DensityMatrix") -> "DensityMatrix":
        return DensityMatrix(np.kron(self.matrix, other.matrix))


@dataclass(frozen=True)
class KrausChannel:
    """Trace-preserving map given by Kraus operators of shape ``(d_out, d_in)``."""

    kraus_ops: tuple

    def __post_init__(self):
        ops = tuple(np.asarray(k, dtype=complex) for k in self.kraus_ops)
        if not ops:
            raise ChannelError("channel needs at least one Kraus operator")
        shape = ops[0].shape
        if any(k.shape != shape for k in ops):
            raise ChannelError("Kraus operators have mismatched shapes")
        total = sum(k.conj().T @ k for k in ops)
        if np.abs(total - np.eye(shape[1])).max() > CHANNEL_TP_TOL:
            raise ChannelError("channel is not trace preserving")
        object.__setattr__(self, "kraus_ops", ops)
        object.__setattr__(self, "stacked", np.stack(ops))

    @property
    def dim_in(self) -> int:
        return self.kraus_ops[0].shape[1]

    @property
    def dim_out(self) -> int:
        return self.kraus_ops[0].shape[0]

    def choi(self) -> np.ndarray:
        """Choi matrix ``sum_ij |i><j| (x) Phi(|i><j|)``, input factor first."""
        d = self.dim_in
        J = np.zeros((d * self.dim_out,) * 2, dtype=complex)
        for k in self.kraus_ops:
            v = k.T.reshape(-1)  # vec of K with input index outermost
            J += np.outer(v, v.conj())
        return J

    @classmethod
    def from_choi(cls, J: np.ndarray, dim_in: int, dim_out: int, cutoff: float = 1e-12) -> "KrausChannel":
        w, V = np.linalg.eigh((J + J.conj().T) / 2)
        ops = [np.sqrt(wi) * V[:, i].reshape(dim_in, dim_out).T for i, wi in enumerate(w) if wi > cutoff]
        return cls(tuple(ops))


def apply_channel(rho: DensityMatrix, ch: KrausChannel) -> DensityMatrix:
    if rho.dim != ch.dim_in:
        raise DimensionError(f"channel expects dimension {ch.dim_in}, state has {rho.dim}")
    K = ch.stacked
    return DensityMatrix(np.einsum("kab,bc,kdc->ad", K, rho.matrix, K.conj()))


def identity_channel(dim: int = 2) -> KrausChannel:
    return KrausChannel((np.eye(dim),))


def depolarizing_channel() -> KrausChannel:
    """Fully depolarizing single-qubit channel: every input goes to I/2."""
    paulis = [np.eye(2), np.array([[0, 1], [1, 0]]), np.array([[0, -1j], [1j, 0]]), np.diag([1, -1])]
    return KrausChannel(tuple(p / 2 for p in paulis))


def append_zero_channel(dim: int = 2) -> KrausChannel:
    """rho -> rho (x) |0><0|."""
    return KrausChannel((np.kron(np.eye(dim), np.array([[1], [0]])),))


def _apply_1q(vec: np.ndarray, gate: np.ndarray, qubit: int, n: int) -> np.ndarray:
    v = vec.reshape(2**qubit, 2, 2 ** (n - qubit - 1))
    return np.einsum("ab,ibj->iaj", gate, v).reshape(-1)


def _rotate_to_measurement_frame(vec: np.ndarray, bases: Sequence[Basis], n: int) -> np.ndarray:
    for q, b in enumerate(bases):
        if b is Basis.DIAGONAL:
            vec = _apply_1q(vec, _H, q, n)
    return vec


def _hadamard_transform(vec: np.ndarray, n: int) -> np.ndarray:
    for q in range(n):
        v = vec.reshape(2**q, 2, -1)
        vec = np.stack([v[:, 0] + v[:, 1], v[:, 0] - v[:, 1]], axis=1).reshape(-1) * _S
    return vec


Predicate = Callable[[int], bool]


def _predicate_mask(pred, n: int) -> np.ndarray:
    indices = np.arange(2**n)
    if getattr(pred, "vectorized", False):
        return np.asarray(pred(indices), dtype=bool)
    return np.fromiter((bool(pred(int(x))) for x in indices), dtype=bool, count=2**n)


class QuantumEngine:
    """Owner of the random stream and the handle counter for one simulation.

    ``test_mode`` unlocks amplitude inspection (:meth:`outcome_distribution`,
    :meth:`amplitudes`). Protocol entities are always given an engine built
    without it.
    """

    def __init__(self, seed=None, *, rng: np.random.Generator | None = None,
                 test_mode: bool = False, max_qubits: int = DEFAULT_MAX_QUBITS):
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        self.test_mode = bool(test_mode)
        self.max_qubits = max_qubits
        self._next_id = itertools.count(1)

    # -- construction -------------------------------------------------------

    def _new(self, n, *, factors=None, amps=None) -> StateHandle:
        return StateHandle(n, next(self._next_id), factors=factors, amps=amps)

    def _check_size(self, n: int):
        if n < 1:
            raise ValueError("register needs at least one qubit")
        if n > self.max_qubits:
            raise ValueError(f"{n} qubits exceeds the engine maximum of {self.max_qubits}")

    def prepare_bb84(self, bits, bases) -> StateHandle:
        bits, bases = _parse_bits(bits), Basis.parse(bases)
        if len(bits) != len(bases):
            raise ValueError(f"{len(bits)} bits but {len(bases)} bases")
        self._check_size(len(bits))
        return self._new(len(bits), factors=[b.vector(x) for x, b in zip(bits, bases)])

    def prepare_basis_state(self, x: int, n: int) -> StateHandle:
        self._check_size(n)
        if not 0 <= x < 2**n:
            raise ValueError("basis index out of range")
        return self.prepare_bb84(bitstring(x, n), "C" * n)

    def prepare_uniform(self, members: Iterable[int], n: int) -> StateHandle:
        """Equal-amplitude superposition over the given basis indices."""
        self._check_size(n)
        idx = np.unique(np.fromiter(members, dtype=np.int64))
        if idx.size == 0 or idx[0] < 0 or idx[-1] >= 2**n:
            raise ValueError("members must be a non-empty set of n-bit indices")
        amps = np.zeros(2**n, dtype=complex)
        amps[idx] = 1 / np.sqrt(idx.size)
        return self._new(n, amps=amps)

    def prepare_state(self, amplitudes) -> StateHandle:
        amps = np.array(amplitudes, dtype=complex).reshape(-1)
        n = amps.size.bit_length() - 1
        if amps.size != 2**n:
            raise DimensionError("amplitude vector length must be a power of two")
        self._check_size(n)
        norm = np.linalg.norm(amps)
        if norm == 0:
            raise ValueError("zero vector is not a state")
        return self._new(n, amps=amps / norm)

    # -- evolution and measurement ------------------------------------------

    def transfer(self, handle: StateHandle) -> StateHandle:
        """Move the register to a new handle; the source is consumed."""
        n = handle.n
        factors, amps = handle._take()
        return self._new(n, factors=factors, amps=amps)

    def discard(self, handle: StateHandle) -> None:
        handle._take()

    def hadamard_all(self, handle: StateHandle) -> StateHandle:
        n = handle.n
        factors, amps = handle._take()
        if factors is not None:
            return self._new(n, factors=[_H @ f for f in factors])
        return self._new(n, amps=_hadamard_transform(amps, n))

    def _sample(self, probs: np.ndarray) -> int:
        cdf = np.cumsum(probs)
        i = int(np.searchsorted(cdf, self.rng.random() * cdf[-1], side="right"))
        return min(i, len(probs) - 1)

    def measure_all(self, handle: StateHandle, bases) -> str:
        bases = Basis.parse(bases)
        handle._check()
        if len(bases) != handle.n:
            raise ValueError(f"{len(bases)} bases for a {handle.n}-qubit register")
        n = handle.n
        factors, amps = handle._take()
        if factors is not None:
            out = []
            for f, b in zip(factors, bases):
                f = _H @ f if b is Basis.DIAGONAL else f
                p = np.abs(f) ** 2
                out.append("1" if self.rng.random() * p.sum() >= p[0] else "0")
            return "".join(out)
        probs = np.abs(_rotate_to_measurement_frame(amps, bases, n)) ** 2
        return bitstring(self._sample(probs), n)

    def measure_qubit(self, handle: StateHandle, index: int, basis) -> tuple[int, StateHandle]:
        (basis,) = Basis.parse(basis)
        handle._check()
        n = handle.n
        if not 0 <= index < n:
            raise IndexError(f"qubit {index} out of range for {n} qubits")
        factors, amps = handle._take()
        if factors is not None:
            f = factors[index]
            amp = np.array([basis.vector(0).conj() @ f, basis.vector(1).conj() @ f])
            p = np.abs(amp) ** 2
            outcome = self._branch(p[1] / p.sum())
            factors = list(factors)
            factors[index] = amp[outcome] / abs(amp[outcome]) * basis.vector(outcome)
            return outcome, self._new(n, factors=factors)
        v = _apply_1q(amps, _H, index, n) if basis is Basis.DIAGONAL else amps
        v = v.reshape(2**index, 2, -1).copy()
        p1 = float(np.sum(np.abs(v[:, 1]) ** 2))
        outcome = self._branch(p1)
        v[:, 1 - outcome] = 0
        v = v.reshape(-1)
        v /= np.linalg.norm(v)
        if basis is Basis.DIAGONAL:
            v = _apply_1q(v, _H, index, n)
        return outcome, self._new(n, amps=v)

    def _branch(self, p1: float) -> int:
        """Sample a binary outcome that is 1 with probability ``p1``."""
        if p1 <= ZERO_WEIGHT:
            return 0
        if p1 >= 1 - ZERO_WEIGHT:
            return 1
        return int(self.rng.random() < p1)

    def project_predicate(self, handle: StateHandle, pred: Predicate) -> tuple[bool, StateHandle]:
        """Two-outcome projective measurement onto the basis states satisfying ``pred``.

        ``pred`` receives basis indices as ints. Objects exposing a truthy
        ``vectorized`` attribute are called once with the whole index array.
        """
        n = handle.n
        amps = handle._dense()
        mask = _predicate_mask(pred, n)
        handle._take()
        p_accept = float(np.sum(np.abs(amps[mask]) ** 2))
        accepted = bool(self._branch(p_accept))
        out = np.where(mask if accepted else ~mask, amps, 0)
        out /= np.linalg.norm(out)
        return accepted, self._new(n, amps=out)

    def reduced_states(self, handle: StateHandle) -> list[DensityMatrix]:
        """Consume a register and return its single-qubit marginals.

        For product registers (every Wiesner note) the marginals are the whole
        state; for entangled registers the correlations are lost.
        """
        n = handle.n
        factors, amps = handle._take()
        if factors is not None:
            return [DensityMatrix.from_vector(f / np.linalg.norm(f)) for f in factors]
        out = []
        for q in range(n):
            v = amps.reshape(2**q, 2, -1)
            out.append(DensityMatrix(np.einsum("iaj,ibj->ab", v, v.conj())))
        return out

    def measure_density(self, rho: DensityMatrix, bases) -> str:
        """Sample a Born-rule outcome of measuring ``rho`` in a product basis."""
        bases = Basis.parse(bases)
        if len(bases) != rho.n:
            raise ValueError(f"{len(bases)} bases for a {rho.n}-qubit state")
        return bitstring(self._sample(_density_probs(rho, bases)), rho.n)

    # -- omniscient inspection (test mode only) -------------------------------

    def _require_test_mode(self):
        if not self.test_mode:
            raise OmniscienceError("amplitude inspection requires an engine built with test_mode=True")

    def amplitudes(self, handle: StateHandle) -> np.ndarray:
        self._require_test_mode()
        return handle._dense().copy()

    def outcome_distribution(self, state: Union[StateHandle, DensityMatrix], bases) -> OutcomeDistribution:
        self._require_test_mode()
        bases = Basis.parse(bases)
        if isinstance(state, DensityMatrix):
            n = state.n
            if len(bases) != n:
                raise ValueError(f"{len(bases)} bases for a {n}-qubit state")
            probs = _density_probs(state, bases)
        else:
            n = state.n
            if len(bases) != n:
                raise ValueError(f"{len(bases)} bases for a {n}-qubit register")
            amps = state._dense()
            probs = np.abs(_rotate_to_measurement_frame(amps.copy(), bases, n)) ** 2
        return OutcomeDistribution(probs, tuple(bitstring(x, n) for x in range(2**n)))


@lru_cache(maxsize=256)
def _frame_unitary(bases: tuple[Basis, ...]) -> np.ndarray:
    return reduce(np.kron, [_H if b is Basis.DIAGONAL else np.eye(2) for b in bases])


def _density_probs(rho: DensityMatrix, bases: Sequence[Basis]) -> np.ndarray:
    U = _frame_unitary(tuple(bases))
    return np.clip(np.real(np.diag(U @ rho.matrix @ U.conj().T)), 0, None)
