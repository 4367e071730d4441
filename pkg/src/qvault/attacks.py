"""Counterfeiting attacks on Wiesner money.

An attack is a single-qubit -> two-qubit channel applied independently to every
qubit of a note. Its per-qubit success is the probability that both output
qubits pass the bank's check, averaged over the four BB84 inputs; the success on
an ``n``-qubit note is that number to the ``n``-th power.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, NamedTuple

import numpy as np

from .money import WiesnerBank, wiesner_counterfeit_check, wiesner_mint
from .qsim import Basis, DensityMatrix, KrausChannel, QuantumEngine, apply_channel

CHOI_PSD_TOL = 1e-7
CHOI_TRACE_TOL = 1e-6
MAX_PROJECTION_ROUNDS = 10_000
OPTIMAL_PER_QUBIT = 0.75

BB84 = [(bit, basis, basis.vector(bit)) for basis in Basis for bit in (0, 1)]


@dataclass(frozen=True)
class AttackChannel:
    name: str
    channel: KrausChannel

    def __post_init__(self):
        if (self.channel.dim_in, self.channel.dim_out) != (2, 4):
            raise ValueError("an attack maps one qubit to two qubits")


def attack_keep_and_fabricate() -> AttackChannel:
    """Keep the genuine qubit and append a fresh |0>."""
    return AttackChannel("fabricate", KrausChannel((np.kron(np.eye(2), [[1], [0]]),)))


def attack_measure_random_basis() -> AttackChannel:
    """Measure in a uniformly random basis and emit two copies of the result."""
    ops = []
    for basis in Basis:
        for bit in (0, 1):
            e = basis.vector(bit)
            ops.append(np.outer(np.kron(e, e), e.conj()) / np.sqrt(2))
    return AttackChannel("random-basis", KrausChannel(tuple(ops)))


def per_qubit_success(attack: AttackChannel) -> float:
    total = 0.0
    for _, _, psi in BB84:
        out = apply_channel(DensityMatrix.from_vector(psi), attack.channel).matrix
        pp = np.kron(psi, psi)
        total += np.real(pp.conj() @ out @ pp)
    return total / 4


def exact_success(attack: AttackChannel, n: int) -> float:
    if not isinstance(attack, AttackChannel):
        raise TypeError("only i.i.d. single-qubit attacks are supported")
    if n < 0:
        raise ValueError("qubit count must be non-negative")
    return per_qubit_success(attack) ** n


# ---------------------------------------------------------------------------
# Optimal cloner by projected ascent on the Choi matrix
# ---------------------------------------------------------------------------


def success_operator() -> np.ndarray:
    """Q with per-qubit success = Tr(J Q) for Choi matrix J (input factor first)."""
    Q = np.zeros((8, 8), dtype=complex)
    for _, _, psi in BB84:
        P = np.outer(psi, psi.conj())
        pp = np.kron(psi, psi)
        Q += np.kron(P.conj(), np.outer(pp, pp.conj()))
    return Q / 4


def partial_trace_output(J: np.ndarray) -> np.ndarray:
    return J.reshape(2, 4, 2, 4).trace(axis1=1, axis2=3)


@dataclass(frozen=True)
class ChoiMatrix:
    """Choi matrix of a 1 -> 2 qubit channel; trace preservation means Tr_out J = I."""

    matrix: np.ndarray

    @property
    def psd_violation(self) -> float:
        return max(0.0, -float(np.linalg.eigvalsh(self.matrix).min()))

    @property
    def trace_violation(self) -> float:
        return float(np.abs(partial_trace_output(self.matrix) - np.eye(2)).max())

    def is_valid(self) -> bool:
        return self.psd_violation <= CHOI_PSD_TOL and self.trace_violation <= CHOI_TRACE_TOL

    def to_channel(self, name: str) -> AttackChannel:
        return AttackChannel(name, KrausChannel.from_choi(self.matrix, 2, 4))


def _project_psd(J):
    w, V = np.linalg.eigh((J + J.conj().T) / 2)
    return (V * np.clip(w, 0, None)) @ V.conj().T


def _project_trace(J):
    excess = partial_trace_output(J) - np.eye(2)
    return J - np.kron(excess, np.eye(4)) / 4


def _feasible(J, tolerance):
    """Alternate the two projections until J is PSD within ``tolerance``."""
    for _ in range(MAX_PROJECTION_ROUNDS):
        J = _project_trace(_project_psd(J))
        if np.linalg.eigvalsh(J).min() >= -tolerance:
            return J, True
    return J, False


def _normalize_trace(J):
    # congruence by S^-1/2 (x) I keeps J PSD and makes Tr_out J = I exactly
    S = partial_trace_output(J)
    w, V = np.linalg.eigh(S)
    A = (V / np.sqrt(w)) @ V.conj().T
    A = np.kron(A, np.eye(4))
    return A @ J @ A.conj().T


class ClonerResult(NamedTuple):
    attack: AttackChannel
    achieved: float
    converged: bool
    history: list


def optimize_cloner(iterations: int = 300, tolerance: float = 1e-10, step: float = 1.0,
                    callback: Callable[[ChoiMatrix, float], None] | None = None) -> ClonerResult:
    """Maximize the average double-pass probability over 1 -> 2 qubit channels.

    Gradient step on the linear objective, then alternating projections back onto
    the channel set; a step that would lower the objective is rejected and the
    step size halved. ``history`` holds the objective of every accepted iterate
    and ``callback`` (if given) sees each of them.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    Q = success_operator()
    objective = lambda J: float(np.real(np.trace(J @ Q)))
    J = np.eye(8, dtype=complex) / 4  # replace every input with I/4
    best = objective(J)
    history = [best]
    converged = False
    for _ in range(iterations):
        candidate, feasible = _feasible(J + step * Q, tolerance)
        value = objective(candidate)
        if feasible and value >= best - 1e-12:
            gain = value - best
            J, best = candidate, max(best, value)
            history.append(value)
            if callback is not None:
                callback(ChoiMatrix(J), value)
            if gain < 1e-12:
                converged = True
                break
        else:
            step /= 2
            if step < 1e-9:
                converged = True
                break
    J = _normalize_trace(_project_psd(J))
    choi = ChoiMatrix(J)
    attack = choi.to_channel("optimal")
    return ClonerResult(attack, per_qubit_success(attack), converged and choi.is_valid(), history)


# ---------------------------------------------------------------------------
# Monte Carlo experiments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentReport:
    attack: str
    n: int
    trials: int
    successes: int
    estimated_rate: float
    exact_rate: float
    stderr: float
    seed: int

    @property
    def deviation(self) -> float:
        """|estimate - exact| in units of the binomial standard error."""
        if self.stderr == 0:
            return 0.0 if self.estimated_rate == self.exact_rate else float("inf")
        return abs(self.estimated_rate - self.exact_rate) / self.stderr

    def to_json(self) -> dict:
        return asdict(self)


def _run_batch(args) -> int:
    attack, n, trials, seed_seq = args
    engine = QuantumEngine(rng=np.random.default_rng(seed_seq))
    bank = WiesnerBank(n, engine.rng)
    wins = 0
    for _ in range(trials):
        note = wiesner_mint(bank, engine)
        stolen = engine.reduced_states(note.state)
        forged = [apply_channel(rho, attack.channel) for rho in stolen]
        wins += wiesner_counterfeit_check(bank, engine, note.serial, forged)
    return wins


def run_counterfeit_experiment(attack: AttackChannel, n: int, trials: int, seed: int, *,
                               batch_size: int = 10_000, workers: int = 1) -> ExperimentReport:
    """Mint ``trials`` Wiesner notes, forge each, and count double passes.

    Batches draw from independent streams spawned from ``seed``, so the result
    does not depend on ``workers``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if n < 1:
        raise ValueError("n must be >= 1")
    sizes = [batch_size] * (trials // batch_size)
    if trials % batch_size:
        sizes.append(trials % batch_size)
    streams = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = [(attack, n, size, ss) for size, ss in zip(sizes, streams)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            wins = sum(pool.map(_run_batch, jobs))
    else:
        wins = sum(map(_run_batch, jobs))
    exact = float(exact_success(attack, n))
    return ExperimentReport(attack.name, n, trials, int(wins), wins / trials, exact,
                            float(np.sqrt(exact * (1 - exact) / trials)), int(seed))


ATTACKS = {
    "fabricate": attack_keep_and_fabricate,
    "random-basis": attack_measure_random_basis,
}


def get_attack(name: str) -> AttackChannel:
    if name == "optimal":
        return optimize_cloner().attack
    try:
        return ATTACKS[name]()
    except KeyError:
        raise ValueError(f"unknown attack {name!r}") from None
