"""Quantum money schemes.

Two schemes live here:

* a public-key scheme with classical certificates of destruction, instantiated
  with hidden-subspace states: a note is the uniform superposition over a random
  ``n/2``-dimensional subspace ``A`` of GF(2)^n, verified through sealed
  membership oracles for ``A`` and its dual;
* Wiesner's private-key scheme: ``n`` random BB84 qubits that only the bank,
  which recorded the bits and bases, can check.

The issuing side signs classical data with Ed25519; vault acknowledgements are
HMACs under a per-note key carried in the mint instruction.
"""
from __future__ import annotations

import enum
import hashlib
import hmac
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from . import gf2
from .encoding import canonical_bytes
from .gf2 import Subspace
from .qsim import DEFAULT_MAX_QUBITS, Basis, DensityMatrix, QuantumEngine, StateHandle, bitstring


class MoneyError(Exception):
    pass


class AuthenticationError(MoneyError):
    pass


class UnknownSerialError(MoneyError, KeyError):
    pass


class ReplayError(MoneyError):
    pass


class SerialMismatchError(MoneyError, ValueError):
    pass


class Status(enum.Enum):
    PENDING = "Pending"
    ACTIVE = "Active"
    DESTROYED = "Destroyed"


_NEXT_STATUS = {Status.PENDING: Status.ACTIVE, Status.ACTIVE: Status.DESTROYED}


@dataclass(frozen=True)
class SchemeParams:
    n: int
    max_qubits: int = DEFAULT_MAX_QUBITS

    def __post_init__(self):
        if isinstance(self.n, bool) or not isinstance(self.n, (int, np.integer)):
            raise TypeError("security parameter must be an integer")
        if self.n % 2 or not 4 <= self.n <= self.max_qubits:
            raise ValueError(f"security parameter must be even and in [4, {self.max_qubits}], got {self.n}")

    @property
    def security_parameter(self) -> int:
        return self.n


@dataclass(frozen=True)
class SchemePublicKey:
    n: int
    verify_key: bytes

    @property
    def key_id(self) -> str:
        return hashlib.sha256(self.verify_key).hexdigest()[:16]

    def verify(self, message: bytes, tag: bytes) -> bool:
        try:
            Ed25519PublicKey.from_public_bytes(self.verify_key).verify(tag, message)
        except InvalidSignature:
            return False
        return True


@dataclass
class ClassicalBanknote:
    serial: str
    value: int
    status: Status
    tag: bytes
    secret: Subspace = field(repr=False)
    ack_key: bytes = field(repr=False)

    def advance(self, to: Status) -> None:
        if _NEXT_STATUS.get(self.status) is not to:
            raise MoneyError(f"illegal status change {self.status.value} -> {to.value} for {self.serial}")
        self.status = to

    def to_json(self) -> dict:
        # the subspace and ack key never leave the issuing authority
        return {"serial": self.serial, "value": self.value, "status": self.status.value, "tag": self.tag.hex()}


@dataclass
class SchemeSecretKey:
    params: SchemeParams
    signing_key: Ed25519PrivateKey = field(repr=False)
    public: SchemePublicKey
    registry: dict[str, ClassicalBanknote] = field(default_factory=dict)
    capabilities: dict[str, "MembershipOracle"] = field(default_factory=dict, repr=False)

    def sign(self, message: bytes) -> bytes:
        return self.signing_key.sign(message)


def gen(params: SchemeParams, rng: np.random.Generator) -> tuple[SchemePublicKey, SchemeSecretKey]:
    signing = Ed25519PrivateKey.from_private_bytes(rng.bytes(32))
    pk = SchemePublicKey(params.n, signing.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw))
    return pk, SchemeSecretKey(params, signing, pk)


@dataclass
class MintInstruction:
    """What the issuing authority sends the minting vault.

    ``basis`` and ``ack_key`` are erased once the vault has prepared the state.
    """

    serial: str
    value: int
    n: int
    basis: tuple[int, ...] | None = field(repr=False)
    ack_key: bytes | None = field(repr=False)
    tag: bytes = b""

    @property
    def consumed(self) -> bool:
        return self.basis is None

    def signed_body(self) -> bytes:
        return canonical_bytes(["mint", self.serial, self.value, self.n, list(self.basis), self.ack_key.hex()])

    def to_json(self) -> dict:
        return {"serial": self.serial, "value": self.value, "n": self.n, "sealed": True}


@dataclass(frozen=True)
class MintAck:
    serial: str
    vault_id: str
    mac: str

    def to_json(self) -> dict:
        return {"serial": self.serial, "vault_id": self.vault_id, "mac": self.mac}

    @classmethod
    def from_json(cls, d) -> "MintAck":
        return cls(d["serial"], d["vault_id"], d["mac"])


def _ack_mac(key: bytes, serial: str, vault_id: str) -> str:
    return hmac.new(key, canonical_bytes(["ack", serial, vault_id]), hashlib.sha256).hexdigest()


class MembershipOracle:
    """Sealed membership predicate for a subspace.

    Callers can only ask whether vectors belong; the subspace description stays
    inside a closure. Accepts a single int or an array of ints.
    """

    __slots__ = ("capability_id", "n", "_query")
    vectorized = True

    def __init__(self, capability_id: str, subspace: Subspace):
        rows = subspace.check_rows()
        self.capability_id = capability_id
        self.n = subspace.n

        def query(xs):
            return gf2.parity_membership(rows, xs)

        self._query = query

    def __call__(self, x):
        if isinstance(x, (int, np.integer)):
            return bool(self._query(np.array([x]))[0])
        return self._query(x)

    def __reduce_ex__(self, protocol):
        raise TypeError("membership oracles are not serializable; use the capability id")

    def __repr__(self):
        return f"<MembershipOracle {self.capability_id}>"


@dataclass(frozen=True)
class BanknotePublicKey:
    serial: str
    value: int
    n: int
    oracle_a: MembershipOracle = field(repr=False)
    oracle_dual: MembershipOracle = field(repr=False)
    ia_tag: bytes = field(repr=False, default=b"")

    def signed_body(self) -> bytes:
        return canonical_bytes(["pk", self.serial, self.value, self.n,
                                self.oracle_a.capability_id, self.oracle_dual.capability_id])

    def to_json(self) -> dict:
        return {"serial": self.serial, "value": self.value, "n": self.n,
                "oracle_A": self.oracle_a.capability_id, "oracle_Adual": self.oracle_dual.capability_id,
                "ia_tag": self.ia_tag.hex()}

    @classmethod
    def from_json(cls, d, capabilities: Mapping[str, MembershipOracle]) -> "BanknotePublicKey":
        return cls(d["serial"], d["value"], d["n"], capabilities[d["oracle_A"]],
                   capabilities[d["oracle_Adual"]], bytes.fromhex(d["ia_tag"]))


def verify_public_key(scheme_pk: SchemePublicKey, pk: BanknotePublicKey) -> bool:
    return scheme_pk.verify(pk.signed_body(), pk.ia_tag)


@dataclass
class QuantumBanknote:
    serial: str
    value: int
    state: StateHandle

    def to_json(self) -> dict:
        return {"serial": self.serial, "value": self.value, "quantum": True, "handle": self.state.handle_id}


@dataclass(frozen=True)
class DestructionCert:
    serial: str
    witness: int
    n: int

    def to_json(self) -> dict:
        return {"serial": self.serial, "witness": bitstring(self.witness, self.n)}

    @classmethod
    def from_json(cls, d) -> "DestructionCert":
        return cls(d["serial"], int(d["witness"], 2), len(d["witness"]))


class CertVerdict(NamedTuple):
    valid: bool
    reason: str

    def __bool__(self):
        return self.valid


def _fresh_serial(sk: SchemeSecretKey, rng: np.random.Generator) -> str:
    while True:
        serial = rng.bytes(8).hex()
        if serial not in sk.registry:
            return serial


def bank_mint(sk: SchemeSecretKey, value: int, rng: np.random.Generator) -> tuple[ClassicalBanknote, MintInstruction]:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value <= 0:
        raise ValueError(f"banknote value must be a positive integer, got {value!r}")
    n = sk.params.n
    serial = _fresh_serial(sk, rng)
    secret = Subspace.random(n, n // 2, rng)
    ack_key = rng.bytes(32)
    tag = sk.sign(canonical_bytes(["note", serial, int(value)]))
    note = ClassicalBanknote(serial, int(value), Status.PENDING, tag, secret, ack_key)
    sk.registry[serial] = note
    instr = MintInstruction(serial, int(value), n, secret.basis_rows, ack_key)
    instr.tag = sk.sign(instr.signed_body())
    return note, instr


def rec_mint(engine: QuantumEngine, scheme_pk: SchemePublicKey, instruction: MintInstruction,
             vault_id: str) -> tuple[QuantumBanknote, MintAck]:
    """Prepare |A> from a mint instruction and acknowledge it."""
    if instruction.consumed:
        raise MoneyError(f"mint instruction for {instruction.serial} was already used")
    if not scheme_pk.verify(instruction.signed_body(), instruction.tag):
        raise AuthenticationError(f"mint instruction for {instruction.serial} failed authentication")
    n = instruction.n
    if gf2.rank(instruction.basis, n) != n // 2 or len(instruction.basis) != n // 2:
        raise ValueError(f"mint instruction basis must have rank {n // 2}")
    state = engine.prepare_uniform(gf2.span(instruction.basis), n)
    ack = MintAck(instruction.serial, vault_id, _ack_mac(instruction.ack_key, instruction.serial, vault_id))
    instruction.basis = None
    instruction.ack_key = None
    return QuantumBanknote(instruction.serial, instruction.value, state), ack


def finalize_mint(sk: SchemeSecretKey, ack: MintAck) -> BanknotePublicKey:
    note = sk.registry.get(ack.serial)
    if note is None:
        raise UnknownSerialError(ack.serial)
    expected = _ack_mac(note.ack_key, ack.serial, ack.vault_id)
    if not hmac.compare_digest(expected, ack.mac):
        raise AuthenticationError(f"acknowledgement for {ack.serial} failed authentication")
    if note.status is not Status.PENDING:
        raise ReplayError(f"{ack.serial} is already {note.status.value}")
    note.advance(Status.ACTIVE)
    oa = MembershipOracle(f"{ack.serial}/A", note.secret)
    od = MembershipOracle(f"{ack.serial}/Adual", note.secret.dual())
    sk.capabilities[oa.capability_id] = oa
    sk.capabilities[od.capability_id] = od
    pk = BanknotePublicKey(note.serial, note.value, sk.params.n, oa, od)
    return BanknotePublicKey(pk.serial, pk.value, pk.n, oa, od, sk.sign(pk.signed_body()))


def qv(engine: QuantumEngine, pk: BanknotePublicKey, note: QuantumBanknote) -> tuple[bool, QuantumBanknote]:
    """Project onto span(A), then onto span(A^perp) in the Hadamard frame."""
    if pk.serial != note.serial:
        raise SerialMismatchError(f"public key {pk.serial} does not match note {note.serial}")
    ok, state = engine.project_predicate(note.state, pk.oracle_a)
    if ok:
        state = engine.hadamard_all(state)
        ok, state = engine.project_predicate(state, pk.oracle_dual)
        state = engine.hadamard_all(state)
    return ok, QuantumBanknote(note.serial, note.value, state)


def gen_cert(engine: QuantumEngine, pk: BanknotePublicKey, note: QuantumBanknote) -> DestructionCert:
    if pk.serial != note.serial:
        raise SerialMismatchError(f"public key {pk.serial} does not match note {note.serial}")
    n = note.state.n
    v = engine.measure_all(note.state, "D" * n)
    return DestructionCert(note.serial, int(v, 2), n)


def cv(sk: SchemeSecretKey, cert: DestructionCert) -> CertVerdict:
    note = sk.registry.get(cert.serial)
    if note is None:
        return CertVerdict(False, "unknown-serial")
    if note.status is Status.DESTROYED:
        return CertVerdict(False, "spent")
    if note.status is not Status.ACTIVE:
        return CertVerdict(False, "not-active")
    if cert.n != sk.params.n or not 0 <= cert.witness < 1 << cert.n:
        return CertVerdict(False, "malformed")
    if cert.witness == 0:
        return CertVerdict(False, "zero-witness")
    if cert.witness not in note.secret.dual():
        return CertVerdict(False, "not-in-dual")
    return CertVerdict(True, "ok")


def total_active_value(sk: SchemeSecretKey) -> int:
    return sum(note.value for note in sk.registry.values() if note.status is Status.ACTIVE)


# ---------------------------------------------------------------------------
# Wiesner private-key money
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WiesnerRecord:
    serial: str
    bits: str
    bases: str


@dataclass
class WiesnerNote:
    serial: str
    state: StateHandle


class WiesnerBank:
    """Bank-side secret key: the recorded bits and bases of every note."""

    def __init__(self, n: int, rng: np.random.Generator):
        if n < 1:
            raise ValueError("a Wiesner note needs at least one qubit")
        self.n = n
        self.rng = rng
        self._records: dict[str, WiesnerRecord] = {}

    def __contains__(self, serial: str) -> bool:
        return serial in self._records

    def _record(self, serial: str) -> WiesnerRecord:
        try:
            return self._records[serial]
        except KeyError:
            raise UnknownSerialError(serial) from None

    def _draw(self) -> tuple[str, str, str]:
        serial = self.rng.bytes(8).hex()
        while serial in self._records:
            serial = self.rng.bytes(8).hex()
        bits = "".join(map(str, self.rng.integers(0, 2, self.n)))
        bases = "".join("CD"[b] for b in self.rng.integers(0, 2, self.n))
        self._records[serial] = WiesnerRecord(serial, bits, bases)
        return serial, bits, bases


def wiesner_mint(bank: WiesnerBank, engine: QuantumEngine) -> WiesnerNote:
    serial, bits, bases = bank._draw()
    return WiesnerNote(serial, engine.prepare_bb84(bits, bases))


def wiesner_verify(bank: WiesnerBank, engine: QuantumEngine, serial: str,
                   state: StateHandle) -> tuple[bool, StateHandle]:
    """Measure each qubit in its recorded basis; valid iff every bit matches."""
    rec = bank._record(serial)
    if state.n != len(rec.bits):
        raise ValueError(f"note {serial} has {len(rec.bits)} qubits, got {state.n}")
    ok = True
    for i, (bit, basis) in enumerate(zip(rec.bits, rec.bases)):
        outcome, state = engine.measure_qubit(state, i, Basis(basis))
        ok &= outcome == int(bit)
    return ok, state


def wiesner_counterfeit_check(bank: WiesnerBank, engine: QuantumEngine, serial: str,
                              pair_states: list[DensityMatrix]) -> bool:
    """Verify two claimed copies of a note at once.

    ``pair_states[i]`` is the joint state of qubit ``i`` of both copies. Both
    qubits are measured in the recorded basis; the pair passes iff every
    outcome equals the recorded bit in both copies.
    """
    rec = bank._record(serial)
    if len(pair_states) != len(rec.bits):
        raise ValueError(f"note {serial} has {len(rec.bits)} qubits, got {len(pair_states)}")
    ok = True
    for rho, bit, basis in zip(pair_states, rec.bits, rec.bases):
        ok &= engine.measure_density(rho, basis * 2) == bit * 2
    return ok
