"""Issuing authority, quantum vaults (MSBs) and classical wallets.

Every entity is a message-driven state machine. Entities never call each other;
they talk through a :class:`Network`, which is either the synchronous
:class:`VaultSystem` bus defined here or the discrete-event simulator in
:mod:`qvault.netsim`.

Process walk-through (``cid`` is the correlation id of one process instance):

mint
    wallet -MintRequest-> MSB -MintRequest-> IA -ClassicalNote-> MSB
    -AckCipher-> IA -FinalPk-> MSB -MintGrant-> wallet
transfer (inter-MSB)
    payer -PayAgree(offer)-> receiver -PayAgree(accept)-> payer
    -PayAgree(instruct)-> MSB(P) =QNoteTransfer=> MSB(R) (runs QV)
    -ValidationResult(settled)-> MSB(P) -ValidationResult(result)-> payer;
    MSB(R) -ValidationResult(credited)-> receiver
online payment
    agreement as above, then MSB(P) destroys the note (GenCert)
    -DestroyCert-> MSB(R) -DestroyConfirmRequest-> IA (CV), and on success the
    mint exchange runs between IA and MSB(R) for the same value.

Messages addressed to the IA carry only MSB ids, serials, values and
certificates; wallet and account identifiers stay inside the MSB layer.
"""
from __future__ import annotations

import enum
import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from . import money
from .money import (BanknotePublicKey, DestructionCert, MoneyError, QuantumBanknote, SchemeParams,
                    Status)
from .qsim import QuantumEngine


class VaultError(Exception):
    pass


class Kind(str, enum.Enum):
    MINT_REQUEST = "MintRequest"
    CLASSICAL_NOTE = "ClassicalNote"
    ACK_CIPHER = "AckCipher"
    FINAL_PK = "FinalPk"
    PAY_AGREE = "PayAgree"
    QNOTE_TRANSFER = "QNoteTransfer"
    VALIDATION_RESULT = "ValidationResult"
    DESTROY_CERT = "DestroyCert"
    DESTROY_CONFIRM_REQUEST = "DestroyConfirmRequest"
    MINT_GRANT = "MintGrant"
    ERROR = "Error"


class Outcome(str, enum.Enum):
    COMPLETED = "Completed"
    REJECTED_INVALID_NOTE = "RejectedInvalidNote"
    REJECTED_CERT = "RejectedCert"
    TIMEOUT = "Timeout"
    ERROR = "Error"


def encode(value):
    """Transcript encoding of message payload values."""
    if hasattr(value, "to_json"):
        return value.to_json()
    if isinstance(value, dict):
        return {k: encode(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [encode(v) for v in value]
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, bytes):
        return value.hex()
    return value


@dataclass
class ProtocolMessage:
    kind: Kind
    sender: str
    recipient: str
    correlation_id: str
    payload: dict = field(default_factory=dict)

    @property
    def quantum(self) -> bool:
        return self.kind is Kind.QNOTE_TRANSFER

    @property
    def stage(self) -> str:
        return self.payload.get("stage", "")

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "from": self.sender, "to": self.recipient,
                "correlation_id": self.correlation_id, "payload": encode(self.payload)}


@dataclass(frozen=True)
class Receipt:
    correlation_id: str
    process: str
    outcome: Outcome
    serials: tuple[str, ...] = ()
    amounts: tuple[int, ...] = ()
    reason: str = ""

    def to_json(self) -> dict:
        return {"correlation_id": self.correlation_id, "process": self.process, "outcome": self.outcome.value,
                "serials": list(self.serials), "amounts": list(self.amounts), "reason": self.reason}


class Network(Protocol):
    engine: QuantumEngine
    rng: np.random.Generator

    def send(self, msg: ProtocolMessage) -> None: ...

    def send_quantum(self, msg: ProtocolMessage) -> None: ...

    def can_send_quantum(self, sender: str, recipient: str) -> bool: ...

    def record_receipt(self, node: str, receipt: Receipt) -> None: ...

    def record_ledger(self, node: str, op: str, **fields) -> None: ...

    def schedule_timeout(self, node: str, correlation_id: str) -> None: ...


class Entity:
    role = "entity"

    def __init__(self, node_id: str):
        self.node_id = node_id
        self._seen: set = set()

    def _fresh(self, msg: ProtocolMessage) -> bool:
        """Drop duplicated deliveries of a message."""
        key = (msg.correlation_id, msg.kind, msg.sender, msg.stage)
        if key in self._seen:
            return False
        self._seen.add(key)
        return True

    def _send(self, net: Network, kind: Kind, to: str, cid: str, **payload):
        net.send(ProtocolMessage(kind, self.node_id, to, cid, payload))

    def on_message(self, msg: ProtocolMessage, net: Network) -> None:
        raise NotImplementedError

    def on_timeout(self, correlation_id: str, net: Network) -> None:
        pass


# ---------------------------------------------------------------------------
# Issuing authority
# ---------------------------------------------------------------------------


class IssuingAuthority(Entity):
    role = "IA"

    def __init__(self, node_id: str, params: SchemeParams, rng: np.random.Generator):
        super().__init__(node_id)
        self.public_key, self.secret_key = money.gen(params, rng)
        self.counters = {"minted": 0, "activated": 0, "destroyed": 0, "rejected_certs": 0, "rejected_acks": 0}

    @property
    def registry(self) -> dict[str, money.ClassicalBanknote]:
        return self.secret_key.registry

    def on_message(self, msg: ProtocolMessage, net: Network) -> None:
        if not self._fresh(msg):
            return
        if msg.kind is Kind.MINT_REQUEST:
            self._mint(msg.payload["value"], msg.sender, msg.correlation_id, net)
        elif msg.kind is Kind.ACK_CIPHER:
            self._finalize(msg, net)
        elif msg.kind is Kind.DESTROY_CONFIRM_REQUEST:
            self._confirm_destruction(msg, net)
        else:
            self._send(net, Kind.ERROR, msg.sender, msg.correlation_id, reason=f"unexpected:{msg.kind.value}")

    def _mint(self, value, msb: str, cid: str, net: Network, replaces: str | None = None):
        try:
            note, instruction = money.bank_mint(self.secret_key, value, net.rng)
        except ValueError:
            self._send(net, Kind.ERROR, msb, cid, reason="bad-value")
            return
        self.counters["minted"] += 1
        net.record_ledger(self.node_id, "pending", serial=note.serial, value=note.value)
        payload = {"instruction": instruction}
        if replaces is not None:
            payload["replaces"] = replaces
        self._send(net, Kind.CLASSICAL_NOTE, msb, cid, **payload)

    def _finalize(self, msg: ProtocolMessage, net: Network):
        try:
            pk = money.finalize_mint(self.secret_key, msg.payload["ack"])
        except MoneyError as exc:
            self.counters["rejected_acks"] += 1
            self._send(net, Kind.ERROR, msg.sender, msg.correlation_id,
                       reason=f"ack:{type(exc).__name__}", outcome=Outcome.REJECTED_CERT)
            return
        self.counters["activated"] += 1
        net.record_ledger(self.node_id, "activate", serial=pk.serial, value=pk.value)
        self._send(net, Kind.FINAL_PK, msg.sender, msg.correlation_id, pk=pk)

    def _confirm_destruction(self, msg: ProtocolMessage, net: Network):
        cert: DestructionCert = msg.payload["cert"]
        verdict = money.cv(self.secret_key, cert)
        if not verdict:
            self.counters["rejected_certs"] += 1
            self._send(net, Kind.ERROR, msg.sender, msg.correlation_id, reason=f"cert:{verdict.reason}",
                       outcome=Outcome.REJECTED_CERT, serial=cert.serial)
            return
        note = self.registry[cert.serial]
        note.advance(Status.DESTROYED)
        self.counters["destroyed"] += 1
        net.record_ledger(self.node_id, "destroy", serial=note.serial, value=note.value)
        self._mint(note.value, msg.sender, msg.correlation_id, net, replaces=note.serial)


def ia_total_active_value(ia: IssuingAuthority) -> int:
    return money.total_active_value(ia.secret_key)


# ---------------------------------------------------------------------------
# MSB quantum vault
# ---------------------------------------------------------------------------


@dataclass
class StoredNote:
    note: QuantumBanknote
    pk: BanknotePublicKey
    account: str


@dataclass
class _Pending:
    process: str
    wallet: str | None = None
    account: str | None = None
    value: int = 0
    note: QuantumBanknote | None = None
    serial: str | None = None
    payer_msb: str | None = None


class Msb(Entity):
    role = "MSB"

    def __init__(self, node_id: str, ia_id: str, scheme_pk: money.SchemePublicKey, engine: QuantumEngine):
        super().__init__(node_id)
        self.ia_id = ia_id
        self.scheme_pk = scheme_pk
        self.engine = engine
        self.custody: dict[str, set[str]] = {}
        self.vault_storage: dict[str, StoredNote] = {}
        self.credentials: dict[str, str] = {}
        self.wallet_of: dict[str, str] = {}
        self._pending: dict[tuple[str, str], _Pending] = {}

    def register_wallet(self, wallet_id: str, rng: np.random.Generator) -> tuple[str, str]:
        """Open an account; returns the pseudonymous account id and bearer token."""
        account = "acct-" + rng.bytes(6).hex()
        while account in self.credentials:
            account = "acct-" + rng.bytes(6).hex()
        token = rng.bytes(16).hex()
        self.credentials[account] = token
        self.custody[account] = set()
        self.wallet_of[account] = wallet_id
        return account, token

    def _authorized(self, msg: ProtocolMessage) -> bool:
        account = msg.payload.get("account")
        return (account in self.credentials and self.credentials[account] == msg.payload.get("token")
                and self.wallet_of[account] == msg.sender)

    # custody bookkeeping -------------------------------------------------

    def _credit(self, net: Network, stored: StoredNote):
        self.vault_storage[stored.note.serial] = stored
        self.custody[stored.account].add(stored.note.serial)
        net.record_ledger(self.node_id, "credit", account=stored.account, serial=stored.note.serial,
                          value=stored.note.value)

    def _debit(self, net: Network, serial: str) -> StoredNote:
        stored = self.vault_storage.pop(serial)
        self.custody[stored.account].discard(serial)
        net.record_ledger(self.node_id, "debit", account=stored.account, serial=serial, value=stored.note.value)
        return stored

    def owns(self, account: str, serial: str) -> bool:
        return serial in self.custody.get(account, ())

    def custody_value(self) -> int:
        return sum(s.note.value for s in self.vault_storage.values())

    # dispatch --------------------------------------------------------------

    def on_message(self, msg: ProtocolMessage, net: Network) -> None:
        if not self._fresh(msg):
            return
        handler = {
            Kind.MINT_REQUEST: self._on_mint_request,
            Kind.CLASSICAL_NOTE: self._on_classical_note,
            Kind.FINAL_PK: self._on_final_pk,
            Kind.ERROR: self._on_ia_error,
            Kind.PAY_AGREE: self._on_instruction,
            Kind.QNOTE_TRANSFER: self._on_qnote,
            Kind.VALIDATION_RESULT: self._on_settled,
            Kind.DESTROY_CERT: self._on_destroy_cert,
        }.get(msg.kind)
        if handler is None:
            return
        handler(msg, net)

    def _reply_wallet(self, net, wallet, cid, process, outcome, reason="", serials=(), value=0):
        self._send(net, Kind.VALIDATION_RESULT, wallet, cid, stage="result", process=process,
                   outcome=outcome, reason=reason, serials=list(serials), value=value)

    def _on_mint_request(self, msg, net):
        cid = msg.correlation_id
        if not self._authorized(msg):
            self._reply_wallet(net, msg.sender, cid, "mint", Outcome.ERROR, "unauthorized")
            return
        value = msg.payload.get("value")
        self._pending[(cid, "mint")] = _Pending("mint", wallet=msg.sender, account=msg.payload["account"],
                                                value=value)
        self._send(net, Kind.MINT_REQUEST, self.ia_id, cid, value=value)

    def _find_minting(self, cid) -> tuple[str, _Pending] | None:
        for role in ("mint", "online-recv"):
            p = self._pending.get((cid, role))
            if p is not None:
                return role, p
        return None

    def _on_classical_note(self, msg, net):
        found = self._find_minting(msg.correlation_id)
        if found is None or msg.sender != self.ia_id:
            return
        role, p = found
        try:
            note, ack = money.rec_mint(self.engine, self.scheme_pk, msg.payload["instruction"], self.node_id)
        except (MoneyError, ValueError) as exc:
            del self._pending[(msg.correlation_id, role)]
            self._fail_minting(net, msg.correlation_id, role, p, Outcome.ERROR, f"rec-mint:{exc}")
            return
        p.note = note
        self._send(net, Kind.ACK_CIPHER, self.ia_id, msg.correlation_id, ack=ack)

    def _on_final_pk(self, msg, net):
        found = self._find_minting(msg.correlation_id)
        if found is None or msg.sender != self.ia_id:
            return
        role, p = found
        pk: BanknotePublicKey = msg.payload["pk"]
        del self._pending[(msg.correlation_id, role)]
        if p.note is None or pk.serial != p.note.serial or not money.verify_public_key(self.scheme_pk, pk):
            if p.note is not None:
                self.engine.discard(p.note.state)
            self._fail_minting(net, msg.correlation_id, role, p, Outcome.ERROR, "bad-public-key")
            return
        self._credit(net, StoredNote(p.note, pk, p.account))
        if role == "mint":
            self._send(net, Kind.MINT_GRANT, p.wallet, msg.correlation_id, serial=pk.serial, value=pk.value)
        else:
            self._send(net, Kind.VALIDATION_RESULT, self.wallet_of[p.account], msg.correlation_id,
                       stage="credited", serial=pk.serial, value=pk.value)
            self._send(net, Kind.VALIDATION_RESULT, p.payer_msb, msg.correlation_id, stage="settled",
                       process="online-payment", outcome=Outcome.COMPLETED, serials=[p.serial, pk.serial],
                       value=pk.value)

    def _fail_minting(self, net, cid, role, p: _Pending, outcome, reason):
        if role == "mint":
            self._reply_wallet(net, p.wallet, cid, "mint", outcome, reason)
        else:
            self._send(net, Kind.VALIDATION_RESULT, p.payer_msb, cid, stage="settled", process="online-payment",
                       outcome=outcome, reason=reason, serials=[p.serial], value=p.value)

    def _on_ia_error(self, msg, net):
        if msg.sender != self.ia_id:
            return
        found = self._find_minting(msg.correlation_id)
        if found is None:
            return
        role, p = found
        del self._pending[(msg.correlation_id, role)]
        if p.note is not None:
            # finalization refused: the prepared state never became money
            self.engine.discard(p.note.state)
        outcome = Outcome(msg.payload.get("outcome", Outcome.ERROR))
        self._fail_minting(net, msg.correlation_id, role, p, outcome, msg.payload.get("reason", ""))

    def _on_instruction(self, msg, net):
        if msg.stage != "instruct":
            return
        cid, pl = msg.correlation_id, msg.payload
        process = pl.get("process", "transfer")
        if not self._authorized(msg):
            self._reply_wallet(net, msg.sender, cid, process, Outcome.ERROR, "unauthorized")
            return
        serial, to_msb, to_account = pl.get("serial"), pl.get("to_msb"), pl.get("to_account")
        if not self.owns(pl["account"], serial):
            self._reply_wallet(net, msg.sender, cid, process, Outcome.ERROR, "not-in-custody", [serial] if serial else [])
            return
        if process == "online-payment":
            self._start_online(msg, net, serial, to_msb, to_account)
        elif to_msb == self.node_id:
            if process == "transfer-inter":
                self._reply_wallet(net, msg.sender, cid, process, Outcome.ERROR, "same-msb", [serial])
                return
            self._transfer_intra(msg, net, serial, to_account)
        else:
            if process == "transfer-intra":
                self._reply_wallet(net, msg.sender, cid, process, Outcome.ERROR, "not-intra", [serial])
                return
            self._transfer_inter(msg, net, serial, to_msb, to_account)

    def _transfer_intra(self, msg, net, serial, to_account):
        cid = msg.correlation_id
        if to_account not in self.custody:
            self._reply_wallet(net, msg.sender, cid, "transfer-intra", Outcome.ERROR, "unknown-account", [serial])
            return
        stored = self._debit(net, serial)
        stored.account = to_account
        self._credit(net, stored)
        value = stored.note.value
        self._send(net, Kind.VALIDATION_RESULT, self.wallet_of[to_account], cid, stage="credited",
                   serial=serial, value=value)
        self._reply_wallet(net, msg.sender, cid, "transfer-intra", Outcome.COMPLETED, "", [serial], value)

    def _transfer_inter(self, msg, net, serial, to_msb, to_account):
        cid = msg.correlation_id
        if not net.can_send_quantum(self.node_id, to_msb):
            self._reply_wallet(net, msg.sender, cid, "transfer-inter", Outcome.ERROR, "link-down", [serial])
            return
        stored = self._debit(net, serial)
        self._pending[(cid, "transfer-out")] = _Pending("transfer-inter", wallet=msg.sender, serial=serial,
                                                        value=stored.note.value)
        net.send_quantum(ProtocolMessage(Kind.QNOTE_TRANSFER, self.node_id, to_msb, cid, {
            "note": stored.note, "pk": stored.pk, "from_account": stored.account, "to_account": to_account,
            "value": stored.note.value}))

    def _on_qnote(self, msg, net):
        cid, pl = msg.correlation_id, msg.payload
        note: QuantumBanknote = pl["note"]
        pk: BanknotePublicKey = pl["pk"]
        valid = False
        reason = ""
        if pl.get("to_account") not in self.custody:
            reason = "unknown-account"
        elif pk.serial != note.serial or not money.verify_public_key(self.scheme_pk, pk):
            reason = "bad-public-key"
        else:
            valid, note = money.qv(self.engine, pk, note)
            reason = "" if valid else "qv-failed"
        if valid:
            self._credit(net, StoredNote(note, pk, pl["to_account"]))
            self._send(net, Kind.VALIDATION_RESULT, self.wallet_of[pl["to_account"]], cid, stage="credited",
                       serial=note.serial, value=note.value)
            outcome = Outcome.COMPLETED
        else:
            self.engine.discard(note.state)
            net.record_ledger(self.node_id, "loss", serial=note.serial, value=note.value, cause="invalid-discard")
            outcome = Outcome.REJECTED_INVALID_NOTE
        self._send(net, Kind.VALIDATION_RESULT, msg.sender, cid, stage="settled", process="transfer-inter",
                   outcome=outcome, reason=reason, serials=[note.serial], value=note.value)

    def _start_online(self, msg, net, serial, to_msb, to_account):
        cid = msg.correlation_id
        stored = self._debit(net, serial)
        cert = money.gen_cert(self.engine, stored.pk, stored.note)
        net.record_ledger(self.node_id, "cert-issued", serial=serial, value=stored.note.value)
        self._pending[(cid, "online-out")] = _Pending("online-payment", wallet=msg.sender, serial=serial,
                                                      value=stored.note.value)
        self._send(net, Kind.DESTROY_CERT, to_msb, cid, cert=cert, value=stored.note.value,
                   from_account=stored.account, to_account=to_account)

    def _on_destroy_cert(self, msg, net):
        cid, pl = msg.correlation_id, msg.payload
        cert: DestructionCert = pl["cert"]
        if pl.get("to_account") not in self.custody:
            self._send(net, Kind.VALIDATION_RESULT, msg.sender, cid, stage="settled", process="online-payment",
                       outcome=Outcome.ERROR, reason="unknown-account", serials=[cert.serial], value=pl["value"])
            return
        self._pending[(cid, "online-recv")] = _Pending("online-payment", account=pl["to_account"],
                                                       value=pl["value"], serial=cert.serial,
                                                       payer_msb=msg.sender)
        self._send(net, Kind.DESTROY_CONFIRM_REQUEST, self.ia_id, cid, cert=cert)

    def _on_settled(self, msg, net):
        if msg.stage != "settled":
            return
        cid, pl = msg.correlation_id, msg.payload
        p = self._pending.pop((cid, "transfer-out"), None) or self._pending.pop((cid, "online-out"), None)
        if p is None:
            return
        self._reply_wallet(net, p.wallet, cid, pl["process"], Outcome(pl["outcome"]), pl.get("reason", ""),
                           pl.get("serials", ()), pl.get("value", p.value))


def msb_total_custody_value(msb: Msb) -> int:
    return msb.custody_value()


# ---------------------------------------------------------------------------
# Classical wallet
# ---------------------------------------------------------------------------


@dataclass
class _Open:
    process: str
    serial: str | None = None
    value: int = 0
    mode: str = ""
    receiver: str | None = None


class Wallet(Entity):
    role = "Wallet"

    def __init__(self, node_id: str, home_msb: str):
        super().__init__(node_id)
        self.home_msb = home_msb
        self.account: str | None = None
        self.token: str | None = None
        self.holdings: dict[str, int] = {}
        self.receipts: list[Receipt] = []
        self._open: dict[str, _Open] = {}

    def start_mint(self, cid: str, value: int, net: Network) -> None:
        self._open[cid] = _Open("mint", value=value)
        net.schedule_timeout(self.node_id, cid)
        self._send(net, Kind.MINT_REQUEST, self.home_msb, cid, value=value, account=self.account, token=self.token)

    def start_payment(self, cid: str, receiver: str, serial: str, mode: str, net: Network) -> None:
        """``mode`` is one of ``transfer``, ``transfer-inter``, ``transfer-intra``, ``online-payment``."""
        value = self.holdings.get(serial, 0)
        self._open[cid] = _Open(mode, serial=serial, value=value, mode=mode, receiver=receiver)
        net.schedule_timeout(self.node_id, cid)
        self._send(net, Kind.PAY_AGREE, receiver, cid, stage="offer", serial=serial, value=value, mode=mode)

    def _close(self, net: Network, cid: str, outcome: Outcome, process: str | None = None,
               serials=(), amount: int | None = None, reason: str = ""):
        op = self._open.pop(cid, None)
        if op is None:
            return
        spent = outcome in (Outcome.COMPLETED, Outcome.REJECTED_INVALID_NOTE, Outcome.REJECTED_CERT)
        if op.serial and spent and not (outcome is Outcome.COMPLETED and op.receiver == self.node_id
                                        and op.process != "online-payment"):
            self.holdings.pop(op.serial, None)
        if process is None or process == "transfer":
            process = op.process
        amount = op.value if amount is None else amount
        receipt = Receipt(cid, process, outcome, tuple(serials), (amount,) if amount else (), reason)
        self.receipts.append(receipt)
        net.record_receipt(self.node_id, receipt)

    def on_message(self, msg: ProtocolMessage, net: Network) -> None:
        if not self._fresh(msg):
            return
        cid, pl = msg.correlation_id, msg.payload
        if msg.kind is Kind.PAY_AGREE and msg.stage == "offer":
            self._send(net, Kind.PAY_AGREE, msg.sender, cid, stage="accept", value=pl.get("value", 0),
                       msb=self.home_msb, account=self.account)
        elif msg.kind is Kind.PAY_AGREE and msg.stage == "accept":
            op = self._open.get(cid)
            if op is None:
                return
            self._send(net, Kind.PAY_AGREE, self.home_msb, cid, stage="instruct", process=op.mode,
                       serial=op.serial, value=op.value, to_msb=pl["msb"], to_account=pl["account"],
                       account=self.account, token=self.token)
        elif msg.kind is Kind.MINT_GRANT:
            self.holdings[pl["serial"]] = pl["value"]
            self._close(net, cid, Outcome.COMPLETED, "mint", [pl["serial"]], pl["value"])
        elif msg.kind is Kind.VALIDATION_RESULT and msg.stage == "credited":
            self.holdings[pl["serial"]] = pl["value"]
        elif msg.kind is Kind.VALIDATION_RESULT and msg.stage == "result":
            self._close(net, cid, Outcome(pl["outcome"]), pl.get("process"), pl.get("serials", ()),
                        pl.get("value") or None, pl.get("reason", ""))

    def on_timeout(self, correlation_id: str, net: Network) -> None:
        if correlation_id in self._open:
            self._close(net, correlation_id, Outcome.TIMEOUT, reason="deadline")

    @property
    def open_processes(self) -> list[str]:
        return list(self._open)


def wallet_balance(wallet: Wallet) -> int:
    return sum(wallet.holdings.values())


class QuantumWallet(Msb):
    """A wallet with its own quantum storage: an MSB that serves one account, itself.

    Runs the wallet-layer protocol through an embedded :class:`Wallet` whose home
    vault is this node, so the same state machines cover quantum-wallet
    deployments.
    """

    role = "QuantumWallet"

    def __init__(self, node_id, ia_id, scheme_pk, engine, rng):
        super().__init__(node_id, ia_id, scheme_pk, engine)
        self.wallet = Wallet(node_id, node_id)
        self.wallet.account, self.wallet.token = self.register_wallet(node_id, rng)

    def _wallet_layer(self, msg: ProtocolMessage) -> bool:
        if msg.kind is Kind.PAY_AGREE:
            return msg.stage in ("offer", "accept")
        if msg.kind is Kind.MINT_GRANT:
            return True
        if msg.kind is Kind.VALIDATION_RESULT:
            return msg.stage in ("credited", "result")
        return False

    def on_message(self, msg, net):
        if self._wallet_layer(msg):
            self.wallet.on_message(msg, net)
        else:
            super().on_message(msg, net)

    def on_timeout(self, correlation_id, net):
        self.wallet.on_timeout(correlation_id, net)

    # wallet-facing API
    @property
    def holdings(self):
        return self.wallet.holdings

    @property
    def receipts(self):
        return self.wallet.receipts

    def start_mint(self, cid, value, net):
        self.wallet.start_mint(cid, value, net)

    def start_payment(self, cid, receiver, serial, mode, net):
        self.wallet.start_payment(cid, receiver, serial, mode, net)


# ---------------------------------------------------------------------------
# Synchronous system: zero-latency FIFO delivery
# ---------------------------------------------------------------------------


class VaultSystem:
    """Entities plus a reliable, instantaneous message bus.

    Useful on its own for driving processes directly; :class:`qvault.netsim.Simulation`
    extends it with time, links and adversaries.
    """

    def __init__(self, params: SchemeParams | int = 8, seed=None, *, ia_id: str = "ia"):
        if not isinstance(params, SchemeParams):
            params = SchemeParams(params)
        self.params = params
        self.rng = np.random.default_rng(seed)
        self.engine = QuantumEngine(rng=self.rng, max_qubits=params.max_qubits)
        self.ia = IssuingAuthority(ia_id, params, self.rng)
        self.nodes: dict[str, Entity] = {ia_id: self.ia}
        self.receipts: dict[str, Receipt] = {}
        self.delivered: list[ProtocolMessage] = []
        self.ledger_log: list[dict] = []
        self.interceptor = None  # test hook: callable(msg) -> msg or None
        self._queue: deque = deque()
        self._cids = itertools.count(1)
        self._timeouts: list[tuple[str, str]] = []

    # topology ------------------------------------------------------------

    def add_msb(self, msb_id: str) -> Msb:
        self._check_new(msb_id)
        msb = Msb(msb_id, self.ia.node_id, self.ia.public_key, self.engine)
        self.nodes[msb_id] = msb
        return msb

    def add_wallet(self, wallet_id: str, home_msb: str) -> Wallet:
        self._check_new(wallet_id)
        msb = self.nodes.get(home_msb)
        if not isinstance(msb, Msb) or isinstance(msb, QuantumWallet):
            raise VaultError(f"unknown home MSB {home_msb!r}")
        wallet = Wallet(wallet_id, home_msb)
        wallet.account, wallet.token = msb.register_wallet(wallet_id, self.rng)
        self.nodes[wallet_id] = wallet
        return wallet

    def add_quantum_wallet(self, wallet_id: str) -> QuantumWallet:
        self._check_new(wallet_id)
        qw = QuantumWallet(wallet_id, self.ia.node_id, self.ia.public_key, self.engine, self.rng)
        self.nodes[wallet_id] = qw
        return qw

    def _check_new(self, node_id):
        if node_id in self.nodes:
            raise VaultError(f"duplicate node id {node_id!r}")

    @property
    def msbs(self) -> list[Msb]:
        return [e for e in self.nodes.values() if isinstance(e, Msb)]

    @property
    def wallets(self) -> list:
        return [e for e in self.nodes.values() if isinstance(e, (Wallet, QuantumWallet))]

    def home_msb(self, wallet_id: str) -> str:
        w = self.nodes[wallet_id]
        return w.node_id if isinstance(w, QuantumWallet) else w.home_msb

    # Network interface -----------------------------------------------------

    def new_correlation_id(self) -> str:
        return f"p{next(self._cids):05d}"

    def send(self, msg: ProtocolMessage) -> None:
        if msg.recipient not in self.nodes:
            raise VaultError(f"unknown recipient {msg.recipient!r}")
        if self.interceptor is not None:
            msg = self.interceptor(msg)
            if msg is None:
                return
        self._queue.append(msg)

    def can_send_quantum(self, sender: str, recipient: str) -> bool:
        return isinstance(self.nodes.get(recipient), Msb)

    def send_quantum(self, msg: ProtocolMessage) -> None:
        self.send(self._move(msg))

    def _move(self, msg: ProtocolMessage) -> ProtocolMessage:
        note: QuantumBanknote = msg.payload["note"]
        moved = QuantumBanknote(note.serial, note.value, self.engine.transfer(note.state))
        return ProtocolMessage(msg.kind, msg.sender, msg.recipient, msg.correlation_id,
                               {**msg.payload, "note": moved})

    def record_receipt(self, node: str, receipt: Receipt) -> None:
        self.receipts[receipt.correlation_id] = receipt

    def record_ledger(self, node: str, op: str, **fields) -> None:
        self.ledger_log.append({"node": node, "op": op, **fields})

    def schedule_timeout(self, node: str, correlation_id: str) -> None:
        self._timeouts.append((node, correlation_id))

    # driving -----------------------------------------------------------------

    def start_mint(self, wallet_id: str, value: int) -> str:
        cid = self.new_correlation_id()
        self.nodes[wallet_id].start_mint(cid, value, self)
        return cid

    def start_payment(self, payer: str, receiver: str, serial: str, mode: str) -> str:
        if receiver not in self.nodes:
            raise VaultError(f"unknown receiver {receiver!r}")
        cid = self.new_correlation_id()
        self.nodes[payer].start_payment(cid, receiver, serial, mode, self)
        return cid

    def run(self) -> None:
        while self._queue:
            msg = self._queue.popleft()
            self.delivered.append(msg)
            self.nodes[msg.recipient].on_message(msg, self)
        for node, cid in self._timeouts:
            self.nodes[node].on_timeout(cid, self)
        self._timeouts.clear()

    def receipt(self, cid: str) -> Receipt:
        return self.receipts[cid]


def process_on_demand_mint(system: VaultSystem, wallet: str, value: int) -> Receipt:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value <= 0:
        raise ValueError(f"mint value must be a positive integer, got {value!r}")
    cid = system.start_mint(wallet, value)
    system.run()
    return system.receipt(cid)


def process_transfer_inter_msb(system: VaultSystem, payer: str, receiver: str, serial: str) -> Receipt:
    if system.home_msb(payer) == system.home_msb(receiver):
        raise ValueError("inter-MSB transfer needs wallets at different MSBs")
    cid = system.start_payment(payer, receiver, serial, "transfer-inter")
    system.run()
    return system.receipt(cid)


def process_transfer_intra_msb(system: VaultSystem, payer: str, receiver: str, serial: str) -> Receipt:
    if system.home_msb(payer) != system.home_msb(receiver):
        raise ValueError("intra-MSB transfer needs wallets at the same MSB")
    cid = system.start_payment(payer, receiver, serial, "transfer-intra")
    system.run()
    return system.receipt(cid)


def process_online_payment(system: VaultSystem, payer: str, receiver: str, serial: str) -> Receipt:
    cid = system.start_payment(payer, receiver, serial, "online-payment")
    system.run()
    return system.receipt(cid)
