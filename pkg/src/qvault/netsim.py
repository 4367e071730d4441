"""Deterministic discrete-event network for the vault system.

Configuration schema (JSON)::

    {
      "seed": 7, "n": 8, "deadline": 1000, "allow_quantum_wallets": false,
      "nodes": [{"id": "ia", "role": "IA"},
                {"id": "msb-a", "role": "MSB"},
                {"id": "alice", "role": "Wallet", "home_msb": "msb-a"},
                {"id": "qw", "role": "Wallet", "quantum": true}],
      "classical_links": [["ia", "msb-a"], ["alice", "msb-a", 2]],
      "quantum_links": [["msb-a", "msb-b"]]
    }

Links are undirected; the optional third element is the latency in ticks.

Scenario schema (JSON)::

    {"actions": [
      {"at": 0, "id": "m1", "op": "mint", "wallet": "alice", "value": 100},
      {"at": 5, "op": "pay", "from": "alice", "to": "carol", "serial_of": "m1"},
      {"at": 9, "op": "online-pay", "from": "carol", "to": "bob", "serial": "..."}
    ]}

``op`` is one of ``mint``, ``pay`` (inter-MSB, or intra when both wallets share
an MSB), ``intra-pay`` and ``online-pay``. ``serial_of`` names an earlier action
whose most recent serial is used.

Adversary schema (JSON)::

    {"classical": [{"match": {"kind": "FinalPk"}, "action": "drop", "limit": 1},
                   {"match": {"to": "bob"}, "action": "delay", "ticks": 3},
                   {"match": {"kind": "PayAgree"}, "action": "duplicate"}],
     "quantum": [{"match": {"from": "msb-a"}, "action": "drop"}]}
"""
from __future__ import annotations

import heapq
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoding import canonical_json, digest
from .money import QuantumBanknote, SchemeParams
from .qsim import DEFAULT_MAX_QUBITS
from .vault import (IssuingAuthority, Kind, Msb, ProtocolMessage, QuantumWallet, Receipt, VaultSystem, Wallet,
                    encode)


class NetsimError(Exception):
    pass


class ConfigError(NetsimError, ValueError):
    pass


class ScriptError(NetsimError, ValueError):
    pass


class NoLinkError(NetsimError):
    pass


class NotOwnerError(NetsimError):
    pass


ROLES = ("IA", "MSB", "Wallet")


def _pair(a, b):
    return (a, b) if a <= b else (b, a)


def _links(raw, field_name) -> dict[tuple[str, str], int]:
    out = {}
    for item in raw:
        if not isinstance(item, (list, tuple)) or len(item) not in (2, 3):
            raise ConfigError(f"{field_name}: each link is [a, b] or [a, b, latency]")
        latency = item[2] if len(item) == 3 else 1
        if isinstance(latency, bool) or not isinstance(latency, int) or latency < 1:
            raise ConfigError(f"{field_name}: latency must be a positive integer")
        if item[0] == item[1]:
            raise ConfigError(f"{field_name}: self-link {item[0]!r}")
        out[_pair(str(item[0]), str(item[1]))] = latency
    return out


@dataclass
class NetworkConfig:
    nodes: list[dict]
    classical_links: dict[tuple[str, str], int]
    quantum_links: dict[tuple[str, str], int]
    seed: int = 0
    n: int = 8
    deadline: int = 1000
    allow_quantum_wallets: bool = False

    def __post_init__(self):
        ids = [nd.get("id") for nd in self.nodes]
        if any(not isinstance(i, str) or not i for i in ids):
            raise ConfigError("every node needs a non-empty string id")
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate node ids")
        roles = {nd["id"]: nd.get("role") for nd in self.nodes}
        bad = [i for i, r in roles.items() if r not in ROLES]
        if bad:
            raise ConfigError(f"unknown role for {bad}")
        if sum(r == "IA" for r in roles.values()) != 1:
            raise ConfigError("exactly one IA is required")
        for nd in self.nodes:
            if nd["role"] != "Wallet":
                continue
            if nd.get("quantum"):
                if not self.allow_quantum_wallets:
                    raise ConfigError(f"quantum wallet {nd['id']!r} needs allow_quantum_wallets")
            elif roles.get(nd.get("home_msb")) != "MSB":
                raise ConfigError(f"wallet {nd['id']!r} has no valid home_msb")
        for a, b in list(self.classical_links) + list(self.quantum_links):
            for x in (a, b):
                if x not in roles:
                    raise ConfigError(f"link endpoint {x!r} is not a node")
        for a, b in self.quantum_links:
            for x in (a, b):
                if not self.is_quantum_node(x):
                    raise ConfigError(f"quantum link endpoint {x!r} is not a quantum vault")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if isinstance(self.deadline, bool) or not isinstance(self.deadline, int) or self.deadline < 1:
            raise ConfigError("deadline must be a positive integer")

    def role(self, node_id: str) -> str:
        for nd in self.nodes:
            if nd["id"] == node_id:
                return nd["role"]
        raise KeyError(node_id)

    def is_quantum_node(self, node_id: str) -> bool:
        for nd in self.nodes:
            if nd["id"] == node_id:
                return nd["role"] == "MSB" or (nd["role"] == "Wallet" and bool(nd.get("quantum")))
        return False

    @property
    def ia_id(self) -> str:
        return next(nd["id"] for nd in self.nodes if nd["role"] == "IA")

    @classmethod
    def from_json(cls, d: dict) -> "NetworkConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - {"nodes", "classical_links", "quantum_links", "seed", "n", "deadline",
                            "allow_quantum_wallets"}
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        if not isinstance(d.get("nodes"), list) or not all(isinstance(nd, dict) for nd in d["nodes"]):
            raise ConfigError("nodes must be a list of objects")
        return cls(nodes=[dict(nd) for nd in d["nodes"]],
                   classical_links=_links(d.get("classical_links", []), "classical_links"),
                   quantum_links=_links(d.get("quantum_links", []), "quantum_links"),
                   seed=d.get("seed", 0), n=d.get("n", 8), deadline=d.get("deadline", 1000),
                   allow_quantum_wallets=bool(d.get("allow_quantum_wallets", False)))

    def to_json(self) -> dict:
        def links(table):
            return [[a, b, lat] for (a, b), lat in sorted(table.items())]
        return {"nodes": self.nodes, "classical_links": links(self.classical_links),
                "quantum_links": links(self.quantum_links), "seed": self.seed, "n": self.n,
                "deadline": self.deadline, "allow_quantum_wallets": self.allow_quantum_wallets}

    @classmethod
    def load(cls, path) -> "NetworkConfig":
        return cls.from_json(json.loads(Path(path).read_text()))

    def digest(self) -> str:
        return digest(self.to_json())

    def with_seed(self, seed: int) -> "NetworkConfig":
        d = self.to_json()
        d["seed"] = seed
        return NetworkConfig.from_json(d)


# ---------------------------------------------------------------------------
# Adversary
# ---------------------------------------------------------------------------

_MATCH_FIELDS = ("kind", "from", "to", "stage", "correlation_id")


def _matches(match: dict, msg: ProtocolMessage) -> bool:
    view = {"kind": msg.kind.value, "from": msg.sender, "to": msg.recipient, "stage": msg.stage,
            "correlation_id": msg.correlation_id}
    return all(view[k] == v for k, v in match.items())


def _check_match(match):
    if not isinstance(match, dict) or set(match) - set(_MATCH_FIELDS):
        raise ConfigError(f"rule match may only use {_MATCH_FIELDS}")


@dataclass
class ClassicalRule:
    match: dict
    action: str
    ticks: int = 0
    limit: int | None = None

    def __post_init__(self):
        _check_match(self.match)
        if self.action not in ("drop", "delay", "duplicate"):
            raise ConfigError(f"unknown classical action {self.action!r}")
        if self.action == "delay" and (not isinstance(self.ticks, int) or self.ticks < 1):
            raise ConfigError("delay needs ticks >= 1")


@dataclass
class QuantumRule:
    """Quantum links admit only loss: a moved state cannot be duplicated or delayed-and-copied."""

    match: dict
    action: str = "drop"
    limit: int | None = None

    def __post_init__(self):
        _check_match(self.match)
        if self.action != "drop":
            raise ConfigError(f"quantum links support only 'drop', not {self.action!r}")


@dataclass
class AdversaryPolicy:
    classical: list[ClassicalRule] = field(default_factory=list)
    quantum: list[QuantumRule] = field(default_factory=list)
    _used: dict = field(default_factory=lambda: defaultdict(int), repr=False)

    @classmethod
    def from_json(cls, d: dict) -> "AdversaryPolicy":
        try:
            return cls([ClassicalRule(r["match"], r["action"], r.get("ticks", 0), r.get("limit"))
                        for r in d.get("classical", [])],
                       [QuantumRule(r["match"], r.get("action", "drop"), r.get("limit"))
                        for r in d.get("quantum", [])])
        except (KeyError, TypeError, AttributeError) as exc:
            raise ConfigError(f"malformed adversary rule: {exc}") from None

    def _fire(self, rules, msg):
        for i, rule in enumerate(rules):
            key = (id(rules), i)
            if _matches(rule.match, msg) and (rule.limit is None or self._used[key] < rule.limit):
                self._used[key] += 1
                return rule
        return None

    def classical_action(self, msg) -> ClassicalRule | None:
        return self._fire(self.classical, msg)

    def quantum_action(self, msg) -> QuantumRule | None:
        return self._fire(self.quantum, msg)


# ---------------------------------------------------------------------------
# Scenario scripts
# ---------------------------------------------------------------------------

OPS = {"mint": None, "pay": "transfer", "intra-pay": "transfer-intra", "online-pay": "online-payment"}


@dataclass
class ScenarioScript:
    actions: list[dict]

    def __post_init__(self):
        ids = set()
        for i, a in enumerate(self.actions):
            if not isinstance(a, dict) or a.get("op") not in OPS:
                raise ScriptError(f"action {i}: unknown op")
            at = a.get("at", 0)
            if isinstance(at, bool) or not isinstance(at, int) or at < 0:
                raise ScriptError(f"action {i}: 'at' must be a non-negative integer")
            if a["op"] == "mint":
                if "wallet" not in a or "value" not in a:
                    raise ScriptError(f"action {i}: mint needs wallet and value")
                v = a["value"]
                if isinstance(v, bool) or not isinstance(v, int) or v <= 0:
                    raise ScriptError(f"action {i}: value must be a positive integer")
            else:
                if "from" not in a or "to" not in a or ("serial" in a) == ("serial_of" in a):
                    raise ScriptError(f"action {i}: payments need from, to and one of serial/serial_of")
                if "serial_of" in a and a["serial_of"] not in ids:
                    raise ScriptError(f"action {i}: serial_of refers to unknown id {a['serial_of']!r}")
            if "id" in a:
                if a["id"] in ids:
                    raise ScriptError(f"action {i}: duplicate id {a['id']!r}")
                ids.add(a["id"])

    @classmethod
    def from_json(cls, d) -> "ScenarioScript":
        if isinstance(d, list):
            d = {"actions": d}
        if not isinstance(d, dict) or not isinstance(d.get("actions"), list):
            raise ScriptError("script must be an object with an 'actions' list")
        return cls([dict(a) if isinstance(a, dict) else a for a in d["actions"]])

    def to_json(self) -> dict:
        return {"actions": self.actions}

    @classmethod
    def load(cls, path) -> "ScenarioScript":
        return cls.from_json(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Transcript
# ---------------------------------------------------------------------------


@dataclass
class Transcript:
    config_digest: str
    seed: int
    records: list[dict]
    receipts: list[dict]
    ledger: dict
    quiescent: bool
    final_tick: int
    roles: dict[str, str] = field(default_factory=dict)

    def to_jsonl(self) -> str:
        lines = [canonical_json({"type": "header", "config_digest": self.config_digest, "seed": self.seed,
                                 "roles": self.roles})]
        lines += [canonical_json({"type": "event", **r}) for r in self.records]
        lines.append(canonical_json({"type": "summary", "receipts": self.receipts, "ledger": self.ledger,
                                     "quiescent": self.quiescent, "final_tick": self.final_tick}))
        return "\n".join(lines) + "\n"

    def to_bytes(self) -> bytes:
        return self.to_jsonl().encode("ascii")

    @classmethod
    def from_jsonl(cls, text: str) -> "Transcript":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        if len(rows) < 2 or rows[0].get("type") != "header" or rows[-1].get("type") != "summary":
            raise ValueError("not a transcript")
        head, summary = rows[0], rows[-1]
        records = []
        for r in rows[1:-1]:
            r = dict(r)
            r.pop("type")
            records.append(r)
        return cls(head["config_digest"], head["seed"], records, summary["receipts"], summary["ledger"],
                   summary["quiescent"], summary["final_tick"], head.get("roles", {}))

    def write(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def read(cls, path) -> "Transcript":
        return cls.from_jsonl(Path(path).read_text())

    def receipt_outcomes(self) -> list[str]:
        return [r["outcome"] for r in self.receipts]


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


class Simulation(VaultSystem):
    def __init__(self, config: NetworkConfig, adversary: AdversaryPolicy | None = None):
        params = SchemeParams(config.n, max(DEFAULT_MAX_QUBITS, config.n))
        super().__init__(params, config.seed, ia_id=config.ia_id)
        self.config = config
        self.adversary = adversary or AdversaryPolicy()
        self.now = 0
        self.records: list[dict] = []
        self.receipt_list: list[Receipt] = []
        self._heap: list = []
        self._seq = 0
        self._action_cids: dict[str, str] = {}
        self._processes: dict[str, str] = {}
        for nd in config.nodes:
            if nd["role"] == "MSB":
                self.add_msb(nd["id"])
        for nd in config.nodes:
            if nd["role"] == "Wallet":
                if nd.get("quantum"):
                    self.add_quantum_wallet(nd["id"])
                else:
                    self.add_wallet(nd["id"], nd["home_msb"])

    # scheduling ------------------------------------------------------------

    def _push(self, time: int, kind: str, data) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (time, self._seq, kind, data))

    def _record(self, event: str, **fields) -> None:
        self.records.append({"t": self.now, "seq": len(self.records), "event": event, **fields})

    # Network interface overrides ---------------------------------------------

    def send(self, msg: ProtocolMessage) -> None:
        # a node addressing itself needs no link
        link = 0 if msg.sender == msg.recipient else self.config.classical_links.get(
            _pair(msg.sender, msg.recipient))
        if msg.recipient not in self.nodes or link is None:
            self._record("no-link", message=msg.to_json())
            return
        if self.interceptor is not None:
            msg = self.interceptor(msg)
            if msg is None:
                return
        self._record("send", message=msg.to_json())
        rule = self.adversary.classical_action(msg)
        if rule is not None and rule.action == "drop":
            self._record("drop", message=msg.to_json())
            return
        delay = link + (rule.ticks if rule is not None and rule.action == "delay" else 0)
        self._push(self.now + delay, "deliver", msg)
        if rule is not None and rule.action == "duplicate":
            self._record("duplicate", message=msg.to_json())
            self._push(self.now + delay, "deliver", msg)

    def can_send_quantum(self, sender: str, recipient: str) -> bool:
        return _pair(sender, recipient) in self.config.quantum_links

    def send_quantum(self, msg: ProtocolMessage) -> None:
        latency = self.config.quantum_links.get(_pair(msg.sender, msg.recipient))
        if latency is None:
            raise NoLinkError(f"no quantum link {msg.sender} -> {msg.recipient}")
        note: QuantumBanknote = msg.payload["note"]
        if not note.state.live:
            raise NotOwnerError(f"{msg.sender} does not hold a live state for {note.serial}")
        moved = self._move(msg)
        self._record("send", message=moved.to_json())
        rule = self.adversary.quantum_action(moved)
        if rule is not None:
            self.engine.discard(moved.payload["note"].state)
            self._record("quantum-drop", message=moved.to_json())
            self.record_ledger("network", "loss", serial=note.serial, value=note.value, cause="quantum-drop")
            return
        self._push(self.now + latency, "deliver", moved)

    def record_receipt(self, node: str, receipt: Receipt) -> None:
        super().record_receipt(node, receipt)
        self.receipt_list.append(receipt)
        self._record("receipt", node=node, receipt=receipt.to_json())

    def record_ledger(self, node: str, op: str, **fields) -> None:
        super().record_ledger(node, op, **fields)
        self._record("ledger", node=node, op=op, **encode(fields))

    def schedule_timeout(self, node: str, correlation_id: str) -> None:
        self._push(self.now + self.config.deadline, "timeout", (node, correlation_id))

    # actions -------------------------------------------------------------------

    def _resolve_serial(self, action: dict) -> str:
        if "serial" in action:
            return str(action["serial"])
        cid = self._action_cids.get(action["serial_of"])
        receipt = self.receipts.get(cid) if cid else None
        if receipt is None or not receipt.serials:
            return f"unresolved:{action['serial_of']}"
        return receipt.serials[-1]

    def _check_node(self, node_id, kinds=(Wallet, QuantumWallet)):
        if not isinstance(self.nodes.get(node_id), kinds):
            raise ScriptError(f"unknown wallet {node_id!r}")

    def schedule_action(self, action: dict) -> None:
        self._push(action.get("at", 0), "action", action)

    def _run_action(self, action: dict) -> None:
        op = action["op"]
        cid = self.new_correlation_id()
        if "id" in action:
            self._action_cids[action["id"]] = cid
        if op == "mint":
            self._processes[cid] = "mint"
            self._record("action", op=op, correlation_id=cid, wallet=action["wallet"], value=action["value"])
            self.nodes[action["wallet"]].start_mint(cid, action["value"], self)
            return
        serial = self._resolve_serial(action)
        mode = OPS[op]
        if op == "pay" and self.home_msb(action["from"]) == self.home_msb(action["to"]):
            mode = "transfer-intra"
        elif op == "pay":
            mode = "transfer-inter"
        self._processes[cid] = mode
        self._record("action", op=op, correlation_id=cid, process=mode, payer=action["from"],
                     receiver=action["to"], serial=serial)
        self.nodes[action["from"]].start_payment(cid, action["to"], serial, mode, self)

    # loop ------------------------------------------------------------------------

    def _stale(self, kind, data) -> bool:
        if kind != "timeout":
            return False
        node, cid = data
        entity = self.nodes[node]
        wallet = entity.wallet if isinstance(entity, QuantumWallet) else entity
        return cid not in wallet.open_processes

    def step(self) -> bool:
        """Process one event; returns False when nothing remains."""
        while self._heap:
            time, _, kind, data = heapq.heappop(self._heap)
            if self._stale(kind, data):
                continue
            self.now = time
            if kind == "deliver":
                self._record("deliver", message=data.to_json())
                self.delivered.append(data)
                self.nodes[data.recipient].on_message(data, self)
            elif kind == "timeout":
                node, cid = data
                self._record("timeout", node=node, correlation_id=cid)
                self.nodes[node].on_timeout(cid, self)
            else:
                self._run_action(data)
            return True
        return False

    def run(self, max_ticks: int | None = None) -> bool:
        """Run until the queue is empty (True) or the next event lies past ``max_ticks``."""
        while self._heap:
            time, _, kind, data = self._heap[0]
            if self._stale(kind, data):
                heapq.heappop(self._heap)
                continue
            if max_ticks is not None and time > max_ticks:
                return False
            self.step()
        return True

    # reporting -----------------------------------------------------------------

    def ledger_snapshot(self) -> dict:
        registry = {s: note.status.value for s, note in sorted(self.ia.registry.items())}
        msbs = {}
        for msb in self.msbs:
            msbs[msb.node_id] = {"value": msb.custody_value(),
                                 "custody": {a: sorted(s) for a, s in sorted(msb.custody.items()) if s}}
        wallets = {w.node_id: sum(w.holdings.values()) for w in self.wallets}
        return {"ia_active_value": self.ia_total_active_value(), "registry": registry, "msbs": msbs,
                "wallet_balances": wallets, "ia_counters": dict(self.ia.counters)}

    def ia_total_active_value(self) -> int:
        from .money import total_active_value
        return total_active_value(self.ia.secret_key)

    def transcript(self, quiescent: bool) -> Transcript:
        roles = {nd["id"]: "QuantumWallet" if nd.get("quantum") else nd["role"] for nd in self.config.nodes}
        return Transcript(self.config.digest(), self.config.seed, list(self.records),
                          [r.to_json() for r in self.receipt_list], self.ledger_snapshot(), quiescent,
                          self.now, roles)


def build_simulation(config: NetworkConfig | dict, adversary: AdversaryPolicy | dict | None = None) -> Simulation:
    if isinstance(config, dict):
        config = NetworkConfig.from_json(config)
    if isinstance(adversary, dict):
        adversary = AdversaryPolicy.from_json(adversary)
    return Simulation(config, adversary)


def send_classical(sim: Simulation, sender: str, recipient: str, msg: ProtocolMessage) -> None:
    if _pair(sender, recipient) not in sim.config.classical_links:
        raise NoLinkError(f"no classical link {sender} -> {recipient}")
    if msg.sender != sender or msg.recipient != recipient:
        raise ValueError("message endpoints do not match")
    sim.send(msg)


def send_quantum(sim: Simulation, sender: str, recipient: str, message: ProtocolMessage) -> None:
    if message.sender != sender or message.recipient != recipient:
        raise ValueError("message endpoints do not match")
    if message.kind is not Kind.QNOTE_TRANSFER:
        raise ValueError("only QNoteTransfer messages travel on quantum links")
    sim.send_quantum(message)


def run_until_quiescent(sim: Simulation, max_ticks: int = 1_000_000) -> Transcript:
    if max_ticks < 1:
        raise ValueError("max_ticks must be >= 1")
    return sim.transcript(sim.run(max_ticks))


def run_scenario(sim: Simulation, script: ScenarioScript | dict | list, max_ticks: int = 1_000_000) -> Transcript:
    if not isinstance(script, ScenarioScript):
        script = ScenarioScript.from_json(script)
    for a in script.actions:
        if a["op"] == "mint":
            sim._check_node(a["wallet"])
        else:
            sim._check_node(a["from"])
            sim._check_node(a["to"])
    for a in script.actions:
        sim.schedule_action(a)
    return run_until_quiescent(sim, max_ticks)


# ---------------------------------------------------------------------------
# Independent ledger fold over a transcript
# ---------------------------------------------------------------------------


@dataclass
class FoldReport:
    ia_active_value: int
    msb_custody: dict[str, int]
    losses: dict[str, int]
    conservation_ok: bool
    snapshot_agrees: bool
    double_custody: list[str]
    status_violations: list[str]
    authenticity_violations: list[str]
    ia_contact_in_transfers: list[str]
    confidentiality_violations: list[str]
    duplicate_quantum_deliveries: list[int]

    @property
    def custody_total(self) -> int:
        return sum(self.msb_custody.values())

    @property
    def injected_loss(self) -> int:
        return sum(self.losses.values())

    @property
    def ok(self) -> bool:
        return (self.conservation_ok and self.snapshot_agrees and not self.double_custody
                and not self.status_violations and not self.authenticity_violations
                and not self.ia_contact_in_transfers and not self.confidentiality_violations
                and not self.duplicate_quantum_deliveries)

    def problems(self) -> list[str]:
        out = []
        for name in ("double_custody", "status_violations", "authenticity_violations", "ia_contact_in_transfers",
                     "confidentiality_violations", "duplicate_quantum_deliveries"):
            if getattr(self, name):
                out.append(f"{name}: {getattr(self, name)[:5]}")
        if not self.conservation_ok:
            out.append("conservation")
        if not self.snapshot_agrees:
            out.append("snapshot disagrees with event log")
        return out

    def to_json(self) -> dict:
        return {"ia_active_value": self.ia_active_value, "msb_custody": self.msb_custody,
                "custody_total": self.custody_total, "losses": self.losses, "ok": self.ok,
                "problems": self.problems()}


_NEXT = {"pending": (None,), "activate": ("Pending",), "destroy": ("Active",)}
_STATUS = {"pending": "Pending", "activate": "Active", "destroy": "Destroyed"}


def fold(transcript: Transcript) -> FoldReport:
    """Recompute ledgers from the event log alone and check the system invariants."""
    roles = transcript.roles
    ia_ids = {i for i, r in roles.items() if r == "IA"}
    wallet_ids = {i for i, r in roles.items() if r == "Wallet"}
    status: dict[str, str] = {}
    value: dict[str, int] = {}
    where: dict[str, tuple[str, str]] = {}
    lost: dict[str, str] = {}
    cert_issued: set[str] = set()
    debited: set[str] = set()
    accounts: set[str] = set()
    processes: dict[str, str] = {}
    double, status_bad, auth_bad, ia_contact, conf_bad = [], [], [], [], []
    delivered_handles: dict[int, int] = defaultdict(int)

    for rec in transcript.records:
        ev = rec["event"]
        if ev == "action":
            processes[rec["correlation_id"]] = rec.get("process", "mint")
        elif ev == "ledger":
            op, serial = rec["op"], rec.get("serial")
            if op in _NEXT:
                if status.get(serial) not in _NEXT[op]:
                    status_bad.append(f"{serial}:{status.get(serial)}->{_STATUS[op]}")
                status[serial] = _STATUS[op]
                value[serial] = rec["value"]
            elif op == "credit":
                accounts.add(rec["account"])
                if status.get(serial) != "Active":
                    auth_bad.append(serial)
                if serial in where:
                    double.append(serial)
                where[serial] = (rec["node"], rec["account"])
                debited.discard(serial)
            elif op == "debit":
                if where.get(serial, (None,))[0] != rec["node"]:
                    double.append(serial)
                where.pop(serial, None)
                debited.add(serial)
            elif op == "loss":
                lost[serial] = rec.get("cause", "loss")
            elif op == "cert-issued":
                cert_issued.add(serial)
        elif ev == "send":
            msg = rec["message"]
            if msg["to"] in ia_ids:
                if processes.get(msg["correlation_id"], "").startswith("transfer"):
                    ia_contact.append(msg["correlation_id"])
        elif ev == "deliver":
            note = rec["message"]["payload"].get("note")
            if isinstance(note, dict) and note.get("quantum"):
                delivered_handles[note["handle"]] += 1

    # confidentiality needs the full account set, so scan IA-bound traffic afterwards
    secrets = wallet_ids | accounts
    for rec in transcript.records:
        if rec["event"] == "send" and rec["message"]["to"] in ia_ids:
            text = canonical_json(rec["message"]["payload"])
            leaked = sorted(s for s in secrets if f'"{s}"' in text)
            if leaked or rec["message"]["from"] in wallet_ids:
                conf_bad.append(rec["message"]["correlation_id"])

    active = {s for s, st in status.items() if st == "Active"}
    custody: dict[str, int] = defaultdict(int)
    for serial, (node, _) in where.items():
        custody[node] += value.get(serial, 0)
    losses = {"quantum-drop": 0, "invalid-discard": 0, "unsettled-cert": 0, "unclaimed-activation": 0,
              "in-flight": 0}
    for serial in sorted(active - set(where)):
        if serial in lost:
            losses[lost[serial] if lost[serial] in losses else "quantum-drop"] += value[serial]
        elif serial in cert_issued:
            losses["unsettled-cert"] += value[serial]
        elif serial in debited:
            losses["in-flight"] += value[serial]
        else:
            losses["unclaimed-activation"] += value[serial]
    custodied_inactive = [s for s in where if s not in active]
    ia_value = sum(value[s] for s in active)
    conservation = not custodied_inactive and ia_value - sum(custody.values()) == sum(losses.values())

    snap = transcript.ledger
    msb_roles = sorted(i for i, r in roles.items() if r in ("MSB", "QuantumWallet"))
    msb_custody = {m: custody.get(m, 0) for m in msb_roles}
    snapshot_agrees = (snap.get("ia_active_value") == ia_value
                       and all(snap["msbs"].get(m, {}).get("value", 0) == v for m, v in msb_custody.items())
                       and {s: st for s, st in snap.get("registry", {}).items()} == dict(sorted(status.items())))
    dup = sorted(h for h, c in delivered_handles.items() if c > 1)
    return FoldReport(ia_value, msb_custody, losses, conservation, snapshot_agrees, sorted(set(double)),
                      status_bad, sorted(set(auth_bad)), sorted(set(ia_contact)), sorted(set(conf_bad)), dup)


# ---------------------------------------------------------------------------
# Demo topology and fuzzing
# ---------------------------------------------------------------------------


def demo_config(seed: int = 2024, n: int = 8) -> NetworkConfig:
    """One IA, two MSBs and four wallets (alice, bob at msb-a; carol, dave at msb-b)."""
    wallets = {"alice": "msb-a", "bob": "msb-a", "carol": "msb-b", "dave": "msb-b"}
    nodes = [{"id": "ia", "role": "IA"}, {"id": "msb-a", "role": "MSB"}, {"id": "msb-b", "role": "MSB"}]
    nodes += [{"id": w, "role": "Wallet", "home_msb": m} for w, m in wallets.items()]
    links = [["ia", "msb-a"], ["ia", "msb-b"], ["msb-a", "msb-b"]]
    links += [[w, m] for w, m in wallets.items()]
    names = list(wallets)
    links += [[a, b] for i, a in enumerate(names) for b in names[i + 1:]]
    return NetworkConfig.from_json({"nodes": nodes, "classical_links": links,
                                    "quantum_links": [["msb-a", "msb-b"]], "seed": seed, "n": n})


def random_script(config: NetworkConfig, rng: np.random.Generator, n_actions: int,
                  ops=("mint", "pay", "intra-pay", "online-pay"), mint_share: float = 0.3,
                  stray_share: float = 0.15, settle_ticks: int = 20) -> ScenarioScript:
    """A random mix of mints and payments.

    The generator follows each note's expected owner, so most payments are
    legitimate and start ``settle_ticks`` after the previous step on that note.
    A ``stray_share`` of payments instead come from a random wallet referencing a
    random earlier step, which produces double-spend attempts and races.
    """
    if "mint" not in ops:
        raise ValueError("a random script needs mints to have notes to spend")
    wallets = [nd["id"] for nd in config.nodes if nd["role"] == "Wallet" and not nd.get("quantum")]
    home = {nd["id"]: nd.get("home_msb") for nd in config.nodes}
    pay_ops = [o for o in ops if o != "mint"]
    actions: list[dict] = []
    chains: list[dict] = []  # per note: last step id, expected owner, time it settles
    t = 0
    for i in range(n_actions):
        t += int(rng.integers(0, 4))
        aid = f"a{i}"
        if not chains or not pay_ops or rng.random() < mint_share:
            w = str(rng.choice(wallets))
            actions.append({"at": t, "id": aid, "op": "mint", "wallet": w, "value": int(rng.integers(1, 500))})
            chains.append({"last": aid, "owner": w, "ready": t + settle_ticks})
            continue
        op = str(rng.choice(pay_ops))
        if rng.random() < stray_share:
            payer = str(rng.choice(wallets))
            ref = str(rng.choice([a["id"] for a in actions]))
            at, chain = t, None
        else:
            chain = chains[int(rng.integers(len(chains)))]
            payer, ref, at = chain["owner"], chain["last"], max(t, chain["ready"])
        if op == "intra-pay":
            receiver = str(rng.choice([w for w in wallets if home[w] == home[payer]]))
        elif op == "pay":
            receiver = str(rng.choice([w for w in wallets if home[w] != home[payer]] or wallets))
        else:
            receiver = str(rng.choice(wallets))
        actions.append({"at": at, "id": aid, "op": op, "from": payer, "to": receiver, "serial_of": ref})
        if chain is not None:
            chain.update(last=aid, owner=receiver, ready=at + settle_ticks)
    return ScenarioScript(actions)
