import numpy as np
import pytest

from qvault import money
from qvault.money import DestructionCert, MintAck, QuantumBanknote, Status
from qvault.qsim import StateHandle
from qvault.vault import (Kind, Outcome, ProtocolMessage, VaultSystem, ia_total_active_value,
                          msb_total_custody_value, process_on_demand_mint, process_online_payment,
                          process_transfer_inter_msb, process_transfer_intra_msb, wallet_balance)


def make_system(seed=0, n=8):
    s = VaultSystem(n, seed)
    s.add_msb("msb-a")
    s.add_msb("msb-b")
    for w, m in [("alice", "msb-a"), ("bob", "msb-a"), ("carol", "msb-b"), ("dave", "msb-b")]:
        s.add_wallet(w, m)
    return s


def totals(s):
    return ia_total_active_value(s.ia), [msb_total_custody_value(m) for m in s.msbs]


def ia_messages(s, cids=None):
    return [m for m in s.delivered if m.recipient == s.ia.node_id and (cids is None or m.correlation_id in cids)]


def test_fresh_system_is_empty():
    s = make_system()
    assert totals(s) == (0, [0, 0])
    assert all(wallet_balance(w) == 0 for w in s.wallets)


def test_mint_happy_path():
    s = make_system()
    r = process_on_demand_mint(s, "alice", 100)
    assert r.outcome is Outcome.COMPLETED and r.amounts == (100,)
    serial = r.serials[0]
    assert s.ia.registry[serial].status is Status.ACTIVE
    assert totals(s) == (100, [100, 0])
    assert wallet_balance(s.nodes["alice"]) == 100
    msb = s.nodes["msb-a"]
    assert serial in msb.custody[s.nodes["alice"].account]
    assert set(msb.vault_storage) == {serial}
    ok, _ = money.qv(s.engine, msb.vault_storage[serial].pk, msb.vault_storage[serial].note)
    assert ok


def test_mint_rejects_bad_value():
    s = make_system()
    with pytest.raises(ValueError):
        process_on_demand_mint(s, "alice", 0)


def test_mint_with_tampered_ack():
    s = make_system()

    def tamper(msg):
        if msg.kind is Kind.ACK_CIPHER:
            ack = msg.payload["ack"]
            msg.payload["ack"] = MintAck(ack.serial, ack.vault_id, "0" * 64)
        return msg

    s.interceptor = tamper
    r = process_on_demand_mint(s, "alice", 100)
    assert r.outcome is Outcome.REJECTED_CERT
    (note,) = s.ia.registry.values()
    assert note.status is Status.PENDING
    assert totals(s) == (0, [0, 0])
    assert not s.nodes["msb-a"].vault_storage


def test_concurrent_mints_distinct():
    s = make_system()
    c1 = s.start_mint("alice", 100)
    c2 = s.start_mint("carol", 50)
    s.run()
    r1, r2 = s.receipt(c1), s.receipt(c2)
    assert r1.outcome is r2.outcome is Outcome.COMPLETED
    assert r1.serials[0] != r2.serials[0]
    assert all(s.ia.registry[x.serials[0]].status is Status.ACTIVE for x in (r1, r2))
    assert totals(s) == (150, [100, 50])


def test_instruction_is_erased_after_minting():
    s = make_system()
    process_on_demand_mint(s, "alice", 100)
    instructions = [m.payload["instruction"] for m in s.delivered if m.kind is Kind.CLASSICAL_NOTE]
    assert instructions and all(i.consumed and i.ack_key is None for i in instructions)


def test_inter_transfer_happy_path():
    s = make_system(1)
    serial = process_on_demand_mint(s, "alice", 100).serials[0]
    start = len(s.delivered)
    r = process_transfer_inter_msb(s, "alice", "carol", serial)
    assert r.outcome is Outcome.COMPLETED
    carol = s.nodes["carol"]
    assert serial in s.nodes["msb-b"].custody[carol.account]
    assert serial not in s.nodes["msb-a"].vault_storage
    assert totals(s) == (100, [0, 100])
    assert wallet_balance(carol) == 100 and wallet_balance(s.nodes["alice"]) == 0
    stored = s.nodes["msb-b"].vault_storage[serial]
    ok, _ = money.qv(s.engine, stored.pk, stored.note)
    assert ok
    assert not [m for m in s.delivered[start:] if m.recipient == "ia"]


def test_inter_transfer_double_spend():
    s = make_system(2)
    serial = process_on_demand_mint(s, "alice", 100).serials[0]
    process_transfer_inter_msb(s, "alice", "carol", serial)
    before = (totals(s), list(s.ledger_log))
    r = process_transfer_inter_msb(s, "alice", "dave", serial)
    assert r.outcome is Outcome.ERROR and r.reason == "not-in-custody"
    assert (totals(s), s.ledger_log) == before


def test_inter_transfer_requires_two_msbs():
    s = make_system()
    serial = process_on_demand_mint(s, "alice", 100).serials[0]
    with pytest.raises(ValueError):
        process_transfer_inter_msb(s, "alice", "bob", serial)


def substitute_zero_state(system):
    def swap(msg):
        if msg.kind is Kind.QNOTE_TRANSFER:
            note = msg.payload["note"]
            system.engine.discard(note.state)
            msg.payload["note"] = QuantumBanknote(note.serial, note.value,
                                                  system.engine.prepare_basis_state(0, note.state.n))
        return msg
    return swap


def test_substituted_state_is_rejected():
    s = make_system(3)
    s.interceptor = substitute_zero_state(s)
    rejected, trials = 0, 200
    for _ in range(trials):
        serial = process_on_demand_mint(s, "alice", 10).serials[0]
        r = process_transfer_inter_msb(s, "alice", "carol", serial)
        if r.outcome is Outcome.REJECTED_INVALID_NOTE:
            rejected += 1
            assert serial not in s.nodes["msb-b"].vault_storage
            assert s.ledger_log[-1]["op"] == "loss"
    # |0..0> passes the A projection surely and the dual projection w.p. 2^-4
    p = 1 - 2**-4
    assert abs(rejected / trials - p) < 5 * np.sqrt(p * (1 - p) / trials)
    losses = sum(e["value"] for e in s.ledger_log if e["op"] == "loss")
    ia, custody = totals(s)
    assert ia - sum(custody) == losses


def test_intra_transfer():
    s = make_system(4)
    serial = process_on_demand_mint(s, "alice", 100).serials[0]
    msb = s.nodes["msb-a"]
    handle = msb.vault_storage[serial].note.state
    r = process_transfer_intra_msb(s, "alice", "bob", serial)
    assert r.outcome is Outcome.COMPLETED
    assert msb.vault_storage[serial].note.state is handle
    assert serial in msb.custody[s.nodes["bob"].account]
    assert wallet_balance(s.nodes["bob"]) == 100


def test_intra_self_transfer_and_unknown_serial():
    s = make_system(5)
    serial = process_on_demand_mint(s, "alice", 100).serials[0]
    r = process_transfer_intra_msb(s, "alice", "alice", serial)
    assert r.outcome is Outcome.COMPLETED
    assert wallet_balance(s.nodes["alice"]) == 100
    assert totals(s) == (100, [100, 0])
    r = process_transfer_intra_msb(s, "alice", "bob", "no-such-serial")
    assert r.outcome is Outcome.ERROR and r.reason == "not-in-custody"


def test_online_payment_happy_path():
    s = make_system(6)
    old = process_on_demand_mint(s, "alice", 100).serials[0]
    r = None
    for _ in range(5):  # v = 0 happens with probability 1/16; retry with fresh notes
        r = process_online_payment(s, "alice", "carol", old)
        if r.outcome is Outcome.COMPLETED:
            break
        old = process_on_demand_mint(s, "alice", 100).serials[0]
    assert r.outcome is Outcome.COMPLETED
    new = r.serials[-1]
    assert s.ia.registry[old].status is Status.DESTROYED
    assert s.ia.registry[new].status is Status.ACTIVE
    assert new in s.nodes["msb-b"].vault_storage
    ia, custody = totals(s)
    rejected = sum(x.amounts[0] for x in s.receipts.values() if x.outcome is Outcome.REJECTED_CERT)
    assert ia - sum(custody) == rejected


def test_online_payment_replay_rejected():
    s = make_system(7)
    serial = process_on_demand_mint(s, "alice", 100).serials[0]
    process_online_payment(s, "alice", "carol", serial)
    cert = next(m.payload["cert"] for m in s.delivered if m.kind is Kind.DESTROY_CERT)
    minted = s.ia.counters["minted"]
    replay = ProtocolMessage(Kind.DESTROY_CONFIRM_REQUEST, "msb-b", "ia", "replay-1", {"cert": cert})
    s.send(replay)
    s.run()
    errors = [m for m in s.delivered if m.correlation_id == "replay-1" and m.kind is Kind.ERROR]
    assert errors and errors[0].payload["reason"].startswith("cert:")
    assert s.ia.counters["minted"] == minted
    assert not money.cv(s.ia.secret_key, cert)


def test_online_payment_zero_witness():
    s = make_system(8)
    serial = process_on_demand_mint(s, "alice", 100).serials[0]

    def zero(msg):
        if msg.kind is Kind.DESTROY_CERT:
            c = msg.payload["cert"]
            msg.payload["cert"] = DestructionCert(c.serial, 0, c.n)
        return msg

    s.interceptor = zero
    r = process_online_payment(s, "alice", "carol", serial)
    assert r.outcome is Outcome.REJECTED_CERT
    assert s.ia.registry[serial].status is Status.ACTIVE
    assert totals(s) == (100, [0, 0])
    assert any(e["op"] == "cert-issued" for e in s.ledger_log)


def test_online_payment_consumes_old_handle():
    s = make_system(9)
    serial = process_on_demand_mint(s, "alice", 100).serials[0]
    handle = s.nodes["msb-a"].vault_storage[serial].note.state
    process_online_payment(s, "alice", "bob", serial)
    assert not handle.live


def test_unauthorized_command():
    s = make_system()
    serial = process_on_demand_mint(s, "alice", 100).serials[0]
    s.nodes["alice"].token = "forged"
    r = process_transfer_inter_msb(s, "alice", "carol", serial)
    assert r.outcome is Outcome.ERROR and r.reason == "unauthorized"
    assert totals(s) == (100, [100, 0])


def test_ia_never_sees_wallet_identities():
    s = make_system(10)
    a = process_on_demand_mint(s, "alice", 100).serials[0]
    process_online_payment(s, "alice", "carol", a)
    b = process_on_demand_mint(s, "bob", 7).serials[0]
    process_transfer_inter_msb(s, "bob", "dave", b)
    secrets = {w.node_id for w in s.wallets} | {w.account for w in s.wallets}
    for m in ia_messages(s):
        text = repr(m.to_json())
        assert not any(f"'{x}'" in text for x in secrets)
        assert m.sender in {"msb-a", "msb-b"}


def test_wallets_hold_no_quantum_state():
    s = make_system(11)
    serial = process_on_demand_mint(s, "alice", 100).serials[0]
    process_transfer_inter_msb(s, "alice", "carol", serial)
    for w in s.wallets:
        for value in vars(w).values():
            assert not isinstance(value, (StateHandle, QuantumBanknote))
        assert all(isinstance(k, str) and isinstance(v, int) for k, v in w.holdings.items())


def test_quantum_wallet_runs_the_same_protocols():
    s = make_system(12)
    qw = s.add_quantum_wallet("qw")
    r = process_on_demand_mint(s, "qw", 40)
    assert r.outcome is Outcome.COMPLETED
    serial = r.serials[0]
    assert serial in qw.vault_storage
    r = process_transfer_inter_msb(s, "qw", "alice", serial)
    assert r.outcome is Outcome.COMPLETED
    assert serial in s.nodes["msb-a"].vault_storage
    back = process_transfer_inter_msb(s, "alice", "qw", serial)
    assert back.outcome is Outcome.COMPLETED and qw.holdings == {serial: 40}


def test_custody_matches_storage():
    s = make_system(13)
    for v in (5, 6, 7):
        serial = process_on_demand_mint(s, "alice", v).serials[0]
        process_transfer_inter_msb(s, "alice", "carol", serial)
    for msb in s.msbs:
        held = [x for serials in msb.custody.values() for x in serials]
        assert sorted(held) == sorted(msb.vault_storage)
        assert len(held) == len(set(held))


def test_duplicate_delivery_is_ignored():
    s = make_system(14)
    seen = []

    def duplicate(msg):
        seen.append(msg)
        return msg

    s.interceptor = duplicate
    r = process_on_demand_mint(s, "alice", 100)
    for m in list(seen):
        if m.kind is not Kind.QNOTE_TRANSFER:
            s.nodes[m.recipient].on_message(m, s)
    s.run()
    assert r.outcome is Outcome.COMPLETED
    assert totals(s) == (100, [100, 0])
    assert s.ia.counters["minted"] == 1
