import json

import numpy as np
import pytest

from qvault.netsim import (AdversaryPolicy, ConfigError, NetworkConfig, NoLinkError, NotOwnerError, QuantumRule,
                           ScenarioScript, ScriptError, Transcript, build_simulation, demo_config, fold,
                           random_script, run_scenario, run_until_quiescent, send_classical, send_quantum)
from qvault.vault import Kind, ProtocolMessage

MINT = {"at": 0, "id": "m1", "op": "mint", "wallet": "alice", "value": 100}


def cfg_dict(**over):
    d = demo_config(seed=11).to_json()
    d.update(over)
    return d


def test_demo_config_is_valid():
    cfg = demo_config()
    sim = build_simulation(cfg)
    assert sim.now == 0
    assert {w.node_id for w in sim.wallets} == {"alice", "bob", "carol", "dave"}


def test_small_topology_is_valid():
    d = {"nodes": [{"id": "ia", "role": "IA"}, {"id": "m1", "role": "MSB"}, {"id": "m2", "role": "MSB"},
                   {"id": "w1", "role": "Wallet", "home_msb": "m1"}, {"id": "w2", "role": "Wallet", "home_msb": "m2"}],
         "classical_links": [["ia", "m1"], ["ia", "m2"], ["w1", "m1"], ["w2", "m2"], ["w1", "w2"], ["m1", "m2"]],
         "quantum_links": [["m1", "m2"]]}
    tr = run_scenario(build_simulation(d), [{"at": 0, "id": "a", "op": "mint", "wallet": "w1", "value": 3},
                                            {"at": 10, "op": "pay", "from": "w1", "to": "w2", "serial_of": "a"}])
    assert tr.receipt_outcomes() == ["Completed", "Completed"]


@pytest.mark.parametrize("mutate", [
    lambda d: d["nodes"].append({"id": "ia2", "role": "IA"}),
    lambda d: d["quantum_links"].append(["alice", "msb-a"]),
    lambda d: d["nodes"].append({"id": "eve", "role": "Wallet", "home_msb": "nowhere"}),
    lambda d: d["nodes"].append({"id": "alice", "role": "MSB"}),
    lambda d: d["nodes"].append({"id": "x", "role": "Bank"}),
    lambda d: d["classical_links"].append(["alice", "ghost"]),
    lambda d: d["classical_links"].append(["alice", "bob", 0]),
    lambda d: d.update(seed=-1),
    lambda d: d.update(colour="blue"),
    lambda d: d["nodes"].append({"id": "qw", "role": "Wallet", "quantum": True}),
])
def test_config_violations(mutate):
    d = cfg_dict()
    mutate(d)
    with pytest.raises(ConfigError):
        NetworkConfig.from_json(d)


def test_quantum_wallet_needs_flag():
    d = cfg_dict(allow_quantum_wallets=True)
    d["nodes"].append({"id": "qw", "role": "Wallet", "quantum": True})
    d["quantum_links"].append(["qw", "msb-a"])
    d["classical_links"] += [["qw", "msb-a"], ["qw", "ia"], ["qw", "alice"]]
    sim = build_simulation(d)
    tr = run_scenario(sim, [{"at": 0, "id": "m", "op": "mint", "wallet": "qw", "value": 9},
                            {"at": 20, "op": "pay", "from": "qw", "to": "alice", "serial_of": "m"}])
    assert tr.receipt_outcomes() == ["Completed", "Completed"]
    rep = fold(tr)
    assert rep.ok and rep.msb_custody["msb-a"] == 9


def test_config_json_round_trip():
    cfg = demo_config()
    again = NetworkConfig.from_json(json.loads(json.dumps(cfg.to_json())))
    assert again.digest() == cfg.digest()


def test_empty_scenario_is_quiescent_at_zero():
    tr = run_scenario(build_simulation(demo_config()), {"actions": []})
    assert tr.quiescent and tr.final_tick == 0 and tr.receipts == []


def test_single_mint_scenario():
    tr = run_scenario(build_simulation(demo_config()), [MINT])
    assert tr.quiescent
    assert tr.receipt_outcomes() == ["Completed"]
    assert tr.ledger["ia_active_value"] == 100
    assert tr.ledger["wallet_balances"]["alice"] == 100


def test_same_seed_same_bytes():
    script = [MINT, {"at": 10, "op": "online-pay", "from": "alice", "to": "dave", "serial_of": "m1"}]
    a = run_scenario(build_simulation(demo_config(5)), script).to_bytes()
    b = run_scenario(build_simulation(demo_config(5)), script).to_bytes()
    c = run_scenario(build_simulation(demo_config(6)), script).to_bytes()
    assert a == b != c


def test_mint_then_pay():
    tr = run_scenario(build_simulation(demo_config()),
                      [MINT, {"at": 10, "op": "pay", "from": "alice", "to": "bob", "serial_of": "m1"}])
    assert tr.receipt_outcomes() == ["Completed", "Completed"]
    assert tr.receipts[1]["process"] == "transfer-intra"


def test_unowned_serial_leaves_ledgers_untouched():
    sim = build_simulation(demo_config())
    serial = run_scenario(sim, [MINT]).receipts[0]["serials"][-1]
    before = sim.ledger_snapshot()
    n_ledger = sum(r["event"] == "ledger" for r in sim.records)
    tr = run_scenario(sim, [{"at": 20, "op": "pay", "from": "carol", "to": "bob", "serial": serial}])
    assert tr.receipts[-1]["outcome"] == "Error" and tr.receipts[-1]["reason"] == "not-in-custody"
    assert tr.ledger == before
    assert sum(r["event"] == "ledger" for r in tr.records) == n_ledger


def test_duplicate_rule_delivers_twice_and_is_deduplicated():
    adv = {"classical": [{"match": {"kind": "MintRequest"}, "action": "duplicate"},
                         {"match": {"kind": "FinalPk"}, "action": "duplicate"}]}
    sim = build_simulation(demo_config(), adv)
    tr = run_scenario(sim, [MINT])
    delivers = [r for r in tr.records if r["event"] == "deliver" and r["message"]["kind"] == "MintRequest"]
    assert len(delivers) == 4
    assert tr.receipt_outcomes() == ["Completed"]
    assert sim.ia.counters["minted"] == 1
    assert fold(tr).ok


def test_delay_rule_shifts_time():
    base = run_scenario(build_simulation(demo_config()), [MINT])
    adv = {"classical": [{"match": {"kind": "FinalPk"}, "action": "delay", "ticks": 5}]}
    slow = run_scenario(build_simulation(demo_config(), adv), [MINT])
    assert slow.final_tick == base.final_tick + 5
    assert slow.receipt_outcomes() == ["Completed"]


def test_drop_final_pk_times_out_and_is_accounted():
    adv = {"classical": [{"match": {"kind": "FinalPk"}, "action": "drop"}]}
    tr = run_scenario(build_simulation(cfg_dict(deadline=50), adv), [MINT])
    assert tr.receipt_outcomes() == ["Timeout"]
    rep = fold(tr)
    assert rep.conservation_ok and rep.losses["unclaimed-activation"] == 100
    assert rep.ia_active_value - rep.custody_total == rep.injected_loss


def test_quantum_drop_is_logged_as_loss():
    adv = {"quantum": [{"match": {"from": "msb-a"}, "action": "drop"}]}
    script = [MINT, {"at": 10, "op": "pay", "from": "alice", "to": "carol", "serial_of": "m1"}]
    tr = run_scenario(build_simulation(cfg_dict(deadline=40), adv), script)
    assert tr.receipt_outcomes() == ["Completed", "Timeout"]
    assert any(r["event"] == "quantum-drop" for r in tr.records)
    rep = fold(tr)
    assert rep.losses["quantum-drop"] == 100
    assert rep.ok and rep.ia_active_value == 100 and rep.custody_total == 0


def test_quantum_duplicate_is_unrepresentable():
    with pytest.raises(ConfigError):
        QuantumRule({"kind": "QNoteTransfer"}, "duplicate")
    with pytest.raises(ConfigError):
        AdversaryPolicy.from_json({"quantum": [{"match": {}, "action": "delay"}]})


def test_quantum_send_moves_ownership():
    sim = build_simulation(demo_config())
    run_scenario(sim, [MINT])
    serial, stored = next(iter(sim.nodes["msb-a"].vault_storage.items()))
    msg = ProtocolMessage(Kind.QNOTE_TRANSFER, "msb-a", "msb-b", "manual",
                          {"note": stored.note, "pk": stored.pk, "to_account": "nobody", "value": 100})
    send_quantum(sim, "msb-a", "msb-b", msg)
    assert not stored.note.state.live
    with pytest.raises(NotOwnerError):
        send_quantum(sim, "msb-a", "msb-b", msg)
    with pytest.raises(NoLinkError):
        send_quantum(sim, "msb-a", "ia", ProtocolMessage(Kind.QNOTE_TRANSFER, "msb-a", "ia", "x", msg.payload))


def test_classical_send_needs_link():
    sim = build_simulation(demo_config())
    with pytest.raises(NoLinkError):
        send_classical(sim, "alice", "ia", ProtocolMessage(Kind.MINT_REQUEST, "alice", "ia", "x", {"value": 1}))


def test_budget_exhaustion_flags_non_quiescent():
    sim = build_simulation(demo_config())
    for a in ScenarioScript([MINT]).actions:
        sim.schedule_action(a)
    tr = run_until_quiescent(sim, max_ticks=2)
    assert not tr.quiescent
    with pytest.raises(ValueError):
        run_until_quiescent(sim, 0)


def test_script_validation():
    bad = [
        [{"op": "fly"}],
        [{"op": "mint", "wallet": "alice"}],
        [{"op": "mint", "wallet": "alice", "value": 0}],
        [{"op": "pay", "from": "alice", "to": "bob"}],
        [{"op": "pay", "from": "alice", "to": "bob", "serial_of": "missing"}],
        [{"op": "mint", "wallet": "alice", "value": 1, "at": -1}],
        [dict(MINT), dict(MINT)],
    ]
    for actions in bad:
        with pytest.raises(ScriptError):
            ScenarioScript.from_json({"actions": actions})
    with pytest.raises(ScriptError):
        run_scenario(build_simulation(demo_config()), [{"op": "mint", "wallet": "zed", "value": 1}])


def test_causality_and_single_delivery_of_handles():
    cfg = demo_config(3)
    script = random_script(cfg, np.random.default_rng(3), 60)
    tr = run_scenario(build_simulation(cfg), script)
    sent = []
    for r in tr.records:
        if r["event"] == "send":
            sent.append(json.dumps(r["message"], sort_keys=True))
        elif r["event"] == "deliver":
            key = json.dumps(r["message"], sort_keys=True)
            assert key in sent
            sent.remove(key)
    assert fold(tr).duplicate_quantum_deliveries == []
    times = [(r["t"], r["seq"]) for r in tr.records]
    assert times == sorted(times)


def test_transcript_round_trip(tmp_path):
    cfg = demo_config(4)
    tr = run_scenario(build_simulation(cfg), random_script(cfg, np.random.default_rng(4), 40))
    path = tmp_path / "t.jsonl"
    tr.write(path)
    again = Transcript.read(path)
    assert again.to_bytes() == tr.to_bytes()
    assert fold(again).to_json() == fold(tr).to_json()


@pytest.mark.parametrize("seed", range(8))
def test_fuzz_conservation(seed):
    cfg = demo_config(seed)
    tr = run_scenario(build_simulation(cfg), random_script(cfg, np.random.default_rng(seed), 120))
    rep = fold(tr)
    assert tr.quiescent and rep.ok, rep.problems()
    rejected = sum(r["amounts"][0] for r in tr.receipts if r["outcome"].startswith("Rejected") and r["amounts"])
    assert rep.ia_active_value - rep.custody_total == rejected


def test_pure_transfers_never_reach_the_ia():
    cfg = demo_config(9)
    script = random_script(cfg, np.random.default_rng(9), 150, ops=("mint", "pay", "intra-pay"))
    tr = run_scenario(build_simulation(cfg), script)
    transfer_cids = {r["correlation_id"] for r in tr.records
                     if r["event"] == "action" and r.get("process", "mint") != "mint"}
    assert transfer_cids
    to_ia = [r for r in tr.records if r["event"] == "send" and r["message"]["to"] == "ia"]
    assert to_ia and not [r for r in to_ia if r["message"]["correlation_id"] in transfer_cids]


def test_fold_detects_tampered_log():
    cfg = demo_config(10)
    tr = run_scenario(build_simulation(cfg), [MINT])
    credit = next(r for r in tr.records if r["event"] == "ledger" and r["op"] == "credit")
    forged = dict(credit, node="msb-b", seq=10_000)
    tr.records.append(forged)
    rep = fold(tr)
    assert not rep.ok and rep.double_custody


def test_fold_detects_backwards_status():
    tr = run_scenario(build_simulation(demo_config()), [MINT])
    act = next(r for r in tr.records if r["event"] == "ledger" and r["op"] == "activate")
    tr.records.append(dict(act, op="pending", seq=10_000))
    assert fold(tr).status_violations


def test_fold_detects_leak_to_ia():
    tr = run_scenario(build_simulation(demo_config()), [MINT])
    send = next(r for r in tr.records if r["event"] == "send" and r["message"]["to"] == "ia")
    leaked = json.loads(json.dumps(send))
    leaked["message"]["payload"]["who"] = "alice"
    tr.records.append(leaked)
    assert fold(tr).confidentiality_violations


def test_stale_timeouts_do_not_advance_time():
    tr = run_scenario(build_simulation(demo_config()), [MINT])
    assert tr.final_tick < 1000
    assert not any(r["event"] == "timeout" for r in tr.records)
