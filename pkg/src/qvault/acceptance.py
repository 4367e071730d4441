"""End-to-end acceptance checks, shared by the CLI and the test suite."""
from __future__ import annotations

import time
from dataclasses import dataclass
from importlib import resources
from typing import Callable

import json
import numpy as np

from . import attacks, money
from .netsim import ScenarioScript, NetworkConfig, build_simulation, demo_config, fold, random_script, run_scenario
from .qsim import Basis, ConsumedStateError, QuantumEngine, shannon_entropy
from .vault import Kind, VaultSystem, process_on_demand_mint, process_online_payment

DEFAULT_SEED = 20240611
NAMED_SCENARIOS = ("happy_path", "double_spend", "online_pay")


@dataclass(frozen=True)
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    runtime: float

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.number:2d} {self.name:<28s} {self.runtime:7.2f}s  {self.detail}"


def _seed(base: int, k: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([base, k])


def load_data(name: str):
    return json.loads(resources.files("qvault").joinpath("data", name).read_text())


def named_scenario(name: str) -> tuple[NetworkConfig, ScenarioScript]:
    return NetworkConfig.from_json(load_data("demo_config.json")), ScenarioScript.from_json(load_data(f"{name}.json"))


# ---------------------------------------------------------------------------


def optimal_bound(seed: int, trials: int = 100_000) -> tuple[bool, str]:
    res = attacks.optimize_cloner()
    mc = attacks.run_counterfeit_experiment(res.attack, 1, trials, seed)
    exact4 = attacks.exact_success(res.attack, 4)
    ok = (0.7495 <= res.achieved <= 0.7510 and abs(mc.estimated_rate - 0.75) <= 0.005
          and abs(exact4 - 0.75 ** 4) <= 2e-3)
    return ok, (f"optimizer={res.achieved:.6f} MC(n=1,{trials})={mc.estimated_rate:.4f} "
                f"exact(n=4)={exact4:.6f}")


def attack_hierarchy(seed: int, trials: int = 20_000) -> tuple[bool, str]:
    ok, parts = True, []
    for k, (attack, expected) in enumerate([(attacks.attack_keep_and_fabricate(), 0.5),
                                            (attacks.attack_measure_random_basis(), 0.625)]):
        p = attacks.exact_success(attack, 1)
        mc = attacks.run_counterfeit_experiment(attack, 1, trials, seed + k)
        ok &= abs(p - expected) <= 1e-9 and mc.deviation <= 5
        parts.append(f"{attack.name}: exact={p:.12f} MC={mc.estimated_rate:.4f} ({mc.deviation:.2f} se)")
    return ok, "; ".join(parts)


def wiesner_correctness(seed: int, rounds: int = 10_000, n: int = 16) -> tuple[bool, str]:
    engine = QuantumEngine(rng=np.random.default_rng(_seed(seed, 3)))
    bank = money.WiesnerBank(n, engine.rng)
    passed = 0
    for _ in range(rounds):
        note = money.wiesner_mint(bank, engine)
        ok, _ = money.wiesner_verify(bank, engine, note.serial, note.state)
        passed += ok
    return passed == rounds, f"{passed}/{rounds} honest notes accepted at n={n}"


def uncertainty_relation(seed: int, states: int = 10_000) -> tuple[bool, str]:
    engine = QuantumEngine(rng=np.random.default_rng(_seed(seed, 4)), test_mode=True)
    rng = engine.rng
    worst = np.inf
    for _ in range(states):
        psi = rng.normal(size=2) + 1j * rng.normal(size=2)
        h = engine.prepare_state(psi / np.linalg.norm(psi))
        total = (shannon_entropy(engine.outcome_distribution(h, Basis.COMPUTATIONAL))
                 + shannon_entropy(engine.outcome_distribution(h, Basis.DIAGONAL)))
        worst = min(worst, total)
    equality = []
    for basis in Basis:
        for bit in (0, 1):
            h = engine.prepare_bb84([bit], [basis])
            equality.append(shannon_entropy(engine.outcome_distribution(h, Basis.COMPUTATIONAL))
                            + shannon_entropy(engine.outcome_distribution(h, Basis.DIAGONAL)))
    eq_err = max(abs(e - 1.0) for e in equality)
    return worst >= 1 - 1e-9 and eq_err <= 1e-9, f"min H(P)+H(Q)={worst:.9f}; basis-state error={eq_err:.1e}"


def _mint_pipeline(engine: QuantumEngine, rng, n: int = 8):
    pk, sk = money.gen(money.SchemeParams(n), rng)
    _, instr = money.bank_mint(sk, 100, rng)
    note, ack = money.rec_mint(engine, pk, instr, "msb")
    return sk, money.finalize_mint(sk, ack), note


def public_key_correctness(seed: int, runs: int = 1000) -> tuple[bool, str]:
    engine = QuantumEngine(rng=np.random.default_rng(_seed(seed, 5)))
    passed = 0
    for _ in range(runs):
        _, pk, note = _mint_pipeline(engine, engine.rng)
        ok, _ = money.qv(engine, pk, note)
        passed += ok
    return passed == runs, f"{passed}/{runs} honest notes pass qv at n=8"


def sabotage_resistance(seed: int, notes: int = 100, repeats: int = 100) -> tuple[bool, str]:
    engine = QuantumEngine(rng=np.random.default_rng(_seed(seed, 6)))
    passed = 0
    for _ in range(notes):
        _, pk, note = _mint_pipeline(engine, engine.rng)
        streak = 0
        for _ in range(repeats):
            ok, note = money.qv(engine, pk, note)
            if not ok:
                break
            streak += 1
        passed += streak == repeats
    return passed == notes, f"{passed}/{notes} notes passed {repeats} consecutive verifications"


def mutual_exclusivity(seed: int, payments: int = 1000) -> tuple[bool, str]:
    system = VaultSystem(8, _seed(seed, 7))
    system.add_msb("msb-a")
    system.add_msb("msb-b")
    system.add_wallet("alice", "msb-a")
    system.add_wallet("carol", "msb-b")
    handle_errors = replay_rejected = completed = 0
    for _ in range(payments):
        serial = process_on_demand_mint(system, "alice", 10).serials[0]
        stored = system.nodes["msb-a"].vault_storage[serial]
        handle = stored.note.state
        receipt = process_online_payment(system, "alice", "carol", serial)
        completed += receipt.outcome.value == "Completed"
        try:
            money.qv(system.engine, stored.pk, money.QuantumBanknote(serial, 10, handle))
        except ConsumedStateError:
            handle_errors += 1
        cert = next(m.payload["cert"] for m in reversed(system.delivered) if m.kind is Kind.DESTROY_CERT)
        replay_rejected += not money.cv(system.ia.secret_key, cert)
    ok = handle_errors == payments and replay_rejected == payments
    return ok, (f"old handle errors {handle_errors}/{payments}; replayed cert rejected "
                f"{replay_rejected}/{payments}; payments completed {completed}")


def forgery_rejection(seed: int, trials: int = 10_000, n: int = 8) -> tuple[bool, str]:
    engine = QuantumEngine(rng=np.random.default_rng(_seed(seed, 8)))
    _, pk, note = _mint_pipeline(engine, engine.rng, n)
    engine.discard(note.state)
    everything = np.ones(2 ** n) / np.sqrt(2 ** n)
    passes = 0
    for _ in range(trials):
        ok, st = money.qv(engine, pk, money.QuantumBanknote(pk.serial, pk.value, engine.prepare_state(everything)))
        passes += ok
    rate, p = passes / trials, 2 ** (n // 2) / 2 ** n
    se = np.sqrt(p * (1 - p) / trials)
    outside = [x for x in range(2 ** n) if not pk.oracle_a(x)]
    rejected = 0
    for x in outside:
        ok, _ = money.qv(engine, pk, money.QuantumBanknote(pk.serial, pk.value, engine.prepare_basis_state(x, n)))
        rejected += not ok
    ok = abs(rate - p) <= 5 * se and rejected == len(outside)
    return ok, (f"uniform forgeries pass {rate:.4f} (expect {p:.4f} +/- {5 * se:.4f}); "
                f"basis forgeries outside A rejected {rejected}/{len(outside)}")


def conservation(seed: int, scenarios: int = 100, max_actions: int = 200) -> tuple[bool, str]:
    cfg = demo_config()
    failures = []
    lossy = 0
    for k in range(scenarios):
        rng = np.random.default_rng(_seed(seed, 900 + k))
        ops = ("mint", "pay", "intra-pay") if k % 4 == 0 else ("mint", "pay", "intra-pay", "online-pay")
        script = random_script(cfg, rng, int(rng.integers(1, max_actions + 1)), ops=ops)
        tr = run_scenario(build_simulation(cfg.with_seed(int(rng.integers(2 ** 63)))), script)
        rep = fold(tr)
        rejected = sum(r["amounts"][0] for r in tr.receipts
                       if r["outcome"] in ("RejectedCert", "RejectedInvalidNote") and r["amounts"])
        lossy += rejected > 0
        balanced = rep.ia_active_value - rep.custody_total == rejected == rep.injected_loss
        if not (tr.quiescent and rep.ok and balanced):
            failures.append((k, rep.problems(), rep.ia_active_value, rep.custody_total, rejected))
    return not failures, (f"{scenarios - len(failures)}/{scenarios} scenarios balanced "
                          f"({lossy} with rejected-cert losses accounted){'; ' + str(failures[:3]) if failures else ''}")


def determinism(seed: int, repeats: int = 10) -> tuple[bool, str]:
    stable = []
    for name in NAMED_SCENARIOS:
        cfg, script = named_scenario(name)
        outputs = {run_scenario(build_simulation(cfg), script).to_bytes() for _ in range(repeats)}
        stable.append(len(outputs) == 1)
    return all(stable), ", ".join(f"{n}={'stable' if s else 'DIFFERS'}" for n, s in zip(NAMED_SCENARIOS, stable))


CRITERIA: list[tuple[str, Callable[[int], tuple[bool, str]]]] = [
    ("optimal counterfeiting bound", optimal_bound),
    ("attack hierarchy", attack_hierarchy),
    ("wiesner correctness", wiesner_correctness),
    ("uncertainty relation", uncertainty_relation),
    ("public-key correctness", public_key_correctness),
    ("sabotage resistance", sabotage_resistance),
    ("mutual exclusivity", mutual_exclusivity),
    ("forgery rejection", forgery_rejection),
    ("conservation and custody", conservation),
    ("determinism", determinism),
]


def run_criterion(number: int, seed: int = DEFAULT_SEED) -> CriterionResult:
    name, fn = CRITERIA[number - 1]
    start = time.perf_counter()
    try:
        passed, detail = fn(seed)
    except Exception as exc:  # a crash is a failed criterion, reported not raised
        passed, detail = False, f"error: {type(exc).__name__}: {exc}"
    return CriterionResult(number, name, bool(passed), detail, time.perf_counter() - start)


def run_all(seed: int = DEFAULT_SEED, report: Callable[[CriterionResult], None] | None = None) -> list[CriterionResult]:
    results = []
    for i in range(1, len(CRITERIA) + 1):
        r = run_criterion(i, seed)
        if report is not None:
            report(r)
        results.append(r)
    return results
