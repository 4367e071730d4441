import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qvault import attacks
from qvault.attacks import (AttackChannel, ChoiMatrix, attack_keep_and_fabricate, attack_measure_random_basis,
                            exact_success, optimize_cloner, per_qubit_success, run_counterfeit_experiment)
from qvault.qsim import KrausChannel, identity_channel


@pytest.fixture(scope="module")
def optimal():
    return optimize_cloner()


def random_attack(seed: int, rank: int = 3) -> AttackChannel:
    """A random 1 -> 2 qubit channel from a random isometry C^2 -> C^(4 rank)."""
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(4 * rank, 2)) + 1j * rng.normal(size=(4 * rank, 2))
    V, _ = np.linalg.qr(m)
    ops = tuple(V[4 * k:4 * (k + 1)] for k in range(rank))
    return AttackChannel("random", KrausChannel(ops))


def choi_route(attack: AttackChannel) -> float:
    return float(np.real(np.trace(attack.channel.choi() @ attacks.success_operator())))


def test_fabricate_values():
    a = attack_keep_and_fabricate()
    # per input: |0>,|1>,|+>,|-> pass both copies with 1, 0, 1/2, 1/2
    assert abs(exact_success(a, 1) - (1 + 0 + 0.5 + 0.5) / 4) < 1e-12
    assert abs(exact_success(a, 4) - 0.0625) < 1e-12


def test_random_basis_values():
    a = attack_measure_random_basis()
    assert abs(exact_success(a, 1) - (0.5 * 1 + 0.5 * 0.25)) < 1e-12
    assert abs(exact_success(a, 4) - 0.152587890625) < 1e-12
    assert abs(exact_success(a, 2) - 0.390625) < 1e-12


def test_empty_product():
    assert exact_success(random_attack(0), 0) == 1.0


def test_channels_are_trace_preserving():
    for a in (attack_keep_and_fabricate(), attack_measure_random_basis()):
        total = sum(K.conj().T @ K for K in a.channel.kraus_ops)
        assert np.abs(total - np.eye(2)).max() < 1e-7


def test_exact_success_rejects_non_product_attacks():
    with pytest.raises(TypeError):
        exact_success(attack_keep_and_fabricate().channel, 1)
    with pytest.raises(ValueError):
        AttackChannel("wrong shape", identity_channel())


def test_random_basis_output_is_a_state():
    from qvault.qsim import DensityMatrix, apply_channel
    out = apply_channel(DensityMatrix.from_vector(np.array([1, 0])), attack_measure_random_basis().channel)
    assert abs(np.trace(out.matrix) - 1) < 1e-12
    assert np.linalg.eigvalsh(out.matrix).min() > -1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_choi_route_agrees_with_direct_route(seed, rank):
    a = random_attack(seed, rank)
    assert abs(choi_route(a) - per_qubit_success(a)) < 1e-10


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_no_channel_beats_three_quarters(seed, rank):
    assert per_qubit_success(random_attack(seed, rank)) <= 0.75 + 1e-3


def test_optimizer_reaches_bound(optimal):
    assert abs(optimal.achieved - 0.75) < 5e-4
    assert 0.7495 <= optimal.achieved <= 0.7510
    assert optimal.converged
    assert abs(exact_success(optimal.attack, 4) - 0.31640625) < 2e-3


def test_optimizer_channel_is_valid(optimal):
    choi = ChoiMatrix(optimal.attack.channel.choi())
    assert choi.psd_violation <= 1e-7
    assert choi.trace_violation <= 1e-6
    assert abs(choi_route(optimal.attack) - optimal.achieved) < 1e-9


def test_optimizer_monotone_and_bounded():
    seen = []
    res = optimize_cloner(callback=lambda J, v: seen.append((J, v)))
    hist = np.array(res.history)
    assert np.all(np.diff(hist) >= -1e-9)
    for J, v in seen:
        assert v <= 0.75 + 1e-3
        assert J.psd_violation <= 1e-7


def test_optimizer_iteration_budget():
    with pytest.raises(ValueError):
        optimize_cloner(iterations=0)
    short = optimize_cloner(iterations=1)
    assert short.achieved <= 0.75 + 1e-3
    assert len(short.history) <= 2


def test_fabricate_scores_half_on_same_evaluator():
    assert abs(choi_route(attack_keep_and_fabricate()) - 0.5) < 1e-12


def test_attack_ordering(optimal):
    p = [per_qubit_success(a) for a in (attack_keep_and_fabricate(), attack_measure_random_basis(), optimal.attack)]
    assert p[0] < p[1] < p[2]


def test_experiment_fabricate_small():
    rep = run_counterfeit_experiment(attack_keep_and_fabricate(), 1, 5000, seed=1)
    assert abs(rep.exact_rate - 0.5) < 1e-12
    assert rep.deviation <= 5
    assert abs(rep.stderr - np.sqrt(0.25 / 5000)) < 1e-12


def test_experiment_single_trial():
    rep = run_counterfeit_experiment(attack_measure_random_basis(), 3, 1, seed=2)
    assert rep.successes in (0, 1)


def test_experiment_is_reproducible_and_worker_independent():
    a = attack_measure_random_basis()
    r1 = run_counterfeit_experiment(a, 2, 600, seed=5, batch_size=200)
    r2 = run_counterfeit_experiment(a, 2, 600, seed=5, batch_size=200)
    r3 = run_counterfeit_experiment(a, 2, 600, seed=5, batch_size=200, workers=2)
    assert r1 == r2 == r3


def test_experiment_estimator_consistency():
    a = attack_measure_random_basis()
    devs = [run_counterfeit_experiment(a, 2, 400, seed=s).deviation for s in range(20)]
    assert sum(d <= 5 for d in devs) >= 19


def test_experiment_validation():
    with pytest.raises(ValueError):
        run_counterfeit_experiment(attack_keep_and_fabricate(), 1, 0, seed=0)


def test_report_json():
    rep = run_counterfeit_experiment(attack_keep_and_fabricate(), 2, 10, seed=3)
    d = json.loads(json.dumps(rep.to_json()))
    assert d["attack"] == "fabricate" and d["n"] == 2 and d["trials"] == 10
    assert set(d) == {"attack", "n", "trials", "successes", "estimated_rate", "exact_rate", "stderr", "seed"}


def test_get_attack():
    assert attacks.get_attack("fabricate").name == "fabricate"
    with pytest.raises(ValueError):
        attacks.get_attack("bogus")
