import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from qedcomm.game import build_task, cost_classes
from qedcomm.maps import EquivalenceMap, invert
from qedcomm.policy import JointPolicy, accuracy, confusion
from qedcomm.symmetry import (
    MappingLearnConfig,
    RelaxedMap,
    apply_map,
    harden,
    is_equivalence,
    learn_mapping,
    mapping_kl,
)
from qedcomm.training import TrainConfig, sp_loss, train

TASK1 = build_task("no_degeneracy")
TASK2 = build_task("energy_degeneracy")
UNIFORM2 = build_task("energy_degeneracy", "costly", "uniform")


@pytest.fixture(scope="module")
def optima2():
    return [train(TASK2, None, TrainConfig(iterations=10000, seed=s)).joint for s in range(4)]


def random_joint(task, rng, scale=2.0):
    return JointPolicy(
        rng.normal(0, scale, (task.num_goals, task.num_actions)),
        rng.normal(0, scale, (task.num_actions, task.num_goals)),
    )


def class_map(task, rng):
    act = np.arange(task.num_actions)
    for c in cost_classes(task):
        act[c] = rng.permutation(c)
    return EquivalenceMap(tuple(range(task.num_goals)), tuple(int(a) for a in act))


def test_apply_identity_is_noop():
    j = random_joint(TASK2, np.random.default_rng(0))
    out = apply_map(EquivalenceMap.identity(5, 17), j)
    assert np.array_equal(out.sender_logits, j.sender_logits)
    assert np.array_equal(out.receiver_logits, j.receiver_logits)


def test_apply_involution_twice_restores():
    j = random_joint(TASK2, np.random.default_rng(1))
    m = EquivalenceMap.action_swap(5, 17, 3, 4)
    back = apply_map(m, apply_map(m, j))
    assert np.array_equal(back.sender_logits, j.sender_logits)
    assert np.array_equal(back.receiver_logits, j.receiver_logits)


def test_apply_moves_entries_to_mapped_indices():
    rng = np.random.default_rng(2)
    j = random_joint(UNIFORM2, rng)
    m = EquivalenceMap(tuple(int(x) for x in rng.permutation(5)), tuple(int(x) for x in rng.permutation(17)))
    out = apply_map(m, j)
    for g in range(5):
        for a in range(17):
            assert out.sender_logits[m.obs_perm[g], m.act_perm[a]] == j.sender_logits[g, a]
            assert out.receiver_logits[m.act_perm[a], m.obs_perm[g]] == j.receiver_logits[a, g]


def test_apply_rejects_wrong_size():
    with pytest.raises(ValueError):
        apply_map(EquivalenceMap.identity(5, 10), random_joint(TASK2, np.random.default_rng(3)))


def test_within_class_swap_preserves_optimal_loss(optima2):
    cfg = TrainConfig()
    for j in optima2:
        for a, b in [(1, 2), (5, 8), (13, 16)]:
            moved = apply_map(EquivalenceMap.action_swap(5, 17, a, b), j)
            assert sp_loss(moved, TASK2, cfg).total == pytest.approx(sp_loss(j, TASK2, cfg).total, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_relabeling_preserves_accuracy_when_goals_follow(seed):
    rng = np.random.default_rng(seed)
    j = random_joint(TASK2, rng)
    m = EquivalenceMap(tuple(int(x) for x in rng.permutation(5)), tuple(int(x) for x in rng.permutation(17)))
    out = apply_map(m, j)
    p = TASK2.goal_probs
    # the relabeled pair plays the same game with goal g renamed obs_perm[g]
    moved_p = np.empty(5)
    moved_p[list(m.obs_perm)] = p
    assert accuracy(out, moved_p) == pytest.approx(accuracy(j, p), abs=1e-12)
    c, co = confusion(j), confusion(out)
    inv = np.array(invert(m.obs_perm))
    np.testing.assert_allclose(co[np.ix_(m.obs_perm, m.obs_perm)], c, atol=1e-12)
    assert inv.shape == (5,)
    np.testing.assert_allclose(out.sender().sum(axis=1), 1.0)


def test_kl_zero_on_exact_alignment():
    rng = np.random.default_rng(4)
    j = random_joint(TASK2, rng)
    m = class_map(TASK2, rng)
    assert mapping_kl(j, apply_map(m, j), m, TASK2.goal_probs) == pytest.approx(0.0, abs=1e-12)
    assert mapping_kl(j, j, EquivalenceMap.identity(5, 17), TASK2.goal_probs) == pytest.approx(0.0, abs=1e-12)


def test_kl_hand_computed_two_by_two():
    # deterministic source, target with the two actions swapped, identity map
    big = 400.0  # exp(-800) underflows, so rows are exactly one-hot
    src = JointPolicy(np.array([[big, -big], [-big, big]]), np.array([[big, -big], [-big, big]]))
    tgt = JointPolicy(np.array([[-big, big], [big, -big]]), np.array([[-big, big], [big, -big]]))
    p = np.array([0.7, 0.3])
    ident = EquivalenceMap.identity(2, 2)
    # sender: sum_g p(g) * 1 * log(1 / 1e-12); receiver: sum_a q(a) * log(1 / 1e-12), q = p
    expected = 0.7 * math.log(1 / 1e-12) + 0.3 * math.log(1 / 1e-12) + 0.7 * math.log(1e12) + 0.3 * math.log(1e12)
    assert mapping_kl(src, tgt, ident, p) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(2 * 12 * math.log(10))
    # the swap map fixes it
    assert mapping_kl(src, tgt, EquivalenceMap((0, 1), (1, 0)), p) == pytest.approx(0.0, abs=1e-12)


def test_kl_counts_goal_relabeling_against_the_environment():
    # swapping two goals and their actions aligns the policies but not the goal draw
    rng = np.random.default_rng(5)
    j = random_joint(TASK2, rng)
    m = EquivalenceMap((1, 0, 2, 3, 4), tuple(range(17)))
    p = TASK2.goal_probs
    kl = mapping_kl(j, apply_map(m, j), m, p)
    expected = p[0] * math.log(p[0] / p[1]) + p[1] * math.log(p[1] / p[0])
    assert kl == pytest.approx(expected, abs=1e-12)
    assert mapping_kl(j, apply_map(m, j), m, UNIFORM2.goal_probs) == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_kl_nonnegative_and_relaxed_matches_hard(seed):
    rng = np.random.default_rng(seed)
    a, b = random_joint(TASK2, rng), random_joint(TASK2, rng)
    m = EquivalenceMap(tuple(int(x) for x in rng.permutation(5)), tuple(int(x) for x in rng.permutation(17)))
    kl = mapping_kl(a, b, m, TASK2.goal_probs)
    assert kl >= 0
    assert mapping_kl(a, b, RelaxedMap.from_map(m), TASK2.goal_probs) == kl
    soft = RelaxedMap(rng.dirichlet(np.ones(5), 5), rng.dirichlet(np.ones(17), 17))
    assert mapping_kl(a, b, soft, TASK2.goal_probs) >= -1e-12


def test_is_equivalence_cases():
    assert is_equivalence(EquivalenceMap.identity(5, 17), TASK2)
    assert is_equivalence(EquivalenceMap.action_swap(5, 17, 1, 4), TASK2)
    assert not is_equivalence(EquivalenceMap.action_swap(5, 17, 0, 1), TASK2)
    assert not is_equivalence(EquivalenceMap.action_swap(5, 17, 4, 5), TASK2)
    goal_swap = EquivalenceMap((1, 0, 2, 3, 4), tuple(range(17)))
    assert not is_equivalence(goal_swap, TASK2)
    assert is_equivalence(goal_swap, UNIFORM2)
    for a in range(1, 10):
        assert not is_equivalence(EquivalenceMap.action_swap(5, 10, 0, a), TASK1)
    assert not is_equivalence(EquivalenceMap.identity(5, 10), TASK2)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (6, 6), elements=st.floats(1e-6, 1.0)))
def test_harden_is_a_bijection_maximising_log_weight(w):
    perm = harden(w)
    assert sorted(perm) == list(range(6))
    score = np.log(w)[np.arange(6), list(perm)].sum()
    rng = np.random.default_rng(0)
    for _ in range(20):
        other = rng.permutation(6)
        assert score >= np.log(w)[np.arange(6), other].sum() - 1e-9


def test_harden_recovers_noisy_permutation():
    rng = np.random.default_rng(6)
    perm = rng.permutation(17)
    w = np.full((17, 17), 0.01) + rng.uniform(0, 0.02, (17, 17))
    w[np.arange(17), perm] = 0.5
    assert harden(w) == tuple(int(x) for x in perm)


@pytest.mark.parametrize("random_source", [True, False])
def test_planted_permutation_recovered(random_source, optima2):
    rng = np.random.default_rng(7)
    for i in range(8):
        src = random_joint(TASK2, rng) if random_source else optima2[i % len(optima2)]
        m = class_map(TASK2, rng)
        res = learn_mapping(src, apply_map(m, src), TASK2, MappingLearnConfig(seed=i))
        assert res.map == m
        assert res.accepted and res.valid
        assert res.hard_loss < 1e-6


def test_self_mapping_is_identity(optima2):
    res = learn_mapping(optima2[0], optima2[0], TASK2, MappingLearnConfig(seed=1))
    assert res.map.is_identity()
    assert res.accepted


def test_task1_unused_receiver_rows_do_not_matter():
    a = train(TASK1, None, TrainConfig(iterations=5000, seed=0)).joint
    used = sorted(set(a.sender().argmax(axis=1).tolist()))
    b = a.copy()
    rng = np.random.default_rng(8)
    for act in set(range(10)) - set(used):
        b.receiver_logits[act] = rng.normal(0, 3, 5)
    res = learn_mapping(a, b, TASK1, MappingLearnConfig(seed=2))
    assert res.accepted
    assert all(res.map.act_perm[u] == u for u in used)
    assert res.map.obs_perm == tuple(range(5))


def test_cross_class_relabeling_has_low_loss_but_is_rejected():
    rng = np.random.default_rng(9)
    src = random_joint(TASK2, rng)
    bad = EquivalenceMap.action_swap(5, 17, 4, 5)  # cost 1 <-> cost 2
    res = learn_mapping(src, apply_map(bad, src), TASK2, MappingLearnConfig(seed=3))
    assert res.map == bad
    assert res.hard_loss < 1e-6
    assert not res.valid and not res.accepted


def test_compiled_and_numpy_fits_agree(optima2):
    cfg = MappingLearnConfig(seed=4, steps=400)
    a = learn_mapping(optima2[0], optima2[1], TASK2, cfg, backend="numpy")
    b = learn_mapping(optima2[0], optima2[1], TASK2, cfg, backend="compiled")
    assert a.map == b.map
    assert a.relaxed_loss == pytest.approx(b.relaxed_loss, rel=1e-9, abs=1e-12)
    with pytest.raises(ValueError):
        learn_mapping(optima2[0], optima2[1], TASK2, cfg, backend="gpu")


def test_mapping_config_validation():
    with pytest.raises(ValueError):
        MappingLearnConfig(accept_threshold=0)
    with pytest.raises(ValueError):
        MappingLearnConfig(steps=0)
    with pytest.raises(ValueError):
        MappingLearnConfig(optimizer="lbfgs")
    cfg = MappingLearnConfig(seed=3)
    assert MappingLearnConfig.from_dict(cfg.to_dict()) == cfg
