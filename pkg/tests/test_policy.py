import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from qedcomm.game import build_task, uniform_distribution, zipf_distribution
from qedcomm.policy import (
    JointPolicy,
    accuracy,
    confusion,
    cross_accuracy,
    init_joint,
    softmax_rows,
)

BIG = 50.0


def deterministic_joint(assign, num_actions, num_goals=None):
    """Logits for sender goal g -> assign[g] and receiver assign[g] -> g."""
    num_goals = num_goals or len(assign)
    s = np.full((num_goals, num_actions), -BIG)
    r = np.zeros((num_actions, num_goals))
    for g, a in enumerate(assign):
        s[g, a] = BIG
        r[a] = -BIG
        r[a, g] = BIG
    return JointPolicy(s, r)


def test_softmax_equal_logits():
    np.testing.assert_allclose(softmax_rows(np.zeros((2, 2))), [[0.5, 0.5], [0.5, 0.5]])


def test_softmax_closed_form():
    np.testing.assert_allclose(softmax_rows(np.array([[0.0, np.log(3.0)]])), [[0.25, 0.75]], atol=1e-15)


def test_softmax_rejects_non_finite():
    with pytest.raises(ValueError):
        softmax_rows(np.array([[0.0, np.inf]]))
    with pytest.raises(ValueError):
        softmax_rows(np.array([[np.nan, 0.0]]))


@given(
    arrays(np.float64, (4, 6), elements=st.floats(-30, 30)),
    st.floats(-100, 100),
)
def test_softmax_rows_stochastic_and_shift_invariant(x, c):
    p = softmax_rows(x)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(softmax_rows(x + c), p, atol=1e-12)


def test_init_is_seeded():
    t = build_task("no_degeneracy")
    a, b = init_joint(t, 7), init_joint(t, 7)
    assert np.array_equal(a.sender_logits, b.sender_logits)
    assert np.array_equal(a.receiver_logits, b.receiver_logits)
    c = init_joint(t, 8)
    assert not np.array_equal(a.sender_logits, c.sender_logits)


@pytest.mark.parametrize("kind", ["no_degeneracy", "energy_degeneracy"])
@pytest.mark.parametrize("seed", range(5))
def test_init_is_near_uniform(kind, seed):
    t = build_task(kind)
    s = init_joint(t, seed).sender()
    h = -(s * np.log(s)).sum(axis=1)
    assert np.all(np.abs(h - np.log(t.num_actions)) < 0.05)


def test_confusion_of_perfect_protocol_is_identity():
    j = deterministic_joint([3, 0, 7, 1, 9], 10)
    np.testing.assert_allclose(confusion(j), np.eye(5), atol=1e-12)
    assert accuracy(j, zipf_distribution(5, 1.0)) == pytest.approx(1.0, abs=1e-12)


def test_confusion_of_uniform_policies():
    j = JointPolicy(np.zeros((5, 10)), np.zeros((10, 5)))
    np.testing.assert_allclose(confusion(j), 0.2)
    assert accuracy(j, uniform_distribution(5)) == pytest.approx(0.2)


def test_confusion_two_by_two_product():
    s = np.array([[0.9, 0.1], [0.2, 0.8]])
    j = JointPolicy(np.log(s), np.log(np.array([[1.0, 1e-300], [1e-300, 1.0]])))
    np.testing.assert_allclose(confusion(j), s, atol=1e-12)


def test_receiver_always_predicts_top_goal():
    d = zipf_distribution(5, 1.0)
    rng = np.random.default_rng(0)
    r = np.full((10, 5), -BIG)
    r[:, 0] = BIG
    j = JointPolicy(rng.normal(size=(5, 10)), r)
    assert accuracy(j, d) == pytest.approx(60 / 137, abs=1e-12)
    assert round(accuracy(j, d), 3) == 0.438


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_confusion_rows_and_accuracy_range(seed):
    rng = np.random.default_rng(seed)
    j = JointPolicy(rng.normal(0, 3, (5, 17)), rng.normal(0, 3, (17, 5)))
    c = confusion(j)
    np.testing.assert_allclose(c.sum(axis=1), 1.0, atol=1e-9)
    assert np.all((c >= 0) & (c <= 1))
    acc = accuracy(j, zipf_distribution(5, 1.0))
    assert 0.0 <= acc <= 1.0
    # sender action columns and receiver action rows permuted together
    perm = rng.permutation(17)
    k = JointPolicy(j.sender_logits[:, perm], j.receiver_logits[perm])
    np.testing.assert_allclose(confusion(k), c, atol=1e-12)


def test_confusion_is_bilinear():
    s1 = np.array([[0.7, 0.3], [0.4, 0.6]])
    s2 = np.array([[0.1, 0.9], [0.5, 0.5]])
    r = np.array([[0.8, 0.2], [0.3, 0.7]])
    mix = 0.25 * s1 + 0.75 * s2
    by_hand = np.array(
        [
            [mix[0, 0] * 0.8 + mix[0, 1] * 0.3, mix[0, 0] * 0.2 + mix[0, 1] * 0.7],
            [mix[1, 0] * 0.8 + mix[1, 1] * 0.3, mix[1, 0] * 0.2 + mix[1, 1] * 0.7],
        ]
    )
    c = confusion(JointPolicy(np.log(mix), np.log(r)))
    np.testing.assert_allclose(c, by_hand, atol=1e-12)


def test_cross_accuracy_uses_partner_receiver():
    a = deterministic_joint([0, 1], 2)
    b = deterministic_joint([1, 0], 2)
    assert cross_accuracy(a, a, np.array([0.5, 0.5])) == pytest.approx(1.0)
    assert cross_accuracy(a, b, np.array([0.5, 0.5])) == pytest.approx(0.0, abs=1e-12)


def test_policy_shape_mismatch():
    with pytest.raises(ValueError):
        JointPolicy(np.zeros((5, 10)), np.zeros((9, 5)))
    with pytest.raises(ValueError):
        init_joint(build_task("no_degeneracy"), 0).check_task(build_task("energy_degeneracy"))


def test_policy_roundtrip():
    t = build_task("energy_degeneracy")
    j = init_joint(t, 3)
    d = j.to_dict(t)
    assert d["task_fingerprint"] == t.fingerprint()
    back = JointPolicy.from_dict(d)
    assert np.array_equal(back.sender_logits, j.sender_logits)
    assert np.array_equal(back.receiver_logits, j.receiver_logits)
