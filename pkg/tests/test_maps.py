import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qedcomm.game import build_task
from qedcomm.maps import EquivalenceMap, MappingSet, class_transpositions, invert

perms = st.integers(2, 8).flatmap(lambda n: st.permutations(list(range(n))))


def test_rejects_non_permutations():
    with pytest.raises(ValueError):
        EquivalenceMap((0, 0), (0, 1))
    with pytest.raises(ValueError):
        EquivalenceMap((0, 1), (1, 2))


def test_identity_and_swap():
    ident = EquivalenceMap.identity(5, 17)
    assert ident.is_identity()
    swap = EquivalenceMap.action_swap(5, 17, 2, 7)
    assert not swap.is_identity()
    assert swap.act_perm[2] == 7 and swap.act_perm[7] == 2
    assert swap.compose(swap) == ident


@settings(max_examples=60, deadline=None)
@given(perms, perms)
def test_inverse_and_composition(p, q):
    m = EquivalenceMap(tuple(range(3)), tuple(p))
    assert invert(invert(p)) == tuple(p)
    assert m.compose(m.inverse()).is_identity()
    assert m.inverse().compose(m).is_identity()
    if len(q) == len(p):
        n = EquivalenceMap(tuple(range(3)), tuple(q))
        both = m.compose(n)
        for a in range(len(p)):
            assert both.act_perm[a] == p[q[a]]


def test_set_always_holds_identity_and_dedups():
    swap = EquivalenceMap.action_swap(2, 3, 0, 1)
    s = MappingSet([swap, swap])
    assert len(s) == 2
    assert s.maps[0].is_identity()
    assert not s.add(swap)
    assert s.add(EquivalenceMap.action_swap(2, 3, 1, 2), source="test")
    assert s.provenance[-1] == {"source": "test"}
    with pytest.raises(ValueError):
        MappingSet([])
    with pytest.raises(ValueError):
        MappingSet([EquivalenceMap.identity(2, 3), EquivalenceMap.identity(2, 4)])


def test_roundtrip_and_arrays():
    s = class_transpositions(build_task("energy_degeneracy"))
    back = MappingSet.from_dict(s.to_dict())
    assert back.maps == s.maps
    obs, act = s.perm_arrays()
    assert obs.shape == (len(s), 5) and act.shape == (len(s), 17)
    assert np.array_equal(act[0], np.arange(17))


def test_class_transpositions_counts():
    # four classes of four actions: 4 * C(4, 2) transpositions plus the identity
    assert len(class_transpositions(build_task("energy_degeneracy"))) == 1 + 4 * 6
    assert len(class_transpositions(build_task("no_degeneracy"))) == 1
    uni = class_transpositions(build_task("no_degeneracy", "costly", "uniform"))
    assert len(uni) == 1 + 4  # adjacent goal swaps only
    cheap = class_transpositions(build_task("energy_degeneracy", "cheap_talk", "zipfian"))
    assert len(cheap) == 1 + 17 * 16 // 2


def test_closure_of_class_transpositions_is_the_class_group():
    small = MappingSet([EquivalenceMap.action_swap(1, 4, 0, 1), EquivalenceMap.action_swap(1, 4, 1, 2)])
    assert len(small.closure()) == 6  # S3 on the first three actions
    with pytest.raises(ValueError):
        class_transpositions(build_task("energy_degeneracy")).closure(limit=100)
