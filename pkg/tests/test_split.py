import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stackderm.data import SplitAssignment, group_split
from stackderm.errors import ConfigError


def uniform_groups(n_patients=10, per=10, pos_every=3):
    pids = np.repeat([f"p{i}" for i in range(n_patients)], per)
    labels = (np.arange(n_patients * per) % pos_every == 0).astype(int)
    return list(pids), labels


def check_no_leakage(split, pids):
    parts = [set(pids[i] for i in p) for p in (split.train, split.val, split.test)]
    assert not (parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2])
    assert sorted(split.train + split.val + split.test) == list(range(len(pids)))


def test_uniform_groups_arithmetic():
    # with whole 10-sample patients the greedy rule yields 10 / 10 / 80
    pids, labels = uniform_groups()
    s = group_split(pids, labels, 0)
    assert (len(s.test), len(s.val), len(s.train)) == (10, 10, 80)


def test_sizes_within_one_group_of_targets():
    pids, labels = uniform_groups()
    s = group_split(pids, labels, 3)
    for part, target in ((s.test, 10), (s.val, 9), (s.train, 81)):
        assert abs(len(part) - target) <= 10


@given(st.integers(0, 2 ** 63 - 1))
def test_no_leakage_and_classes(seed):
    rng = np.random.default_rng(seed % 1000)
    pids = [f"p{k}" for k in rng.integers(0, 40, 300)]
    labels = (rng.random(300) < 0.2).astype(int)
    labels[:3] = [0, 1, 1]
    try:
        s = group_split(pids, labels, seed)
    except ConfigError:
        return
    check_no_leakage(s, pids)
    for part in (s.train, s.val, s.test):
        assert set(labels[list(part)]) == {0, 1}


def test_determinism():
    pids, labels = uniform_groups()
    assert group_split(pids, labels, 42) == group_split(pids, labels, 42)


def test_json_roundtrip():
    pids, labels = uniform_groups()
    s = group_split(pids, labels, 7)
    assert SplitAssignment.from_json(s.to_json()) == s


def test_errors():
    with pytest.raises(ConfigError):
        group_split(["a", "a", "b", "b"], [0, 1, 0, 1], 0)
    with pytest.raises(ConfigError):
        group_split(["a", "b", "c"], [0, 0, 0], 0)
    with pytest.raises(ConfigError):
        group_split(["a", "b", "c"], [0, 1], 0)
    # one positive cannot be in all three parts
    with pytest.raises(ConfigError):
        group_split(["a", "b", "c", "d"], [1, 0, 0, 0], 0)
