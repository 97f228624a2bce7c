"""Patient-grouped train / validation / test splitting."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError

TEST_FRACTION = 0.10
VAL_FRACTION = 0.10  # of what remains after the test part
MAX_ATTEMPTS = 100


@dataclass(frozen=True)
class SplitAssignment:
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]
    seed: int

    def to_json(self):
        return json.dumps({"seed": self.seed, "train": list(self.train),
                           "val": list(self.val), "test": list(self.test)})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(tuple(d["train"]), tuple(d["val"]), tuple(d["test"]), d["seed"])


def _attempt(groups, n, rng):
    order = rng.permutation(len(groups))
    test, val, train = [], [], []
    i = 0
    while i < len(order) and len(test) < TEST_FRACTION * n:
        test.extend(groups[order[i]])
        i += 1
    rest = n - len(test)
    while i < len(order) and len(val) < VAL_FRACTION * rest:
        val.extend(groups[order[i]])
        i += 1
    for j in order[i:]:
        train.extend(groups[j])
    return sorted(train), sorted(val), sorted(test)


def group_split(patient_ids, labels, seed) -> SplitAssignment:
    """Shuffle patients and fill test, then validation, then train greedily.

    Test takes whole patients until it holds at least 10 % of the samples,
    validation until it holds at least 10 % of the remainder. If some part
    lacks a class, the shuffle is redrawn from a seed derived from ``seed``
    and the attempt number, at most 100 times.
    """
    patient_ids = list(patient_ids)
    labels = np.asarray(labels)
    n = len(patient_ids)
    if n != len(labels):
        raise ConfigError("patient_ids and labels differ in length")
    uniq = sorted(set(patient_ids))
    if len(uniq) < 3:
        raise ConfigError("grouped splitting needs at least 3 distinct patients")
    if labels.min() == labels.max():
        raise ConfigError("both classes must be present to split")
    pos = {p: i for i, p in enumerate(uniq)}
    groups = [[] for _ in uniq]
    for idx, p in enumerate(patient_ids):
        groups[pos[p]].append(idx)
    for attempt in range(MAX_ATTEMPTS):
        rng = np.random.default_rng([seed, attempt])
        parts = _attempt(groups, n, rng)
        if all(len(p) and labels[p].min() == 0 and labels[p].max() == 1 for p in parts):
            train, val, test = parts
            return SplitAssignment(tuple(train), tuple(val), tuple(test), seed)
    raise ConfigError(
        f"could not place both classes in train, val and test after {MAX_ATTEMPTS} draws"
    )


def split_samples(samples, seed) -> SplitAssignment:
    return group_split([s.patient_id for s in samples], [s.label for s in samples], seed)
