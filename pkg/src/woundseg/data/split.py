"""Patient-level hold-out and stratified k-fold assignment."""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from ..core import InvalidInputError, atomic_write, coverage


@dataclass
class FoldAssignment:
    k: int
    test_patients: frozenset = frozenset()
    fold_of_patient: dict = field(default_factory=dict)
    objective: float | None = None

    def __post_init__(self):
        self.test_patients = frozenset(self.test_patients)
        leaked = self.test_patients & set(self.fold_of_patient)
        if leaked:
            raise InvalidInputError(f"patients in both test set and folds: {sorted(leaked)}")
        bad = {f for f in self.fold_of_patient.values() if not 0 <= f < self.k}
        if bad:
            raise InvalidInputError(f"fold indices {sorted(bad)} outside 0..{self.k - 1}")

    def fold_patients(self, fold):
        return sorted(p for p, f in self.fold_of_patient.items() if f == fold)

    def train_val(self, records, fold):
        """Training and validation records for one cross-validation round."""
        val = [r for r in records if self.fold_of_patient.get(r.patient_id) == fold]
        train = [r for r in records
                 if r.patient_id in self.fold_of_patient and self.fold_of_patient[r.patient_id] != fold]
        return train, val

    def training_records(self, records):
        return [r for r in records if r.patient_id in self.fold_of_patient]

    def test_records(self, records):
        return [r for r in records if r.patient_id in self.test_patients]

    def to_dict(self):
        return {
            "k": self.k,
            "test_patients": sorted(self.test_patients),
            "fold_of_patient": {p: self.fold_of_patient[p] for p in sorted(self.fold_of_patient)},
            "objective": self.objective,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["k"]), frozenset(d["test_patients"]),
                   {str(p): int(f) for p, f in d["fold_of_patient"].items()}, d.get("objective"))

    def save(self, path):
        atomic_write(path, json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def patients_of(records):
    return sorted({r.patient_id for r in records})


def holdout_split(records, test_fraction=0.1, seed=0):
    """Send ceil(test_fraction * P) randomly chosen patients to the test side."""
    patients = patients_of(records)
    n_test = math.ceil(round(test_fraction * len(patients), 9))
    if len(patients) < 2 or not 1 <= n_test < len(patients):
        raise InvalidInputError(
            f"cannot hold out {test_fraction:.0%} of {len(patients)} patients")
    rng = np.random.default_rng(seed)
    test = set(np.asarray(patients, dtype=object)[rng.permutation(len(patients))[:n_test]])
    train = [r for r in records if r.patient_id not in test]
    held = [r for r in records if r.patient_id in test]
    return train, held


def _patient_stats(records):
    n = defaultdict(int)
    cov = defaultdict(float)
    for r in records:
        n[r.patient_id] += 1
        cov[r.patient_id] += coverage(r.mask())
    return n, cov


def stratification_objective(records, fold_of_patient, k, _stats=None):
    """Sum over folds of squared relative deviations of mean coverage and image count."""
    n, cov = _stats or _patient_stats(records)
    fold_n = np.zeros(k)
    fold_cov = np.zeros(k)
    for p, f in fold_of_patient.items():
        fold_n[f] += n[p]
        fold_cov[f] += cov[p]
    mean_cov = np.divide(fold_cov, fold_n, out=np.zeros(k), where=fold_n > 0)
    n_bar = fold_n.mean()
    c_bar = mean_cov.mean()
    j = float(np.sum(((fold_n - n_bar) / n_bar) ** 2))
    if c_bar > 0:
        j += float(np.sum(((mean_cov - c_bar) / c_bar) ** 2))
    return j


def random_partition(patients, k, rng):
    """Balanced random partition: patient counts per fold differ by at most one."""
    order = rng.permutation(len(patients))
    return {patients[i]: pos % k for pos, i in enumerate(order)}


def stratified_group_kfold(records, k=5, seed=0, restarts=200, test_patients=()):
    """Best of ``restarts`` balanced random partitions under the stratification objective."""
    patients = patients_of(records)
    if len(patients) < k:
        raise InvalidInputError(f"{len(patients)} patients cannot fill {k} folds")
    if restarts < 1:
        raise InvalidInputError("restarts must be >= 1")
    stats = _patient_stats(records)
    rng = np.random.default_rng(seed)
    best, best_j = None, math.inf
    for _ in range(restarts):
        cand = random_partition(patients, k, rng)
        j = stratification_objective(records, cand, k, stats)
        if j < best_j:
            best, best_j = cand, j
    return FoldAssignment(k, frozenset(test_patients), best, best_j)


def make_split(records, test_fraction=0.1, k=5, seed=0, restarts=200):
    """Hold-out split followed by stratified k-fold on the remaining patients."""
    train, test = holdout_split(records, test_fraction, seed)
    return stratified_group_kfold(train, k, [seed, 1], restarts, patients_of(test))
