"""Purification and detection metrics."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .exceptions import EmptySelection, InvalidConfig, NoNormals


@dataclass(frozen=True)
class SelectionOutcome:
    selected: frozenset
    normal: frozenset
    universe: frozenset

    def __post_init__(self):
        if not self.selected <= self.universe or not self.normal <= self.universe:
            raise InvalidConfig("selected and normal sets must lie inside the universe")

    @classmethod
    def from_sequences(cls, sequences, selected_ids):
        universe = frozenset(s.seq_id for s in sequences)
        normal = frozenset(s.seq_id for s in sequences if s.ground_truth == "normal")
        return cls(frozenset(int(i) for i in selected_ids), normal, universe)


def subset_purity(outcome: SelectionOutcome) -> float:
    """Share of the selected subset that is truly normal."""
    if not outcome.selected:
        raise EmptySelection("nothing selected")
    return len(outcome.selected & outcome.normal) / len(outcome.selected)


def clean_retention(outcome: SelectionOutcome) -> float:
    """Share of the truly normal sequences that survive selection."""
    if not outcome.normal:
        raise NoNormals("no normal sequences in the universe")
    return len(outcome.selected & outcome.normal) / len(outcome.normal)


def homogeneity(assignments, labels) -> float:
    """Fraction of points whose cluster's majority label equals their own.

    Majority ties resolve to the label that sorts first.
    """
    assignments = list(assignments)
    labels = list(labels)
    if not assignments:
        raise InvalidConfig("homogeneity of an empty clustering")
    if len(assignments) != len(labels):
        raise InvalidConfig("assignments and labels differ in length")
    by_cluster = {}
    for a, lab in zip(assignments, labels):
        by_cluster.setdefault(a, Counter())[lab] += 1
    matched = 0
    for counts in by_cluster.values():
        top = max(counts.values())
        matched += top
    return matched / len(assignments)


def prf1(predictions, labels) -> dict:
    """Precision, recall and F1 with 1 (anomalous) as the positive class.

    Undefined ratios (0/0) are reported as 0 and listed under ``undefined``.
    """
    pred = np.asarray(predictions).astype(bool)
    true = np.asarray(labels).astype(bool)
    if pred.shape != true.shape:
        raise InvalidConfig("predictions and labels differ in length")
    tp = int((pred & true).sum())
    fp = int((pred & ~true).sum())
    fn = int((~pred & true).sum())
    undefined = []
    p = tp / (tp + fp) if tp + fp else 0.0
    if tp + fp == 0:
        undefined.append("precision")
    r = tp / (tp + fn) if tp + fn else 0.0
    if tp + fn == 0:
        undefined.append("recall")
    if p + r:
        f1 = 2 * p * r / (p + r)
    else:
        f1 = 0.0
        undefined.append("f1")
    return {"precision": p, "recall": r, "f1": f1, "tp": tp, "fp": fp, "fn": fn, "undefined": undefined}
