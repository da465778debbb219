import json
import warnings
from collections import Counter, defaultdict

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from logpurge.core import ANOMALOUS, NORMAL, LogSequence
from logpurge.detector import NgramDetector, evaluate, predict_sequence, train
from logpurge.exceptions import EmptyTrainingSet, NoLabels
from logpurge.synth import SynthConfig, generate, split


def test_single_sequence_context():
    model = train([[1, 2, 3]], n=2, top_k=1)
    assert dict(model.counts_) == {(1, 2): Counter({3: 1})}
    assert predict_sequence(model, [1, 2, 3]) == NORMAL


def test_repeated_training_is_identical():
    data = [[1, 2, 3, 1, 2, 4], [2, 3, 1, 2]]
    assert train(data, 2).counts_ == train(data, 2).counts_


def test_counts_match_brute_force_tally():
    rng = np.random.default_rng(0)
    data = [rng.integers(0, 6, rng.integers(1, 15)).tolist() for _ in range(100)]
    tally = defaultdict(Counter)
    for s in data:
        for i in range(len(s) - 3):
            tally[tuple(s[i:i + 3])][s[i + 3]] += 1
    assert train(data, n=3).counts_ == dict(tally)


def test_empty_training_set():
    with pytest.raises(EmptyTrainingSet):
        train([])


def test_seen_transitions_are_normal():
    data = [[0, 1, 2, 0, 1, 3, 0, 1, 2]]
    model = train(data, n=2, top_k=2)
    assert predict_sequence(model, [0, 1, 2, 0, 1, 3]) == NORMAL


def test_unseen_template_is_anomalous():
    model = train([[0, 1, 2, 0, 1, 2]], n=2)
    assert predict_sequence(model, [0, 1, 99]) == ANOMALOUS
    assert predict_sequence(model, [5, 6, 0]) == ANOMALOUS  # unseen context


def test_top_k_cut_ranks_by_count():
    model = train([[0, 1], [0, 1], [0, 2]], n=1, top_k=1)
    assert predict_sequence(model, [0, 1]) == NORMAL
    assert predict_sequence(model, [0, 2]) == ANOMALOUS
    assert predict_sequence(model, [0, 2], top_k=2) == NORMAL


def test_short_sequence_normal_with_warning():
    model = train([[0, 1, 2, 3]], n=3)
    with pytest.warns(UserWarning):
        assert predict_sequence(model, [9, 9]) == NORMAL
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert model.predict([[9, 9]]).tolist() == [0]
    assert model.short_sequences_ == [0]


def test_planted_markov_corpus_f1():
    corpus = generate(SynthConfig(n_sequences=2000, seed=11))
    tr, te = split(corpus, 0.3, seed=11)
    clean = [s for s in tr.sequences if s.ground_truth == NORMAL]
    assert evaluate(train(clean), te.sequences)["f1"] >= 0.9


def test_evaluate_needs_labels():
    model = train([[0, 1, 2, 3]])
    with pytest.raises(NoLabels):
        evaluate(model, [LogSequence(0, 0, 60, (0, 1, 2, 3))])


def test_perfect_and_silent_detectors():
    seqs = [LogSequence(0, 0, 60, (0, 1, 2, 3), NORMAL), LogSequence(1, 0, 60, (0, 1, 2, 9), ANOMALOUS)]
    model = train([[0, 1, 2, 3]], n=3)
    out = evaluate(model, seqs)
    assert (out["precision"], out["recall"], out["f1"]) == (1.0, 1.0, 1.0)
    lenient = train([[0, 1, 2, 3], [0, 1, 2, 9]], n=3)
    out = evaluate(lenient, seqs)
    assert (out["recall"], out["f1"]) == (0.0, 0.0)


def test_save_load_round_trip(tmp_path):
    model = train([[0, 1, 2, 3, 1, 2, 4], [3, 3, 3, 3]], n=2, top_k=1)
    path = tmp_path / "model.jsonl"
    model.save(path)
    back = NgramDetector.load(path)
    assert back.counts_ == model.counts_
    assert (back.n, back.top_k) == (2, 1)
    rows = [json.loads(line) for line in path.read_text().splitlines()[1:]]
    keys = [(r["context_tids"], r["next_tid"]) for r in rows]
    assert keys == sorted(keys)
    assert sum(r["count"] for r in rows) == sum(sum(c.values()) for c in model.counts_.values())


seqs = st.lists(st.lists(st.integers(0, 5), min_size=0, max_size=12), min_size=1, max_size=20)


@given(seqs, seqs)
def test_superset_training_keeps_transitions(a, b):
    small = train(a, n=2)
    big = train(a + b, n=2)
    for ctx, succ in small.counts_.items():
        for nxt, c in succ.items():
            assert big.counts_[ctx][nxt] >= c
    grown = train(a, n=2).partial_fit(b)
    assert grown.counts_ == big.counts_


@given(seqs)
def test_full_top_k_accepts_seen_contexts(data):
    model = train(data, n=2, top_k=6)
    for s in data:
        if len(s) > 2:
            assert predict_sequence(model, s) == NORMAL
