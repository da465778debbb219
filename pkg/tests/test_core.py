import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from logpurge.core import (
    ANOMALOUS,
    NORMAL,
    EmbeddingMatrix,
    LogRecord,
    LogSequence,
    PurgeConfig,
    Region,
    RepresentativeSet,
    Rule,
    RuleSet,
    Template,
    check_partition,
    read_records,
    read_sequences,
    validate_dataset,
    write_records,
    write_sequences,
)
from logpurge.exceptions import EmptyDataset, InvalidConfig, NonFiniteTimestamp, NonMonotoneTimestamps


def test_three_records_summary():
    recs = [LogRecord(10, "a"), LogRecord(11, "b", NORMAL), LogRecord(15, "c", ANOMALOUS)]
    s = validate_dataset(recs)
    assert (s.count, s.labeled, s.anomalous, s.time_span) == (3, 2, 1, 5)


def test_empty_dataset():
    with pytest.raises(EmptyDataset):
        validate_dataset([])


def test_bgl_scale_stream():
    # Table-sized corpus pushed through a generator, never materialised.
    n, n_anom = 4_747_963, 348_460

    def stream():
        for i in range(n):
            yield LogRecord(1117838570 + i // 7, "generating core.1143", ANOMALOUS if i < n_anom else NORMAL)

    s = validate_dataset(stream(), strict=True)
    assert s.count == n
    assert s.anomalous == n_anom


def test_strict_mode_rejects_out_of_order():
    recs = [LogRecord(5, "a"), LogRecord(3, "b")]
    assert validate_dataset(recs).count == 2
    with pytest.raises(NonMonotoneTimestamps):
        validate_dataset(recs, strict=True)


def test_non_finite_timestamp():
    with pytest.raises(NonFiniteTimestamp):
        validate_dataset([LogRecord(0, "x"), LogRecord(math.inf, "y")])


@pytest.mark.parametrize("kwargs", [
    dict(timestamp=-1, message="x"),
    dict(timestamp=0, message="   "),
    dict(timestamp=0, message="x", source_label="weird"),
])
def test_record_invariants(kwargs):
    with pytest.raises(InvalidConfig):
        LogRecord(**kwargs)


def test_sequence_and_template_invariants():
    with pytest.raises(InvalidConfig):
        LogSequence(0, 0, 60, ())
    with pytest.raises(InvalidConfig):
        Template(0, ())
    assert Template(0, ("generating", "<*>")).text == "generating <*>"


def test_embedding_matrix_rejects_non_finite():
    with pytest.raises(InvalidConfig):
        EmbeddingMatrix(np.array([[0.0, np.nan]]))
    m = EmbeddingMatrix(np.eye(3))
    assert (len(m), m.dim) == (3, 3)
    assert not m.rows.flags.writeable


@pytest.mark.parametrize("kwargs", [
    dict(K=1), dict(k_nn=0), dict(epsilon=0.0), dict(n_max=0), dict(percentile=0),
    dict(percentile=100), dict(stride=61), dict(r_min=-1.0), dict(val_fraction=1.0),
])
def test_purge_config_invariants(kwargs):
    with pytest.raises(InvalidConfig):
        PurgeConfig(**kwargs)


def test_representative_members_keep_order_and_dedupe():
    reps = RepresentativeSet((4, 9), ((1, 9, 2), (2, 7)))
    assert reps.members == (4, 9, 1, 2, 7)


def test_ruleset_is_append_only():
    a = RuleSet().extend([Rule("Bad file descriptor is anomalous", 1)])
    b = a.extend([Rule("BAD FILE DESCRIPTOR is anomalous", 2), Rule("heartbeats are normal", 2)])
    assert a.texts == ["Bad file descriptor is anomalous"]
    assert b.texts[: len(a)] == a.texts
    assert b.texts == ["Bad file descriptor is anomalous", "heartbeats are normal"]


@given(st.lists(st.lists(st.text(alphabet="abc", min_size=1, max_size=3), max_size=4), max_size=5))
def test_ruleset_growth_is_monotone(batches):
    rules = RuleSet()
    for t, batch in enumerate(batches):
        grown = rules.extend(Rule(text, t) for text in batch)
        assert grown.rules[: len(rules)] == rules.rules
        assert len({r.text.casefold() for r in grown}) == len(grown)
        rules = grown


def test_check_partition():
    regions = [Region(0, (0, 2), (0.0,)), Region(1, (1,), (1.0,))]
    check_partition(regions, 3)
    with pytest.raises(InvalidConfig):
        check_partition(regions, 4)
    with pytest.raises(InvalidConfig):
        check_partition(regions + [Region(2, (2,), (0.0,))], 3)


records = st.builds(
    LogRecord,
    timestamp=st.integers(0, 10**10),
    message=st.text(alphabet="abc xyz.0123", min_size=1).filter(str.strip),
    source_label=st.sampled_from([None, NORMAL, ANOMALOUS]),
    template_id=st.one_of(st.none(), st.integers(0, 50)),
)


@given(st.lists(records, max_size=20))
def test_record_interchange_round_trip(recs):
    buf = io.StringIO()
    write_records(recs, buf)
    buf.seek(0)
    assert list(read_records(buf)) == recs


@given(st.lists(st.tuples(st.lists(st.integers(0, 9), min_size=1, max_size=8),
                          st.sampled_from([None, NORMAL, ANOMALOUS])), max_size=10))
def test_sequence_interchange_round_trip(rows):
    seqs = [LogSequence(i, 30 * i, 30 * i + 60, tuple(t), lab) for i, (t, lab) in enumerate(rows)]
    templates = [Template(i, (f"event{i}", "<*>"), i) for i in range(10)]
    buf = io.StringIO()
    write_sequences(seqs, buf, templates)
    buf.seek(0)
    back, back_templates = read_sequences(buf)
    assert back == seqs
    assert back_templates == templates
