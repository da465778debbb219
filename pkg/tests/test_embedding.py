import json

import httpx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from logpurge.core import LogSequence
from logpurge.embedding import EmbeddingProvider, SequenceEmbedder, content_hash, embed_dataset
from logpurge.exceptions import DimensionMismatch, InvalidConfig, PartialFailure, ProviderUnreachable


def seqs_from(tid_lists):
    return [LogSequence(i, 0, 60, tuple(t)) for i, t in enumerate(tid_lists)]


def test_provider_invariants():
    with pytest.raises(InvalidConfig):
        EmbeddingProvider(dim=4)
    with pytest.raises(InvalidConfig):
        EmbeddingProvider(kind="external")
    with pytest.raises(InvalidConfig):
        EmbeddingProvider(kind="bert")


def test_identical_sequences_identical_vectors():
    seqs = seqs_from([[1, 2, 2, 3], [1, 2, 2, 3], [4]])
    X = embed_dataset(seqs, SequenceEmbedder(dim=32)).rows
    assert np.array_equal(X[0], X[1])


def test_disjoint_templates_orthogonal_before_projection():
    seqs = seqs_from([[0, 1, 1], [2, 3], [0, 2]])
    emb = SequenceEmbedder(dim=32).fit(seqs)
    a, b = emb.weighted_counts(seqs[0]), emb.weighted_counts(seqs[1])
    assert float(a @ b) == 0.0


def test_rows_follow_seq_id_order(small_corpus):
    seqs = small_corpus.sequences[:3]
    emb = SequenceEmbedder(dim=64).fit(seqs)
    X = emb.transform(seqs).rows
    assert X.shape == (3, 64)
    for i, s in enumerate(seqs):
        assert np.allclose(X[i], emb.embed_sequence(s), atol=1e-12)


@given(st.lists(st.lists(st.integers(0, 30), min_size=1, max_size=12), min_size=1, max_size=15))
def test_unit_norm(tid_lists):
    X = embed_dataset(seqs_from(tid_lists), SequenceEmbedder(dim=16)).rows
    assert np.allclose(np.linalg.norm(X, axis=1), 1.0, atol=1e-9)


def test_bitwise_determinism(small_corpus):
    a = embed_dataset(small_corpus.sequences, SequenceEmbedder(seed=5)).rows
    b = embed_dataset(small_corpus.sequences, SequenceEmbedder(seed=5)).rows
    c = embed_dataset(small_corpus.sequences, SequenceEmbedder(seed=6)).rows
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)


def test_idf_strictly_decreases_with_document_frequency(small_corpus):
    emb = SequenceEmbedder().fit(small_corpus.sequences)
    df, idf = emb.document_frequency_, emb.idf_
    for i in range(len(df)):
        for j in range(len(df)):
            if df[i] < df[j]:
                assert idf[i] > idf[j]


def test_random_projection_distortion(small_corpus):
    # The seeded projection keeps pairwise distances of the weighted counts.
    seqs = small_corpus.sequences
    emb = SequenceEmbedder(dim=256).fit(seqs)
    W = np.vstack([emb.weighted_counts(s) for s in seqs])
    P = W @ emb._projection[: W.shape[1]]
    rng = np.random.default_rng(0)
    pairs = rng.integers(0, len(seqs), size=(2000, 2))
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    orig = np.linalg.norm(W[pairs[:, 0]] - W[pairs[:, 1]], axis=1)
    proj = np.linalg.norm(P[pairs[:, 0]] - P[pairs[:, 1]], axis=1)
    keep = orig > 0
    ratio = proj[keep] / orig[keep]
    assert np.mean(np.abs(ratio - 1) <= 0.3) >= 0.95


def test_unseen_template_at_transform_time():
    emb = SequenceEmbedder(dim=16).fit(seqs_from([[0, 1]]))
    X = emb.transform(seqs_from([[0, 1], [7]])).rows
    assert np.allclose(np.linalg.norm(X, axis=1), 1.0)


# -- external provider -----------------------------------------------------------------


class FakeService:
    """Embedding endpoint that hashes each text into a vector and counts traffic."""

    def __init__(self, dim=8, fail=False, bad_dim=False):
        self.dim = dim
        self.fail = fail
        self.bad_dim = bad_dim
        self.requests = 0
        self.texts = []

    def __call__(self, request):
        self.requests += 1
        if self.fail:
            return httpx.Response(503)
        texts = json.loads(request.content)["texts"]
        self.texts += texts
        dim = self.dim + 1 if self.bad_dim else self.dim
        vectors = [np.random.default_rng(int(content_hash(t)[:8], 16)).standard_normal(dim).tolist() for t in texts]
        return httpx.Response(200, json={"vectors": vectors})


TEXTS = ["kernel: generating core <*>", "sshd: session opened <*>", "pbs_mom: Bad file descriptor in <*>"]


def external(service, cache_path=None, **kw):
    return SequenceEmbedder("external", dim=service.dim, endpoint="http://embed.test/v1", cache_path=cache_path,
                            template_texts=TEXTS, transport=httpx.MockTransport(service), **kw)


def test_external_rows_are_normalised(tmp_path):
    service = FakeService()
    seqs = seqs_from([[0, 1], [1, 2], [2]])
    X = external(service).fit(seqs).transform(seqs)
    assert X.rows.shape == (3, 8)
    assert np.allclose(np.linalg.norm(X.rows, axis=1), 1.0)
    assert X.provider_tag.startswith("external:")


def test_warm_cache_makes_no_requests(tmp_path):
    cache = tmp_path / "emb.jsonl"
    seqs = seqs_from([[0, 1], [1, 2], [2]])
    cold = FakeService()
    first = external(cold, cache).fit(seqs).transform(seqs).rows
    assert cold.requests == 1
    warm = FakeService()
    second = external(warm, cache).fit(seqs).transform(seqs).rows
    assert warm.requests == 0
    assert np.array_equal(first, second)


def test_corrupted_cache_entry_refetched_once(tmp_path):
    cache = tmp_path / "emb.jsonl"
    seqs = seqs_from([[0, 1], [1, 2], [2]])
    external(FakeService(), cache).fit(seqs).transform(seqs)
    lines = cache.read_text().splitlines()
    rec = json.loads(lines[1])
    rec["hash"] = "0" * 64
    lines[1] = json.dumps(rec)
    cache.write_text("\n".join(lines) + "\n")
    service = FakeService()
    external(service, cache).fit(seqs).transform(seqs)
    assert service.requests == 1
    assert len(service.texts) == 1


def test_unreachable_service():
    seqs = seqs_from([[0], [1]])
    with pytest.raises(ProviderUnreachable):
        external(FakeService(fail=True)).fit(seqs).transform(seqs)


def test_dimension_mismatch():
    seqs = seqs_from([[0], [1]])
    with pytest.raises(DimensionMismatch):
        external(FakeService(bad_dim=True)).fit(seqs).transform(seqs)


def test_partial_failure_reports_indices():
    ok = FakeService()

    def flaky(request):
        if b"Bad file" in request.content:
            return httpx.Response(500)
        return ok(request)

    seqs = seqs_from([[0], [1], [2], [0, 1]])
    emb = SequenceEmbedder("external", dim=8, endpoint="http://embed.test/v1", template_texts=TEXTS,
                           transport=httpx.MockTransport(flaky), batch_size=1, max_inflight=1).fit(seqs)
    with pytest.raises(PartialFailure) as info:
        emb.transform(seqs)
    assert info.value.failed_indices == [2]
