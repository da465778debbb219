"""Raw line parsing, fixed-depth prefix-tree template mining, sliding windows."""

from __future__ import annotations

import bisect
import re
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

from sklearn.base import BaseEstimator, TransformerMixin

from .core import ANOMALOUS, NORMAL, WILDCARD, LogRecord, LogSequence, Template
from .exceptions import EmptyMessage, InvalidConfig, UnparseableTimestamp, UnsortedInput

_HAS_DIGIT = re.compile(r"\d")


@dataclass(frozen=True)
class FieldLayout:
    """Column layout of a raw log line.

    The message is every field from ``msg_start`` on, re-joined with single
    spaces. ``label_field`` follows the BGL convention: ``-`` is normal and
    any other alert tag is anomalous.
    """

    ts_field: int = 0
    msg_start: int = 1
    label_field: Optional[int] = None
    delimiter: Optional[str] = None

    @classmethod
    def bgl(cls) -> "FieldLayout":
        return cls(ts_field=1, msg_start=9, label_field=0)


def parse_line(raw: str, layout: FieldLayout = FieldLayout()) -> LogRecord:
    fields = raw.rstrip("\n").split(layout.delimiter)
    if layout.delimiter is not None:
        fields = [f.strip() for f in fields]
    try:
        ts = int(fields[layout.ts_field])
    except (IndexError, ValueError):
        raise UnparseableTimestamp(f"no integer timestamp in field {layout.ts_field}: {raw!r}")
    if ts < 0:
        raise UnparseableTimestamp(f"negative timestamp in {raw!r}")
    message = " ".join(f for f in fields[layout.msg_start:] if f)
    if not message.strip():
        raise EmptyMessage(f"empty message in {raw!r}")
    label = None
    if layout.label_field is not None:
        label = NORMAL if fields[layout.label_field] == "-" else ANOMALOUS
    return LogRecord(ts, message, label)


def preprocess_tokens(message: str) -> list:
    """Whitespace tokens; tokens carrying digits become wildcards up front."""
    return [WILDCARD if _HAS_DIGIT.search(tok) else tok for tok in message.split()]


class _Node:
    __slots__ = ("children", "cluster_ids")

    def __init__(self):
        self.children = {}
        self.cluster_ids = []


class DrainParser(BaseEstimator, TransformerMixin):
    """Online template miner over a fixed-depth prefix tree.

    Messages are routed by token count, then by their first ``depth - 2``
    tokens, to a leaf holding candidate templates. The best candidate by
    token-level similarity absorbs the message if the similarity reaches
    ``sim_threshold``; differing positions turn into wildcards.

    Parameters
    ----------
    depth : int, default=4
        Depth of the prefix tree (root and length levels included).
    sim_threshold : float, default=0.4
        Minimum fraction of positions with equal literals to merge.
    max_children : int, default=100
        Branch cap per internal node; overflow goes to a wildcard child.
    """

    def __init__(self, depth=4, sim_threshold=0.4, max_children=100):
        self.depth = depth
        self.sim_threshold = sim_threshold
        self.max_children = max_children

    def _check_params(self):
        if self.depth < 2:
            raise InvalidConfig("depth must be >= 2")
        if not 0 < self.sim_threshold < 1:
            raise InvalidConfig("sim_threshold must lie in (0, 1)")
        if self.max_children < 1:
            raise InvalidConfig("max_children must be >= 1")

    def _init_state(self):
        self._check_params()
        self._root = _Node()
        self._tokens = []
        self._support = []

    def fit(self, X, y=None):
        self._init_state()
        for message in X:
            self.match(preprocess_tokens(message))
        return self

    def partial_fit(self, X, y=None):
        if not hasattr(self, "_root"):
            self._init_state()
        for message in X:
            self.match(preprocess_tokens(message))
        return self

    def fit_transform(self, X, y=None, **fit_params):
        self._init_state()
        return [self.match(preprocess_tokens(m)) for m in X]

    def transform(self, X):
        """Template ids for ``X``; unseen messages still get (new) templates."""
        if not hasattr(self, "_root"):
            self._init_state()
        return [self.match(preprocess_tokens(m)) for m in X]

    @property
    def templates_(self) -> List[Template]:
        return [Template(i, tuple(toks), sup)
                for i, (toks, sup) in enumerate(zip(self._tokens, self._support))]

    def _leaf(self, tokens):
        node = self._root.children.setdefault(len(tokens), _Node())
        for tok in tokens[: self.depth - 2]:
            if tok in node.children:
                node = node.children[tok]
            elif WILDCARD in node.children and (tok == WILDCARD or len(node.children) >= self.max_children):
                node = node.children[WILDCARD]
            elif len(node.children) < self.max_children:
                node = node.children.setdefault(tok, _Node())
            else:
                node = node.children.setdefault(WILDCARD, _Node())
        return node

    def _similarity(self, template, tokens):
        equal = sum(1 for a, b in zip(template, tokens) if a == b and a != WILDCARD)
        return equal / len(tokens)

    def match(self, tokens: Sequence[str]) -> int:
        """Return the template id for ``tokens``, creating or generalising as needed."""
        if not tokens:
            raise EmptyMessage("cannot match an empty token list")
        if not hasattr(self, "_root"):
            self._init_state()
        tokens = list(tokens)
        leaf = self._leaf(tokens)
        best, best_key = None, None
        for cid in leaf.cluster_ids:
            template = self._tokens[cid]
            sim = self._similarity(template, tokens)
            key = (sim, sum(t == WILDCARD for t in template))
            if sim >= self.sim_threshold and (best_key is None or key > best_key):
                best, best_key = cid, key
        if best is None:
            best = len(self._tokens)
            self._tokens.append(tokens)
            self._support.append(1)
            leaf.cluster_ids.append(best)
            return best
        self._tokens[best] = [a if a == b else WILDCARD for a, b in zip(self._tokens[best], tokens)]
        self._support[best] += 1
        return best


def parse_records(records: Iterable[LogRecord], parser: DrainParser) -> list:
    """Attach template ids to records (returns new records)."""
    out = []
    for rec in records:
        tid = parser.match(preprocess_tokens(rec.message))
        out.append(LogRecord(rec.timestamp, rec.message, rec.source_label, tid))
    return out


def window_sequences(records: Sequence[LogRecord], window_len: int = 60, stride: int = 30) -> list:
    """Group parsed records into overlapping time windows.

    Windows start at ``min_ts + k * stride`` for every start not past the last
    timestamp, each covering ``[start, start + window_len)``. Empty windows
    are dropped. A window is anomalous if any of its records is, normal if all
    records are labelled normal, and unlabelled otherwise.
    """
    if window_len <= 0 or not 0 < stride <= window_len:
        raise InvalidConfig("need window_len > 0 and 0 < stride <= window_len")
    if not records:
        return []
    ts = [r.timestamp for r in records]
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise UnsortedInput("records must be sorted by timestamp")
    if any(r.template_id is None for r in records):
        raise InvalidConfig("records must be parsed before windowing")

    first, last = ts[0], ts[-1]
    sequences = []
    start = first
    while start <= last:
        lo = bisect.bisect_left(ts, start)
        hi = bisect.bisect_left(ts, start + window_len)
        if hi > lo:
            members = records[lo:hi]
            labels = [r.source_label for r in members]
            if ANOMALOUS in labels:
                label = ANOMALOUS
            elif all(lab == NORMAL for lab in labels):
                label = NORMAL
            else:
                label = None
            sequences.append(LogSequence(len(sequences), start, start + window_len,
                                         tuple(r.template_id for r in members), label))
        start += stride
    return sequences
