"""Domain types shared across the pipeline, plus the dataset interchange format."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import IO, Iterable, Iterator, Optional, Sequence

import numpy as np

from .exceptions import (
    EmptyDataset,
    InvalidConfig,
    NonFiniteTimestamp,
    NonMonotoneTimestamps,
)

NORMAL = "normal"
ANOMALOUS = "anomalous"
LOW = "low_contamination"
HIGH = "high_contamination"
WILDCARD = "<*>"

_LABELS = (NORMAL, ANOMALOUS)


@dataclass(frozen=True)
class LogRecord:
    timestamp: int
    message: str
    source_label: Optional[str] = None
    template_id: Optional[int] = None

    def __post_init__(self):
        if self.timestamp < 0:
            raise InvalidConfig(f"negative timestamp {self.timestamp}")
        if not self.message.strip():
            raise InvalidConfig("empty message")
        if self.source_label is not None and self.source_label not in _LABELS:
            raise InvalidConfig(f"unknown label {self.source_label!r}")


@dataclass(frozen=True)
class Template:
    id: int
    tokens: tuple
    support_count: int = 0

    def __post_init__(self):
        if not self.tokens:
            raise InvalidConfig("template needs at least one token")

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass(frozen=True)
class LogSequence:
    seq_id: int
    window_start: int
    window_end: int
    template_ids: tuple
    ground_truth: Optional[str] = None

    def __post_init__(self):
        if not self.template_ids:
            raise InvalidConfig(f"sequence {self.seq_id} is empty")
        if self.ground_truth is not None and self.ground_truth not in _LABELS:
            raise InvalidConfig(f"unknown label {self.ground_truth!r}")

    @property
    def is_anomalous(self) -> bool:
        return self.ground_truth == ANOMALOUS


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    rows: np.ndarray
    provider_tag: str = "deterministic"

    def __post_init__(self):
        rows = np.array(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise InvalidConfig("embedding matrix must be 2-D")
        if not np.all(np.isfinite(rows)):
            raise InvalidConfig("embedding matrix contains non-finite values")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self):
        return self.rows.shape[0]


@dataclass(frozen=True)
class RepresentativeSet:
    center_ids: tuple
    neighbor_ids: tuple  # one tuple per center

    @property
    def members(self) -> tuple:
        """Centers followed by neighbors, duplicates removed, order kept."""
        seen = dict.fromkeys(self.center_ids)
        for group in self.neighbor_ids:
            seen.update(dict.fromkeys(group))
        return tuple(seen)


@dataclass(frozen=True)
class Region:
    region_id: int
    member_ids: tuple
    centroid: tuple
    representatives: Optional[RepresentativeSet] = None
    verdict: Optional[str] = None


@dataclass(frozen=True)
class Rule:
    """A textual domain rule.

    ``template_id``/``min_count``/``label`` are set for rules the offline
    backend can interpret; free-text rules from a chat model leave them empty.
    """

    text: str
    iteration_added: int
    source_error_ids: tuple = ()
    template_id: Optional[int] = None
    min_count: int = 1
    label: Optional[str] = None


@dataclass(frozen=True)
class RuleSet:
    rules: tuple = ()

    def __len__(self):
        return len(self.rules)

    def __iter__(self):
        return iter(self.rules)

    def extend(self, new_rules: Iterable[Rule]) -> "RuleSet":
        """Return a new set with ``new_rules`` appended; case-folded duplicates dropped."""
        seen = {r.text.casefold() for r in self.rules}
        added = []
        for rule in new_rules:
            key = rule.text.casefold()
            if key not in seen:
                seen.add(key)
                added.append(rule)
        return RuleSet(self.rules + tuple(added))

    @property
    def texts(self) -> list:
        return [r.text for r in self.rules]


@dataclass(frozen=True)
class PurgeConfig:
    K: int = 20
    k_nn: int = 10
    epsilon: float = 1e-6
    r_min: object = "auto"
    M: int = 5
    n_max: int = 5
    percentile: float = 80.0
    window_len: int = 60
    stride: int = 30
    seed: int = 0
    min_size: int = 10
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.K < 2:
            raise InvalidConfig("K must be >= 2")
        if self.k_nn < 1:
            raise InvalidConfig("k_nn must be >= 1")
        if not self.epsilon > 0:
            raise InvalidConfig("epsilon must be > 0")
        if self.n_max < 1:
            raise InvalidConfig("n_max must be >= 1")
        if not 0 < self.percentile < 100:
            raise InvalidConfig("percentile must lie in (0, 100)")
        if self.window_len <= 0 or self.stride <= 0 or self.stride > self.window_len:
            raise InvalidConfig("need 0 < stride <= window_len")
        if self.r_min != "auto" and not float(self.r_min) > 0:
            raise InvalidConfig("r_min must be 'auto' or a positive number")
        if self.M < 0:
            raise InvalidConfig("M must be >= 0")
        if not 0 < self.val_fraction < 1:
            raise InvalidConfig("val_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class DatasetSummary:
    count: int
    labeled: int
    anomalous: int
    first_ts: int
    last_ts: int

    @property
    def time_span(self) -> int:
        return self.last_ts - self.first_ts


def validate_dataset(records: Iterable[LogRecord], strict: bool = False) -> DatasetSummary:
    """Single pass over ``records`` (any iterable, so it streams).

    In strict mode out-of-order timestamps raise ``NonMonotoneTimestamps``.
    """
    count = labeled = anomalous = 0
    first = last = prev = None
    for rec in records:
        ts = rec.timestamp
        if isinstance(ts, float) and not math.isfinite(ts):
            raise NonFiniteTimestamp(f"record {count} has timestamp {ts}")
        if strict and prev is not None and ts < prev:
            raise NonMonotoneTimestamps(f"record {count}: {ts} < {prev}")
        prev = ts
        first = ts if first is None else min(first, ts)
        last = ts if last is None else max(last, ts)
        if rec.source_label is not None:
            labeled += 1
            anomalous += rec.source_label == ANOMALOUS
        count += 1
    if count == 0:
        raise EmptyDataset("no records")
    return DatasetSummary(count, labeled, anomalous, int(first), int(last))


# -- interchange --------------------------------------------------------------
#
# Records:   {"ts": int, "msg": str, "label": "normal"|"anomalous"?}
# Sequences: {"start": int, "end": int, "tids": [int], "label": ...?}
# A sequence stream may open with {"templates": [{"id", "text", "support"}]}.


def record_to_json(rec: LogRecord) -> dict:
    out = {"ts": rec.timestamp, "msg": rec.message}
    if rec.source_label is not None:
        out["label"] = rec.source_label
    if rec.template_id is not None:
        out["tid"] = rec.template_id
    return out


def record_from_json(obj: dict) -> LogRecord:
    return LogRecord(int(obj["ts"]), obj["msg"], obj.get("label"), obj.get("tid"))


def sequence_to_json(seq: LogSequence) -> dict:
    out = {"start": seq.window_start, "end": seq.window_end, "tids": list(seq.template_ids)}
    if seq.ground_truth is not None:
        out["label"] = seq.ground_truth
    return out


def write_records(records: Iterable[LogRecord], fh: IO[str]) -> None:
    for rec in records:
        fh.write(json.dumps(record_to_json(rec)) + "\n")


def read_records(fh: IO[str]) -> Iterator[LogRecord]:
    for line in fh:
        if line.strip():
            yield record_from_json(json.loads(line))


def write_sequences(
    sequences: Iterable[LogSequence], fh: IO[str], templates: Optional[Sequence[Template]] = None
) -> None:
    if templates is not None:
        header = [{"id": t.id, "text": t.text, "support": t.support_count} for t in templates]
        fh.write(json.dumps({"templates": header}) + "\n")
    for seq in sequences:
        fh.write(json.dumps(sequence_to_json(seq)) + "\n")


def read_sequences(fh: IO[str]) -> tuple:
    """Return ``(sequences, templates)``; seq ids are re-densified in file order."""
    sequences, templates = [], []
    for line in fh:
        if not line.strip():
            continue
        obj = json.loads(line)
        if "templates" in obj:
            templates = [
                Template(int(t["id"]), tuple(t["text"].split()), int(t.get("support", 0)))
                for t in obj["templates"]
            ]
            continue
        sequences.append(
            LogSequence(len(sequences), int(obj["start"]), int(obj["end"]),
                        tuple(int(t) for t in obj["tids"]), obj.get("label"))
        )
    return sequences, templates


def check_partition(regions: Sequence[Region], n: int) -> None:
    """Raise unless ``regions`` cover ``range(n)`` exactly once."""
    seen = np.zeros(n, dtype=np.int64)
    for region in regions:
        if not region.member_ids:
            raise InvalidConfig(f"region {region.region_id} is empty")
        np.add.at(seen, np.asarray(region.member_ids), 1)
    if not np.all(seen == 1):
        raise InvalidConfig("regions do not partition the sequence ids")


def config_dict(cfg) -> dict:
    return asdict(cfg)
