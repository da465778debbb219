"""Labelled synthetic corpora with clustered and sparse (residual) anomalies.

Normal traffic comes from per-pattern order-2 Markov chains. Each pattern
cycles through two loops joined at a hub template. A sequence starts in a
random loop and, by default, keeps to it, so every pattern shows up as two
tight modes; ``stay_prob < 1`` lets the chain switch loops at the hub.

Anomalies come in two shapes:

* burst -- a normal sequence from the failing component, overrun by a run of
  that anomaly cluster's own templates (clustered in embedding space);
* sparse -- a normal sequence with one or two residual anomaly templates
  spliced in right after a hub visit (hidden inside normal regions).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import ANOMALOUS, NORMAL, LogSequence, Template
from .evaluator import severity_hit
from .exceptions import InvalidConfig

_COMPONENTS = ["kernel", "ciod", "pbs_mom", "mmcs", "sshd", "ntpd", "lustre", "sched", "rpcd", "netmon",
               "bglmaster", "idoproxy", "nfsd", "crond", "psmd", "hwmon"]
_VERBS = ["generating", "starting", "completed", "received", "sending", "registered", "updated", "opened",
          "closed", "synchronized", "allocated", "checkpointed", "scanned", "flushed", "loaded", "queued",
          "polling", "mapped", "resumed", "reported"]
_OBJECTS = ["core <*>", "node <*>", "job <*>", "session <*>", "block <*>", "request <*>", "buffer <*>",
            "link <*>", "partition <*>", "lease <*>", "socket <*>", "config <*>"]
_BURST = ["machine check interrupt fatal on <*>", "error reading message prefix on <*>",
          "Bad file descriptor in <*>", "kernel panic while handling <*>", "failed to mount <*>",
          "exception in interrupt handler <*>", "job aborted by <*>", "permission denied for <*>",
          "fatal torus receiver error <*>", "data TLB error interrupt <*>", "link failure on <*>",
          "rts panic stopping execution <*>"]
_RESIDUAL = ["error reading checkpoint <*>", "lost contact failed ack <*>", "parity error detected <*>",
             "fatal ddr correctable overflow <*>", "exception in rpc reply <*>", "write denied on <*>",
             "bad packet checksum <*>", "timeout failure on <*>", "aborting stale <*>", "panic path hit <*>"]
_BENIGN_FAILURE = "wait_request failed <*>"


@dataclass(frozen=True)
class SynthConfig:
    n_sequences: int = 5000
    anomaly_ratio: float = 0.12
    n_normal_patterns: int = 8
    n_anomaly_clusters: int = 3
    residual_rate: float = 0.03
    vocab_size: int = 120
    seed: int = 0
    min_len: int = 24
    max_len: int = 48
    stay_prob: float = 1.0
    detour_prob: float = 0.1
    burst_fraction: tuple = (0.4, 0.7)
    benign_failure_patterns: int = 0
    window_len: int = 60
    stride: int = 30

    def __post_init__(self):
        if self.n_sequences < 1:
            raise InvalidConfig("n_sequences must be >= 1")
        if not 0 <= self.anomaly_ratio < 0.5:
            raise InvalidConfig("anomaly_ratio must lie in [0, 0.5)")
        if not 0 <= self.residual_rate <= self.anomaly_ratio:
            raise InvalidConfig("residual_rate must lie in [0, anomaly_ratio]")
        # residual_rate is the sparse share of the anomalies, not of the corpus
        if self.n_normal_patterns < 1 or self.n_anomaly_clusters < 1:
            raise InvalidConfig("need at least one normal pattern and one anomaly cluster")
        if self.n_anomaly_clusters > len(_BURST) // 3:
            raise InvalidConfig(f"at most {len(_BURST) // 3} anomaly clusters supported")
        if self.n_normal_patterns > len(_RESIDUAL):
            raise InvalidConfig(f"at most {len(_RESIDUAL)} normal patterns supported")
        if self.vocab_size < self.n_normal_patterns * 8 + 2 + 3 * self.n_anomaly_clusters + self.n_normal_patterns:
            raise InvalidConfig("vocab_size too small for the requested patterns")
        if not 1 <= self.min_len <= self.max_len:
            raise InvalidConfig("need 1 <= min_len <= max_len")
        if self.benign_failure_patterns > self.n_normal_patterns:
            raise InvalidConfig("benign_failure_patterns exceeds n_normal_patterns")


# Presets used by the acceptance suite.
DEFAULT = SynthConfig()
RESIDUAL_HEAVY = SynthConfig(n_sequences=3000, anomaly_ratio=0.4, residual_rate=0.4, n_anomaly_clusters=1)
INDUSTRY_STRESS = SynthConfig(anomaly_ratio=0.49, residual_rate=0.1)


@dataclass(frozen=True)
class _Pattern:
    hub: int
    loop_a: tuple
    loop_b: tuple
    detour: int
    residual: int


@dataclass
class SynthCorpus:
    sequences: list
    templates: list
    kinds: list  # "normal" | "burst" | "sparse" per sequence
    patterns: list  # source normal pattern per sequence

    @property
    def template_texts(self):
        return [t.text for t in self.templates]


def _vocabulary(cfg: SynthConfig, rng):
    texts = []
    seen = set()

    def add(text):
        base, k = text, 1
        while text in seen:
            k += 1
            text = f"{base} seq{'x' * k}"
        seen.add(text)
        texts.append(text)
        return len(texts) - 1

    def benign():
        while True:
            text = f"{rng.choice(_COMPONENTS)}: {rng.choice(_VERBS)} {rng.choice(_OBJECTS)}"
            if text not in seen and not severity_hit(text):
                return add(text)

    patterns = []
    residual_ids = [add(f"{rng.choice(_COMPONENTS)}: {_RESIDUAL[p]}") for p in range(cfg.n_normal_patterns)]
    for p in range(cfg.n_normal_patterns):
        if p < cfg.benign_failure_patterns:
            hub = add(f"pbs_mom: {_BENIGN_FAILURE} p{'q' * (p + 1)}")
        else:
            hub = benign()
        loop_a = tuple(benign() for _ in range(3))
        loop_b = tuple(benign() for _ in range(3))
        detour = benign()
        patterns.append(_Pattern(hub, loop_a, loop_b, detour, residual_ids[p]))
    bursts = []
    for c in range(cfg.n_anomaly_clusters):
        bursts.append(tuple(add(f"{_COMPONENTS[(3 * c + j) % len(_COMPONENTS)]}: {_BURST[3 * c + j]}")
                            for j in range(3)))
    while len(texts) < cfg.vocab_size:
        benign()  # filler templates that never occur, as in a real template table
    return texts, patterns, bursts


def _walk(pat: _Pattern, length, cfg: SynthConfig, rng):
    loops = (pat.loop_a, pat.loop_b)

    current = int(rng.integers(2))
    out = []
    pos = int(rng.integers(4))  # phase within hub + loop cycle
    while len(out) < length:
        if pos == 0:
            out.append(pat.hub)
            if rng.random() > cfg.stay_prob:
                current = 1 - current
        else:
            out.append(loops[current][pos - 1])
            if pos == 2 and rng.random() < cfg.detour_prob and len(out) < length:
                out.append(pat.detour)
        pos = (pos + 1) % 4
    return out[:length]


def generate(cfg: SynthConfig = DEFAULT) -> SynthCorpus:
    """Generate a labelled corpus; identical configs give identical corpora."""
    rng = np.random.default_rng(cfg.seed)
    texts, patterns, bursts = _vocabulary(cfg, rng)
    n = cfg.n_sequences
    n_anom = int(round(cfg.anomaly_ratio * n))
    n_sparse = int(round(cfg.residual_rate * n_anom))
    n_burst = n_anom - n_sparse
    kinds = ["normal"] * (n - n_anom) + ["sparse"] * n_sparse + ["burst"] * n_burst
    kinds = [kinds[i] for i in rng.permutation(n)]

    sequences, sources = [], []
    burst_seen = 0
    for i, kind in enumerate(kinds):
        length = int(rng.integers(cfg.min_len, cfg.max_len + 1))
        if kind == "burst":
            c = burst_seen % len(bursts)
            burst_seen += 1
            p = c % len(patterns)
            base = _walk(patterns[p], length, cfg, rng)
            frac = rng.uniform(*cfg.burst_fraction)
            n_burst_tokens = max(3, int(round(frac * length)))
            start = int(rng.integers(0, max(1, length - n_burst_tokens) + 1))
            run = [bursts[c][j % 3] for j in range(n_burst_tokens)]
            tids = base[:start] + run + base[start:]
            tids = tids[:max(length, n_burst_tokens)]
        else:
            p = int(rng.integers(len(patterns)))
            tids = _walk(patterns[p], length, cfg, rng)
            if kind == "sparse":
                hubs = [j for j, t in enumerate(tids) if t == patterns[p].hub]
                k = 1 + int(rng.random() < 0.5)
                spots = sorted(rng.choice(hubs, size=min(k, len(hubs)), replace=False)) if hubs else [0]
                for offset, j in enumerate(spots):
                    tids.insert(j + 1 + offset, patterns[p].residual)
        label = NORMAL if kind == "normal" else ANOMALOUS
        start_ts = i * cfg.stride
        sequences.append(LogSequence(i, start_ts, start_ts + cfg.window_len, tuple(int(t) for t in tids), label))
        sources.append(p)

    support = np.zeros(len(texts), dtype=np.int64)
    for s in sequences:
        np.add.at(support, np.asarray(s.template_ids), 1)
    templates = [Template(i, tuple(t.split()), int(support[i])) for i, t in enumerate(texts)]
    return SynthCorpus(sequences, templates, kinds, sources)


def split(corpus: SynthCorpus, test_fraction=0.2, seed=0):
    """Seeded train/test split; both halves get dense seq ids and share templates."""
    n = len(corpus.sequences)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_test = int(round(test_fraction * n))
    test_idx, train_idx = np.sort(order[:n_test]), np.sort(order[n_test:])

    def take(idx):
        seqs = [replace(corpus.sequences[i], seq_id=j) for j, i in enumerate(idx)]
        return SynthCorpus(seqs, corpus.templates, [corpus.kinds[i] for i in idx],
                           [corpus.patterns[i] for i in idx])

    return take(train_idx), take(test_idx)
