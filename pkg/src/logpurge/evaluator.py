"""Region contamination judgments and domain-rule induction.

Two backends share one surface:

* ``deterministic`` -- offline. A representative is flagged when one of its
  templates hits the severity lexicon (unless a normal rule exempts it) or an
  anomalous rule fires. The region score is the flagged fraction; a score of
  at least one half means high contamination (ties go high).
* ``chat_service`` -- a chat-completion endpoint spoken to over JSON/HTTP at
  temperature 0. Responses are cached by prompt hash.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import httpx
import numpy as np

from .core import ANOMALOUS, HIGH, LOW, NORMAL, Rule, RuleSet
from .exceptions import (
    BackendUnreachable,
    ContextBudgetExceeded,
    InvalidConfig,
    UnparseableResponse,
)
from .regions import select_representatives

log = logging.getLogger(__name__)

SEVERITY_TERMS = ("error", "fail", "fatal", "exception", "denied", "bad", "abort", "panic")
MAX_TEMPLATES_PER_SEQUENCE = 50
DEFAULT_BUDGET = 120_000
API_KEY_ENV = "LOGPURGE_API_KEY"

PREAMBLE = (
    "You are a reliability engineer reviewing system logs. Below are representative "
    "log sequences sampled from one region of a training corpus that should contain "
    "only normal behaviour. Each sequence is listed as its event templates with counts. "
    "Decide whether the region is highly contaminated with anomalous behaviour, weighing "
    "how severe and how persistent any failures are rather than surface co-occurrence."
)
OUTPUT_SCHEMA = (
    'Answer with a single JSON object: {"label": "high" | "low", "rationale": "<one paragraph>", '
    '"per_sequence": ["high" | "low", ...]} where per_sequence follows the order above.'
)
RULE_PREAMBLE = (
    "A lightweight detector trained on data you judged clean disagrees with the labels "
    "below. Summarise at most 5 general, system-level rules that explain these "
    "disagreements and would help judge future log regions. "
    'Answer as JSON: {"rules": ["...", ...]}.'
)

_WORD = re.compile(r"[a-z]+")


def severity_hit(text: str, terms=SEVERITY_TERMS) -> bool:
    return any(w.startswith(t) for w in _WORD.findall(text.lower()) for t in terms)


def prompt_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Representative:
    """A representative sequence as the evaluator sees it."""

    seq_id: int
    template_ids: tuple

    def counts(self):
        c = Counter(self.template_ids)
        return sorted(c.items(), key=lambda kv: (-kv[1], kv[0]))


@dataclass(frozen=True)
class PromptTemplate:
    system_preamble: str
    rules_block: str
    payload: str
    output_schema: str

    def render(self) -> str:
        parts = [self.system_preamble]
        if self.rules_block:
            parts.append(self.rules_block)
        parts += [self.payload, self.output_schema]
        return "\n\n".join(parts)


def render_representative(rep: Representative, template_texts, limit=MAX_TEMPLATES_PER_SEQUENCE):
    counts = rep.counts()
    lines = [f"[sequence {rep.seq_id}]"]
    for tid, c in counts[:limit]:
        lines.append(f"  x{c}  {template_texts[tid]}")
    if len(counts) > limit:
        lines.append(f"  +{len(counts) - limit} more")
    return "\n".join(lines)


def build_prompt(rules: RuleSet, reps: Sequence[Representative], template_texts,
                 budget: int = DEFAULT_BUDGET) -> PromptTemplate:
    if not reps:
        raise InvalidConfig("a prompt needs at least one representative")
    rules_block = ""
    if len(rules):
        rules_block = "Domain rules:\n" + "\n".join(f"{i}. {r.text}" for i, r in enumerate(rules, 1))
    payload = "Representative sequences:\n" + "\n".join(
        render_representative(r, template_texts) for r in reps)
    prompt = PromptTemplate(PREAMBLE, rules_block, payload, OUTPUT_SCHEMA)
    if len(prompt.render()) > budget:
        raise ContextBudgetExceeded(f"prompt of {len(prompt.render())} chars exceeds budget {budget}")
    return prompt


@dataclass(frozen=True)
class Verdict:
    label: str
    rationale: str = ""
    per_representative: Optional[tuple] = None
    score: Optional[float] = None


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "deterministic"
    endpoint: Optional[str] = None
    model_name: str = "gpt-4o"
    temperature: float = 0.0
    max_retries: int = 2
    cache_path: Optional[str] = None
    max_inflight: int = 4
    timeout: float = 60.0

    def __post_init__(self):
        if self.kind not in ("deterministic", "chat_service"):
            raise InvalidConfig(f"unknown backend kind {self.kind!r}")
        if self.temperature != 0:
            raise InvalidConfig("temperature is fixed at 0")
        if self.kind == "chat_service" and not self.endpoint:
            raise InvalidConfig("chat_service backend needs an endpoint")


@dataclass(frozen=True)
class ErrorSample:
    """A validation sequence on which detector and reference disagree.

    ``target_label`` is the side a rule induced from this sample should
    endorse.
    """

    seq_id: int
    template_ids: tuple
    detector_label: str
    reference_label: str
    target_label: str


def _aggregate(per_rep):
    score = sum(lab == ANOMALOUS for lab in per_rep) / len(per_rep)
    return score, HIGH if score >= 0.5 else LOW


def rule_fires(rule: Rule, counts: dict) -> bool:
    return rule.template_id is not None and counts.get(rule.template_id, 0) >= rule.min_count


class ResponseCache:
    """Append-only JSONL cache of ``{prompt_hash, content}`` records."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self._data = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            for line in self.path.read_text().splitlines():
                if line.strip():
                    rec = json.loads(line)
                    self._data[rec["prompt_hash"]] = rec["content"]

    def get(self, key):
        return self._data.get(key)

    def put(self, key, content):
        with self._lock:
            self._data[key] = content
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a") as fh:
                    fh.write(json.dumps({"prompt_hash": key, "content": content}) + "\n")


def extract_json(text: str):
    """First parseable JSON object embedded in ``text``, or None."""
    start = text.find("{")
    while start != -1:
        depth = 0
        for i in range(start, len(text)):
            if text[i] == "{":
                depth += 1
            elif text[i] == "}":
                depth -= 1
                if depth == 0:
                    try:
                        return json.loads(text[start:i + 1])
                    except json.JSONDecodeError:
                        break
        start = text.find("{", start + 1)
    return None


def _parse_label(value):
    if not isinstance(value, str):
        return None
    v = value.strip().lower()
    if v.startswith("high"):
        return HIGH
    if v.startswith("low"):
        return LOW
    return None


class ChatClient:
    """Chat-completion transport: ``{model, temperature, messages}`` -> ``choices[0].message.content``."""

    def __init__(self, cfg: BackendConfig, transport=None):
        self.cfg = cfg
        headers = {}
        key = os.environ.get(API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(timeout=cfg.timeout, transport=transport, headers=headers)
        self._sem = threading.Semaphore(max(1, cfg.max_inflight))
        self.requests = 0

    def complete(self, messages) -> str:
        body = {"model": self.cfg.model_name, "temperature": 0, "messages": messages}
        last = None
        with self._sem:
            for _ in range(self.cfg.max_retries + 1):
                try:
                    self.requests += 1
                    resp = self._client.post(self.cfg.endpoint, json=body)
                    resp.raise_for_status()
                    return resp.json()["choices"][0]["message"]["content"]
                except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
                    last = exc
        raise BackendUnreachable(f"chat endpoint {self.cfg.endpoint} failed: {last}")


class Evaluator:
    """Judges regions and induces rules with the configured backend.

    Parameters
    ----------
    config : BackendConfig
    template_texts : sequence of str
        Template text per template id.
    lexicon : tuple of str
        Severity stems for the deterministic backend.
    transport : httpx transport, optional
        Injected into the chat client (tests use a mock transport).
    """

    def __init__(self, config: BackendConfig = BackendConfig(), template_texts=(), lexicon=SEVERITY_TERMS,
                 transport=None, budget=DEFAULT_BUDGET):
        self.config = config
        self.template_texts = list(template_texts)
        self.lexicon = tuple(lexicon)
        self.budget = budget
        self._severe = [severity_hit(t, self.lexicon) for t in self.template_texts]
        self.cache = ResponseCache(config.cache_path)
        self._verdicts = {}
        self.client = ChatClient(config, transport) if config.kind == "chat_service" else None

    # -- judgment ----------------------------------------------------------

    def label_representative(self, rep: Representative, rules: RuleSet) -> str:
        counts = Counter(rep.template_ids)
        exempt = set()
        for rule in rules:
            if rule_fires(rule, counts):
                if rule.label == ANOMALOUS:
                    return ANOMALOUS
                if rule.label == NORMAL:
                    exempt.add(rule.template_id)
        for tid in counts:
            if tid not in exempt and tid < len(self._severe) and self._severe[tid]:
                return ANOMALOUS
        return NORMAL

    def judge_region(self, reps: Sequence[Representative], rules: RuleSet = RuleSet()) -> Verdict:
        prompt = build_prompt(rules, reps, self.template_texts, self.budget).render()
        key = prompt_hash(prompt)
        if key in self._verdicts:
            return self._verdicts[key]
        if self.config.kind == "deterministic":
            per = tuple(self.label_representative(r, rules) for r in reps)
            score, label = _aggregate(per)
            hits = sum(p == ANOMALOUS for p in per)
            verdict = Verdict(label, f"{hits}/{len(per)} representatives show severe events or rule hits",
                              per, score)
        else:
            verdict = self._judge_chat(prompt, key, len(reps))
        self._verdicts[key] = verdict
        return verdict

    def _judge_chat(self, prompt, key, n_reps) -> Verdict:
        content = self.cache.get(key)
        messages = [{"role": "user", "content": prompt}]
        parsed = extract_json(content) if content is not None else None
        if content is None:
            content = self.client.complete(messages)
            parsed = extract_json(content)
            if parsed is None or _parse_label(parsed.get("label")) is None:
                messages += [{"role": "assistant", "content": content},
                             {"role": "user", "content": "Reply with the JSON object only. " + OUTPUT_SCHEMA}]
                content = self.client.complete(messages)
                parsed = extract_json(content)
            if parsed is not None and _parse_label(parsed.get("label")) is not None:
                self.cache.put(key, content)
        if parsed is None:
            raise UnparseableResponse(f"no JSON verdict in response: {content[:200]!r}")
        per = parsed.get("per_sequence")
        per_labels = None
        if isinstance(per, list) and len(per) == n_reps:
            mapped = [_parse_label(p) for p in per]
            if all(mapped):
                per_labels = tuple(ANOMALOUS if m == HIGH else NORMAL for m in mapped)
        if per_labels is not None:
            score, label = _aggregate(per_labels)
        else:
            label = _parse_label(parsed.get("label"))
            if label is None:
                raise UnparseableResponse(f"no label in response: {content[:200]!r}")
            score = 1.0 if label == HIGH else 0.0
        return Verdict(label, str(parsed.get("rationale", "")), per_labels, score)

    # -- rule induction ----------------------------------------------------

    def induce_rules(self, errors: Sequence[ErrorSample], iteration: int, document_frequency=None,
                     n_documents=None, max_rules=5, min_coverage=0.3, min_lift=2.0) -> list:
        """New rules explaining detector/reference disagreements.

        The deterministic backend names templates that are over-represented in
        the error samples relative to the corpus (``lift``) and present in at
        least ``min_coverage`` of a label group. It only reasons about
        templates that carry severity terms: anomalous rules confirm them,
        normal rules exempt them.
        """
        if not errors:
            raise InvalidConfig("rule induction needs at least one error sample")
        source = tuple(sorted(e.seq_id for e in errors))
        if self.config.kind == "chat_service":
            return self._induce_chat(errors, iteration, source, max_rules)
        candidates = []
        for label in (ANOMALOUS, NORMAL):
            group = [e for e in errors if e.target_label == label]
            if not group:
                continue
            present = Counter()
            min_count = {}
            for e in group:
                c = Counter(e.template_ids)
                for tid, k in c.items():
                    present[tid] += 1
                    min_count[tid] = min(min_count.get(tid, k), k)
            need = max(1, math.ceil(min_coverage * len(group)))
            for tid, hits in present.items():
                if hits < need:
                    continue
                if not (tid < len(self._severe) and self._severe[tid]):
                    continue
                coverage = hits / len(group)
                if document_frequency is not None and n_documents:
                    base = max(float(document_frequency[tid]) if tid < len(document_frequency) else 0.0, 1.0)
                    lift = coverage / (base / n_documents)
                else:
                    lift = math.inf
                if lift < min_lift:
                    continue
                candidates.append((coverage, lift, -tid, tid, label, min_count[tid]))
        candidates.sort(reverse=True)
        rules = []
        for coverage, lift, _, tid, label, f in candidates[:max_rules]:
            text = self.template_texts[tid] if tid < len(self.template_texts) else f"template {tid}"
            rules.append(Rule(f'sequences containing template {tid} "{text}" with frequency >= {f} are {label}',
                              iteration, source, tid, f, label))
        return rules

    def _induce_chat(self, errors, iteration, source, max_rules):
        blocks = []
        for e in errors:
            rep = render_representative(Representative(e.seq_id, e.template_ids), self.template_texts)
            blocks.append(f"{rep}\n  detector: {e.detector_label}; reference: {e.reference_label}")
        prompt = RULE_PREAMBLE + "\n\n" + "\n".join(blocks)
        key = prompt_hash(prompt)
        content = self.cache.get(key)
        if content is None:
            content = self.client.complete([{"role": "user", "content": prompt}])
            self.cache.put(key, content)
        parsed = extract_json(content)
        if parsed and isinstance(parsed.get("rules"), list):
            texts = [str(t).strip() for t in parsed["rules"]]
        else:
            texts = [re.sub(r"^\s*(?:[-*]|\d+[.)])\s*", "", line).strip() for line in content.splitlines()]
        texts = [t for t in texts if t][:max_rules]
        return [Rule(t, iteration, source) for t in texts]


def judge_region(reps, rules, evaluator: Evaluator) -> Verdict:
    return evaluator.judge_region(reps, rules)


def induce_rules(error_samples, evaluator: Evaluator, iteration=0, **kwargs) -> list:
    return evaluator.induce_rules(error_samples, iteration, **kwargs)


def select_error_representatives(error_ids, X, k_nn=10, r_min="auto", M=5) -> list:
    """Representative subset of the error set, chosen like region representatives."""
    ids = np.asarray(sorted(error_ids), dtype=np.int64)
    if ids.size == 0:
        raise InvalidConfig("error set is empty")
    reps = select_representatives(ids, X, k_nn, r_min, M)
    return sorted(reps.members)
