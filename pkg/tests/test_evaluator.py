import json

import httpx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from logpurge.core import ANOMALOUS, HIGH, LOW, NORMAL, Rule, RuleSet
from logpurge.evaluator import (
    API_KEY_ENV,
    PREAMBLE,
    BackendConfig,
    ErrorSample,
    Evaluator,
    Representative,
    build_prompt,
    extract_json,
    select_error_representatives,
    severity_hit,
)
from logpurge.exceptions import BackendUnreachable, ContextBudgetExceeded, InvalidConfig, UnparseableResponse

TEXTS = [
    "kernel: generating <*>",                           # 0
    "ntpd: synchronized clock <*>",                     # 1
    "pbs_mom: Bad file descriptor (9) in <*>",          # 2
    "sshd: session opened for <*>",                     # 3
    "pbs_mom: wait_request failed <*>",                 # 4
    "mmcs: heartbeat ok <*>",                           # 5
]


def reps(*tid_lists):
    return [Representative(i, tuple(t)) for i, t in enumerate(tid_lists)]


def test_severity_lexicon():
    assert severity_hit("pbs_mom: Bad file descriptor")
    assert severity_hit("job aborted by user")
    assert not severity_hit("kernel: generating <*>")


def test_backend_config_invariants():
    with pytest.raises(InvalidConfig):
        BackendConfig(temperature=0.5)
    with pytest.raises(InvalidConfig):
        BackendConfig(kind="chat_service")
    with pytest.raises(InvalidConfig):
        BackendConfig(kind="oracle")


def test_prompt_without_rules_has_no_rules_block():
    p = build_prompt(RuleSet(), reps([0, 1]), TEXTS)
    assert p.rules_block == ""
    assert p.render().startswith(PREAMBLE)
    assert "Domain rules" not in p.render()


def test_prompt_is_byte_identical():
    rules = RuleSet().extend([Rule("heartbeats are normal", 1)])
    a = build_prompt(rules, reps([0, 1, 1], [2]), TEXTS).render()
    b = build_prompt(rules, reps([0, 1, 1], [2]), TEXTS).render()
    assert a.encode() == b.encode()
    assert "1. heartbeats are normal" in a


def test_long_sequence_truncated_to_fifty():
    texts = [f"event {i}" for i in range(1000)]
    p = build_prompt(RuleSet(), [Representative(0, tuple(range(1000)))], texts)
    entries = [line for line in p.payload.splitlines() if line.lstrip().startswith("x")]
    assert len(entries) == 50
    assert "+950 more" in p.payload


def test_prompt_budget_and_empty_payload():
    with pytest.raises(ContextBudgetExceeded):
        build_prompt(RuleSet(), reps([0]), TEXTS, budget=10)
    with pytest.raises(InvalidConfig):
        build_prompt(RuleSet(), [], TEXTS)


def test_bad_file_descriptor_region_is_high():
    rules = RuleSet().extend([Rule("persistent PBS execution failures imply abnormal task behavior", 1)])
    v = Evaluator(template_texts=TEXTS).judge_region(reps([2, 2, 2, 0], [2, 2, 3], [2, 1]), rules)
    assert v.label == HIGH
    assert v.score == 1.0


def test_heartbeat_region_is_low():
    v = Evaluator(template_texts=TEXTS).judge_region(reps([5, 5, 1], [5, 0], [1, 3]))
    assert v.label == LOW
    assert v.score == 0.0


def test_majority_tie_goes_high():
    v = Evaluator(template_texts=TEXTS).judge_region(reps([2], [0]))
    assert v.per_representative == (ANOMALOUS, NORMAL)
    assert v.label == HIGH


def test_normal_rule_exempts_benign_failure():
    ev = Evaluator(template_texts=TEXTS)
    region = reps([4, 4, 0], [4, 1], [4, 3])
    assert ev.judge_region(region).label == HIGH
    rule = Rule("wait_request failed is routine", 1, template_id=4, label=NORMAL)
    assert ev.judge_region(region, RuleSet((rule,))).label == LOW


def test_anomalous_rule_respects_min_count():
    ev = Evaluator(template_texts=TEXTS)
    rule = RuleSet((Rule("three ntpd syncs are anomalous", 1, template_id=1, min_count=3, label=ANOMALOUS),))
    assert ev.judge_region(reps([1, 1, 1, 0]), rule).label == HIGH
    assert ev.judge_region(reps([1, 1, 0]), rule).label == LOW


tid_lists = st.lists(st.lists(st.integers(0, len(TEXTS) - 1), min_size=1, max_size=8), min_size=1, max_size=6)


@given(tid_lists)
def test_deterministic_backend_is_pure(lists):
    region = reps(*lists)
    a = Evaluator(template_texts=TEXTS).judge_region(region)
    b = Evaluator(template_texts=TEXTS).judge_region(region)
    assert a == b
    flagged = sum(any(severity_hit(TEXTS[t]) for t in l) for l in lists)
    assert a.score == flagged / len(lists)


# -- rule induction ---------------------------------------------------------------------


def sample(i, tids, target=ANOMALOUS):
    other = NORMAL if target == ANOMALOUS else ANOMALOUS
    return ErrorSample(i, tuple(tids), target, other, target)


def test_shared_rare_template_yields_one_rule():
    errors = [sample(i, [0, 2, 1]) for i in range(4)]
    df = np.array([500, 500, 3, 500, 500, 500])
    rules = Evaluator(template_texts=TEXTS).induce_rules(errors, 1, df, 1000)
    assert len(rules) == 1
    assert rules[0].template_id == 2
    assert "Bad file descriptor" in rules[0].text
    assert rules[0].label == ANOMALOUS
    assert rules[0].source_error_ids == (0, 1, 2, 3)


def test_empty_error_set():
    with pytest.raises(InvalidConfig):
        Evaluator(template_texts=TEXTS).induce_rules([], 1)


def test_rerun_adds_nothing():
    ev = Evaluator(template_texts=TEXTS)
    errors = [sample(i, [2, 4]) for i in range(3)]
    rules = RuleSet().extend(ev.induce_rules(errors, 1))
    again = rules.extend(ev.induce_rules(errors, 2))
    assert again.texts == rules.texts


def test_normal_target_gives_exemption_rule():
    errors = [sample(i, [4, 0], target=NORMAL) for i in range(3)]
    (rule,) = Evaluator(template_texts=TEXTS).induce_rules(errors, 1)
    assert (rule.template_id, rule.label) == (4, NORMAL)


def test_error_representatives():
    X = np.vstack([np.zeros((1, 2))])
    assert select_error_representatives([0], X) == [0]
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(0, 0.1, (15, 2)), rng.normal(5, 0.1, (15, 2))])
    chosen = select_error_representatives(range(30), X, k_nn=3, r_min=1.0, M=2)
    assert any(i < 15 for i in chosen) and any(i >= 15 for i in chosen)


@given(st.sets(st.integers(0, 59), min_size=1))
def test_error_representatives_subset(ids):
    X = np.random.default_rng(1).standard_normal((60, 3))
    chosen = select_error_representatives(sorted(ids), X, k_nn=3, M=2)
    assert set(chosen) <= ids
    assert len(chosen) <= len(ids)


# -- chat backend -----------------------------------------------------------------------


class FakeChat:
    def __init__(self, replies):
        self.replies = list(replies)
        self.bodies = []
        self.headers = []

    def __call__(self, request):
        self.bodies.append(json.loads(request.content))
        self.headers.append(request.headers)
        reply = self.replies.pop(0) if len(self.replies) > 1 else self.replies[0]
        if isinstance(reply, int):
            return httpx.Response(reply)
        return httpx.Response(200, json={"choices": [{"message": {"content": reply}}]})


def chat(fake, cache_path=None, retries=2):
    cfg = BackendConfig("chat_service", endpoint="http://llm.test/v1/chat", max_retries=retries,
                        cache_path=cache_path)
    return Evaluator(cfg, TEXTS, transport=httpx.MockTransport(fake))


def test_chat_parses_embedded_json():
    fake = FakeChat(['Sure. {"label": "high", "rationale": "PBS failures persist"} Hope this helps.'])
    v = chat(fake).judge_region(reps([2, 2], [2]))
    assert v.label == HIGH
    assert v.rationale == "PBS failures persist"
    body = fake.bodies[0]
    assert body["temperature"] == 0
    assert body["model"] == "gpt-4o"
    assert body["messages"][0]["content"].startswith(PREAMBLE)


def test_chat_per_sequence_majority():
    fake = FakeChat(['{"label": "high", "rationale": "", "per_sequence": ["low", "low", "high"]}'])
    v = chat(fake).judge_region(reps([0], [1], [2]))
    assert v.per_representative == (NORMAL, NORMAL, ANOMALOUS)
    assert v.label == LOW


def test_identical_prompt_served_from_cache(tmp_path):
    cache = tmp_path / "responses.jsonl"
    fake = FakeChat(['{"label": "low", "rationale": "routine"}'])
    ev = chat(fake, cache)
    region = reps([0, 5], [1])
    first = ev.judge_region(region)
    second = ev.judge_region(region)
    assert first == second
    assert len(fake.bodies) == 1
    # a fresh evaluator over the same cache file stays offline
    cold = FakeChat([500])
    assert chat(cold, cache).judge_region(region) == first
    assert cold.bodies == []


def test_one_reprompt_on_unparseable_reply():
    fake = FakeChat(["I think it is fine.", '{"label": "low", "rationale": "ok"}'])
    v = chat(fake).judge_region(reps([0]))
    assert v.label == LOW
    assert len(fake.bodies) == 2
    assert fake.bodies[1]["messages"][1] == {"role": "assistant", "content": "I think it is fine."}


def test_unparseable_after_retry():
    fake = FakeChat(["no idea", "still no idea"])
    with pytest.raises(UnparseableResponse):
        chat(fake).judge_region(reps([0]))
    assert len(fake.bodies) == 2


def test_unreachable_backend_retries_then_fails():
    fake = FakeChat([503])
    with pytest.raises(BackendUnreachable):
        chat(fake, retries=2).judge_region(reps([0]))
    assert len(fake.bodies) == 3


def test_api_key_header(monkeypatch):
    monkeypatch.setenv(API_KEY_ENV, "sk-test")
    fake = FakeChat(['{"label": "low"}'])
    chat(fake).judge_region(reps([0]))
    assert fake.headers[0]["authorization"] == "Bearer sk-test"


def test_chat_rule_induction():
    fake = FakeChat(['{"rules": ["Persistent PBS execution failures imply abnormal task behavior", ""]}'])
    rules = chat(fake).induce_rules([sample(0, [2, 2])], 3)
    assert [r.text for r in rules] == ["Persistent PBS execution failures imply abnormal task behavior"]
    assert rules[0].iteration_added == 3
    assert rules[0].template_id is None


def test_chat_rule_induction_plain_list():
    fake = FakeChat(["1. Kernel panics are anomalous\n- Heartbeats are normal\n"])
    rules = chat(fake).induce_rules([sample(0, [2])], 1)
    assert [r.text for r in rules] == ["Kernel panics are anomalous", "Heartbeats are normal"]


def test_extract_json():
    assert extract_json('x {"a": {"b": 1}} y') == {"a": {"b": 1}}
    assert extract_json("{broken {\"label\": \"low\"}") == {"label": "low"}
    assert extract_json("nothing here") is None
