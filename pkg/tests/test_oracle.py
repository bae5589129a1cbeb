import pytest

from kroma.ontology import SOURCE, TARGET, Concept, ConceptId
from kroma.oracle import (
    ConceptContext,
    DecisionKind,
    DebateTranscript,
    FixedAnswerProvider,
    GoldOracleProvider,
    HttpChatProvider,
    LlmClient,
    OracleAnswer,
    OracleConfig,
    PromptBudgetError,
    PromptQuery,
    ResponseCache,
    TransportError,
    build_prompt,
    concept_similarity,
    debate,
    make_provider,
    parse_answer,
)


def ctx(labels, ground=(), definition=None, parents=(), children=()):
    return ConceptContext(
        labels=tuple(labels),
        definition=definition,
        parents=tuple(parents),
        children=tuple(children),
        ground_set=tuple(ground),
    )


def test_prompt_contains_five_sections_in_order():
    q = build_prompt(ctx(["wolfdog"]), ctx(["coyote"]))
    rendered = q.render()
    positions = [rendered.index(h) for h in
                 ("Task:", "Examples:", "Context:", "Output format:", "Self-evaluation:")]
    assert positions == sorted(positions)
    assert "Answer Yes or No" in rendered


def test_prompt_empty_ground_sets_have_placeholder():
    q = build_prompt(ctx(["wolfdog"]), ctx(["coyote"]))
    assert q.context.count("no known instances") == 2


def test_prompt_includes_ground_set_entries():
    q = build_prompt(ctx(["wolfdog"], ground=["husky"]), ctx(["coyote"], ground=["wolf"]))
    assert "husky" in q.context
    assert "wolf" in q.context


def test_prompt_deterministic():
    a = ctx(["wolfdog"], ground=["husky", "beagle"], parents=["house pet"])
    b = ctx(["coyote"], ground=["wolf"], children=[])
    assert build_prompt(a, b).render() == build_prompt(a, b).render()


def test_prompt_truncates_ground_sets_last_first():
    ground = [f"entity-{i:04d}" for i in range(400)]
    q = build_prompt(ctx(["a"], ground=ground), ctx(["b"]), budget=600)
    assert len(q.context) <= 600
    assert "entity-0000" in q.context          # earliest entries survive
    assert "entity-0399" not in q.context      # latest dropped first


def test_prompt_budget_error_when_untruncatable():
    with pytest.raises(PromptBudgetError):
        build_prompt(ctx(["x" * 500]), ctx(["b"]), budget=100)


def test_prompt_requires_positive_and_negative_examples():
    with pytest.raises(ValueError):
        PromptQuery(
            task="t",
            examples=(("q", "Yes. Confidence: 9"),),
            context="c",
            output_spec="o",
            self_eval_spec="s",
        )


@pytest.mark.parametrize(
    "raw, expected",
    [
        ("Yes. Confidence: 9", ("yes", 9)),
        ("no — confidence 10", ("no", 10)),
        ("It depends.", None),
        ("YES, confidence: 0", ("yes", 0)),
        ("Confidence: 9", None),  # verdict missing
        ("Yes.", None),  # confidence missing
        ("yes, confidence 11", None),  # out of range
    ],
)
def test_parse_answer_grammar(raw, expected):
    answer = parse_answer(raw)
    if expected is None:
        assert answer is None
    else:
        assert (answer.verdict, answer.confidence) == expected


def test_answer_validates_range():
    with pytest.raises(ValueError):
        OracleAnswer("yes", 11, "raw", "m")
    with pytest.raises(ValueError):
        OracleAnswer("maybe", 5, "raw", "m")


def test_concept_similarity_examples():
    yes9 = OracleAnswer("yes", 9, "Yes. Confidence: 9", "m")
    no10 = OracleAnswer("no", 10, "No. Confidence: 10", "m")
    yes7 = OracleAnswer("yes", 7, "Yes. Confidence: 7", "m")

    d = concept_similarity(0.9, yes9, gamma=0.5, threshold=0.85)
    assert d.kind is DecisionKind.SIMILAR
    assert d.f_score == pytest.approx(0.95)

    d = concept_similarity(0.9, no10, gamma=0.5, threshold=0.85)
    assert d.kind is DecisionKind.DISSIMILAR
    assert d.f_score == pytest.approx(0.45)

    d = concept_similarity(0.9, yes7, confidence_threshold=8.5)
    assert d.kind is DecisionKind.UNCERTAIN
    assert d.f_score is None


def test_concept_similarity_malformed_is_uncertain():
    assert concept_similarity(0.5, None).kind is DecisionKind.UNCERTAIN


def test_concept_similarity_monotone_in_sim():
    yes9 = OracleAnswer("yes", 9, "Yes. Confidence: 9", "m")
    scores = [concept_similarity(s, yes9).f_score for s in (0.0, 0.25, 0.5, 0.75, 1.0)]
    assert scores == sorted(scores)


def test_concept_similarity_requires_rescaled_input():
    with pytest.raises(ValueError):
        concept_similarity(-0.2, None)


class FlakyProvider:
    def __init__(self, fail_times):
        self.fail_times = fail_times
        self.calls = 0
        self.model_id = "flaky"

    def complete(self, query, config):
        self.calls += 1
        if self.calls <= self.fail_times:
            raise ConnectionError("boom")
        return "Yes. Confidence: 9"


def test_client_caches_and_counts(tmp_path):
    provider = FixedAnswerProvider("yes", 9)
    cache = ResponseCache(tmp_path / "cache.jsonl")
    client = LlmClient(provider, OracleConfig(model_id=provider.model_id), cache)
    q = build_prompt(ctx(["a"]), ctx(["b"]))
    first = client.query(q)
    second = client.query(q)
    assert first == second == "Yes. Confidence: 9"
    assert client.network_calls == 1
    assert client.consultations == 2

    # A fresh client over the same cache file replays without any provider.
    class Exploding:
        model_id = provider.model_id

        def complete(self, query, config):
            raise AssertionError("network touched")

    replay = LlmClient(Exploding(), OracleConfig(model_id=provider.model_id),
                       ResponseCache(tmp_path / "cache.jsonl"))
    assert replay.query(q) == first
    assert replay.network_calls == 0


def test_client_cache_key_depends_on_model_and_seed(tmp_path):
    provider = FixedAnswerProvider("yes", 9)
    q = build_prompt(ctx(["a"]), ctx(["b"]))
    c1 = LlmClient(provider, OracleConfig(model_id="m1", seed=1))
    c2 = LlmClient(provider, OracleConfig(model_id="m1", seed=2))
    assert c1.cache_key(q) != c2.cache_key(q)


def test_client_retries_then_succeeds():
    provider = FlakyProvider(fail_times=2)
    client = LlmClient(provider, OracleConfig(max_retries=3))
    q = build_prompt(ctx(["a"]), ctx(["b"]))
    assert client.query(q) == "Yes. Confidence: 9"
    assert provider.calls == 3


def test_client_surfaces_transport_error():
    provider = FlakyProvider(fail_times=99)
    client = LlmClient(provider, OracleConfig(max_retries=1))
    with pytest.raises(TransportError):
        client.query(build_prompt(ctx(["a"]), ctx(["b"])))


def test_fixed_provider_spec_roundtrip():
    provider = make_provider("always-yes-9")
    assert provider.complete(None, None) == "Yes. Confidence: 9"
    provider = make_provider("always-no-10")
    assert provider.complete(None, None) == "No. Confidence: 10"


@pytest.mark.parametrize("verdict", ["yes", "no"])
@pytest.mark.parametrize("confidence", [0, 1, 5, 8, 10])
def test_parse_inverts_mock_rendering(verdict, confidence):
    provider = FixedAnswerProvider(verdict, confidence)
    answer = parse_answer(provider.complete(None, None), provider.model_id)
    assert (answer.verdict, answer.confidence) == (verdict, confidence)


def test_gold_provider_groups_and_determinism():
    s, t = ConceptId(SOURCE, "wolfdog"), ConceptId(TARGET, "coyote")
    other = ConceptId(TARGET, "organism")
    gold = GoldOracleProvider([(s, t)])
    assert gold.answer_for(s, t) == "Yes. Confidence: 10"
    assert gold.answer_for(s, other) == "No. Confidence: 10"


def test_gold_provider_noise_is_per_pair_and_seeded():
    pairs = [(ConceptId(SOURCE, f"s{i}"), ConceptId(TARGET, f"t{i}")) for i in range(50)]
    noisy1 = GoldOracleProvider(pairs, noise_rate=0.2, seed=3)
    noisy2 = GoldOracleProvider(pairs, noise_rate=0.2, seed=3)
    answers1 = [noisy1.answer_for(s, t) for s, t in pairs]
    assert answers1 == [noisy2.answer_for(s, t) for s, t in pairs]
    assert answers1 == [noisy1.answer_for(s, t) for s, t in pairs]  # call-order free
    flipped = sum(1 for a in answers1 if a.startswith("No"))
    assert 0 < flipped < 25
    different_seed = GoldOracleProvider(pairs, noise_rate=0.2, seed=4)
    assert answers1 != [different_seed.answer_for(s, t) for s, t in pairs]


def _debate_clients(specs):
    clients = []
    for verdict, conf in specs:
        provider = FixedAnswerProvider(verdict, conf)
        clients.append(LlmClient(provider, OracleConfig(model_id=provider.model_id)))
    return clients


def test_debate_unanimous_two_agents_three_rounds():
    clients = _debate_clients([("yes", 9), ("yes", 9)])
    transcript = DebateTranscript()
    answer = debate(build_prompt(ctx(["a"]), ctx(["b"])), clients, 3, transcript)
    assert (answer.verdict, answer.confidence) == ("yes", 9)
    assert transcript.calls == 6


def test_debate_tie_breaks_to_no_with_floored_mean():
    clients = _debate_clients([("yes", 9), ("yes", 8), ("no", 10), ("no", 6)])
    answer = debate(build_prompt(ctx(["a"]), ctx(["b"])), clients, 3)
    assert answer.verdict == "no"
    assert answer.confidence == (9 + 8 + 10 + 6) // 4


def test_debate_history_keeps_latest_reply_per_agent():
    seen = []

    class Recorder:
        model_id = "recorder"

        def complete(self, query, config):
            seen.append(query.context)
            return "Yes. Confidence: 9"

    clients = [LlmClient(Recorder(), OracleConfig()) for _ in range(2)]
    transcript = DebateTranscript()
    debate(build_prompt(ctx(["a"]), ctx(["b"])), clients, 3, transcript)
    assert transcript.calls == 6
    # Round two sees exactly one latest reply per agent (round three repeats
    # the same prompt and is served from each client's cache).
    second_round_context = seen[2]
    assert second_round_context.count("(latest)") == 2
    assert seen[0].count("(latest)") == 0


def test_debate_malformed_agents_abstain():
    class Mumbler:
        model_id = "mumbler"

        def complete(self, query, config):
            return "hmm, unclear"

    good = FixedAnswerProvider("yes", 9)
    clients = [
        LlmClient(Mumbler(), OracleConfig()),
        LlmClient(good, OracleConfig(model_id=good.model_id)),
    ]
    answer = debate(build_prompt(ctx(["a"]), ctx(["b"])), clients, 3)
    assert (answer.verdict, answer.confidence) == ("yes", 9)

    all_bad = [LlmClient(Mumbler(), OracleConfig()) for _ in range(2)]
    assert debate(build_prompt(ctx(["a"]), ctx(["b"])), all_bad, 3) is None


def test_debate_validates_configuration():
    clients = _debate_clients([("yes", 9), ("yes", 9)])
    with pytest.raises(ValueError):
        debate(build_prompt(ctx(["a"]), ctx(["b"])), clients, 4)
    with pytest.raises(ValueError):
        debate(build_prompt(ctx(["a"]), ctx(["b"])), clients[:1], 3)


def test_http_provider_payload_and_extraction():
    import httpx

    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers.get("Authorization")
        seen["payload"] = __import__("json").loads(request.content)
        return httpx.Response(
            200,
            json={"choices": [{"message": {"content": "Yes. Confidence: 9"}}]},
        )

    client = httpx.Client(transport=httpx.MockTransport(handler))
    provider = HttpChatProvider("http://llm.example/v1/chat", api_key="sekrit", client=client)
    config = OracleConfig(model_id="some-model", temperature=0.3, seed=42)
    raw = provider.complete(build_prompt(ctx(["a"]), ctx(["b"])), config)
    assert raw == "Yes. Confidence: 9"
    assert seen["auth"] == "Bearer sekrit"
    assert seen["payload"]["model"] == "some-model"
    assert seen["payload"]["temperature"] == 0.3
    assert seen["payload"]["seed"] == 42
    assert seen["payload"]["messages"][0]["role"] == "user"
    assert "Task:" in seen["payload"]["messages"][0]["content"]


def test_http_provider_rate_limit_then_success():
    import httpx

    calls = {"n": 0}

    def handler(request):
        calls["n"] += 1
        if calls["n"] == 1:
            return httpx.Response(429)
        return httpx.Response(
            200, json={"choices": [{"message": {"content": "No. Confidence: 10"}}]}
        )

    client = httpx.Client(transport=httpx.MockTransport(handler))
    provider = HttpChatProvider("http://llm.example/v1/chat", client=client)
    llm = LlmClient(provider, OracleConfig(max_retries=2))
    raw = llm.query(build_prompt(ctx(["a"]), ctx(["b"])))
    assert raw == "No. Confidence: 10"
    assert calls["n"] == 2


def test_http_provider_requires_endpoint(monkeypatch):
    monkeypatch.delenv("KROMA_LLM_ENDPOINT", raising=False)
    provider = HttpChatProvider()
    with pytest.raises(TransportError, match="endpoint"):
        provider.complete(build_prompt(ctx(["a"]), ctx(["b"])), OracleConfig())


def test_bounded_in_flight_requests():
    import threading

    peak = {"now": 0, "max": 0}
    lock = threading.Lock()

    class Slow:
        model_id = "slow"

        def complete(self, query, config):
            with lock:
                peak["now"] += 1
                peak["max"] = max(peak["max"], peak["now"])
            import time as _time

            _time.sleep(0.02)
            with lock:
                peak["now"] -= 1
            return "Yes. Confidence: 9"

    client = LlmClient(Slow(), OracleConfig(max_in_flight=2))
    prompts = [
        build_prompt(ctx([f"left {i}"]), ctx([f"right {i}"])) for i in range(8)
    ]
    threads = [threading.Thread(target=client.query, args=(p,)) for p in prompts]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert peak["max"] <= 2
    assert client.network_calls == 8


def test_concept_context_from_concept():
    concept = Concept(
        id=ConceptId(SOURCE, "wolfdog"),
        labels=("wolfdog", "wolf-dog"),
        ground_set=frozenset({"husky"}),
    )
    c = ConceptContext.from_concept(concept, parents=["house pet"], children=[])
    assert c.labels == ("wolfdog", "wolf-dog")
    assert c.parents == ("house pet",)
    assert c.ground_set == ("husky",)
