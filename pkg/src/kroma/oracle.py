"""Prompt construction, LLM querying with a persistent cache, answer parsing,
and the combined similarity decision.

The model is treated as a deterministic boolean oracle: fixed model id,
temperature and seed, with every response cached under a hash of those plus
the rendered prompt, so replays are free and a whole run can be reproduced
bit-for-bit offline. Answers must carry a yes/no verdict and a 0-10
confidence; anything below the confidence gate becomes an Uncertain
decision routed to expert validation instead of being guessed at.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from enum import Enum

from .ontology import Concept, ConceptId

CONTEXT_BUDGET = 4096

TASK_TEXT = "Given two ontology concepts and their contextual metadata, decide if they are related or not."
OUTPUT_SPEC = "Answer Yes or No, and provide a confidence score between 0 and 10."
SELF_EVAL_SPEC = (
    "State your confidence as an integer from 0 (guess) to 10 (certain), "
    "reflecting how well the provided context supports your answer."
)

DEFAULT_EXAMPLES = (
    ("Are 'car' and 'automobile' semantically equivalent?", "Yes. Confidence: 9"),
    ("Are 'car' and 'banana' semantically equivalent?", "No. Confidence: 10"),
)


class OracleError(Exception):
    pass


class PromptBudgetError(OracleError):
    """Context still exceeds the budget after ground-set truncation."""


class TransportError(OracleError):
    """Endpoint unreachable after exhausting retries."""


@dataclass(frozen=True, slots=True)
class OracleConfig:
    model_id: str = "always-yes-9"
    temperature: float = 0.3
    seed: int = 7
    confidence_threshold: float = 8.5
    endpoint: str | None = None
    timeout: float = 30.0
    max_retries: int = 3
    max_in_flight: int = 4


@dataclass(frozen=True, slots=True)
class OracleAnswer:
    verdict: str  # "yes" | "no"
    confidence: int
    raw: str
    model_id: str

    def __post_init__(self):
        if self.verdict not in ("yes", "no"):
            raise ValueError(f"verdict must be yes/no, got {self.verdict!r}")
        if not 0 <= self.confidence <= 10:
            raise ValueError(f"confidence out of range: {self.confidence}")


class DecisionKind(str, Enum):
    SIMILAR = "Similar"
    DISSIMILAR = "Dissimilar"
    UNCERTAIN = "Uncertain"


@dataclass(frozen=True, slots=True)
class Decision:
    """Outcome of the combined similarity check for one concept pair.

    `consulted` is False when the pair was ruled out without asking any
    model (for example a non-candidate pair); such decisions never count
    as high-confidence denials.
    """

    kind: DecisionKind
    f_score: float | None = None
    sim_score: float | None = None
    answer: OracleAnswer | None = None
    consulted: bool = True

    @property
    def confidence(self) -> float | None:
        return None if self.answer is None else float(self.answer.confidence)


def similar(confidence: float = 10.0) -> Decision:
    """Shorthand for test/stub oracles."""
    return Decision(DecisionKind.SIMILAR, f_score=1.0,
                    answer=OracleAnswer("yes", int(confidence), "stub", "stub"))


def dissimilar(confidence: float = 10.0) -> Decision:
    return Decision(DecisionKind.DISSIMILAR, f_score=0.0,
                    answer=OracleAnswer("no", int(confidence), "stub", "stub"))


# ---------------------------------------------------------------------------
# Prompt queries
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class ConceptContext:
    """Rendered-down view of one concept for prompting."""

    labels: tuple[str, ...]
    definition: str | None = None
    parents: tuple[str, ...] = ()
    children: tuple[str, ...] = ()
    ground_set: tuple[str, ...] = ()

    @classmethod
    def from_concept(cls, concept: Concept, parents=(), children=()) -> "ConceptContext":
        return cls(
            labels=concept.labels,
            definition=concept.definition,
            parents=tuple(sorted(parents)),
            children=tuple(sorted(children)),
            ground_set=tuple(sorted(concept.ground_set)),
        )


@dataclass(frozen=True, slots=True)
class PromptQuery:
    """Five fixed sections: task, examples, context, output spec, self-eval."""

    task: str
    examples: tuple[tuple[str, str], ...]
    context: str
    output_spec: str
    self_eval_spec: str
    source_id: ConceptId | None = None
    target_id: ConceptId | None = None

    def __post_init__(self):
        verdicts = {_first_verdict(out) for _, out in self.examples}
        if not {"yes", "no"} <= verdicts:
            raise ValueError("examples must include at least one positive and one negative")

    def render(self) -> str:
        lines = ["Task:", self.task, "", "Examples:"]
        for prompt, answer in self.examples:
            lines.append(f"Input: {prompt}")
            lines.append(f"Output: {answer}")
        lines += ["", "Context:", self.context, "", "Output format:", self.output_spec,
                  "", "Self-evaluation:", self.self_eval_spec]
        return "\n".join(lines)


def _first_verdict(text: str) -> str | None:
    m = re.search(r"\b(yes|no)\b", text, re.IGNORECASE)
    return m.group(1).lower() if m else None


def _context_block(name: str, ctx: ConceptContext, ground_keep: int) -> str:
    kept = ctx.ground_set[:ground_keep]
    instances = "; ".join(kept) if kept else "no known instances"
    lines = [
        f"Concept {name}:",
        f"  labels: {'; '.join(ctx.labels)}",
        f"  definition: {ctx.definition or 'none given'}",
        f"  parents: {'; '.join(ctx.parents) or 'none'}",
        f"  children: {'; '.join(ctx.children) or 'none'}",
        f"  instances: {instances}",
    ]
    return "\n".join(lines)


def build_prompt(
    cs: ConceptContext,
    ct: ConceptContext,
    examples=DEFAULT_EXAMPLES,
    budget: int = CONTEXT_BUDGET,
    source_id: ConceptId | None = None,
    target_id: ConceptId | None = None,
    task: str = TASK_TEXT,
) -> PromptQuery:
    """Deterministic prompt for one candidate pair.

    If the context section exceeds `budget` characters, ground-set entries
    are dropped last-first (alternating sides, longest list first) until it
    fits; running out of entries to drop is a hard error, since it means the
    ground sets upstream were never sized.
    """
    keep_a, keep_b = len(cs.ground_set), len(ct.ground_set)
    while True:
        context = "\n".join(
            [
                _context_block("A", cs, keep_a),
                "",
                _context_block("B", ct, keep_b),
                "",
                "Question: Are concept A and concept B semantically equivalent?",
            ]
        )
        if len(context) <= budget:
            break
        if keep_a == 0 and keep_b == 0:
            raise PromptBudgetError(
                f"context is {len(context)} chars with empty ground sets (budget {budget})"
            )
        if keep_a >= keep_b and keep_a > 0:
            keep_a -= 1
        else:
            keep_b -= 1
    return PromptQuery(
        task=task,
        examples=tuple(examples),
        context=context,
        output_spec=OUTPUT_SPEC,
        self_eval_spec=SELF_EVAL_SPEC,
        source_id=source_id,
        target_id=target_id,
    )


# ---------------------------------------------------------------------------
# Answer parsing
# ---------------------------------------------------------------------------

_VERDICT_RE = re.compile(r"\b(yes|no)\b", re.IGNORECASE)
_CONFIDENCE_RE = re.compile(r"\bconfidence\b[^0-9]*(\d+)", re.IGNORECASE)


def parse_answer(raw: str, model_id: str = "unknown") -> OracleAnswer | None:
    """First standalone yes/no token + first integer 0-10 after 'confidence'.

    Returns None (malformed) when either component is absent or the
    confidence is out of range.
    """
    verdict_match = _VERDICT_RE.search(raw)
    confidence_match = _CONFIDENCE_RE.search(raw)
    if not verdict_match or not confidence_match:
        return None
    confidence = int(confidence_match.group(1))
    if not 0 <= confidence <= 10:
        return None
    return OracleAnswer(
        verdict=verdict_match.group(1).lower(),
        confidence=confidence,
        raw=raw,
        model_id=model_id,
    )


# ---------------------------------------------------------------------------
# Providers
# ---------------------------------------------------------------------------

class FixedAnswerProvider:
    """Mock model that always answers the same verdict and confidence."""

    def __init__(self, verdict: str, confidence: int):
        self.verdict = verdict
        self.confidence = confidence
        self.model_id = f"always-{verdict}-{confidence}"

    def complete(self, query: PromptQuery, config: OracleConfig) -> str:
        return f"{self.verdict.capitalize()}. Confidence: {self.confidence}"


class GoldOracleProvider:
    """Answers from a gold alignment, optionally flipped with per-pair noise.

    Two concepts are a 'yes' when they fall in the same gold group (the
    connected components of the gold pairs). Noise flips the answer for a
    pair deterministically -- the flip depends only on (seed, pair), never
    on call order -- so the oracle stays a deterministic function of its
    prompt, as required for reproducible refinement.
    """

    def __init__(self, gold_pairs, noise_rate: float = 0.0, seed: int = 0,
                 yes_confidence: int = 10, no_confidence: int = 10):
        self.noise_rate = noise_rate
        self.seed = seed
        self.yes_confidence = yes_confidence
        self.no_confidence = no_confidence
        self.model_id = f"gold-noise{noise_rate}-seed{seed}"
        self._group: dict[ConceptId, int] = {}
        group_of: dict[ConceptId, ConceptId] = {}

        def find(x):
            while group_of.get(x, x) != x:
                group_of[x] = group_of.get(group_of[x], group_of[x])
                x = group_of[x]
            return x

        for a, b in gold_pairs:
            group_of.setdefault(a, a)
            group_of.setdefault(b, b)
            ra, rb = find(a), find(b)
            if ra != rb:
                group_of[max(ra, rb)] = min(ra, rb)
        for node in list(group_of):
            root = find(node)
            self._group[node] = hash(str(root))

    def same_group(self, a: ConceptId, b: ConceptId) -> bool:
        ga, gb = self._group.get(a), self._group.get(b)
        return ga is not None and ga == gb

    def _flips(self, a: ConceptId, b: ConceptId) -> bool:
        if self.noise_rate <= 0:
            return False
        key = f"{self.seed}|{min(str(a), str(b))}|{max(str(a), str(b))}"
        h = int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "big")
        return (h / 2**64) < self.noise_rate

    def answer_for(self, a: ConceptId, b: ConceptId) -> str:
        yes = self.same_group(a, b) ^ self._flips(a, b)
        if yes:
            return f"Yes. Confidence: {self.yes_confidence}"
        return f"No. Confidence: {self.no_confidence}"

    def complete(self, query: PromptQuery, config: OracleConfig) -> str:
        if query.source_id is None or query.target_id is None:
            raise OracleError("gold provider needs the pair ids on the prompt")
        return self.answer_for(query.source_id, query.target_id)


class HttpChatProvider:
    """Chat-completion style endpoint: POST {model, messages, temperature, seed}.

    Endpoint and key fall back to the KROMA_LLM_ENDPOINT / KROMA_LLM_KEY
    environment variables; an httpx client can be injected for tests.
    """

    def __init__(self, endpoint: str | None = None, api_key: str | None = None, client=None):
        self.endpoint = endpoint or os.environ.get("KROMA_LLM_ENDPOINT")
        self.api_key = api_key or os.environ.get("KROMA_LLM_KEY")
        self.model_id = "remote"
        self._client = client

    def complete(self, query: PromptQuery, config: OracleConfig) -> str:
        import httpx

        endpoint = self.endpoint or config.endpoint
        if not endpoint:
            raise TransportError("no endpoint configured (KROMA_LLM_ENDPOINT unset)")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {
            "model": config.model_id,
            "messages": [{"role": "user", "content": query.render()}],
            "temperature": config.temperature,
            "seed": config.seed,
        }
        client = self._client or httpx
        response = client.post(endpoint, json=payload, headers=headers, timeout=config.timeout)
        if response.status_code == 429:
            raise _RateLimited()
        response.raise_for_status()
        body = response.json()
        return body["choices"][0]["message"]["content"]


class _RateLimited(Exception):
    pass


def make_provider(spec: str, gold_pairs=None):
    """Resolve a provider spec string: always-yes-9, always-no-10, gold, remote."""
    m = re.fullmatch(r"always-(yes|no)-(\d+)", spec)
    if m:
        return FixedAnswerProvider(m.group(1), int(m.group(2)))
    if spec.startswith("gold"):
        params = dict(re.findall(r"(\w+)=([^&]+)", spec))
        if gold_pairs is None:
            raise OracleError("gold provider requires gold pairs")
        return GoldOracleProvider(
            gold_pairs,
            noise_rate=float(params.get("noise", 0.0)),
            seed=int(params.get("seed", 0)),
        )
    if spec == "remote":
        return HttpChatProvider()
    raise OracleError(f"unknown provider spec {spec!r}")


# ---------------------------------------------------------------------------
# Cached client
# ---------------------------------------------------------------------------

class ResponseCache:
    """Append-only line-JSON cache keyed by hash(model, temperature, seed, prompt)."""

    def __init__(self, path=None):
        self.path = path
        self._entries: dict[str, str] = {}
        self._lock = threading.Lock()
        if path is not None and os.path.exists(path):
            with open(path, encoding="utf-8") as handle:
                for line in handle:
                    if not line.strip():
                        continue
                    row = json.loads(line)
                    self._entries[row["key_hash"]] = row["raw"]

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: str) -> str | None:
        return self._entries.get(key)

    def put(self, key: str, raw: str, model_id: str, prompt_sha256: str) -> None:
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = raw
            if self.path is not None:
                row = {
                    "key_hash": key,
                    "model_id": model_id,
                    "prompt_sha256": prompt_sha256,
                    "raw": raw,
                    "timestamp": time.time(),
                }
                with open(self.path, "a", encoding="utf-8") as handle:
                    handle.write(json.dumps(row) + "\n")


class LlmClient:
    """query_llm with caching, retries and call accounting.

    `network_calls` counts actual provider invocations (zero on warm
    replays); `consultations` counts semantic queries regardless of cache
    state, which is what call-reduction metrics compare.
    """

    def __init__(self, provider, config: OracleConfig | None = None, cache: ResponseCache | None = None):
        self.provider = provider
        self.config = config or OracleConfig()
        self.cache = cache if cache is not None else ResponseCache()
        self.network_calls = 0
        self.consultations = 0
        self._in_flight = threading.Semaphore(self.config.max_in_flight)

    def cache_key(self, query: PromptQuery) -> str:
        rendered = query.render()
        payload = f"{self.config.model_id}|{self.config.temperature}|{self.config.seed}|{rendered}"
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def query(self, query: PromptQuery) -> str:
        self.consultations += 1
        key = self.cache_key(query)
        cached = self.cache.get(key)
        if cached is not None:
            return cached
        raw = self._invoke(query)
        prompt_sha = hashlib.sha256(query.render().encode("utf-8")).hexdigest()
        self.cache.put(key, raw, self.config.model_id, prompt_sha)
        return raw

    def _invoke(self, query: PromptQuery) -> str:
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            with self._in_flight:
                try:
                    self.network_calls += 1
                    return self.provider.complete(query, self.config)
                except _RateLimited as exc:
                    last_error = exc
                    time.sleep(min(2.0, 0.1 * 2**attempt))
                except Exception as exc:
                    last_error = exc
        raise TransportError(f"provider failed after {self.config.max_retries + 1} attempts: {last_error}")

    def ask(self, query: PromptQuery) -> OracleAnswer | None:
        return parse_answer(self.query(query), self.config.model_id)


def query_llm(query: PromptQuery, client: LlmClient) -> str:
    return client.query(query)


# ---------------------------------------------------------------------------
# Combined decision
# ---------------------------------------------------------------------------

def concept_similarity(
    sim_score: float,
    answer: OracleAnswer | None,
    confidence_threshold: float = 8.5,
    gamma: float = 0.5,
    threshold: float = 0.85,
) -> Decision:
    """Blend the cosine channel with the oracle verdict.

    The verdict is binarized at the confidence gate: yes with confidence at
    or above the gate contributes 1, a confident no contributes 0, and
    anything else (including a malformed answer) is Uncertain and goes to
    the validation queue rather than being mapped to a made-up fraction.
    """
    if not 0.0 <= sim_score <= 1.0:
        raise ValueError("sim_score must be rescaled into [0, 1]")
    if answer is None or answer.confidence < confidence_threshold:
        return Decision(DecisionKind.UNCERTAIN, f_score=None, sim_score=sim_score, answer=answer)
    q_num = 1.0 if answer.verdict == "yes" else 0.0
    f_score = gamma * sim_score + (1.0 - gamma) * q_num
    kind = DecisionKind.SIMILAR if f_score >= threshold else DecisionKind.DISSIMILAR
    return Decision(kind, f_score=f_score, sim_score=sim_score, answer=answer)


# ---------------------------------------------------------------------------
# Debate combinator
# ---------------------------------------------------------------------------

@dataclass(slots=True)
class DebateTranscript:
    rounds: list[list[str]] = field(default_factory=list)
    calls: int = 0


def debate(
    base_query: PromptQuery,
    clients: list[LlmClient],
    n_rounds: int,
    transcript: DebateTranscript | None = None,
) -> OracleAnswer | None:
    """Multi-agent debate: per round each agent answers given the question
    plus a truncated history holding only every agent's latest reply.

    Final verdict is the majority of the last round (ties break to "no");
    confidence is the floored mean of final-round confidences. Malformed
    final answers abstain; if everyone abstains the debate is malformed.
    Exactly len(clients) * n_rounds model calls are made.
    """
    n_agents = len(clients)
    if n_agents not in (2, 4):
        raise ValueError("debate runs with 2 or 4 agents")
    if n_rounds not in (3, 5):
        raise ValueError("debate runs 3 or 5 rounds")
    latest: list[str | None] = [None] * n_agents
    for _ in range(n_rounds):
        history = "\n".join(
            f"Agent {i + 1} (latest): {reply}"
            for i, reply in enumerate(latest)
            if reply is not None
        )
        current: list[str] = []
        for i, client in enumerate(clients):
            context = base_query.context
            if history:
                context = f"{context}\n\nDebate so far (latest replies only):\n{history}\n\nYou are agent {i + 1}. You may revise your answer."
            else:
                context = f"{context}\n\nYou are agent {i + 1}."
            query = PromptQuery(
                task=base_query.task,
                examples=base_query.examples,
                context=context,
                output_spec=base_query.output_spec,
                self_eval_spec=base_query.self_eval_spec,
                source_id=base_query.source_id,
                target_id=base_query.target_id,
            )
            raw = client.query(query)
            current.append(raw)
            if transcript is not None:
                transcript.calls += 1
        latest = list(current)
        if transcript is not None:
            transcript.rounds.append(current)
    final = [parse_answer(raw, clients[i].config.model_id) for i, raw in enumerate(latest)]
    voting = [a for a in final if a is not None]
    if not voting:
        return None
    yes_votes = sum(1 for a in voting if a.verdict == "yes")
    no_votes = len(voting) - yes_votes
    verdict = "yes" if yes_votes > no_votes else "no"
    confidence = int(sum(a.confidence for a in voting) / len(voting))
    return OracleAnswer(
        verdict=verdict,
        confidence=confidence,
        raw=" | ".join(a.raw for a in voting),
        model_id=f"debate-{n_agents}x{n_rounds}",
    )
