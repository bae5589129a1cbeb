"""End-to-end matching workflow: init, retrieval, embedding, candidates,
oracle decisions, refinement, alignment extraction, and evaluation.

Every phase persists its artifact into the working directory, and the whole
run is deterministic given the response cache: a warm rerun touches no
network and reproduces byte-identical outputs.
"""

from __future__ import annotations

import json
import logging
import os
import random
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import embeddings as emb
from . import oracle as orc
from . import refine as ref
from . import retrieval
from .ontology import (
    Concept,
    ConceptId,
    Ontology,
    SOURCE,
    TARGET,
    UnionGraph,
    parse_ontology,
    serialize_ontology,
    union_graph,
)
from .triples import TripleStore

log = logging.getLogger("kroma")


class PipelineError(Exception):
    def __init__(self, phase: str, message: str, artifacts=()):
        self.phase = phase
        self.artifacts = list(artifacts)
        super().__init__(f"phase {phase!r} failed: {message}")


@dataclass(slots=True)
class MatchConfig:
    source: str = ""
    target: str = ""
    kg: tuple[str, ...] = ()
    gamma: float = 0.5
    threshold: float = 0.85
    blend_weight: float = 0.5
    k: int = 25
    dim: int = 128
    confidence_threshold: float = 8.5
    temperature: float = 0.3
    seed: int = 7
    model_id: str = "always-yes-9"
    provider: str = "always-yes-9"
    endpoint: str | None = None
    cache_path: str | None = None
    workdir: str = "kroma-out"
    retrieval_cap: int = 64
    structural_gate: bool = True
    use_sim_hint: bool = True
    mode: str = "offline"

    def similarity(self) -> emb.SimilarityConfig:
        return emb.SimilarityConfig(
            blend_weight=self.blend_weight,
            gamma=self.gamma,
            threshold=self.threshold,
            k=self.k,
            dim=self.dim,
        )

    def oracle(self) -> orc.OracleConfig:
        return orc.OracleConfig(
            model_id=self.model_id,
            temperature=self.temperature,
            seed=self.seed,
            confidence_threshold=self.confidence_threshold,
            endpoint=self.endpoint,
        )

    @classmethod
    def from_file(cls, path, **overrides) -> "MatchConfig":
        with open(path, encoding="utf-8") as handle:
            raw = json.load(handle)
        if not isinstance(raw, dict):
            raise ValueError("config file must hold a flat JSON object")
        known = {f for f in cls.__dataclass_fields__}
        values = {k: v for k, v in raw.items() if k in known}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "kg" in values and isinstance(values["kg"], list):
            values["kg"] = tuple(values["kg"])
        values.update({k: v for k, v in overrides.items() if v is not None})
        cfg = cls(**values)
        cfg.similarity()  # validate ranges
        return cfg


@dataclass(frozen=True, slots=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    llm_calls_made: int = 0
    llm_calls_baseline: int = 0
    reduction_pct: float = 0.0

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "llm_calls_made": self.llm_calls_made,
            "llm_calls_baseline": self.llm_calls_baseline,
            "reduction_pct": self.reduction_pct,
        }


@dataclass(slots=True)
class PipelineResult:
    graph: ref.ConceptGraph
    alignment: set[tuple[ConceptId, ConceptId]]
    metrics: Metrics
    queue: ref.ValidationQueue
    engine: ref.RefinementEngine
    client: orc.LlmClient
    artifacts: dict[str, str] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Alignment + metrics
# ---------------------------------------------------------------------------

def extract_alignment(graph: ref.ConceptGraph) -> set[tuple[ConceptId, ConceptId]]:
    """Cross-ontology pairs co-resident in one class."""
    pairs: set[tuple[ConceptId, ConceptId]] = set()
    for klass in graph.classes:
        sources = [m for m in klass.members if m.role == SOURCE]
        targets = [m for m in klass.members if m.role == TARGET]
        for s in sources:
            for t in targets:
                pairs.add((s, t))
    return pairs


def evaluate(predicted, gold) -> Metrics:
    """Precision/recall/F1 with the usual empty-set conventions.

    An empty prediction is vacuously precise (P=1); an empty gold standard
    is vacuously recalled (R=1); F1 is 0 whenever P+R is 0.
    """
    predicted = set(predicted)
    gold = set(gold)
    hits = len(predicted & gold)
    precision = hits / len(predicted) if predicted else 1.0
    recall = hits / len(gold) if gold else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return Metrics(precision=precision, recall=recall, f1=f1)


def call_reduction(n_baseline: int, n_method: int) -> float:
    """Percentage of oracle calls saved against the one-call-per-candidate baseline."""
    if n_baseline <= 0:
        raise ValueError("baseline call count must be positive")
    if not 0 <= n_method <= n_baseline:
        raise ValueError("method calls must lie in [0, baseline]")
    return (1.0 - n_method / n_baseline) * 100.0


def read_alignment(path) -> set[tuple[ConceptId, ConceptId]]:
    """Line-oriented `source_iri<TAB>target_iri` alignment file."""
    pairs = set()
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            s, _, t = line.partition("\t")
            if not t:
                raise ValueError(f"malformed alignment line: {line!r}")
            pairs.add((ConceptId(SOURCE, s), ConceptId(TARGET, t)))
    return pairs


def write_alignment(path, pairs) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for s, t in sorted(pairs):
            handle.write(f"{s.iri}\t{t.iri}\n")


# ---------------------------------------------------------------------------
# The decision adapter: candidates in, decisions out
# ---------------------------------------------------------------------------

class CandidateDecisionOracle:
    """Wires prompts, the cached client, and the combined score into the
    refinement engine's oracle interface.

    Only candidate (top-k) cross-ontology pairs ever reach the model; all
    other pairs are dissimilar without a consultation, so closure can still
    group same-ontology concepts through cross-pair chains.
    """

    def __init__(self, candidates, scores01, contexts, client: orc.LlmClient,
                 sim: emb.SimilarityConfig, examples=orc.DEFAULT_EXAMPLES):
        self.candidates = set(candidates)
        self.scores01 = scores01
        self.contexts = contexts
        self.client = client
        self.sim = sim
        self.examples = examples

    def decide(self, a: ConceptId, b: ConceptId) -> orc.Decision:
        if (a, b) not in self.candidates:
            return orc.Decision(orc.DecisionKind.DISSIMILAR, consulted=False)
        prompt = orc.build_prompt(
            self.contexts[a], self.contexts[b],
            examples=self.examples, source_id=a, target_id=b,
        )
        answer = self.client.ask(prompt)
        return orc.concept_similarity(
            self.scores01[(a, b)],
            answer,
            confidence_threshold=self.client.config.confidence_threshold,
            gamma=self.sim.gamma,
            threshold=self.sim.threshold,
        )


def build_contexts(graph: UnionGraph, concepts: dict[ConceptId, Concept]) -> dict[ConceptId, orc.ConceptContext]:
    contexts = {}
    for cid in sorted(graph.concepts):
        parents = [concepts[p].display_label for p in sorted(graph.parents[cid])]
        children = [concepts[c].display_label for c in sorted(graph.children[cid])]
        contexts[cid] = orc.ConceptContext.from_concept(concepts[cid], parents, children)
    return contexts


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

def _detect_format(path: str) -> str:
    return "edge-json" if str(path).endswith(".json") else "ntriples-subset"


def load_ontology_file(path: str, role: str) -> Ontology:
    with open(path, encoding="utf-8") as handle:
        return parse_ontology(handle.read(), _detect_format(path), role)


def run_pipeline(cfg: MatchConfig, provider=None, gold_pairs=None) -> PipelineResult:
    workdir = Path(cfg.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    artifacts: dict[str, str] = {}

    def persist(name: str, text: str) -> None:
        path = workdir / name
        path.write_text(text, encoding="utf-8")
        artifacts[name] = str(path)

    phase = "init"
    try:
        source = load_ontology_file(cfg.source, SOURCE)
        target = load_ontology_file(cfg.target, TARGET)
        graph = union_graph(source, target)
        persist("source.normalized.json", serialize_ontology(source))
        persist("target.normalized.json", serialize_ontology(target))
        log.info("init: %d source + %d target concepts", len(source), len(target))

        phase = "retrieval"
        kg = TripleStore()
        for kg_path in cfg.kg:
            for triple in TripleStore.from_file(kg_path).match(None, None, None):
                kg.add(triple)
        concepts = retrieval.enrich_all(graph, kg, cap=cfg.retrieval_cap)
        persist(
            "groundsets.json",
            json.dumps(
                {str(cid): sorted(c.ground_set) for cid, c in sorted(concepts.items())},
                indent=2,
            ),
        )

        phase = "embedding"
        sim = cfg.similarity()
        provider_obj = emb.HashedBagTextProvider(sim.dim)
        vectors = emb.embed_concepts(graph, sim, provider_obj, concepts)
        emb.save_embeddings(workdir / "embeddings.jsonl", vectors, sim, provider_obj.provider_id)
        artifacts["embeddings.jsonl"] = str(workdir / "embeddings.jsonl")

        phase = "candidates"
        sources = [c for c in graph.concepts if c.role == SOURCE]
        targets = [c for c in graph.concepts if c.role == TARGET]
        scores = emb.pairwise_scores(sources, targets, vectors)
        candidates = emb.top_k(scores, sim.k)
        persist(
            "candidates.json",
            json.dumps(
                [
                    {"source": str(p.source), "target": str(p.target), "score": round(p.score, 9)}
                    for p in candidates
                ],
                indent=2,
            ),
        )
        scores01 = {(p.source, p.target): (p.score + 1.0) / 2.0 for p in scores}

        phase = "decisions"
        if provider is None:
            provider = orc.make_provider(cfg.provider, gold_pairs=gold_pairs)
        cache_path = cfg.cache_path
        if cache_path is None and os.environ.get("KROMA_CACHE_DIR"):
            cache_dir = Path(os.environ["KROMA_CACHE_DIR"])
            cache_dir.mkdir(parents=True, exist_ok=True)
            cache_path = str(cache_dir / "responses.jsonl")
        cache = orc.ResponseCache(cache_path)
        client = orc.LlmClient(provider, cfg.oracle(), cache)
        contexts = build_contexts(graph, concepts)
        adapter = CandidateDecisionOracle(
            [(p.source, p.target) for p in candidates], scores01, contexts, client, sim
        )

        phase = "refinement"
        hint = None
        if cfg.use_sim_hint:
            hint = lambda a, b: scores01.get((a, b), 0.0)
        options = ref.RefineOptions(
            structural_gate=cfg.structural_gate,
            sim_hint=hint,
            sim_hint_threshold=sim.threshold,
        )
        engine = ref.RefinementEngine.from_graph(graph, adapter, options)
        concept_graph = engine.offline_refine()
        persist(
            "graph.json",
            json.dumps(concept_graph.to_document(engine.queue, engine.negatives), indent=2) + "\n",
        )

        phase = "alignment"
        alignment = extract_alignment(concept_graph)
        write_alignment(workdir / "alignment.tsv", alignment)
        artifacts["alignment.tsv"] = str(workdir / "alignment.tsv")

        phase = "metrics"
        baseline = len(candidates)
        made = client.consultations
        reduction = call_reduction(baseline, min(made, baseline)) if baseline else 0.0
        metrics = Metrics(
            precision=1.0, recall=1.0, f1=1.0,
            llm_calls_made=made, llm_calls_baseline=baseline, reduction_pct=reduction,
        )
        if gold_pairs is not None:
            scored = evaluate(alignment, gold_pairs)
            metrics = replace(
                scored,
                llm_calls_made=made,
                llm_calls_baseline=baseline,
                reduction_pct=reduction,
            )
        persist("metrics.json", json.dumps(metrics.to_dict(), indent=2) + "\n")
        return PipelineResult(
            graph=concept_graph,
            alignment=alignment,
            metrics=metrics,
            queue=engine.queue,
            engine=engine,
            client=client,
            artifacts=artifacts,
        )
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(phase, str(exc), artifacts.values()) from exc


# ---------------------------------------------------------------------------
# Test-set generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class TestSetEntry:
    source: ConceptId
    candidates: tuple[ConceptId, ...]
    gold: ConceptId | None

    def pair_count(self) -> int:
        return len(self.candidates)


@dataclass(frozen=True, slots=True)
class TestSet:
    entries: tuple[TestSetEntry, ...]
    seed: int

    def total_pairs(self) -> int:
        return sum(e.pair_count() for e in self.entries)

    def to_document(self) -> dict:
        return {
            "seed": self.seed,
            "entries": [
                {
                    "source": str(e.source),
                    "candidates": [str(c) for c in e.candidates],
                    "gold": str(e.gold) if e.gold else None,
                }
                for e in self.entries
            ],
        }


def generate_test_set(
    gold,
    source: Ontology,
    target: Ontology,
    vectors,
    seed: int,
    matched: int = 20,
    unmatched: int = 20,
    candidates_per_source: int = 25,
    exclude_shared_label: bool = False,
) -> TestSet:
    """Sampled evaluation set: per matched source its gold target plus the
    highest-cosine unmatched targets; plus gold-less sources with pure
    distractor lists. Seeded, hence reproducible.
    """
    gold = sorted(set(gold))
    if exclude_shared_label:
        def shares_label(pair):
            a = {l.lower() for l in source.concepts[pair[0]].labels}
            b = {l.lower() for l in target.concepts[pair[1]].labels}
            return bool(a & b)

        gold = [p for p in gold if not shares_label(p)]
    if len(gold) < matched:
        raise ValueError(f"need at least {matched} gold pairs, found {len(gold)}")
    target_ids = sorted(target.concepts)
    if len(target_ids) < candidates_per_source:
        raise ValueError(
            f"need at least {candidates_per_source} target concepts, found {len(target_ids)}"
        )
    matched_sources = {s for s, _ in gold}
    free_sources = sorted(set(source.concepts) - matched_sources)
    if len(free_sources) < unmatched:
        raise ValueError(f"need at least {unmatched} sources without a gold match")

    rng = random.Random(seed)
    chosen_gold = rng.sample(gold, matched)
    chosen_free = rng.sample(free_sources, unmatched)

    def ranked_targets(source_id: ConceptId, exclude: set[ConceptId], count: int):
        pool = [t for t in target_ids if t not in exclude]
        pool.sort(key=lambda t: (-emb.cosine(vectors[source_id], vectors[t]), t))
        return pool[:count]

    entries: list[TestSetEntry] = []
    gold_by_source: dict[ConceptId, set[ConceptId]] = {}
    for s, t in gold:
        gold_by_source.setdefault(s, set()).add(t)
    for s, t in chosen_gold:
        distractors = ranked_targets(s, gold_by_source[s], candidates_per_source - 1)
        candidates = tuple(sorted([t, *distractors]))
        entries.append(TestSetEntry(source=s, candidates=candidates, gold=t))
    for s in chosen_free:
        candidates = tuple(ranked_targets(s, set(), candidates_per_source))
        entries.append(TestSetEntry(source=s, candidates=candidates, gold=None))
    return TestSet(entries=tuple(entries), seed=seed)
