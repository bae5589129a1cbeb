"""Concept embeddings, pairwise scores, top-k candidates, string similarity.

Graph embeddings are a deterministic structural sketch (rank, degrees,
relation labels, two rounds of neighbor-hash aggregation) instead of a
stochastic walk model: candidate generation must be bit-reproducible for
the refinement guarantees to be testable. Text embeddings default to a
hashed bag of normalized tokens over labels, definition and ground set;
both sides are pluggable providers behind the same contract.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass

import numpy as np

from .ontology import Concept, ConceptId, UnionGraph

DEFAULT_DIM = 128


class EmbeddingProviderError(Exception):
    """Provider failure; retryable, carries the concept id."""

    def __init__(self, concept_id, message="embedding provider failed"):
        self.concept_id = concept_id
        super().__init__(f"{message} for {concept_id}")


@dataclass(frozen=True, slots=True)
class SimilarityConfig:
    """Knobs shared by scoring and refinement.

    blend_weight mixes graph vs text embeddings; gamma weighs the cosine
    term against the oracle verdict inside the combined decision; threshold
    is the acceptance cut for that combined score; k bounds the candidate
    list.
    """

    blend_weight: float = 0.5
    gamma: float = 0.5
    threshold: float = 0.85
    k: int = 25
    dim: int = DEFAULT_DIM

    def __post_init__(self):
        if not 0.0 <= self.blend_weight <= 1.0:
            raise ValueError("blend_weight must be in [0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError("threshold must be in (0, 1]")
        if self.k < 1:
            raise ValueError("k must be positive")
        if self.dim < 1:
            raise ValueError("dim must be positive")


@dataclass(frozen=True, order=True, slots=True)
class ScoredPair:
    source: ConceptId
    target: ConceptId
    score: float


def _stable_hash(token: str) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "big")


def _hash_into(tokens, dim: int) -> np.ndarray:
    """Feature-hash a token multiset into a signed dense vector."""
    vec = np.zeros(dim, dtype=np.float64)
    for token in tokens:
        h = _stable_hash(token)
        sign = 1.0 if (h >> 60) & 1 else -1.0
        vec[h % dim] += sign
    return vec


def _normalize(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    return vec / norm if norm > 0 else vec


_CAMEL = re.compile(r"(?<=[a-z0-9])(?=[A-Z])")
_NON_ALNUM = re.compile(r"[^0-9a-zA-Z]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, split camel-case, strip punctuation/underscores."""
    spaced = _CAMEL.sub(" ", text)
    return [t for t in _NON_ALNUM.sub(" ", spaced).lower().split() if t]


def _wl_color(seed: str, neighbors: list[str]) -> str:
    digest = hashlib.blake2b(digest_size=8)
    digest.update(seed.encode("utf-8"))
    for n in sorted(neighbors):
        digest.update(b"|")
        digest.update(n.encode("utf-8"))
    return digest.hexdigest()


def graph_embed(cid: ConceptId, graph: UnionGraph, dim: int = DEFAULT_DIM) -> np.ndarray:
    """Structural embedding: identical local topology yields identical vectors."""
    if cid not in graph:
        raise KeyError(f"{cid} not in graph")
    rels_in = sorted(r for c, p, r in graph.edges if p == cid)
    rels_out = sorted(r for c, p, r in graph.edges if c == cid)

    def base_color(node: ConceptId) -> str:
        return "|".join(
            [
                f"r={graph.ranks[node]}",
                f"in={len(graph.children[node])}",
                f"out={len(graph.parents[node])}",
            ]
        )

    # Two rounds of WL-style aggregation over colors, ignoring identities.
    colors = {cid: base_color(cid)}
    frontier = {cid} | graph.children[cid] | graph.parents[cid]
    for node in frontier:
        colors.setdefault(node, base_color(node))
    two_hop = set(frontier)
    for node in frontier:
        two_hop |= graph.children[node] | graph.parents[node]
    for node in two_hop:
        colors.setdefault(node, base_color(node))
    for _ in range(2):
        updated = {}
        for node in two_hop:
            down = [f"c:{colors[k]}" for k in graph.children[node] if k in colors]
            up = [f"p:{colors[k]}" for k in graph.parents[node] if k in colors]
            updated[node] = _wl_color(colors[node], down + up)
        colors.update(updated)

    tokens = [f"rank:{graph.ranks[cid]}",
              f"indeg:{len(graph.children[cid])}",
              f"outdeg:{len(graph.parents[cid])}"]
    tokens += [f"rel-in:{r}" for r in rels_in]
    tokens += [f"rel-out:{r}" for r in rels_out]
    tokens += [f"wl:{colors[cid]}"]
    tokens += sorted(f"wl-child:{colors[k]}" for k in graph.children[cid])
    tokens += sorted(f"wl-parent:{colors[k]}" for k in graph.parents[cid])
    return _normalize(_hash_into(tokens, dim))


class HashedBagTextProvider:
    """Default deterministic text provider: hashed bag of normalized tokens."""

    provider_id = "hashed-bag-v1"

    def __init__(self, dim: int = DEFAULT_DIM):
        self.dim = dim

    def embed(self, concept: Concept) -> np.ndarray:
        tokens: list[str] = []
        for label in concept.labels:
            tokens.extend(tokenize(label))
        if concept.definition:
            tokens.extend(tokenize(concept.definition))
        for entry in sorted(concept.ground_set):
            tokens.extend(tokenize(entry))
        return _normalize(_hash_into(tokens, self.dim))


class RemoteTextProvider:
    """Optional provider backed by an embedding HTTP endpoint.

    Same contract as the hashed default: `embed(concept) -> vector` with the
    configured dimension, failures surfaced as retryable errors carrying the
    concept id. POSTs {"input": <concatenated text>} and expects
    {"embedding": [...]} back.
    """

    def __init__(self, endpoint: str, dim: int = DEFAULT_DIM, timeout: float = 30.0, client=None):
        import httpx

        self.endpoint = endpoint
        self.dim = dim
        self.provider_id = f"remote:{endpoint}"
        self._client = client or httpx.Client(timeout=timeout)

    def embed(self, concept: Concept) -> np.ndarray:
        text = " ".join(
            list(concept.labels)
            + ([concept.definition] if concept.definition else [])
            + sorted(concept.ground_set)
        )
        try:
            response = self._client.post(self.endpoint, json={"input": text})
            response.raise_for_status()
            vector = np.asarray(response.json()["embedding"], dtype=np.float64)
        except Exception as exc:
            raise EmbeddingProviderError(concept.id, str(exc)) from exc
        if vector.shape != (self.dim,):
            raise EmbeddingProviderError(concept.id, f"expected dim {self.dim}, got {vector.shape}")
        return _normalize(vector)


def text_embed(concept: Concept, provider=None, dim: int = DEFAULT_DIM) -> np.ndarray:
    provider = provider or HashedBagTextProvider(dim)
    try:
        return provider.embed(concept)
    except EmbeddingProviderError:
        raise
    except Exception as exc:  # surface provider failures with the concept id
        raise EmbeddingProviderError(concept.id, str(exc)) from exc


def blend(graph_vec: np.ndarray, text_vec: np.ndarray, blend_weight: float) -> np.ndarray:
    """blend_weight * graph + (1 - blend_weight) * text, L2-normalized."""
    if graph_vec.shape != text_vec.shape:
        raise ValueError(f"dimension mismatch: {graph_vec.shape} vs {text_vec.shape}")
    return _normalize(blend_weight * graph_vec + (1.0 - blend_weight) * text_vec)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def embed_concepts(
    graph: UnionGraph,
    config: SimilarityConfig | None = None,
    text_provider=None,
    concepts: dict[ConceptId, Concept] | None = None,
) -> dict[ConceptId, np.ndarray]:
    """Blended embedding per concept; `concepts` may carry enriched ground sets."""
    config = config or SimilarityConfig()
    concepts = concepts or graph.concepts
    out: dict[ConceptId, np.ndarray] = {}
    for cid in sorted(graph.concepts):
        g = graph_embed(cid, graph, config.dim)
        t = text_embed(concepts[cid], text_provider, config.dim)
        out[cid] = blend(g, t, config.blend_weight)
    return out


def pairwise_scores(
    sources,
    targets,
    embeddings: dict[ConceptId, np.ndarray],
) -> list[ScoredPair]:
    """Cosine score for every source x target pair, in sorted pair order."""
    pairs = []
    for s in sorted(sources):
        for t in sorted(targets):
            pairs.append(ScoredPair(s, t, cosine(embeddings[s], embeddings[t])))
    return pairs


def top_k(scores, k: int) -> list[ScoredPair]:
    """k highest-scored pairs; ties break lexicographically by (source, target)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(scores, key=lambda p: (-p.score, p.source, p.target))
    return ranked[:k]


def levenshtein(a: str, b: str) -> int:
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def string_sim(a: str, b: str, kind: str = "levenshtein-norm") -> float:
    """Normalized string similarity in [0, 1]."""
    if kind == "levenshtein-norm":
        longest = max(len(a), len(b))
        if longest == 0:
            return 1.0
        return 1.0 - levenshtein(a, b) / longest
    if kind == "token-jaccard":
        ta, tb = set(tokenize(a)), set(tokenize(b))
        if not ta and not tb:
            return 1.0
        union = ta | tb
        return len(ta & tb) / len(union) if union else 0.0
    raise ValueError(f"unknown string similarity kind {kind!r}")


# ---------------------------------------------------------------------------
# Embedding cache file: line-JSON, versioned by provider id + config hash.
# ---------------------------------------------------------------------------

def _config_fingerprint(config: SimilarityConfig, provider_id: str) -> str:
    payload = json.dumps(
        {"provider": provider_id, "dim": config.dim, "blend_weight": config.blend_weight},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def save_embeddings(path, embeddings: dict[ConceptId, np.ndarray], config: SimilarityConfig, provider_id: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        header = {"fingerprint": _config_fingerprint(config, provider_id), "dim": config.dim}
        handle.write(json.dumps(header) + "\n")
        for cid in sorted(embeddings):
            row = {"id": str(cid), "vector": [round(float(x), 9) for x in embeddings[cid]]}
            handle.write(json.dumps(row) + "\n")


def load_embeddings(path, config: SimilarityConfig, provider_id: str) -> dict[ConceptId, np.ndarray]:
    with open(path, encoding="utf-8") as handle:
        header = json.loads(handle.readline())
        if header.get("fingerprint") != _config_fingerprint(config, provider_id):
            raise ValueError("embedding cache was built with a different provider/config")
        out: dict[ConceptId, np.ndarray] = {}
        for line in handle:
            row = json.loads(line)
            out[ConceptId.parse(row["id"])] = np.asarray(row["vector"], dtype=np.float64)
    return out
