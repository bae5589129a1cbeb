"""Ground-set enrichment: neighborhood sampling, star queries, curation.

For each concept we take its two-hop neighborhood in the union graph,
parameterize star-shaped queries from the edges incident to the concept,
run them against an external triple store, and fold the bound entities
(plus their labels/definitions) into the concept's ground set.

The whole phase is deterministic: "sampling" is an exhaustive bounded
traversal with a hard cap, nearest-first by hop then id, and query results
come back in lexicographic order.
"""

from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass

from .ontology import Concept, ConceptId, UnionGraph
from .triples import TripleStore

NEIGHBORHOOD_CAP = 64

#: Predicates whose literal objects are folded into ground sets alongside
#: the entities themselves.
CURATION_PREDICATES = {"label", "rdfs:label", "definition", "skos:definition", "comment"}


@dataclass(slots=True)
class QueryCost:
    """Instrumentation: triples touched by index lookups during execution."""

    scanned: int = 0


@dataclass(frozen=True, slots=True)
class NeighborhoodSubgraph:
    """Node-induced subgraph within two undirected hops of the center."""

    center: ConceptId
    nodes: frozenset[ConceptId]
    edges: frozenset[tuple[ConceptId, ConceptId, str]]

    def incident_to_center(self):
        return sorted(e for e in self.edges if self.center in (e[0], e[1]))


@dataclass(frozen=True, slots=True)
class StarQuery:
    """Single-center query: all patterns constrain the same subject variable.

    A pattern (predicate, terminal) matches subjects s such that a triple
    (s, predicate, x) exists, with x = terminal when the terminal is a
    constant and x free when the terminal is a variable (leading '?').
    """

    center: str
    patterns: tuple[tuple[str, str], ...]
    provenance: ConceptId | None = None

    def __post_init__(self):
        if not self.patterns:
            raise ValueError("star query needs at least one pattern")

    def to_sparql(self) -> str:
        body = " ".join(
            f"{self.center} <{p}> {t if t.startswith('?') else '<' + t + '>'} ."
            for p, t in self.patterns
        )
        projected = [self.center] + [t for _, t in self.patterns if t.startswith("?")]
        return f"SELECT {' '.join(projected)} WHERE {{ {body} }}"


def sample_neighborhood(graph: UnionGraph, center: ConceptId, cap: int = NEIGHBORHOOD_CAP) -> NeighborhoodSubgraph:
    """Two-hop undirected BFS around `center`, capped nearest-first by (hop, id)."""
    if center not in graph:
        raise KeyError(f"{center} not in graph")
    selected = [center]
    seen = {center}
    frontier = [center]
    for _ in range(2):
        nxt = sorted(
            {n for node in frontier for n in graph.children[node] | graph.parents[node]}
            - seen
        )
        for node in nxt:
            if len(selected) >= cap:
                break
            selected.append(node)
            seen.add(node)
        frontier = nxt
        if len(selected) >= cap:
            break
    nodes = frozenset(selected)
    edges = frozenset(e for e in graph.edges if e[0] in nodes and e[1] in nodes)
    return NeighborhoodSubgraph(center=center, nodes=nodes, edges=edges)


def parameterize(sub: NeighborhoodSubgraph) -> list[StarQuery]:
    """Build star queries from the edges incident to the subgraph center.

    The center itself becomes the query variable ?s. Each parent edge
    (center, rel, parent) yields its own query keeping the parent as a
    constant terminal, so the query fishes for entities standing in the
    same relation to the same parent. Child edges (child, rel, center)
    only witness that the center has such out-neighbors, so they fold
    into one query whose terminals are fresh variables.
    """
    parent_patterns: list[tuple[str, str]] = []
    child_patterns: list[tuple[str, str]] = []
    counter = itertools.count()
    for child, parent, rel in sub.incident_to_center():
        if child == sub.center:
            parent_patterns.append((rel, parent.iri))
        else:
            child_patterns.append((rel, f"?x{next(counter)}"))
    queries = [
        StarQuery(center="?s", patterns=(pattern,), provenance=sub.center)
        for pattern in sorted(set(parent_patterns))
    ]
    deduped_children = tuple(sorted(set(child_patterns)))
    if deduped_children:
        queries.append(
            StarQuery(center="?s", patterns=deduped_children, provenance=sub.center)
        )
    return queries


def execute_star_query(
    query: StarQuery, kg: TripleStore, cost: "QueryCost | None" = None
) -> list[dict[str, str]]:
    """All consistent bindings, ordered lexicographically by subject then terminals.

    Every pattern must be satisfied by the same subject; variable terminals
    enumerate each matching object (cartesian across patterns). Candidate
    subjects come from the index of the most selective pattern, so the work
    per query is bounded by the matching triples, not the store size.
    """
    candidate_sets = [
        kg.match(None, predicate, None if terminal.startswith("?") else terminal)
        for predicate, terminal in query.patterns
    ]
    if cost is not None:
        cost.scanned += sum(len(s) for s in candidate_sets)
    narrowest = min(candidate_sets, key=len)
    subjects = sorted({t.subject for t in narrowest})
    per_subject: list[dict[str, list[str]]] = []
    for triples, (_, terminal) in zip(candidate_sets, query.patterns):
        by_subject: dict[str, list[str]] = defaultdict(list)
        for t in triples:
            by_subject[t.subject].append(t.object)
        per_subject.append(by_subject)

    bindings: list[dict[str, str]] = []
    for subject in subjects:
        partial: list[dict[str, str]] = [{query.center: subject}]
        for by_subject, (_, terminal) in zip(per_subject, query.patterns):
            objects = by_subject.get(subject)
            if not objects:
                partial = []
                break
            if terminal.startswith("?"):
                partial = [
                    {**binding, terminal: obj}
                    for binding in partial
                    for obj in sorted(set(objects))
                    if terminal not in binding or binding[terminal] == obj
                ]
                if not partial:
                    break
        bindings.extend(partial)
    bindings.sort(key=lambda b: sorted(b.items()))
    return bindings


def curate_ground_set(
    concept: Concept,
    bindings: list[dict[str, str]],
    kg: TripleStore | None = None,
    predicates: set[str] | None = None,
) -> Concept:
    """Fold bound entities (and their literal labels/definitions) into the ground set.

    Monotone and idempotent: entities are only ever added, and re-running
    the same curation leaves the ground set unchanged.
    """
    predicates = CURATION_PREDICATES if predicates is None else predicates
    additions: set[str] = set()
    for binding in bindings:
        for value in binding.values():
            additions.add(value)
            if kg is not None:
                for triple in kg.by_subject(value):
                    if triple.predicate in predicates:
                        additions.add(triple.object)
    if not additions:
        return concept
    return concept.with_ground_set(set(concept.ground_set) | additions)


def enrich_all(
    graph: UnionGraph,
    kg: TripleStore,
    cap: int = NEIGHBORHOOD_CAP,
    predicates: set[str] | None = None,
    cost: QueryCost | None = None,
) -> dict[ConceptId, Concept]:
    """Run the retrieval phase for every concept; returns enriched concepts."""
    enriched: dict[ConceptId, Concept] = {}
    for cid in sorted(graph.concepts):
        concept = graph.concepts[cid]
        sub = sample_neighborhood(graph, cid, cap=cap)
        bindings: list[dict[str, str]] = []
        for query in parameterize(sub):
            bindings.extend(execute_star_query(query, kg, cost))
        enriched[cid] = curate_ground_set(concept, bindings, kg, predicates)
    return enriched


class RemoteSparqlStore:
    """Optional adapter: run star queries against a remote SPARQL endpoint.

    Same operation contract as the in-memory path: `execute(query)` returns
    sorted variable bindings. Results come from a standard SPARQL-JSON
    SELECT response.
    """

    def __init__(self, endpoint: str, timeout: float = 30.0, client=None):
        import httpx

        self.endpoint = endpoint
        self.timeout = timeout
        self._client = client or httpx.Client(timeout=timeout)

    def execute(self, query: StarQuery) -> list[dict[str, str]]:
        response = self._client.get(
            self.endpoint,
            params={"query": query.to_sparql()},
            headers={"Accept": "application/sparql-results+json"},
        )
        response.raise_for_status()
        body = response.json()
        bindings = []
        for row in body.get("results", {}).get("bindings", []):
            bindings.append({f"?{name}": cell["value"] for name, cell in row.items()})
        bindings.sort(key=lambda b: sorted(b.items()))
        return bindings
