"""Ontologies as DAGs of named concepts, with ranks and ground sets.

Concepts carry an ontology tag (source/target) so identifiers stay unique
when the two input ontologies are combined into one union graph. Edges run
child -> parent (specific -> general), so a rank-0 concept is a leaf: the
most specific concept with no children.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace

SOURCE = "source"
TARGET = "target"
_ROLES = (SOURCE, TARGET)

DEFAULT_RELATION = "is_a"


class OntologyError(Exception):
    """Malformed ontology input (syntax, dangling endpoints, cycles)."""


class CycleError(OntologyError):
    """The declared edges contain a directed cycle."""

    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("cycle detected: " + " -> ".join(str(c) for c in self.cycle))


@dataclass(frozen=True, order=True, slots=True)
class ConceptId:
    """Stable concept identifier: an IRI/curie plus its ontology tag."""

    role: str
    iri: str

    def __post_init__(self):
        if self.role not in _ROLES:
            raise ValueError(f"unknown ontology role {self.role!r}")

    def __str__(self) -> str:
        return f"{self.role}:{self.iri}"

    @classmethod
    def parse(cls, text: str) -> "ConceptId":
        role, sep, iri = text.partition(":")
        if not sep or role not in _ROLES:
            raise ValueError(f"not a tagged concept id: {text!r}")
        return cls(role, iri)


@dataclass(frozen=True, slots=True)
class Concept:
    """A named concept: labels, optional definition, and a ground set.

    The ground set holds entities from external knowledge bases validated
    to belong to this concept; it starts with whatever the input declared
    and grows through retrieval.
    """

    id: ConceptId
    labels: tuple[str, ...]
    definition: str | None = None
    ground_set: frozenset[str] = frozenset()

    def __post_init__(self):
        if not self.labels:
            raise OntologyError(f"concept {self.id} has no label")

    @property
    def display_label(self) -> str:
        return self.labels[0]

    def with_ground_set(self, entities) -> "Concept":
        return replace(self, ground_set=frozenset(entities))


Edge = tuple[ConceptId, ConceptId, str]  # (child, parent, relation)


@dataclass(slots=True)
class Ontology:
    """A DAG of concepts; edges run child -> parent.

    Immutable after load by convention: construction validates endpoints,
    self-loops and acyclicity, and nothing mutates the maps afterwards.
    """

    role: str
    concepts: dict[ConceptId, Concept] = field(default_factory=dict)
    edges: set[Edge] = field(default_factory=set)

    def __post_init__(self):
        if self.role not in _ROLES:
            raise ValueError(f"unknown ontology role {self.role!r}")
        self.validate()

    def validate(self) -> None:
        for child, parent, relation in self.edges:
            if child not in self.concepts:
                raise OntologyError(f"edge references unknown concept {child}")
            if parent not in self.concepts:
                raise OntologyError(f"edge references unknown concept {parent}")
            if child == parent:
                raise OntologyError(f"self-loop on {child}")
            if not relation:
                raise OntologyError("empty relation name")
        find_cycle_or_none(self.concepts.keys(), self.edges, raise_on_cycle=True)

    def __len__(self) -> int:
        return len(self.concepts)

    def child_pairs(self) -> set[tuple[ConceptId, ConceptId]]:
        return {(c, p) for c, p, _ in self.edges}


@dataclass(slots=True)
class UnionGraph:
    """The union of the source and target ontologies, tags preserved.

    Since each ontology's edges stay within its own concept set, the union
    is a disjoint union and remains a DAG. Adjacency and ranks are indexed
    once at construction.
    """

    concepts: dict[ConceptId, Concept]
    edges: set[Edge]
    children: dict[ConceptId, set[ConceptId]] = field(default_factory=dict)
    parents: dict[ConceptId, set[ConceptId]] = field(default_factory=dict)
    ranks: dict[ConceptId, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.children:
            self._index()

    def _index(self) -> None:
        self.children = {c: set() for c in self.concepts}
        self.parents = {c: set() for c in self.concepts}
        for child, parent, _ in self.edges:
            self.children[parent].add(child)
            self.parents[child].add(parent)
        self.ranks = rank_nodes(self.concepts.keys(), self.children)

    def __contains__(self, cid: ConceptId) -> bool:
        return cid in self.concepts

    def __len__(self) -> int:
        return len(self.concepts)

    def relations_between(self, child: ConceptId, parent: ConceptId) -> list[str]:
        return sorted(r for c, p, r in self.edges if c == child and p == parent)


def rank_nodes(nodes, children: dict[ConceptId, set[ConceptId]]) -> dict[ConceptId, int]:
    """Longest child-chain length below each node, by reverse-topological pass.

    rank(c) = 0 when c has no child, else 1 + max rank over children.
    """
    nodes = list(nodes)
    ranks: dict[ConceptId, int] = {}
    # Kahn-style: count unresolved children, start from the leaves.
    pending = {n: len(children.get(n, ())) for n in nodes}
    parents: dict[ConceptId, list[ConceptId]] = {n: [] for n in nodes}
    for parent, kids in children.items():
        for kid in kids:
            parents[kid].append(parent)
    queue = deque(n for n in nodes if pending[n] == 0)
    while queue:
        node = queue.popleft()
        kids = children.get(node, ())
        ranks[node] = 1 + max(ranks[k] for k in kids) if kids else 0
        for parent in parents[node]:
            pending[parent] -= 1
            if pending[parent] == 0:
                queue.append(parent)
    if len(ranks) != len(nodes):
        # Unreachable after validation, but guard anyway.
        raise CycleError([n for n in nodes if n not in ranks][:2])
    return ranks


def compute_ranks(ontology: Ontology) -> dict[ConceptId, int]:
    """RankMap for one ontology: deterministic and input-order invariant."""
    children: dict[ConceptId, set[ConceptId]] = {c: set() for c in ontology.concepts}
    for child, parent, _ in ontology.edges:
        children[parent].add(child)
    return rank_nodes(ontology.concepts.keys(), children)


def find_cycle_or_none(nodes, edges, raise_on_cycle: bool = False):
    """Return one directed cycle as a node list, or None if acyclic."""
    succ: dict[ConceptId, list[ConceptId]] = {n: [] for n in nodes}
    for child, parent, _ in edges:
        succ[child].append(parent)
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {n: WHITE for n in succ}
    for start in succ:
        if color[start] != WHITE:
            continue
        stack = [(start, iter(succ[start]))]
        path = [start]
        color[start] = GRAY
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if color[nxt] == GRAY:
                    cycle = path[path.index(nxt):] + [nxt]
                    if raise_on_cycle:
                        raise CycleError(cycle)
                    return cycle
                if color[nxt] == WHITE:
                    color[nxt] = GRAY
                    path.append(nxt)
                    stack.append((nxt, iter(succ[nxt])))
                    advanced = True
                    break
            if not advanced:
                color[node] = BLACK
                path.pop()
                stack.pop()
    return None


def union_graph(source: Ontology, target: Ontology) -> UnionGraph:
    """Combine both ontologies into one graph; ranks are recomputed on the union."""
    if source.role != SOURCE or target.role != TARGET:
        raise OntologyError("union_graph expects a source ontology and a target ontology")
    concepts: dict[ConceptId, Concept] = {}
    for ontology in (source, target):
        for cid, concept in ontology.concepts.items():
            if cid in concepts:
                raise OntologyError(f"duplicate concept id across roles: {cid}")
            concepts[cid] = concept
    return UnionGraph(concepts=concepts, edges=set(source.edges) | set(target.edges))


# ---------------------------------------------------------------------------
# Parsing
#
# Two input formats are supported:
#   * edge-json: {"concepts": [{"id", "labels", "definition"?}],
#                 "edges": [{"child", "parent", "relation"?}]}
#   * a line-oriented triple subset: `subject predicate object .` per line,
#     IRIs in <...> or bare tokens, literals in double quotes.
# Full OWL is out of scope; convert class hierarchies externally.
# ---------------------------------------------------------------------------

ISA_PREDICATES = {
    "is_a", "isa", "subclassof", "rdfs:subclassof",
    "http://www.w3.org/2000/01/rdf-schema#subclassof",
}
LABEL_PREDICATES = {
    "label", "rdfs:label", "skos:preflabel",
    "http://www.w3.org/2000/01/rdf-schema#label",
}
DEFINITION_PREDICATES = {
    "definition", "comment", "rdfs:comment", "skos:definition",
    "http://www.w3.org/2004/02/skos/core#definition",
}


def _local_name(iri: str) -> str:
    for sep in ("#", "/", ":"):
        if sep in iri:
            iri = iri.rsplit(sep, 1)[1]
    return iri.replace("_", " ")


def parse_ontology(text: str, fmt: str, role: str = SOURCE) -> Ontology:
    """Parse one ontology document. `fmt` is "edge-json" or "ntriples-subset"."""
    if fmt == "edge-json":
        return _parse_edge_json(text, role)
    if fmt == "ntriples-subset":
        return _parse_ntriples(text, role)
    raise ValueError(f"unknown ontology format {fmt!r}")


def _parse_edge_json(text: str, role: str) -> Ontology:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise OntologyError(f"JSON syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise OntologyError("top-level JSON value must be an object")
    concepts: dict[ConceptId, Concept] = {}
    for entry in doc.get("concepts", []):
        iri = entry.get("id")
        if not iri:
            raise OntologyError("concept entry without id")
        cid = ConceptId(role, str(iri))
        if cid in concepts:
            raise OntologyError(f"duplicate concept id {cid}")
        labels = tuple(str(x) for x in entry.get("labels") or [_local_name(str(iri))])
        ground = frozenset(str(x) for x in entry.get("ground_set", []))
        concepts[cid] = Concept(
            id=cid, labels=labels, definition=entry.get("definition"), ground_set=ground
        )
    edges: set[Edge] = set()
    for entry in doc.get("edges", []):
        try:
            child = ConceptId(role, str(entry["child"]))
            parent = ConceptId(role, str(entry["parent"]))
        except KeyError as exc:
            raise OntologyError(f"edge entry missing {exc.args[0]!r}") from exc
        for endpoint in (child, parent):
            if endpoint not in concepts:
                raise OntologyError(f"edge references undeclared concept {endpoint}")
        edges.add((child, parent, str(entry.get("relation", DEFAULT_RELATION))))
    return Ontology(role=role, concepts=concepts, edges=edges)


def parse_triple_line(line: str, lineno: int):
    """Parse one `subject predicate object .` line; returns None for blank/comment."""
    stripped = line.strip()
    if not stripped or stripped.startswith("#"):
        return None
    if not stripped.endswith("."):
        raise OntologyError(f"line {lineno}: missing terminating '.'")
    body = stripped[:-1].strip()
    terms: list[str] = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch.isspace():
            i += 1
            continue
        if ch == "<":
            end = body.find(">", i)
            if end < 0:
                raise OntologyError(f"line {lineno}: unterminated IRI at offset {i}")
            terms.append(body[i + 1:end])
            i = end + 1
        elif ch == '"':
            end = i + 1
            while end < len(body):
                if body[end] == '"' and body[end - 1] != "\\":
                    break
                end += 1
            if end >= len(body):
                raise OntologyError(f"line {lineno}: unterminated literal at offset {i}")
            terms.append(body[i + 1:end].replace('\\"', '"'))
            i = end + 1
        else:
            end = i
            while end < len(body) and not body[end].isspace():
                end += 1
            terms.append(body[i:end])
            i = end
    if len(terms) != 3:
        raise OntologyError(f"line {lineno}: expected 3 terms, found {len(terms)}")
    return tuple(terms)


def _parse_ntriples(text: str, role: str) -> Ontology:
    labels: dict[str, list[str]] = {}
    definitions: dict[str, str] = {}
    subjects: set[str] = set()
    hierarchy: list[tuple[str, str, str]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        triple = parse_triple_line(line, lineno)
        if triple is None:
            continue
        s, p, o = triple
        pred = p.lower()
        if pred in ISA_PREDICATES:
            subjects.update((s, o))
            hierarchy.append((s, o, DEFAULT_RELATION))
        elif pred in LABEL_PREDICATES:
            subjects.add(s)
            labels.setdefault(s, []).append(o)
        elif pred in DEFINITION_PREDICATES:
            subjects.add(s)
            definitions.setdefault(s, o)
        else:
            # Arbitrary hierarchy relation: keep the predicate as relation name.
            subjects.update((s, o))
            hierarchy.append((s, o, p))
    concepts = {
        ConceptId(role, s): Concept(
            id=ConceptId(role, s),
            labels=tuple(labels.get(s) or [_local_name(s)]),
            definition=definitions.get(s),
        )
        for s in sorted(subjects)
    }
    edges = {(ConceptId(role, c), ConceptId(role, p), rel) for c, p, rel in hierarchy}
    return Ontology(role=role, concepts=concepts, edges=edges)


def serialize_ontology(ontology: Ontology) -> str:
    """Canonical edge-json rendering; parse -> serialize -> parse round-trips."""
    doc = {
        "concepts": [
            {
                "id": cid.iri,
                "labels": list(concept.labels),
                **({"definition": concept.definition} if concept.definition else {}),
                **({"ground_set": sorted(concept.ground_set)} if concept.ground_set else {}),
            }
            for cid, concept in sorted(ontology.concepts.items())
        ],
        "edges": [
            {"child": c.iri, "parent": p.iri, "relation": r}
            for c, p, r in sorted(ontology.edges)
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=False)
