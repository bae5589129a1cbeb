import json

import pytest

from kroma.ontology import (
    SOURCE,
    TARGET,
    Concept,
    ConceptId,
    Ontology,
    parse_ontology,
    union_graph,
)
from kroma.oracle import Decision, DecisionKind, OracleAnswer
from kroma.triples import TripleStore

# The animal-taxonomy example pair: a small source hierarchy (wolfdog under
# house pet under both mammal and animal) against a richer target hierarchy
# (coyote under canine and carnivora, which sit under vertebrate and
# organism). Nine concepts in total; the expected matching groups them into
# three classes.
TAXONOMY_SOURCE = {
    "concepts": [
        {"id": "animal", "labels": ["animal"]},
        {"id": "mammal", "labels": ["mammal"]},
        {"id": "house_pet", "labels": ["house pet"]},
        {"id": "wolfdog", "labels": ["wolfdog"]},
    ],
    "edges": [
        {"child": "house_pet", "parent": "mammal"},
        {"child": "house_pet", "parent": "animal"},
        {"child": "wolfdog", "parent": "house_pet"},
    ],
}

TAXONOMY_TARGET = {
    "concepts": [
        {"id": "organism", "labels": ["organism"]},
        {"id": "vertebrate", "labels": ["vertebrate"]},
        {"id": "carnivora", "labels": ["carnivora"]},
        {"id": "canine", "labels": ["canine"]},
        {"id": "coyote", "labels": ["coyote"]},
    ],
    "edges": [
        {"child": "canine", "parent": "vertebrate"},
        {"child": "canine", "parent": "organism"},
        {"child": "carnivora", "parent": "vertebrate"},
        {"child": "carnivora", "parent": "organism"},
        {"child": "coyote", "parent": "canine"},
        {"child": "coyote", "parent": "carnivora"},
    ],
}

TAXONOMY_GROUPS = [
    {"source:animal", "source:mammal", "target:organism", "target:vertebrate"},
    {"source:house_pet", "target:carnivora", "target:canine"},
    {"source:wolfdog", "target:coyote"},
]

TAXONOMY_KG = """\
<husky> <is_a> <canine> .
<husky> <label> "husky" .
<beagle> <is_a> <canine> .
<beagle> <is_a> <house_pet> .
<wolf> <is_a> <carnivora> .
<wolf> <label> "wolf" .
<goldfish> <is_a> <house_pet> .
<zebra> <is_a> <mammal> .
<zebra> <is_a> <vertebrate> .
<sparrow> <is_a> <animal> .
<sparrow> <is_a> <organism> .
"""


class GroupOracle:
    """Stub decision oracle driven by an explicit grouping of concept ids."""

    def __init__(self, groups):
        self.group_of = {}
        for gi, group in enumerate(groups):
            for member in group:
                self.group_of[member] = gi

    def decide(self, a, b):
        same = (
            str(a) in self.group_of
            and str(b) in self.group_of
            and self.group_of[str(a)] == self.group_of[str(b)]
        )
        verdict = "yes" if same else "no"
        return Decision(
            DecisionKind.SIMILAR if same else DecisionKind.DISSIMILAR,
            f_score=1.0 if same else 0.0,
            answer=OracleAnswer(verdict, 10, f"{verdict} (stub)", "stub"),
        )


class LabelOracle:
    """Closure-consistent stub: similar exactly when labels coincide."""

    def __init__(self, labels):
        self.labels = labels

    def decide(self, a, b):
        same = self.labels[a] == self.labels[b]
        verdict = "yes" if same else "no"
        return Decision(
            DecisionKind.SIMILAR if same else DecisionKind.DISSIMILAR,
            f_score=1.0 if same else 0.0,
            answer=OracleAnswer(verdict, 10, f"{verdict} (stub)", "stub"),
        )


def build_ontology(role, doc):
    return parse_ontology(json.dumps(doc), "edge-json", role)


def chain_ontology(role, n, prefix, labels=None):
    ids = [ConceptId(role, f"{prefix}{i}") for i in range(n)]
    concepts = {
        cid: Concept(id=cid, labels=((labels[i],) if labels else (cid.iri,)))
        for i, cid in enumerate(ids)
    }
    edges = {(ids[i], ids[i + 1], "is_a") for i in range(n - 1)}
    return Ontology(role=role, concepts=concepts, edges=edges)


def mirror_pair(depth=3, branching=2, label_prefix="node"):
    """Isomorphic source/target trees with identical labels at mirrored
    positions: a bisimilarity-consistent fixture whose gold alignment is the
    position-wise correspondence."""

    def build(role, id_prefix):
        count = sum(branching**d for d in range(depth + 1))
        ids = [ConceptId(role, f"{id_prefix}{i}") for i in range(count)]
        concepts = {
            cid: Concept(id=cid, labels=(f"{label_prefix} {i}",))
            for i, cid in enumerate(ids)
        }
        edges = set()
        for i in range(1, count):
            parent = (i - 1) // branching
            edges.add((ids[i], ids[parent], "is_a"))
        return Ontology(role=role, concepts=concepts, edges=edges), ids

    source, sids = build(SOURCE, "s")
    target, tids = build(TARGET, "t")
    gold = {(s, t) for s, t in zip(sids, tids)}
    return source, target, gold


@pytest.fixture
def taxonomy_source():
    return build_ontology(SOURCE, TAXONOMY_SOURCE)


@pytest.fixture
def taxonomy_target():
    return build_ontology(TARGET, TAXONOMY_TARGET)


@pytest.fixture
def taxonomy_graph(taxonomy_source, taxonomy_target):
    return union_graph(taxonomy_source, taxonomy_target)


@pytest.fixture
def taxonomy_oracle():
    return GroupOracle(TAXONOMY_GROUPS)


@pytest.fixture
def taxonomy_kg():
    return TripleStore.from_text(TAXONOMY_KG)


@pytest.fixture
def taxonomy_gold():
    pairs = set()
    for group in TAXONOMY_GROUPS:
        sources = sorted(m for m in group if m.startswith("source:"))
        targets = sorted(m for m in group if m.startswith("target:"))
        for s in sources:
            for t in targets:
                pairs.add((ConceptId.parse(s), ConceptId.parse(t)))
    return pairs


@pytest.fixture
def taxonomy_files(tmp_path, taxonomy_gold):
    src = tmp_path / "taxonomy_source.json"
    tgt = tmp_path / "taxonomy_target.json"
    kg = tmp_path / "taxonomy_kg.nt"
    gold = tmp_path / "taxonomy_gold.tsv"
    src.write_text(json.dumps(TAXONOMY_SOURCE), encoding="utf-8")
    tgt.write_text(json.dumps(TAXONOMY_TARGET), encoding="utf-8")
    kg.write_text(TAXONOMY_KG, encoding="utf-8")
    gold.write_text(
        "".join(f"{s.iri}\t{t.iri}\n" for s, t in sorted(taxonomy_gold)), encoding="utf-8"
    )
    return {"source": str(src), "target": str(tgt), "kg": str(kg), "gold": str(gold)}
