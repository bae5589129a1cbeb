import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kroma.ontology import (
    SOURCE,
    TARGET,
    Concept,
    ConceptId,
    CycleError,
    Ontology,
    OntologyError,
    compute_ranks,
    parse_ontology,
    serialize_ontology,
    union_graph,
)

from conftest import build_ontology


def test_parse_two_triples():
    text = "<coyote> <is_a> <canine> .\n<wolfdog> <is_a> <canine> .\n"
    onto = parse_ontology(text, "ntriples-subset", SOURCE)
    assert len(onto.concepts) == 3
    assert len(onto.edges) == 2
    assert {c.iri for c in onto.concepts} == {"coyote", "wolfdog", "canine"}


def test_parse_taxonomy_source_counts(taxonomy_source):
    assert len(taxonomy_source.concepts) == 4
    assert len(taxonomy_source.edges) == 3


def test_parse_cycle_reports_offenders():
    text = "<a> <is_a> <b> .\n<b> <is_a> <a> .\n"
    with pytest.raises(CycleError) as err:
        parse_ontology(text, "ntriples-subset", SOURCE)
    cycle_iris = {c.iri for c in err.value.cycle}
    assert cycle_iris == {"a", "b"}


def test_parse_self_loop_rejected():
    doc = {"concepts": [{"id": "a"}], "edges": [{"child": "a", "parent": "a"}]}
    with pytest.raises(OntologyError, match="self-loop"):
        parse_ontology(json.dumps(doc), "edge-json", SOURCE)


def test_parse_dangling_endpoint_rejected():
    doc = {"concepts": [{"id": "a"}], "edges": [{"child": "a", "parent": "ghost"}]}
    with pytest.raises(OntologyError, match="undeclared"):
        parse_ontology(json.dumps(doc), "edge-json", SOURCE)


def test_parse_syntax_error_carries_line():
    with pytest.raises(OntologyError, match="line 2"):
        parse_ontology("<a> <is_a> <b> .\n<broken line\n", "ntriples-subset", SOURCE)


def test_parse_labels_and_definitions():
    text = (
        '<a> <is_a> <b> .\n'
        '<a> <label> "alpha" .\n'
        '<a> <definition> "first letter" .\n'
    )
    onto = parse_ontology(text, "ntriples-subset", SOURCE)
    concept = onto.concepts[ConceptId(SOURCE, "a")]
    assert concept.labels == ("alpha",)
    assert concept.definition == "first letter"


def test_parse_serialize_roundtrip(taxonomy_source):
    again = parse_ontology(serialize_ontology(taxonomy_source), "edge-json", SOURCE)
    assert again.concepts == taxonomy_source.concepts
    assert again.edges == taxonomy_source.edges


def test_concept_requires_label():
    with pytest.raises(OntologyError):
        Concept(id=ConceptId(SOURCE, "x"), labels=())


def test_rank_isolated_node():
    onto = build_ontology(SOURCE, {"concepts": [{"id": "a"}], "edges": []})
    assert compute_ranks(onto) == {ConceptId(SOURCE, "a"): 0}


def test_rank_chain():
    doc = {
        "concepts": [{"id": x} for x in "abc"],
        "edges": [{"child": "c", "parent": "b"}, {"child": "b", "parent": "a"}],
    }
    ranks = compute_ranks(build_ontology(SOURCE, doc))
    assert ranks[ConceptId(SOURCE, "c")] == 0
    assert ranks[ConceptId(SOURCE, "b")] == 1
    assert ranks[ConceptId(SOURCE, "a")] == 2


def _longest_path_to_leaf(children, node):
    # Independent oracle: exhaustive path enumeration.
    kids = children.get(node, set())
    if not kids:
        return 0
    return 1 + max(_longest_path_to_leaf(children, k) for k in kids)


def test_rank_diamond_with_extra_leaf_matches_brute_force():
    doc = {
        "concepts": [{"id": x} for x in "abcde"],
        "edges": [
            {"child": "d", "parent": "b"},
            {"child": "d", "parent": "c"},
            {"child": "b", "parent": "a"},
            {"child": "c", "parent": "a"},
            {"child": "e", "parent": "b"},
        ],
    }
    onto = build_ontology(SOURCE, doc)
    ranks = compute_ranks(onto)
    children = {}
    for child, parent, _ in onto.edges:
        children.setdefault(parent, set()).add(child)
    for cid in onto.concepts:
        assert ranks[cid] == _longest_path_to_leaf(children, cid)
    by_iri = {cid.iri: r for cid, r in ranks.items()}
    assert by_iri == {"d": 0, "e": 0, "b": 1, "c": 1, "a": 2}


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_rank_permutation_invariance(seed):
    rng = random.Random(seed)
    n = rng.randint(1, 12)
    ids = [ConceptId(SOURCE, f"n{i}") for i in range(n)]
    edges = set()
    for j in range(1, n):
        for i in range(j):
            if rng.random() < 0.3:
                edges.add((ids[i], ids[j], "is_a"))
    concepts = {c: Concept(id=c, labels=(c.iri,)) for c in ids}
    baseline = compute_ranks(Ontology(role=SOURCE, concepts=concepts, edges=edges))
    for _ in range(3):
        shuffled_ids = list(ids)
        rng.shuffle(shuffled_ids)
        shuffled_edges = list(edges)
        rng.shuffle(shuffled_edges)
        onto = Ontology(
            role=SOURCE,
            concepts={c: concepts[c] for c in shuffled_ids},
            edges=set(shuffled_edges),
        )
        assert compute_ranks(onto) == baseline


def test_rank_exhaustive_paths_small_random_graphs():
    rng = random.Random(5)
    for _ in range(25):
        n = rng.randint(1, 10)
        ids = [ConceptId(SOURCE, f"n{i}") for i in range(n)]
        edges = set()
        for j in range(1, n):
            for i in range(j):
                if rng.random() < 0.35:
                    edges.add((ids[i], ids[j], "is_a"))
        onto = Ontology(
            role=SOURCE,
            concepts={c: Concept(id=c, labels=(c.iri,)) for c in ids},
            edges=edges,
        )
        ranks = compute_ranks(onto)
        children = {}
        for child, parent, _ in edges:
            children.setdefault(parent, set()).add(child)
        for cid in ids:
            assert ranks[cid] == _longest_path_to_leaf(children, cid)


def test_union_disjoint_chains():
    src = build_ontology(
        SOURCE,
        {
            "concepts": [{"id": x} for x in ("a", "b", "c")],
            "edges": [{"child": "a", "parent": "b"}, {"child": "b", "parent": "c"}],
        },
    )
    tgt = build_ontology(
        TARGET,
        {
            "concepts": [{"id": x} for x in ("x", "y", "z")],
            "edges": [{"child": "x", "parent": "y"}, {"child": "y", "parent": "z"}],
        },
    )
    g = union_graph(src, tgt)
    assert len(g) == 6
    assert len(g.edges) == 4
    assert g.ranks[ConceptId(SOURCE, "c")] == 2
    assert g.ranks[ConceptId(TARGET, "z")] == 2


def test_union_taxonomy_has_nine_nodes(taxonomy_graph):
    assert len(taxonomy_graph) == 9


def test_union_with_empty_side(taxonomy_source):
    empty = Ontology(role=TARGET, concepts={}, edges=set())
    g = union_graph(taxonomy_source, empty)
    assert set(g.concepts) == set(taxonomy_source.concepts)
    assert g.edges == taxonomy_source.edges


def test_union_rejects_swapped_roles(taxonomy_source, taxonomy_target):
    with pytest.raises(OntologyError):
        union_graph(taxonomy_target, taxonomy_source)


def test_taxonomy_ranks(taxonomy_graph):
    ranks = {str(c): r for c, r in taxonomy_graph.ranks.items()}
    assert ranks["source:wolfdog"] == 0
    assert ranks["target:coyote"] == 0
    assert ranks["source:house_pet"] == 1
    assert ranks["target:canine"] == 1
    assert ranks["target:carnivora"] == 1
    assert ranks["source:mammal"] == 2
    assert ranks["source:animal"] == 2
    assert ranks["target:vertebrate"] == 2
    assert ranks["target:organism"] == 2


def test_concept_id_parse_roundtrip():
    cid = ConceptId(SOURCE, "http://example.org/x#Thing")
    assert ConceptId.parse(str(cid)) == cid
    with pytest.raises(ValueError):
        ConceptId.parse("nothing-here")
