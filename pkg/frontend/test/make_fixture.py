"""Build a concept-graph document with three pending validation items
(confidences 4, 7, 6) for the console integration tests."""

import json
import sys

from kroma.ontology import SOURCE, TARGET, parse_ontology
from kroma.oracle import Decision, DecisionKind, OracleAnswer, dissimilar
from kroma.refine import RefinementEngine, RefineOptions, save_graph_document

CONFIDENCES = {
    frozenset({"a", "x"}): 4,
    frozenset({"b", "y"}): 7,
    frozenset({"c", "z"}): 6,
}


class Unsure:
    def decide(self, p, q):
        key = frozenset({p.iri, q.iri})
        if key in CONFIDENCES:
            conf = CONFIDENCES[key]
            return Decision(
                DecisionKind.UNCERTAIN,
                answer=OracleAnswer("yes", conf, f"Yes. Confidence: {conf}", "stub"),
            )
        return dissimilar(10)


def main(path):
    src = parse_ontology(
        json.dumps({"concepts": [{"id": x} for x in "abc"], "edges": []}),
        "edge-json",
        SOURCE,
    )
    tgt = parse_ontology(
        json.dumps({"concepts": [{"id": x} for x in "xyz"], "edges": []}),
        "edge-json",
        TARGET,
    )
    engine = RefinementEngine.from_ontologies(
        src, tgt, Unsure(), RefineOptions(structural_gate=False)
    )
    engine.offline_refine()
    doc = engine.concept_graph(version=0).to_document(engine.queue, engine.negatives)
    save_graph_document(path, doc)
    print(path)


if __name__ == "__main__":
    main(sys.argv[1])
