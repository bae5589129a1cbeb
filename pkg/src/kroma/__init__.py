"""kroma: ontology matching with knowledge retrieval, LLM oracles, and
bisimilarity-based concept-graph refinement."""

from .ontology import (
    Concept,
    ConceptId,
    CycleError,
    Ontology,
    OntologyError,
    UnionGraph,
    compute_ranks,
    parse_ontology,
    union_graph,
)
from .oracle import (
    Decision,
    DecisionKind,
    LlmClient,
    OracleAnswer,
    OracleConfig,
    PromptQuery,
    build_prompt,
    concept_similarity,
    debate,
    parse_answer,
)
from .refine import (
    ConceptGraph,
    DeltaBatch,
    Partition,
    RefineOptions,
    RefinementEngine,
    ValidationQueue,
    brute_force_bisim,
    init_concept_graph,
    offline_refine,
    online_refine,
    quotient,
)
from .pipeline import (
    MatchConfig,
    Metrics,
    call_reduction,
    evaluate,
    extract_alignment,
    generate_test_set,
    run_pipeline,
)

__version__ = "0.1.0"
