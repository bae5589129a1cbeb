"""Command-line surface: one subcommand per pipeline phase plus serve/stream."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import embeddings as emb
from . import pipeline as pl
from . import refine as ref
from . import retrieval
from .ontology import SOURCE, TARGET, ConceptId, serialize_ontology, union_graph
from .triples import TripleStore


def _load_config(config, **overrides) -> pl.MatchConfig:
    if config:
        return pl.MatchConfig.from_file(config, **overrides)
    values = {k: v for k, v in overrides.items() if v is not None}
    return pl.MatchConfig(**values)


common = [
    click.option("--config", type=click.Path(exists=True), default=None, help="Flat JSON config file."),
    click.option("--seed", type=int, default=None, help="Run seed (overrides config)."),
    click.option("--cache", "cache_path", type=click.Path(), default=None, help="LLM response cache file."),
    click.option("-v", "--verbose", is_flag=True, help="Verbose logging."),
]


def with_common(fn):
    for opt in reversed(common):
        fn = opt(fn)
    return fn


def _setup(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@click.group()
def main():
    """Ontology matching with retrieval-enriched LLM oracles and concept-graph refinement."""


@main.command()
@with_common
@click.option("--source", type=click.Path(exists=True), required=True)
@click.option("--target", type=click.Path(exists=True), required=True)
@click.option("--workdir", type=click.Path(), default=None)
def ingest(config, seed, cache_path, verbose, source, target, workdir):
    """Parse and validate both ontologies; persist normalized documents."""
    _setup(verbose)
    cfg = _load_config(config, source=source, target=target, workdir=workdir, seed=seed)
    out = Path(cfg.workdir)
    out.mkdir(parents=True, exist_ok=True)
    src = pl.load_ontology_file(cfg.source, SOURCE)
    tgt = pl.load_ontology_file(cfg.target, TARGET)
    (out / "source.normalized.json").write_text(serialize_ontology(src), encoding="utf-8")
    (out / "target.normalized.json").write_text(serialize_ontology(tgt), encoding="utf-8")
    click.echo(f"ingested {len(src)} source and {len(tgt)} target concepts")


@main.command()
@with_common
@click.option("--source", type=click.Path(exists=True), required=True)
@click.option("--target", type=click.Path(exists=True), required=True)
@click.option("--kg", type=click.Path(exists=True), multiple=True)
@click.option("--workdir", type=click.Path(), default=None)
def retrieve(config, seed, cache_path, verbose, source, target, kg, workdir):
    """Enrich ground sets from the external knowledge base."""
    _setup(verbose)
    cfg = _load_config(config, source=source, target=target, kg=tuple(kg) or None, workdir=workdir)
    graph = union_graph(
        pl.load_ontology_file(cfg.source, SOURCE), pl.load_ontology_file(cfg.target, TARGET)
    )
    store = TripleStore()
    for path in cfg.kg:
        for triple in TripleStore.from_file(path).match(None, None, None):
            store.add(triple)
    concepts = retrieval.enrich_all(graph, store, cap=cfg.retrieval_cap)
    out = Path(cfg.workdir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {str(cid): sorted(c.ground_set) for cid, c in sorted(concepts.items())}
    (out / "groundsets.json").write_text(json.dumps(doc, indent=2), encoding="utf-8")
    enriched = sum(1 for v in doc.values() if v)
    click.echo(f"curated ground sets for {enriched}/{len(doc)} concepts")


@main.command()
@with_common
@click.option("--source", type=click.Path(exists=True), required=True)
@click.option("--target", type=click.Path(exists=True), required=True)
@click.option("--workdir", type=click.Path(), default=None)
def embed(config, seed, cache_path, verbose, source, target, workdir):
    """Compute blended concept embeddings."""
    _setup(verbose)
    cfg = _load_config(config, source=source, target=target, workdir=workdir)
    graph = union_graph(
        pl.load_ontology_file(cfg.source, SOURCE), pl.load_ontology_file(cfg.target, TARGET)
    )
    sim = cfg.similarity()
    provider = emb.HashedBagTextProvider(sim.dim)
    vectors = emb.embed_concepts(graph, sim, provider)
    out = Path(cfg.workdir)
    out.mkdir(parents=True, exist_ok=True)
    emb.save_embeddings(out / "embeddings.jsonl", vectors, sim, provider.provider_id)
    click.echo(f"embedded {len(vectors)} concepts at dim {sim.dim}")


@main.command()
@with_common
@click.option("--source", type=click.Path(exists=True), required=True)
@click.option("--target", type=click.Path(exists=True), required=True)
@click.option("--k", type=int, default=None)
@click.option("--workdir", type=click.Path(), default=None)
def candidates(config, seed, cache_path, verbose, source, target, k, workdir):
    """Rank cross-ontology pairs and keep the top-k candidate list."""
    _setup(verbose)
    cfg = _load_config(config, source=source, target=target, k=k, workdir=workdir)
    graph = union_graph(
        pl.load_ontology_file(cfg.source, SOURCE), pl.load_ontology_file(cfg.target, TARGET)
    )
    sim = cfg.similarity()
    vectors = emb.embed_concepts(graph, sim)
    sources = [c for c in graph.concepts if c.role == SOURCE]
    targets = [c for c in graph.concepts if c.role == TARGET]
    ranked = emb.top_k(emb.pairwise_scores(sources, targets, vectors), sim.k)
    out = Path(cfg.workdir)
    out.mkdir(parents=True, exist_ok=True)
    doc = [
        {"source": str(p.source), "target": str(p.target), "score": round(p.score, 9)}
        for p in ranked
    ]
    (out / "candidates.json").write_text(json.dumps(doc, indent=2), encoding="utf-8")
    click.echo(f"kept {len(ranked)} candidate pairs")


@main.command()
@with_common
@click.option("--source", type=click.Path(exists=True), required=True)
@click.option("--target", type=click.Path(exists=True), required=True)
@click.option("--kg", type=click.Path(exists=True), multiple=True)
@click.option("--gold", type=click.Path(exists=True), default=None, help="Gold alignment TSV (enables scoring).")
@click.option("--provider", default=None, help="Oracle provider spec (always-yes-9, gold&noise=..., remote).")
@click.option("--k", type=int, default=None)
@click.option("--workdir", type=click.Path(), default=None)
def match(config, seed, cache_path, verbose, source, target, kg, gold, provider, k, workdir):
    """Run the full matching pipeline and persist all artifacts."""
    _setup(verbose)
    cfg = _load_config(
        config, source=source, target=target, kg=tuple(kg) or None,
        provider=provider, k=k, workdir=workdir, seed=seed, cache_path=cache_path,
    )
    gold_pairs = pl.read_alignment(gold) if gold else None
    result = pl.run_pipeline(cfg, gold_pairs=gold_pairs)
    click.echo(
        f"classes={result.graph.class_count()} alignment={len(result.alignment)} "
        f"pending={len(result.queue)} calls={result.metrics.llm_calls_made}/"
        f"{result.metrics.llm_calls_baseline}"
    )
    if gold_pairs is not None:
        m = result.metrics
        click.echo(f"P={m.precision:.4f} R={m.recall:.4f} F1={m.f1:.4f}")
    click.echo(f"artifacts in {cfg.workdir}")


@main.command()
@with_common
@click.option("--graph", "graph_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), default=None)
def refine(config, seed, cache_path, verbose, graph_path, out):
    """Re-stabilize a persisted concept graph (recorded decisions only)."""
    _setup(verbose)
    from .service import RecordedOnlyOracle

    doc = ref.load_graph_document(graph_path)
    engine = ref.RefinementEngine.from_document(doc, RecordedOnlyOracle())
    graph = engine.concept_graph(version=doc.get("version", 0))
    ref.save_graph_document(out or graph_path, graph.to_document(engine.queue, engine.negatives))
    click.echo(f"graph has {graph.class_count()} classes")


@main.command()
@with_common
@click.option("--graph", "graph_path", type=click.Path(exists=True), required=True)
@click.option("--delta", type=click.Path(exists=True), required=True,
              help='JSON: {"edges": [{"child","parent","relation"?,"role"?}], "concepts": [...]}')
@click.option("--out", type=click.Path(), default=None)
def stream(config, seed, cache_path, verbose, graph_path, delta, out):
    """Apply an online edge batch to a persisted concept graph."""
    _setup(verbose)
    from .service import RecordedOnlyOracle

    doc = ref.load_graph_document(graph_path)
    engine = ref.RefinementEngine.from_document(doc, RecordedOnlyOracle())
    with open(delta, encoding="utf-8") as handle:
        batch_doc = json.load(handle)
    edges = [
        (
            ConceptId.parse(e["child"]) if ":" in e["child"] and e["child"].split(":", 1)[0] in (SOURCE, TARGET) else ConceptId(e.get("role", SOURCE), e["child"]),
            ConceptId.parse(e["parent"]) if ":" in e["parent"] and e["parent"].split(":", 1)[0] in (SOURCE, TARGET) else ConceptId(e.get("role", SOURCE), e["parent"]),
            e.get("relation", "is_a"),
        )
        for e in batch_doc.get("edges", [])
    ]
    batch = ref.DeltaBatch(edges=edges)
    items = engine.apply_batch(batch)
    graph = engine.concept_graph(version=doc.get("version", 0) + 1)
    ref.save_graph_document(out or graph_path, graph.to_document(engine.queue, engine.negatives))
    click.echo(f"applied {len(edges)} edges; {len(items)} new validation items")


@main.command()
@with_common
@click.option("--source", type=click.Path(exists=True), required=True)
@click.option("--target", type=click.Path(exists=True), required=True)
@click.option("--gold", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--exclude-shared-label", is_flag=True, default=False)
def testset(config, seed, cache_path, verbose, source, target, gold, out, exclude_shared_label):
    """Generate a seeded candidate test set from a gold alignment."""
    _setup(verbose)
    cfg = _load_config(config, source=source, target=target, seed=seed)
    src = pl.load_ontology_file(cfg.source, SOURCE)
    tgt = pl.load_ontology_file(cfg.target, TARGET)
    graph = union_graph(src, tgt)
    vectors = emb.embed_concepts(graph, cfg.similarity())
    ts = pl.generate_test_set(
        pl.read_alignment(gold), src, tgt, vectors, cfg.seed,
        exclude_shared_label=exclude_shared_label,
    )
    Path(out).write_text(json.dumps(ts.to_document(), indent=2), encoding="utf-8")
    click.echo(f"{len(ts.entries)} sources, {ts.total_pairs()} pairs")


@main.command("eval")
@with_common
@click.option("--predicted", type=click.Path(exists=True), required=True)
@click.option("--gold", type=click.Path(exists=True), required=True)
def eval_cmd(config, seed, cache_path, verbose, predicted, gold):
    """Score a predicted alignment against gold."""
    _setup(verbose)
    metrics = pl.evaluate(pl.read_alignment(predicted), pl.read_alignment(gold))
    click.echo(json.dumps(metrics.to_dict(), indent=2))


@main.command()
@with_common
@click.option("--graph", "graph_path", type=click.Path(exists=True), required=True)
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8402)
@click.option("--console-dir", type=click.Path(), default=None)
@click.option("--token", default=None, help="Require this bearer token on /api routes (or set KROMA_API_TOKEN).")
def serve(config, seed, cache_path, verbose, graph_path, host, port, console_dir, token):
    """Serve the validation queue API (and the console, if built)."""
    _setup(verbose)
    import uvicorn

    from .service import GraphStore, create_app

    app = create_app(GraphStore(graph_path), console_dir=console_dir, token=token)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    sys.exit(main())
