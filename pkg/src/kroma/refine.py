"""Concept-graph construction and maintenance by rank-bucketed refinement.

The engine computes the quotient of the union ontology graph under the
coarsest equivalence relation that (a) only groups concepts connected by
the transitive closure of asserted Similar decisions, and (b) is stable
under adjacency on both sides: members of one class must have identical
sets of child classes and identical sets of parent classes. Because any
stable partition is rank-uniform on a DAG, grouping can proceed bottom-up
over rank buckets, and structurally incompatible pairs can be skipped
before ever consulting the (expensive) decision oracle.

Offline construction runs two phases: bucket-local similarity grouping
(union-find closure over consulted pairs), then a worklist split fixpoint
that restores adjacency stability. Online maintenance applies edge batches
incrementally: ranks are raised in place, moved nodes are split out, and
every affected rank bucket is re-coarsened by similarity closure before
the split fixpoint runs again. Coarsen-then-split is essential -- merges
can be mutually dependent across ranks, so greedy pairwise merging would
under-merge -- and the affected region grows only where a class actually
changed, so an undisturbed graph region is never touched.

Uncertain decisions, confident denials that closure later contradicts, and
cross-rank similarity hints are never resolved silently: they land in a
confidence-prioritized validation queue for a human expert.
"""

from __future__ import annotations

import heapq
import json
from collections import defaultdict, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Protocol

from .ontology import (
    Concept,
    ConceptId,
    CycleError,
    Ontology,
    UnionGraph,
    union_graph,
)
from .oracle import Decision, DecisionKind


class Reason(str, Enum):
    LOW_CONFIDENCE = "low-confidence-oracle"
    RANK_CONFLICT = "rank-conflict"
    SIM_LLM_DISAGREEMENT = "sim-llm-disagreement"


class ItemStatus(str, Enum):
    PENDING = "pending"
    APPROVED = "approved"
    REJECTED = "rejected"


class ValidationError(Exception):
    pass


@dataclass(slots=True)
class ValidationItem:
    item_id: int
    pair: tuple[ConceptId, ConceptId]
    reason: Reason
    confidence: float
    context: dict
    status: ItemStatus = ItemStatus.PENDING

    def to_dict(self) -> dict:
        return {
            "id": self.item_id,
            "pair": [str(self.pair[0]), str(self.pair[1])],
            "reason": self.reason.value,
            "confidence": self.confidence,
            "context": self.context,
            "status": self.status.value,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ValidationItem":
        return cls(
            item_id=doc["id"],
            pair=(ConceptId.parse(doc["pair"][0]), ConceptId.parse(doc["pair"][1])),
            reason=Reason(doc["reason"]),
            confidence=doc["confidence"],
            context=doc.get("context", {}),
            status=ItemStatus(doc.get("status", "pending")),
        )


class ValidationQueue:
    """Pending pairs awaiting expert resolution, lowest confidence first."""

    def __init__(self):
        self._items: dict[int, ValidationItem] = {}
        self._next_id = 1
        self._seen_pairs: set[tuple[ConceptId, ConceptId]] = set()

    def add(self, pair, reason: Reason, confidence: float, context: dict | None = None) -> ValidationItem | None:
        key = tuple(sorted(pair))
        if key in self._seen_pairs:
            return None
        self._seen_pairs.add(key)
        item = ValidationItem(self._next_id, tuple(pair), reason, confidence, context or {})
        self._items[item.item_id] = item
        self._next_id += 1
        return item

    def get(self, item_id: int) -> ValidationItem | None:
        return self._items.get(item_id)

    def pending(self) -> list[ValidationItem]:
        return sorted(
            (i for i in self._items.values() if i.status is ItemStatus.PENDING),
            key=lambda i: (i.confidence, i.item_id),
        )

    def all_items(self) -> list[ValidationItem]:
        return sorted(self._items.values(), key=lambda i: i.item_id)

    def reopen_pair(self, pair) -> None:
        """Allow a resolved pair to be enqueued again (re-queues after failed merges)."""
        self._seen_pairs.discard(tuple(sorted(pair)))

    def __len__(self) -> int:
        return len(self.pending())


class DecisionOracle(Protocol):
    def decide(self, a: ConceptId, b: ConceptId) -> Decision: ...


class FunctionOracle:
    def __init__(self, fn: Callable[[ConceptId, ConceptId], Decision]):
        self._fn = fn

    def decide(self, a: ConceptId, b: ConceptId) -> Decision:
        return self._fn(a, b)


def as_oracle(oracle) -> DecisionOracle:
    return oracle if hasattr(oracle, "decide") else FunctionOracle(oracle)


@dataclass(slots=True)
class RefineOptions:
    """Query-economy and validation knobs.

    structural_gate skips oracle consultations for pairs whose child-class
    sets already differ (they can never be bisimilar); it is exact for
    transitivity-respecting oracles. Disable it when the oracle is noisy
    and exact agreement with an ungated fixpoint is required.
    """

    structural_gate: bool = True
    sim_hint: Callable[[ConceptId, ConceptId], float] | None = None
    sim_hint_threshold: float = 0.85


# ---------------------------------------------------------------------------
# Snapshots
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class EquivalenceClass:
    class_id: int
    rank: int
    members: tuple[ConceptId, ...]


@dataclass(frozen=True, slots=True)
class QuotientEdge:
    source: int
    target: int
    relation: str
    provenance: tuple[str, ...]


@dataclass(frozen=True, slots=True)
class Partition:
    """Canonical view of an equivalence partition: sorted classes of sorted members."""

    classes: tuple[tuple[ConceptId, ...], ...]

    @classmethod
    def from_groups(cls, groups) -> "Partition":
        return cls(tuple(sorted(tuple(sorted(g)) for g in groups)))

    def as_sets(self) -> set[frozenset[ConceptId]]:
        return {frozenset(c) for c in self.classes}

    def class_of(self, cid: ConceptId) -> tuple[ConceptId, ...]:
        for group in self.classes:
            if cid in group:
                return group
        raise KeyError(cid)

    def __len__(self) -> int:
        return len(self.classes)


@dataclass(frozen=True, slots=True)
class ConceptGraph:
    """Quotient multigraph: equivalence classes plus relation-labelled edges."""

    classes: tuple[EquivalenceClass, ...]
    edges: tuple[QuotientEdge, ...]
    version: int = 0

    def partition(self) -> Partition:
        return Partition.from_groups(c.members for c in self.classes)

    def class_count(self) -> int:
        return len(self.classes)

    def validate(self) -> None:
        """Check the structural invariants: exact cover, provenance on every
        quotient edge, and acyclicity of the class graph."""
        seen: set[ConceptId] = set()
        for klass in self.classes:
            if not klass.members:
                raise ValueError(f"class {klass.class_id} is empty")
            overlap = seen & set(klass.members)
            if overlap:
                raise ValueError(f"classes overlap on {sorted(overlap)[:3]}")
            seen.update(klass.members)
        indegree = {c.class_id: 0 for c in self.classes}
        successors: dict[int, set[int]] = {c.class_id: set() for c in self.classes}
        for edge in self.edges:
            if not edge.provenance:
                raise ValueError(f"quotient edge {edge.source}->{edge.target} lacks provenance")
            if edge.target not in successors[edge.source]:
                successors[edge.source].add(edge.target)
                indegree[edge.target] += 1
        ready = deque(cid for cid, deg in indegree.items() if deg == 0)
        visited = 0
        while ready:
            node = ready.popleft()
            visited += 1
            for nxt in successors[node]:
                indegree[nxt] -= 1
                if indegree[nxt] == 0:
                    ready.append(nxt)
        if visited != len(self.classes):
            raise ValueError("class graph contains a cycle")

    def to_document(self, queue: ValidationQueue | None = None, negatives=()) -> dict:
        return {
            "version": self.version,
            "classes": [
                {"id": c.class_id, "rank": c.rank, "members": [str(m) for m in c.members]}
                for c in self.classes
            ],
            "edges": [
                {
                    "from": e.source,
                    "to": e.target,
                    "relation": e.relation,
                    "provenance": list(e.provenance),
                }
                for e in self.edges
            ],
            "constraints": {
                "negative_pairs": sorted([str(a), str(b)] for a, b in negatives)
            },
            "queue": [i.to_dict() for i in (queue.all_items() if queue else [])],
        }

    @classmethod
    def from_document(cls, doc: dict) -> "ConceptGraph":
        classes = tuple(
            EquivalenceClass(
                class_id=c["id"],
                rank=c["rank"],
                members=tuple(ConceptId.parse(m) for m in c["members"]),
            )
            for c in doc["classes"]
        )
        edges = tuple(
            QuotientEdge(e["from"], e["to"], e["relation"], tuple(e["provenance"]))
            for e in doc["edges"]
        )
        return cls(classes=classes, edges=edges, version=doc.get("version", 0))


@dataclass(slots=True)
class DeltaBatch:
    """Edge batch for online maintenance; may introduce unseen concepts."""

    edges: list[tuple[ConceptId, ConceptId, str]] = field(default_factory=list)
    concepts: list[Concept] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------

class RefinementEngine:
    """Single-writer partition maintenance over the union ontology graph."""

    def __init__(self, oracle, options: RefineOptions | None = None):
        self.oracle = as_oracle(oracle)
        self.options = options or RefineOptions()
        # Graph state, integer-indexed for speed; ids map back to ConceptId.
        self.ids: list[ConceptId] = []
        self.index: dict[ConceptId, int] = {}
        self.concepts: dict[ConceptId, Concept] = {}
        self.children: list[set[int]] = []
        self.parents: list[set[int]] = []
        self.relations: dict[tuple[int, int], set[str]] = defaultdict(set)
        self.rank: list[int] = []
        # Partition state.
        self.class_of: list[int] = []
        self.members: dict[int, list[int]] = {}
        self.class_rank: dict[int, int] = {}
        self.buckets: dict[int, set[int]] = defaultdict(set)
        self._next_class = 0
        # Decisions, constraints and the expert queue.
        self.decisions: dict[tuple[int, int], Decision] = {}
        self.negatives: set[tuple[ConceptId, ConceptId]] = set()
        self.queue = ValidationQueue()
        self.consultations = 0
        self._refined = False

    # -- construction -----------------------------------------------------

    @classmethod
    def from_ontologies(cls, source: Ontology, target: Ontology, oracle,
                        options: RefineOptions | None = None) -> "RefinementEngine":
        return cls.from_graph(union_graph(source, target), oracle, options)

    @classmethod
    def from_graph(cls, graph: UnionGraph, oracle, options: RefineOptions | None = None) -> "RefinementEngine":
        engine = cls(oracle, options)
        for cid in sorted(graph.concepts):
            engine._add_node(cid, graph.concepts[cid])
        for child, parent, rel in sorted(graph.edges):
            u, v = engine.index[child], engine.index[parent]
            engine.children[v].add(u)
            engine.parents[u].add(v)
            engine.relations[(u, v)].add(rel)
        for n in range(len(engine.ids)):
            engine.rank[n] = graph.ranks[engine.ids[n]]
        return engine

    def _add_node(self, cid: ConceptId, concept: Concept | None = None) -> int:
        if cid in self.index:
            return self.index[cid]
        idx = len(self.ids)
        self.ids.append(cid)
        self.index[cid] = idx
        self.concepts[cid] = concept or Concept(id=cid, labels=(cid.iri.rsplit("/", 1)[-1],))
        self.children.append(set())
        self.parents.append(set())
        self.rank.append(0)
        self.class_of.append(-1)
        return idx

    def _new_class(self, node_indices: list[int], rank: int) -> int:
        cid = self._next_class
        self._next_class += 1
        self.members[cid] = list(node_indices)
        self.class_rank[cid] = rank
        self.buckets[rank].add(cid)
        for n in node_indices:
            self.class_of[n] = cid
        return cid

    def _retire_class(self, cid: int) -> None:
        self.buckets[self.class_rank[cid]].discard(cid)
        del self.members[cid]
        del self.class_rank[cid]

    # -- oracle plumbing ---------------------------------------------------

    def _pair_key(self, i: int, j: int) -> tuple[int, int]:
        return (i, j) if i <= j else (j, i)

    def _oriented(self, i: int, j: int) -> tuple[ConceptId, ConceptId]:
        a, b = self.ids[i], self.ids[j]
        if a.role == b.role:
            return (a, b) if a <= b else (b, a)
        return (a, b) if a.role == "source" else (b, a)

    def _consult(self, i: int, j: int) -> Decision:
        key = self._pair_key(i, j)
        cached = self.decisions.get(key)
        if cached is not None:
            return cached
        a, b = self._oriented(i, j)
        decision = self.oracle.decide(a, b)
        self.decisions[key] = decision
        if decision.consulted:
            self.consultations += 1
        if decision.kind is DecisionKind.UNCERTAIN and decision.consulted:
            self.queue.add(
                (a, b),
                Reason.LOW_CONFIDENCE,
                decision.confidence if decision.confidence is not None else -1.0,
                context=self._pair_context(self.index[a], self.index[b], decision),
            )
        return decision

    def _pair_context(self, i: int, j: int, decision: Decision) -> dict:
        ctx = {}
        for tag, idx in (("a", i), ("b", j)):
            concept = self.concepts[self.ids[idx]]
            ctx[tag] = {
                "id": str(self.ids[idx]),
                "labels": list(concept.labels),
                "definition": concept.definition,
                "rank": self.rank[idx],
                "parents": sorted(str(self.ids[p]) for p in self.parents[idx]),
                "children": sorted(str(self.ids[c]) for c in self.children[idx]),
                "ground_set": sorted(concept.ground_set)[:10],
            }
        ctx["decision"] = {
            "kind": decision.kind.value,
            "f_score": decision.f_score,
            "sim_score": decision.sim_score,
            "confidence": decision.confidence,
            "raw": decision.answer.raw if decision.answer else None,
        }
        return ctx

    def _blocked(self, group_a, group_b) -> bool:
        if not self.negatives:
            return False
        ids_a = {self.ids[x] for x in group_a}
        ids_b = {self.ids[x] for x in group_b}
        for a, b in self.negatives:
            if (a in ids_a and b in ids_b) or (a in ids_b and b in ids_a):
                return True
        return False

    # -- signatures --------------------------------------------------------

    def _child_sig(self, n: int) -> frozenset[int]:
        return frozenset(self.class_of[c] for c in self.children[n])

    def _sig(self, n: int) -> tuple[frozenset[int], frozenset[int]]:
        return (
            frozenset(self.class_of[c] for c in self.children[n]),
            frozenset(self.class_of[p] for p in self.parents[n]),
        )

    # -- offline phase 1: bucket-local similarity grouping ------------------

    def _group_bucket(self, nodes: list[int]) -> list[list[int]]:
        """Union-find closure over consulted pairs within one rank bucket.

        Components are scanned in creation order; with the structural gate
        a component is consulted through its first gate-compatible member,
        otherwise every member is consulted until one answers Similar.
        Merging is weighted (small list appends into large) so that the
        common all-merge case stays linear in the bucket size.
        """
        comp_members: dict[int, list[int]] = {}
        root_of: dict[int, int] = {}
        order: list[int] = []
        denied: list[tuple[int, int]] = []
        child_sig_cache: dict[int, frozenset[int]] = {}

        def sig_of(n: int) -> frozenset[int]:
            if n not in child_sig_cache:
                child_sig_cache[n] = self._child_sig(n)
            return child_sig_cache[n]

        for n in nodes:
            joined: list[int] = []
            for root in order:
                comp = comp_members.get(root)
                if comp is None:
                    continue
                if self.negatives and self._blocked([n], comp):
                    continue
                if self.options.structural_gate:
                    probe = next((m for m in comp if sig_of(m) == sig_of(n)), None)
                    targets = [probe] if probe is not None else []
                else:
                    targets = comp
                hit = False
                for m in targets:
                    decision = self._consult(n, m)
                    if decision.kind is DecisionKind.SIMILAR:
                        hit = True
                        break
                    if decision.kind is DecisionKind.DISSIMILAR and decision.consulted:
                        denied.append(self._pair_key(n, m))
                if hit:
                    joined.append(root)
            if not joined:
                comp_members[n] = [n]
                root_of[n] = n
                order.append(n)
                continue
            # Absorb n plus every joined component into the largest of them,
            # skipping components whose absorption a negative pair forbids.
            target = max(joined, key=lambda r: len(comp_members[r]))
            for root in joined:
                if root == target:
                    continue
                if self.negatives and self._blocked(comp_members[root], comp_members[target] + [n]):
                    continue
                for m in comp_members[root]:
                    root_of[m] = target
                comp_members[target].extend(comp_members[root])
                del comp_members[root]
            comp_members[target].append(n)
            root_of[n] = target
        comps = [comp_members[root] for root in order if root in comp_members]
        # Closure may contradict recorded confident denials: surface them.
        for a, b in denied:
            if root_of[a] == root_of[b]:
                pair = self._oriented(a, b)
                recorded = self.decisions[self._pair_key(a, b)]
                self.queue.add(
                    pair,
                    Reason.SIM_LLM_DISAGREEMENT,
                    recorded.confidence or -1.0,
                    context=self._pair_context(
                        self.index[pair[0]], self.index[pair[1]], recorded
                    ),
                )
        return comps

    # -- offline phase 2: split fixpoint ------------------------------------

    def _split_fixpoint(self, seed_classes) -> set[int]:
        """Restore signature stability; returns the live classes it touched."""
        heap: list[tuple[int, int]] = []
        queued: set[int] = set()
        touched: set[int] = set()

        def push(cid: int) -> None:
            touched.add(cid)
            if cid in self.members and cid not in queued:
                queued.add(cid)
                heapq.heappush(heap, (self.class_rank[cid], cid))

        for cid in sorted(seed_classes):
            push(cid)
        while heap:
            _, cid = heapq.heappop(heap)
            queued.discard(cid)
            if cid not in self.members:
                continue
            members = self.members[cid]
            if len(members) == 1:
                continue
            groups: dict[tuple, list[int]] = defaultdict(list)
            for n in members:
                groups[self._sig(n)].append(n)
            if len(groups) == 1:
                continue
            rank = self.class_rank[cid]
            neighbor_classes: set[int] = set()
            for n in members:
                for other in self.children[n] | self.parents[n]:
                    neighbor_classes.add(self.class_of[other])
            self._retire_class(cid)
            ordered = sorted(groups.values(), key=lambda g: min(self.ids[x] for x in g))
            for group in ordered:
                push(self._new_class(sorted(group, key=lambda x: self.ids[x]), rank))
            for nc in neighbor_classes:
                push(nc)
        return {c for c in touched if c in self.members}

    def offline_refine(self) -> ConceptGraph:
        """Full bottom-up construction; idempotent on an already-stable state."""
        for cid in list(self.members):
            self._retire_class(cid)
        self.class_of = [-1] * len(self.ids)
        by_rank: dict[int, list[int]] = defaultdict(list)
        for n in range(len(self.ids)):
            by_rank[self.rank[n]].append(n)
        for r in sorted(by_rank):
            nodes = sorted(by_rank[r], key=lambda x: self.ids[x])
            for comp in self._group_bucket(nodes):
                self._new_class(sorted(comp, key=lambda x: self.ids[x]), r)
        self._split_fixpoint(list(self.members))
        self._refined = True
        return self.concept_graph()

    # -- collapse: split-out plus merge checks ------------------------------

    def _split_out(self, n: int) -> list[int]:
        """Pull node n into its own singleton class; returns affected class ids."""
        old = self.class_of[n]
        affected = []
        if old >= 0 and len(self.members.get(old, ())) > 1:
            self.members[old] = [m for m in self.members[old] if m != n]
            affected.append(old)
            affected.append(self._new_class([n], self.rank[n]))
        else:
            if old >= 0:
                # Singleton already; just rebucket if the rank moved.
                if self.class_rank[old] != self.rank[n]:
                    self.buckets[self.class_rank[old]].discard(old)
                    self.class_rank[old] = self.rank[n]
                    self.buckets[self.rank[n]].add(old)
                affected.append(old)
            else:
                affected.append(self._new_class([n], self.rank[n]))
        return affected

    def _regroup_buckets(self, ranks_to_do) -> set[int]:
        """Dissolve the given rank buckets and regroup them by similarity closure."""
        touched: set[int] = set()
        for r in sorted(ranks_to_do):
            nodes = sorted(
                (n for cid in self.buckets.get(r, ()) for n in self.members[cid]),
                key=lambda x: self.ids[x],
            )
            for cid in list(self.buckets.get(r, ())):
                self._retire_class(cid)
            for comp in self._group_bucket(nodes):
                touched.add(self._new_class(sorted(comp, key=lambda x: self.ids[x]), r))
        return touched

    def _maintain(self, seed_ranks) -> None:
        """Restore the refinement fixpoint around the given rank buckets.

        Affected buckets are re-coarsened together before splitting: merges
        can be mutually dependent across ranks (a pair of leaves merges only
        if their parents merge, and vice versa), so coarsening one bucket at
        a time would under-merge. The region grows only when a node's class
        actually changed, so undisturbed parts of the graph are never
        touched; in the worst case the region covers every rank and the pass
        degenerates into an offline recompute.
        """
        region: set[int] = set(seed_ranks)
        while True:
            region_nodes: list[int] = []
            for r in sorted(region):
                for cid in sorted(self.buckets.get(r, ())):
                    region_nodes.extend(self.members[cid])
            pre = {n: frozenset(self.members[self.class_of[n]]) for n in region_nodes}
            touched = self._regroup_buckets(region)
            neighbor_classes = {
                self.class_of[m]
                for n in region_nodes
                for m in self.children[n] | self.parents[n]
            }
            self._split_fixpoint(touched | neighbor_classes)
            changed = [
                n for n in region_nodes
                if pre[n] != frozenset(self.members[self.class_of[n]])
            ]
            extra = {
                self.rank[m]
                for n in changed
                for m in self.children[n] | self.parents[n]
            } - region
            if not extra:
                return
            region |= extra

    def collapse(self, c: ConceptId, d: ConceptId) -> Partition:
        """Split the pair out of their classes, then re-run merge checks.

        The net effect is nil when both concepts still match their old
        classmates; otherwise the fragments stay separated and the change
        propagates to affected higher-rank buckets through the fixpoint.
        """
        i, j = self.index[c], self.index[d]
        self._split_out(i)
        self._split_out(j)
        self._maintain({self.rank[i], self.rank[j]})
        return self.partition()

    # -- online maintenance --------------------------------------------------

    def apply_batch(self, delta: DeltaBatch) -> list[ValidationItem]:
        """Apply an edge batch; returns newly enqueued validation items.

        The batch is validated first: if any edge would close a directed
        cycle the whole batch is rejected atomically.
        """
        before_items = {i.item_id for i in self.queue.all_items()}
        new_nodes: list[int] = []
        overlay_children: dict[int, set[int]] = defaultdict(set)
        overlay_parents: dict[int, set[int]] = defaultdict(set)

        def reaches(start: int, goal: int) -> bool:
            # Upward reachability over base + overlay adjacency.
            seen = {start}
            stack = [start]
            while stack:
                node = stack.pop()
                if node == goal:
                    return True
                for parent in self.parents[node] if node < len(self.parents) else set():
                    if parent not in seen:
                        seen.add(parent)
                        stack.append(parent)
                for parent in overlay_parents.get(node, ()):
                    if parent not in seen:
                        seen.add(parent)
                        stack.append(parent)
            return False

        pending_ids = {c.id for c in delta.concepts}
        for child, parent, rel in delta.edges:
            if child == parent:
                raise CycleError([child, parent])
            for endpoint in (child, parent):
                if endpoint not in self.index and endpoint not in pending_ids:
                    pending_ids.add(endpoint)
        # Validate cycles on a scratch overlay before touching engine state.
        scratch_index = dict(self.index)
        scratch_count = len(self.ids)
        for cid in sorted(pending_ids):
            if cid not in scratch_index:
                scratch_index[cid] = scratch_count
                scratch_count += 1
        for child, parent, rel in delta.edges:
            u, v = scratch_index[child], scratch_index[parent]
            if reaches(v, u):
                raise CycleError([child, parent, child])
            overlay_children[v].add(u)
            overlay_parents[u].add(v)

        # Safe to mutate now.
        for concept in sorted(delta.concepts, key=lambda c: c.id):
            n = self._add_node(concept.id, concept)
            if self.class_of[n] == -1:
                new_nodes.append(n)
        for cid in sorted(pending_ids):
            if cid not in self.index:
                n = self._add_node(cid)
                new_nodes.append(n)
        for n in new_nodes:
            self._new_class([n], 0)

        dirty: set[int] = set(new_nodes)
        old_ranks: dict[int, int] = {}
        edges = sorted(
            delta.edges,
            key=lambda e: (self.rank[self.index[e[0]]], e[0], e[1], e[2]),
        )
        for child, parent, rel in edges:
            u, v = self.index[child], self.index[parent]
            if u in self.children[v] and rel in self.relations[(u, v)]:
                continue
            self.children[v].add(u)
            self.parents[u].add(v)
            self.relations[(u, v)].add(rel)
            dirty.update((u, v))
            for node, old in self._raise_ranks(v).items():
                old_ranks.setdefault(node, old)
        dirty |= set(old_ranks)

        if dirty:
            for n in sorted(old_ranks):
                self._split_out(n)
            seed_ranks = {self.rank[n] for n in dirty}
            seed_ranks |= set(old_ranks.values())
            seed_ranks |= {
                self.rank[m]
                for n in dirty
                for m in self.children[n] | self.parents[n]
            }
            self._maintain(seed_ranks)
        self._hint_checks(new_nodes)
        return [i for i in self.queue.all_items() if i.item_id not in before_items]

    def _raise_ranks(self, start: int) -> dict[int, int]:
        """Raise ranks upward from `start` after new child edges; never lowers.

        Returns {node: rank before the raise} for every node that moved.
        """
        changed: dict[int, int] = {}
        queue = deque([start])
        while queue:
            node = queue.popleft()
            need = max((self.rank[c] + 1 for c in self.children[node]), default=0)
            if need > self.rank[node]:
                changed.setdefault(node, self.rank[node])
                self.rank[node] = need
                queue.extend(self.parents[node])
        return changed

    def _hint_checks(self, new_nodes: list[int]) -> None:
        """Defer inconsistent cases on unseen concepts to the expert queue."""
        hint = self.options.sim_hint
        if hint is None or not new_nodes:
            return
        for n in sorted(new_nodes, key=lambda x: self.ids[x]):
            nid = self.ids[n]
            best_score, best = -1.0, None
            for m, mid in enumerate(self.ids):
                if m == n or mid.role == nid.role:
                    continue
                score = hint(*(self._oriented(n, m)))
                if score > best_score or (score == best_score and best is not None and mid < self.ids[best]):
                    best_score, best = score, m
            if best is None or best_score < self.options.sim_hint_threshold:
                continue
            pair = self._oriented(n, best)
            if self.rank[n] != self.rank[best]:
                self.queue.add(
                    pair, Reason.RANK_CONFLICT, best_score * 10.0,
                    context={"note": "similarity hint across different ranks",
                             "ranks": [self.rank[n], self.rank[best]],
                             "hint_score": best_score},
                )
                continue
            recorded = self.decisions.get(self._pair_key(n, best))
            if (
                recorded is not None
                and recorded.kind is DecisionKind.DISSIMILAR
                and recorded.consulted
            ):
                self.queue.add(
                    pair, Reason.SIM_LLM_DISAGREEMENT,
                    recorded.confidence if recorded.confidence is not None else -1.0,
                    context=self._pair_context(
                        self.index[pair[0]], self.index[pair[1]], recorded
                    ),
                )

    # -- expert resolutions ---------------------------------------------------

    def resolve_validation(self, item_id: int, decision: str) -> ConceptGraph:
        item = self.queue.get(item_id)
        if item is None:
            raise ValidationError(f"unknown validation item {item_id}")
        if item.status is not ItemStatus.PENDING:
            raise ValidationError(f"item {item_id} already {item.status.value}")
        if decision not in ("approve", "reject"):
            raise ValidationError(f"decision must be approve/reject, got {decision!r}")
        a, b = item.pair
        i, j = self.index[a], self.index[b]
        if decision == "reject":
            item.status = ItemStatus.REJECTED
            self.negatives.add(self._oriented(i, j))
            if self.class_of[i] == self.class_of[j]:
                self._split_out(i)
                self._split_out(j)
                self._maintain({self.rank[i], self.rank[j]})
            return self.concept_graph()
        item.status = ItemStatus.APPROVED
        self.negatives.discard(self._oriented(i, j))
        self.decisions[self._pair_key(i, j)] = Decision(
            DecisionKind.SIMILAR, f_score=1.0, consulted=False
        )
        if self.class_of[i] != self.class_of[j]:
            self._maintain({self.rank[i], self.rank[j]})
        if self.class_of[i] != self.class_of[j]:
            # The asserted merge did not survive refinement: ranks or
            # adjacency disagree, so hand the pair back to the expert.
            self.queue.reopen_pair(item.pair)
            self.queue.add(
                item.pair, Reason.RANK_CONFLICT, item.confidence,
                context={"note": "approved pair cannot merge: adjacency or rank mismatch",
                         "previous_item": item.item_id},
            )
        return self.concept_graph()

    # -- snapshots -------------------------------------------------------------

    def partition(self) -> Partition:
        return Partition.from_groups(
            [self.ids[n] for n in members] for members in self.members.values()
        )

    def concept_graph(self, version: int = 0) -> ConceptGraph:
        canonical = sorted(
            (tuple(sorted(self.ids[n] for n in members)), cid)
            for cid, members in self.members.items()
        )
        renumber = {old: new for new, (_, old) in enumerate(canonical)}
        classes = tuple(
            EquivalenceClass(class_id=new, rank=self.class_rank[old], members=members)
            for new, (members, old) in enumerate(canonical)
        )
        edge_map: dict[tuple[int, int, str], list[str]] = defaultdict(list)
        for (u, v), rels in sorted(self.relations.items()):
            fc = renumber[self.class_of[u]]
            tc = renumber[self.class_of[v]]
            for rel in sorted(rels):
                edge_map[(fc, tc, rel)].append(f"{self.ids[u]}->{self.ids[v]}")
        edges = tuple(
            QuotientEdge(fc, tc, rel, tuple(sorted(prov)))
            for (fc, tc, rel), prov in sorted(edge_map.items())
        )
        return ConceptGraph(classes=classes, edges=edges, version=version)

    # -- rehydration -------------------------------------------------------------

    @classmethod
    def from_document(
        cls,
        doc: dict,
        oracle,
        options: RefineOptions | None = None,
        concepts: dict[ConceptId, Concept] | None = None,
    ) -> "RefinementEngine":
        """Rebuild engine state from a persisted concept-graph document."""
        engine = cls(oracle, options)
        graph = ConceptGraph.from_document(doc)
        all_members = [m for c in graph.classes for m in c.members]
        for cid in sorted(all_members):
            engine._add_node(cid, (concepts or {}).get(cid))
        for edge in graph.edges:
            for prov in edge.provenance:
                left, _, right = prov.partition("->")
                u = engine.index[ConceptId.parse(left)]
                v = engine.index[ConceptId.parse(right)]
                engine.children[v].add(u)
                engine.parents[u].add(v)
                engine.relations[(u, v)].add(edge.relation)
        # Ranks from scratch; classes as persisted.
        order = deque(n for n in range(len(engine.ids)) if not engine.children[n])
        pending = [len(engine.children[n]) for n in range(len(engine.ids))]
        seen = 0
        while order:
            node = order.popleft()
            seen += 1
            engine.rank[node] = max(
                (engine.rank[c] + 1 for c in engine.children[node]), default=0
            )
            for p in engine.parents[node]:
                pending[p] -= 1
                if pending[p] == 0:
                    order.append(p)
        if seen != len(engine.ids):
            raise CycleError(["persisted document is cyclic"])
        for klass in graph.classes:
            engine._new_class(
                sorted((engine.index[m] for m in klass.members), key=lambda x: engine.ids[x]),
                engine.rank[engine.index[klass.members[0]]],
            )
        for a, b in doc.get("constraints", {}).get("negative_pairs", []):
            engine.negatives.add((ConceptId.parse(a), ConceptId.parse(b)))
        for item_doc in doc.get("queue", []):
            item = ValidationItem.from_dict(item_doc)
            engine.queue._items[item.item_id] = item
            engine.queue._seen_pairs.add(tuple(sorted(item.pair)))
            engine.queue._next_id = max(engine.queue._next_id, item.item_id + 1)
        engine._refined = True
        return engine


# ---------------------------------------------------------------------------
# Module-level operations
# ---------------------------------------------------------------------------

def init_concept_graph(source: Ontology, target: Ontology) -> ConceptGraph:
    """Singleton class per concept, edges mirrored; the pre-refinement state."""
    graph = union_graph(source, target)
    engine = RefinementEngine.from_graph(graph, FunctionOracle(lambda a, b: Decision(DecisionKind.DISSIMILAR, consulted=False)))
    for n in range(len(engine.ids)):
        engine._new_class([n], engine.rank[n])
    return engine.concept_graph()


def offline_refine(
    source: Ontology,
    target: Ontology,
    oracle,
    options: RefineOptions | None = None,
) -> tuple[ConceptGraph, ValidationQueue]:
    engine = RefinementEngine.from_ontologies(source, target, oracle, options)
    graph = engine.offline_refine()
    return graph, engine.queue


def online_refine(
    engine: RefinementEngine, delta: DeltaBatch
) -> tuple[ConceptGraph, list[ValidationItem]]:
    new_items = engine.apply_batch(delta)
    return engine.concept_graph(), new_items


def quotient(graph: UnionGraph, partition: Partition) -> ConceptGraph:
    """Quotient multigraph induced by an explicit partition of the node set."""
    class_index: dict[ConceptId, int] = {}
    canonical = sorted(partition.classes)
    for idx, group in enumerate(canonical):
        for member in group:
            class_index[member] = idx
    missing = set(graph.concepts) - set(class_index)
    if missing:
        raise ValueError(f"partition does not cover nodes: {sorted(missing)[:3]}")
    classes = tuple(
        EquivalenceClass(
            class_id=idx,
            rank=graph.ranks[group[0]],
            members=group,
        )
        for idx, group in enumerate(canonical)
    )
    edge_map: dict[tuple[int, int, str], list[str]] = defaultdict(list)
    for child, parent, rel in sorted(graph.edges):
        key = (class_index[child], class_index[parent], rel)
        edge_map[key].append(f"{child}->{parent}")
    edges = tuple(
        QuotientEdge(fc, tc, rel, tuple(sorted(prov)))
        for (fc, tc, rel), prov in sorted(edge_map.items())
    )
    return ConceptGraph(classes=classes, edges=edges)


def brute_force_bisim(graph: UnionGraph, oracle) -> Partition:
    """Naive fixpoint oracle: similarity closure, then iterated splitting.

    Starts from the transitive closure of all pairwise Similar decisions
    (ignoring rank), then repeatedly splits any class whose members differ
    in their sets of predecessor classes or successor classes. Test-only:
    quadratic in the node count.
    """
    oracle = as_oracle(oracle)
    nodes = sorted(graph.concepts)
    parent_of = {n: n for n in nodes}

    def find(x):
        while parent_of[x] != x:
            parent_of[x] = parent_of[parent_of[x]]
            x = parent_of[x]
        return x

    for i, a in enumerate(nodes):
        for b in nodes[i + 1:]:
            if a.role == b.role:
                first, second = (a, b) if a <= b else (b, a)
            else:
                first, second = (a, b) if a.role == "source" else (b, a)
            if oracle.decide(first, second).kind is DecisionKind.SIMILAR:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent_of[max(ra, rb)] = min(ra, rb)
    groups: dict[ConceptId, set[ConceptId]] = defaultdict(set)
    for n in nodes:
        groups[find(n)].add(n)
    partition = [frozenset(g) for g in groups.values()]

    while True:
        class_of = {n: i for i, group in enumerate(partition) for n in group}
        new_partition: list[frozenset[ConceptId]] = []
        changed = False
        for group in partition:
            sig_groups: dict[tuple, set[ConceptId]] = defaultdict(set)
            for n in group:
                sig = (
                    frozenset(class_of[c] for c in graph.children[n]),
                    frozenset(class_of[p] for p in graph.parents[n]),
                )
                sig_groups[sig].add(n)
            if len(sig_groups) > 1:
                changed = True
            new_partition.extend(frozenset(g) for g in sig_groups.values())
        partition = new_partition
        if not changed:
            break
    return Partition.from_groups(partition)


def save_graph_document(path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(doc, handle, indent=2)
        handle.write("\n")


def load_graph_document(path) -> dict:
    with open(path, encoding="utf-8") as handle:
        return json.load(handle)
