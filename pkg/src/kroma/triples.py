"""In-memory triple store with subject/predicate/object indexes.

Models the external knowledge base consulted during ground-set curation.
Read-only after load; lookups may run concurrently.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

from .ontology import OntologyError, parse_triple_line


@dataclass(frozen=True, order=True, slots=True)
class Triple:
    subject: str
    predicate: str
    object: str

    def __post_init__(self):
        if not (self.subject and self.predicate and self.object):
            raise ValueError("triple fields must be non-empty")


class TripleStore:
    """Set-semantics triple collection with keyed lookup on each position."""

    def __init__(self, triples=()):
        self._triples: set[Triple] = set()
        self._by_subject: dict[str, set[Triple]] = defaultdict(set)
        self._by_predicate: dict[str, set[Triple]] = defaultdict(set)
        self._by_object: dict[str, set[Triple]] = defaultdict(set)
        for t in triples:
            self.add(t)

    def add(self, triple: Triple) -> None:
        if triple in self._triples:
            return
        self._triples.add(triple)
        self._by_subject[triple.subject].add(triple)
        self._by_predicate[triple.predicate].add(triple)
        self._by_object[triple.object].add(triple)

    def __len__(self) -> int:
        return len(self._triples)

    def __contains__(self, triple: Triple) -> bool:
        return triple in self._triples

    def subjects(self) -> list[str]:
        return sorted(self._by_subject)

    def by_subject(self, subject: str) -> list[Triple]:
        return sorted(self._by_subject.get(subject, ()))

    def by_predicate(self, predicate: str) -> list[Triple]:
        return sorted(self._by_predicate.get(predicate, ()))

    def by_object(self, obj: str) -> list[Triple]:
        return sorted(self._by_object.get(obj, ()))

    def match(self, subject: str | None, predicate: str | None, obj: str | None) -> list[Triple]:
        """All triples matching the given constants; None is a wildcard."""
        candidates: set[Triple] | None = None
        for value, index in (
            (subject, self._by_subject),
            (predicate, self._by_predicate),
            (obj, self._by_object),
        ):
            if value is None:
                continue
            found = index.get(value, set())
            candidates = found if candidates is None else candidates & found
            if not candidates:
                return []
        return sorted(self._triples if candidates is None else candidates)

    @classmethod
    def from_text(cls, text: str) -> "TripleStore":
        """Load from the same line-oriented triple subset used for ontologies."""
        store = cls()
        for lineno, line in enumerate(text.splitlines(), start=1):
            parsed = parse_triple_line(line, lineno)
            if parsed is None:
                continue
            s, p, o = parsed
            store.add(Triple(s, p, o))
        return store

    @classmethod
    def from_file(cls, path) -> "TripleStore":
        with open(path, encoding="utf-8") as handle:
            try:
                return cls.from_text(handle.read())
            except OntologyError as exc:
                raise OntologyError(f"{path}: {exc}") from exc
