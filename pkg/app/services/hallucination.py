"""
Hallucination audit for generated relations and paths.

Ontology hallucination (a relation whose declared domain or range the
endpoint types do not satisfy) is decided mechanically. Content
hallucination is not: a triple missing from the graph may still be a fact,
so it is only flagged as a suspect until a human label confirms it.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import FrozenSet, List, Optional

from app.core.errors import HallucinationError
from app.services.kg_store import Iri, KnowledgeGraph, Ontology, Triple
from app.services.path_model import Hop, KgPath

logger = logging.getLogger(__name__)


class VerdictKind(str, Enum):
    VALID = "Valid"
    ONTOLOGY_HALLUCINATION = "OntologyHallucination"
    CONTENT_SUSPECT = "ContentSuspect"
    CONTENT_HALLUCINATION_CONFIRMED = "ContentHallucinationConfirmed"


class Constraint(str, Enum):
    DOMAIN = "Domain"
    RANGE = "Range"


class FactLabel(str, Enum):
    CORRECT = "CorrectFact"
    INCORRECT = "IncorrectFact"


@dataclass(frozen=True)
class RelationVerdict:
    triple: Triple
    kind: VerdictKind
    violated: Optional[Constraint] = None
    expected: Optional[Iri] = None
    found: FrozenSet[Iri] = field(default_factory=frozenset)

    @property
    def tag(self) -> str:
        if self.kind is VerdictKind.ONTOLOGY_HALLUCINATION:
            found = ",".join(sorted(cls.value for cls in self.found))
            return f"{self.kind.value}({self.violated.value},{self.expected},{{{found}}})"
        return self.kind.value

    @property
    def ontology_invalid(self) -> bool:
        return self.kind is VerdictKind.ONTOLOGY_HALLUCINATION


def _violation(ontology: Ontology, entity: Iri, expected: Optional[Iri]) -> Optional[FrozenSet[Iri]]:
    """Types of `entity` when they witness a violation of `expected`, else None."""
    if expected is None:
        return None
    types = ontology.types_of(entity)
    if not types:
        # Untyped entities cannot witness a violation.
        return None
    if any(ontology.is_subclass_or_equal(cls, expected) for cls in types):
        return None
    return types


def check_ontology(ontology: Ontology, graph: KnowledgeGraph, triple: Triple) -> RelationVerdict:
    """
    Classify one triple: domain first, then range, then presence in the graph.
    """
    if not isinstance(triple, Triple):
        raise HallucinationError(f"Expected a Triple, got {triple!r}")

    domain = ontology.domain_of(triple.relation)
    found = _violation(ontology, triple.head, domain)
    if found is not None:
        return RelationVerdict(triple, VerdictKind.ONTOLOGY_HALLUCINATION, Constraint.DOMAIN, domain, found)

    range_ = ontology.range_of(triple.relation)
    found = _violation(ontology, triple.tail, range_)
    if found is not None:
        return RelationVerdict(triple, VerdictKind.ONTOLOGY_HALLUCINATION, Constraint.RANGE, range_, found)

    if graph.has_triple(triple):
        return RelationVerdict(triple, VerdictKind.VALID)
    return RelationVerdict(triple, VerdictKind.CONTENT_SUSPECT)


def check_hop(ontology: Ontology, graph: KnowledgeGraph, hop: Hop) -> RelationVerdict:
    """
    Parsed generations carry no orientation flags, so their hops are checked
    as written. A hop flagged inverse (ground truth, shortest-path output) is
    checked in the orientation the graph stores it.
    """
    return check_ontology(ontology, graph, hop.stored_triple)


def audit_path(ontology: Ontology, graph: KnowledgeGraph, path: KgPath) -> List[RelationVerdict]:
    """One verdict per hop, in path order."""
    return [check_hop(ontology, graph, hop) for hop in path.hops()]


def path_invalid_fraction(ontology: Ontology, graph: KnowledgeGraph, path: KgPath) -> Fraction:
    if path.hop_count == 0:
        raise HallucinationError(f"Cannot compute the invalid-relation share of zero-hop path {path}")
    verdicts = audit_path(ontology, graph, path)
    return Fraction(sum(1 for verdict in verdicts if verdict.ontology_invalid), path.hop_count)


def confirm_with_label(verdict: RelationVerdict, label: Optional[FactLabel]) -> RelationVerdict:
    """Promote a content suspect once a human has judged it non-factual."""
    if verdict.kind is VerdictKind.CONTENT_SUSPECT and label is FactLabel.INCORRECT:
        return RelationVerdict(verdict.triple, VerdictKind.CONTENT_HALLUCINATION_CONFIRMED)
    return verdict
