"""
Task datasets: masked non-contextual queries, context-augmented relation
extraction queries and contextual path generation (CPG) queries.

Task files are JSON Lines, one record per query; see docs/task_format.md.
"""
import hashlib
import logging
import random
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from app.core.errors import DataError, InvalidIriError, TaskValidationError
from app.core.storage import iter_jsonl, write_jsonl
from app.services.hallucination import audit_path
from app.services.kg_store import Iri, IriKind, KnowledgeGraph, Ontology, Triple
from app.services.path_model import KgPath, parse_path, render_path

logger = logging.getLogger(__name__)

MIN_CPG_HOPS = 2
MAX_CPG_HOPS = 6


class TaskKind(str, Enum):
    TAIL_PREDICTION = "tail-prediction"
    RELATION_PREDICTION = "relation-prediction"
    RELATION_EXTRACTION = "relation-extraction"
    CONTEXTUAL_PATH_GENERATION = "contextual-path-generation"

    @property
    def short_name(self) -> str:
        return _SHORT_NAMES[self]


_SHORT_NAMES = {
    TaskKind.TAIL_PREDICTION: "tail",
    TaskKind.RELATION_PREDICTION: "relation",
    TaskKind.RELATION_EXTRACTION: "re",
    TaskKind.CONTEXTUAL_PATH_GENERATION: "cpg",
}

GroundTruth = Union[Iri, KgPath]


@dataclass(frozen=True)
class Query:
    id: str
    kind: TaskKind
    head: Iri
    ground_truth: GroundTruth
    tail: Optional[Iri] = None
    relation: Optional[Iri] = None
    context: Optional[str] = None
    document_id: Optional[str] = None
    aliases: Dict[str, Tuple[str, ...]] = field(default_factory=dict, compare=False, hash=False)

    def surface_name(self, role: str) -> str:
        """First alias given for the head or tail, else the IRI local name as text."""
        entity = self.head if role == "head" else self.tail
        return _surface_names(entity, self.aliases.get(role, ()))[0]

    @property
    def truth_path(self) -> KgPath:
        if not isinstance(self.ground_truth, KgPath):
            raise TypeError(f"Query {self.id} has a single-IRI ground truth")
        return self.ground_truth

    @property
    def truth_iri(self) -> Iri:
        if not isinstance(self.ground_truth, Iri):
            raise TypeError(f"Query {self.id} has a path ground truth")
        return self.ground_truth

    def to_record(self) -> Dict:
        record: Dict = {"id": self.id, "kind": self.kind.value, "head": self.head.value}
        if self.tail is not None:
            record["tail"] = self.tail.value
        if self.relation is not None:
            record["relation"] = self.relation.value
        if self.context is not None:
            record["context"] = self.context
        if self.document_id is not None:
            record["document_id"] = self.document_id
        if self.aliases:
            record["aliases"] = {key: list(values) for key, values in sorted(self.aliases.items())}
        if isinstance(self.ground_truth, KgPath):
            record["ground_truth"] = render_path(self.ground_truth)
            inverse_hops = [index for index, flag in enumerate(self.ground_truth.inverse) if flag]
            if inverse_hops:
                record["inverse_hops"] = inverse_hops
        else:
            record["ground_truth"] = self.ground_truth.value
        return record


def sample_triples(graph: KnowledgeGraph, n: int, seed: int) -> List[Triple]:
    """
    Draw `n` distinct triples with `random.Random(seed)` over the graph's
    sorted triple list, so the sample only depends on graph content and seed.
    """
    if n < 0:
        raise DataError(f"Cannot sample a negative number of triples ({n})")
    if n > len(graph):
        raise DataError(f"Cannot sample {n} triples from a graph holding {len(graph)}")
    return random.Random(seed).sample(sorted(graph), n)


def _query_id(kind: TaskKind, triple: Triple) -> str:
    digest = hashlib.sha256(f"{kind.value}\t{triple.render()}".encode("utf-8")).hexdigest()
    return f"{kind.short_name}-{digest[:12]}"


def make_masked_queries(triples: Sequence[Triple], kind: TaskKind) -> List[Query]:
    if kind is TaskKind.TAIL_PREDICTION:
        return [
            Query(_query_id(kind, triple), kind, triple.head, triple.tail, relation=triple.relation)
            for triple in triples
        ]
    if kind is TaskKind.RELATION_PREDICTION:
        return [
            Query(_query_id(kind, triple), kind, triple.head, triple.relation, tail=triple.tail)
            for triple in triples
        ]
    raise DataError(f"Masked queries are built for tail or relation prediction, not {kind.value}")


class TaskRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str = Field(min_length=1)
    kind: TaskKind
    head: str
    tail: Optional[str] = None
    relation: Optional[str] = None
    context: Optional[str] = None
    ground_truth: Union[str, List[str]]
    document_id: Optional[str] = None
    aliases: Dict[str, List[str]] = Field(default_factory=dict)
    inverse_hops: List[int] = Field(default_factory=list)


@dataclass(frozen=True)
class Rejection:
    record_id: str
    line_number: int
    reason: str

    def __str__(self) -> str:
        return f"line {self.line_number} ({self.record_id}): {self.reason}"


@dataclass
class TaskLoadResult:
    queries: List[Query]
    rejections: List[Rejection]

    def raise_for_rejections(self) -> None:
        if self.rejections:
            raise TaskValidationError(self.rejections)


def _validation_reason(exc: ValidationError) -> str:
    first = exc.errors()[0]
    location = ".".join(str(part) for part in first["loc"]) or "record"
    return f"{location}: {first['msg']}"


def _entity(value: Optional[str], field_name: str) -> Iri:
    if not value:
        raise ValueError(f"missing {field_name}")
    iri = Iri(value)
    if iri.kind is not IriKind.ENTITY:
        raise ValueError(f"{field_name} {value} is not an entity IRI")
    return iri


def _relation(value: Optional[str], field_name: str) -> Iri:
    if not value:
        raise ValueError(f"missing {field_name}")
    iri = Iri(value)
    if iri.kind is not IriKind.RELATION:
        raise ValueError(f"{field_name} {value} is not a relation IRI")
    return iri


def _mentions(context: str, names: Sequence[str]) -> bool:
    lowered = context.lower()
    return any(name.lower() in lowered for name in names)


def _surface_names(entity: Iri, aliases: Sequence[str]) -> List[str]:
    return list(aliases) or [entity.local_name.replace("_", " ").split(" (")[0]]


def _build_query(record: TaskRecord, graph: KnowledgeGraph, ontology: Ontology) -> Query:
    """Turn one validated record into a Query or raise ValueError with the rejection reason."""
    head = _entity(record.head, "head")
    aliases = {key: tuple(values) for key, values in record.aliases.items()}

    if record.kind is TaskKind.TAIL_PREDICTION:
        if not record.relation or isinstance(record.ground_truth, list):
            raise ValueError("tail prediction needs a relation and a single ground-truth entity")
        return Query(
            record.id, record.kind, head, _entity(record.ground_truth, "ground_truth"),
            relation=_relation(record.relation, "relation"), document_id=record.document_id, aliases=aliases,
        )

    tail = _entity(record.tail, "tail")

    if record.kind is TaskKind.RELATION_PREDICTION:
        if isinstance(record.ground_truth, list):
            raise ValueError("relation prediction needs a single ground-truth relation")
        return Query(
            record.id, record.kind, head, _relation(record.ground_truth, "ground_truth"), tail=tail,
            document_id=record.document_id, aliases=aliases,
        )

    if not record.context or not record.context.strip():
        raise ValueError(f"{record.kind.value} needs a context document")

    if record.kind is TaskKind.RELATION_EXTRACTION:
        truths = record.ground_truth if isinstance(record.ground_truth, list) else [record.ground_truth]
        if len(set(truths)) != 1:
            raise ValueError(f"ground-truth relation is not unique in context: {', '.join(truths)}")
        relation = _relation(truths[0], "ground_truth")
        for key, entity in (("head", head), ("tail", tail)):
            if not _mentions(record.context, _surface_names(entity, aliases.get(key, ()))):
                raise ValueError(f"{key} entity {entity} is not mentioned in the context")
        return Query(
            record.id, record.kind, head, relation, tail=tail, context=record.context,
            document_id=record.document_id, aliases=aliases,
        )

    # Contextual path generation
    if isinstance(record.ground_truth, list):
        raise ValueError("CPG ground truth must be a single path string")
    outcome = parse_path(record.ground_truth)
    if not outcome.well_formed:
        raise ValueError(f"ground-truth path is ill-formed ({outcome.tag})")
    path = outcome.path
    if not MIN_CPG_HOPS <= path.hop_count <= MAX_CPG_HOPS:
        raise ValueError(
            f"ground-truth path has {path.hop_count} hop(s); expected {MIN_CPG_HOPS} to {MAX_CPG_HOPS}"
        )
    if any(index < 0 or index >= path.hop_count for index in record.inverse_hops):
        raise ValueError(f"inverse_hops {record.inverse_hops} out of range for {path.hop_count} hops")
    path = KgPath(path.elements, inverse=tuple(i in record.inverse_hops for i in range(path.hop_count)))
    if path.head != head or path.tail != tail:
        raise ValueError("ground-truth path does not run from head to tail")
    invalid = [verdict.tag for verdict in audit_path(ontology, graph, path) if verdict.ontology_invalid]
    if invalid:
        raise ValueError(f"ground-truth path violates the ontology: {'; '.join(invalid)}")
    return Query(
        record.id, record.kind, head, path, tail=tail, context=record.context,
        document_id=record.document_id, aliases=aliases,
    )


def load_contextual_dataset(path: Path, graph: KnowledgeGraph, ontology: Ontology) -> TaskLoadResult:
    """
    Load and validate a task file.

    Invalid records are collected as rejections (with line number and record
    id) rather than aborting the load; duplicate ids are rejected too.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"Task file not found: {path}")

    queries: List[Query] = []
    rejections: List[Rejection] = []
    seen = set()
    for line_number, payload in iter_jsonl(path):
        record_id = str(payload.get("id", "?")) if isinstance(payload, dict) else "?"
        try:
            record = TaskRecord.model_validate(payload)
            if record.id in seen:
                raise ValueError("duplicate task id")
            query = _build_query(record, graph, ontology)
        except (ValidationError, ValueError, InvalidIriError) as exc:
            reason = _validation_reason(exc) if isinstance(exc, ValidationError) else str(exc)
            rejections.append(Rejection(record_id, line_number, reason))
            logger.warning("Rejected task %s at %s:%d: %s", record_id, path, line_number, reason)
            continue
        seen.add(record.id)
        queries.append(query)

    logger.info("Loaded %d tasks from %s (%d rejected)", len(queries), path, len(rejections))
    return TaskLoadResult(queries, rejections)


def sample_per_document(queries: Sequence[Query], per_document: int, seed: int) -> List[Query]:
    """
    Keep at most `per_document` queries per context document. Documents are
    visited in id order and drawn from one seeded generator; queries without a
    document id are kept as they are.
    """
    if per_document < 0:
        raise DataError(f"per_document must be non-negative, got {per_document}")
    by_document: Dict[str, List[Query]] = defaultdict(list)
    for query in queries:
        by_document[query.document_id or ""].append(query)

    kept = set()
    rng = random.Random(seed)
    for document_id in sorted(by_document):
        group = sorted(by_document[document_id], key=lambda query: query.id)
        if not document_id or len(group) <= per_document:
            kept.update(query.id for query in group)
        else:
            kept.update(query.id for query in rng.sample(group, per_document))
    return [query for query in queries if query.id in kept]


def write_tasks(queries: Sequence[Query], path: Path) -> None:
    write_jsonl(path, (query.to_record() for query in sorted(queries, key=lambda query: query.id)))
    logger.info("Wrote %d tasks to %s", len(queries), path)
