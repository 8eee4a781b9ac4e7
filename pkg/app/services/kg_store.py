"""
Knowledge-graph snapshot and ontology store.

Both are built once by `load_snapshot` and are read-only afterwards, so a
single instance can be shared by any number of worker threads.
"""
import logging
import re
from collections import defaultdict, deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, Iterator, List, Optional, Set, Tuple

import networkx as nx

from app.core.errors import (
    DataError,
    InvalidIriError,
    OntologyError,
    SnapshotFormatError,
    UndeclaredClassError,
)

logger = logging.getLogger(__name__)

_IRI_PATTERN = re.compile(r"^([A-Za-z][A-Za-z0-9_]*):(\S+)$")

ENTITY_PREFIX = "dbr"
PROPERTY_PREFIXES = ("dbo", "dbp")

RDF_TYPE = "rdf:type"
RDFS_SUBCLASS_OF = "rdfs:subClassOf"
RDFS_SUBPROPERTY_OF = "rdfs:subPropertyOf"
RDFS_DOMAIN = "rdfs:domain"
RDFS_RANGE = "rdfs:range"
CLASS_MARKERS = frozenset({"owl:Class", "rdfs:Class"})
PROPERTY_MARKERS = frozenset({"rdf:Property", "owl:ObjectProperty", "owl:DatatypeProperty"})


class IriKind(str, Enum):
    ENTITY = "Entity"
    RELATION = "Relation"
    CLASS = "Class"


@dataclass(frozen=True, order=True)
class Iri:
    """A prefixed identifier such as ``dbr:Brad_Pitt`` or ``dbo:starring``."""

    value: str

    def __post_init__(self):
        if not isinstance(self.value, str) or not _IRI_PATTERN.match(self.value):
            raise InvalidIriError(f"Not a prefixed IRI: {self.value!r} (expected PREFIX:LOCAL_NAME)")

    @property
    def prefix(self) -> str:
        return self.value.split(":", 1)[0]

    @property
    def local_name(self) -> str:
        return self.value.split(":", 1)[1]

    @property
    def kind(self) -> IriKind:
        if self.prefix == ENTITY_PREFIX:
            return IriKind.ENTITY
        if self.prefix == "dbp":
            return IriKind.RELATION
        return IriKind.CLASS if self.local_name[0].isupper() else IriKind.RELATION

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True, order=True)
class Triple:
    head: Iri
    relation: Iri
    tail: Iri

    def __post_init__(self):
        for role, iri, expected in (
            ("head", self.head, IriKind.ENTITY),
            ("relation", self.relation, IriKind.RELATION),
            ("tail", self.tail, IriKind.ENTITY),
        ):
            if not isinstance(iri, Iri):
                raise InvalidIriError(f"Triple {role} must be an Iri, got {iri!r}")
            if iri.kind is not expected:
                raise InvalidIriError(f"Triple {role} {iri} is {iri.kind.value}-kind, expected {expected.value}")

    @classmethod
    def of(cls, head: str, relation: str, tail: str) -> "Triple":
        return cls(Iri(head), Iri(relation), Iri(tail))

    def render(self) -> str:
        return f"{self.head}, {self.relation}, {self.tail}"

    def __str__(self) -> str:
        return f"<{self.head} - {self.relation} - {self.tail}>"


@dataclass(frozen=True, order=True)
class Edge:
    """One adjacency entry: the stored relation and whether it is walked against its direction."""

    relation: Iri
    neighbor: Iri
    inverse: bool


class KnowledgeGraph:
    """Immutable triple set with the lookup indices the evaluators need."""

    def __init__(self, triples: Iterable[Triple] = ()):
        self._triples: FrozenSet[Triple] = frozenset(triples)
        by_head_relation: Dict[Tuple[Iri, Iri], Set[Iri]] = defaultdict(set)
        by_pair: Dict[Tuple[Iri, Iri], Set[Iri]] = defaultdict(set)
        adjacency: Dict[Iri, Set[Edge]] = defaultdict(set)
        for triple in self._triples:
            by_head_relation[(triple.head, triple.relation)].add(triple.tail)
            by_pair[(triple.head, triple.tail)].add(triple.relation)
            adjacency[triple.head].add(Edge(triple.relation, triple.tail, inverse=False))
            adjacency[triple.tail].add(Edge(triple.relation, triple.head, inverse=True))
        self._by_head_relation = {key: frozenset(value) for key, value in by_head_relation.items()}
        self._by_pair = {key: frozenset(value) for key, value in by_pair.items()}
        # Sorted once so traversal order is fixed.
        self._adjacency: Dict[Iri, Tuple[Edge, ...]] = {
            entity: tuple(sorted(edges)) for entity, edges in adjacency.items()
        }

    @property
    def triples(self) -> FrozenSet[Triple]:
        return self._triples

    def __len__(self) -> int:
        return len(self._triples)

    def __iter__(self) -> Iterator[Triple]:
        return iter(sorted(self._triples))

    def __contains__(self, triple: object) -> bool:
        return triple in self._triples

    @property
    def entities(self) -> FrozenSet[Iri]:
        return frozenset(self._adjacency)

    @property
    def relations(self) -> FrozenSet[Iri]:
        return frozenset(triple.relation for triple in self._triples)

    def has_entity(self, entity: Iri) -> bool:
        return entity in self._adjacency

    def has_triple(self, triple: Triple) -> bool:
        return triple in self._triples

    def tails(self, head: Iri, relation: Iri) -> FrozenSet[Iri]:
        return self._by_head_relation.get((head, relation), frozenset())

    def relations_between(self, head: Iri, tail: Iri) -> FrozenSet[Iri]:
        return self._by_pair.get((head, tail), frozenset())

    def neighbors(self, entity: Iri) -> Tuple[Edge, ...]:
        return self._adjacency.get(entity, ())

    def shortest_path(self, head: Iri, tail: Iri):
        """
        Minimum-hop path between two entities over the undirected view.

        Among all minimum-hop paths the one whose (relation, next entity)
        sequence is lexicographically smallest is returned. Hops walked
        against the stored direction are flagged inverse. Returns None when
        the entities are not connected.
        """
        from app.services.path_model import KgPath

        for entity in (head, tail):
            if not self.has_entity(entity):
                raise KeyError(f"Entity {entity} is not in the knowledge graph")

        # Distances to the target, then a greedy walk from the source.
        distance = {tail: 0}
        queue = deque([tail])
        while queue and head not in distance:
            current = queue.popleft()
            for edge in self.neighbors(current):
                if edge.neighbor not in distance:
                    distance[edge.neighbor] = distance[current] + 1
                    queue.append(edge.neighbor)
        if head not in distance:
            return None

        elements: List[Iri] = [head]
        inverse: List[bool] = []
        current = head
        while current != tail:
            step = next(
                edge
                for edge in self.neighbors(current)
                if distance.get(edge.neighbor) == distance[current] - 1
            )
            elements.extend((step.relation, step.neighbor))
            inverse.append(step.inverse)
            current = step.neighbor
        return KgPath(tuple(elements), inverse=tuple(inverse))


class Ontology:
    """Class hierarchy, property hierarchy, domain/range constraints and entity typing."""

    def __init__(
        self,
        classes: Iterable[Iri] = (),
        relations: Iterable[Iri] = (),
        subclass_of: Iterable[Tuple[Iri, Iri]] = (),
        subproperty_of: Iterable[Tuple[Iri, Iri]] = (),
        domain_of: Optional[Dict[Iri, Iri]] = None,
        range_of: Optional[Dict[Iri, Iri]] = None,
        types_of: Optional[Dict[Iri, Iterable[Iri]]] = None,
    ):
        self._hierarchy = nx.DiGraph()
        self._hierarchy.add_nodes_from(classes)
        for child, parent in subclass_of:
            self._hierarchy.add_edge(child, parent)
        if not nx.is_directed_acyclic_graph(self._hierarchy):
            cycle = nx.find_cycle(self._hierarchy)
            chain = " -> ".join(str(child) for child, _ in cycle) + f" -> {cycle[0][0]}"
            raise OntologyError(f"Cyclic subclass hierarchy: {chain}")

        self._superproperties: Dict[Iri, FrozenSet[Iri]] = {}
        declared_relations: Set[Iri] = set(relations)
        pending: Dict[Iri, Set[Iri]] = defaultdict(set)
        for child, parent in subproperty_of:
            pending[child].add(parent)
            declared_relations.update((child, parent))
        self._superproperties = {key: frozenset(value) for key, value in pending.items()}

        self._domain_of: Dict[Iri, Iri] = dict(domain_of or {})
        self._range_of: Dict[Iri, Iri] = dict(range_of or {})
        declared_relations.update(self._domain_of)
        declared_relations.update(self._range_of)
        self._relations = frozenset(declared_relations)
        self._types_of: Dict[Iri, FrozenSet[Iri]] = {
            entity: frozenset(types) for entity, types in (types_of or {}).items()
        }

        referenced = [("domain", relation, cls) for relation, cls in self._domain_of.items()]
        referenced += [("range", relation, cls) for relation, cls in self._range_of.items()]
        referenced += [
            ("type", entity, cls) for entity, types in self._types_of.items() for cls in types
        ]
        for role, subject, cls in referenced:
            if cls not in self._hierarchy:
                raise UndeclaredClassError(f"{role} of {subject} references undeclared class {cls}")

    @property
    def classes(self) -> FrozenSet[Iri]:
        return frozenset(self._hierarchy.nodes)

    @property
    def relations(self) -> FrozenSet[Iri]:
        return self._relations

    def superclasses(self, cls: Iri) -> FrozenSet[Iri]:
        """Direct superclasses."""
        self._require_class(cls)
        return frozenset(self._hierarchy.successors(cls))

    def superproperties(self, relation: Iri) -> FrozenSet[Iri]:
        """Direct superproperties."""
        return self._superproperties.get(relation, frozenset())

    def domain_of(self, relation: Iri) -> Optional[Iri]:
        return self._domain_of.get(relation)

    def range_of(self, relation: Iri) -> Optional[Iri]:
        return self._range_of.get(relation)

    def types_of(self, entity: Iri) -> FrozenSet[Iri]:
        return self._types_of.get(entity, frozenset())

    def is_subclass_or_equal(self, sub: Iri, sup: Iri) -> bool:
        self._require_class(sub)
        self._require_class(sup)
        return sub == sup or nx.has_path(self._hierarchy, sub, sup)

    def most_specific_types(self, entity: Iri) -> FrozenSet[Iri]:
        types = self.types_of(entity)
        return frozenset(
            cls
            for cls in types
            if not any(other != cls and self.is_subclass_or_equal(other, cls) for other in types)
        )

    @property
    def typed_entities(self) -> FrozenSet[Iri]:
        return frozenset(self._types_of)

    @property
    def constrained_relations(self) -> FrozenSet[Iri]:
        return frozenset(self._domain_of) | frozenset(self._range_of)

    def _require_class(self, cls: Iri) -> None:
        if cls not in self._hierarchy:
            raise UndeclaredClassError(f"Class {cls} is not declared in the ontology")


@dataclass(frozen=True)
class SnapshotStats:
    triples: int
    entities: int
    relations: int
    classes: int
    typed_entities: int
    constrained_relations: int


@dataclass(frozen=True)
class Snapshot:
    graph: KnowledgeGraph
    ontology: Ontology
    stats: SnapshotStats = field(compare=False)


def _strip_comment(line: str) -> str:
    # '#' only starts a comment at the line start or after whitespace,
    # local names such as dbr:C#_(programming_language) keep theirs.
    return re.sub(r"(^|\s)#.*$", "", line).strip()


def _read_statements(path: Path) -> Iterator[Tuple[int, Tuple[Iri, Iri, Iri]]]:
    with open(path, encoding="utf-8") as handle:
        for line_number, raw in enumerate(handle, start=1):
            line = _strip_comment(raw)
            if not line:
                continue
            tokens = line.split()
            if tokens[-1] == ".":
                tokens = tokens[:-1]
            if len(tokens) != 3:
                raise SnapshotFormatError(
                    path, line_number, f"expected 3 whitespace-separated IRIs, found {len(tokens)}: {line!r}"
                )
            try:
                yield line_number, tuple(Iri(token) for token in tokens)
            except InvalidIriError as exc:
                raise SnapshotFormatError(path, line_number, str(exc)) from exc


def read_triples(path: Path) -> List[Triple]:
    triples = []
    for line_number, (head, relation, tail) in _read_statements(path):
        try:
            triples.append(Triple(head, relation, tail))
        except InvalidIriError as exc:
            raise SnapshotFormatError(path, line_number, str(exc)) from exc
    return triples


def read_ontology(path: Path) -> Ontology:
    classes: Set[Iri] = set()
    relations: Set[Iri] = set()
    subclass_of: List[Tuple[Iri, Iri]] = []
    subproperty_of: List[Tuple[Iri, Iri]] = []
    domain_of: Dict[Iri, Iri] = {}
    range_of: Dict[Iri, Iri] = {}
    types_of: Dict[Iri, Set[Iri]] = defaultdict(set)

    for line_number, (subject, predicate, obj) in _read_statements(path):
        key = predicate.value
        if key == RDF_TYPE and obj.value in CLASS_MARKERS:
            classes.add(subject)
        elif key == RDF_TYPE and obj.value in PROPERTY_MARKERS:
            relations.add(subject)
        elif key == RDF_TYPE and subject.kind is IriKind.ENTITY:
            types_of[subject].add(obj)
        elif key == RDFS_SUBCLASS_OF:
            classes.update((subject, obj))
            subclass_of.append((subject, obj))
        elif key == RDFS_SUBPROPERTY_OF:
            subproperty_of.append((subject, obj))
        elif key in (RDFS_DOMAIN, RDFS_RANGE):
            target = domain_of if key == RDFS_DOMAIN else range_of
            if subject in target and target[subject] != obj:
                raise SnapshotFormatError(
                    path, line_number, f"{subject} already declares {key} {target[subject]}"
                )
            target[subject] = obj
        else:
            raise SnapshotFormatError(
                path, line_number, f"unsupported ontology statement {subject} {predicate} {obj}"
            )

    try:
        return Ontology(classes, relations, subclass_of, subproperty_of, domain_of, range_of, types_of)
    except OntologyError as exc:
        raise OntologyError(f"{path}: {exc}") from exc


def load_snapshot(triples_file: Path, ontology_file: Path) -> Snapshot:
    """Load the triples and ontology files, build indices and report counts."""
    triples_file, ontology_file = Path(triples_file), Path(ontology_file)
    for path in (triples_file, ontology_file):
        if not path.exists():
            raise DataError(f"Snapshot file {path} does not exist")

    graph = KnowledgeGraph(read_triples(triples_file))
    ontology = read_ontology(ontology_file)
    stats = SnapshotStats(
        triples=len(graph),
        entities=len(graph.entities),
        relations=len(graph.relations),
        classes=len(ontology.classes),
        typed_entities=len(ontology.typed_entities),
        constrained_relations=len(ontology.constrained_relations),
    )
    logger.info(
        "Loaded snapshot: %d triples, %d entities, %d relations; ontology with %d classes",
        stats.triples,
        stats.entities,
        stats.relations,
        stats.classes,
    )
    return Snapshot(graph, ontology, stats)
