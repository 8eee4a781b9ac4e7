import itertools
import random

import networkx as nx
import pytest

from app.core.errors import DataError, InvalidIriError, OntologyError, SnapshotFormatError, UndeclaredClassError
from app.services.kg_store import (
    Edge,
    Iri,
    IriKind,
    KnowledgeGraph,
    Ontology,
    Triple,
    load_snapshot,
    read_ontology,
    read_triples,
)
from app.services.path_model import KgPath
from tests.conftest import FIXTURES


@pytest.mark.parametrize(
    "value, kind",
    [
        ("dbr:Brad_Pitt", IriKind.ENTITY),
        ("dbr:Reading,_Berkshire", IriKind.ENTITY),
        ("dbo:starring", IriKind.RELATION),
        ("dbp:label", IriKind.RELATION),
        ("dbo:Person", IriKind.CLASS),
        ("owl:Thing", IriKind.CLASS),
    ],
)
def test_iri_kind(value, kind):
    assert Iri(value).kind is kind


@pytest.mark.parametrize("value", ["Brad_Pitt", "dbr:", ":starring", "dbr:Brad Pitt", ""])
def test_invalid_iri(value):
    with pytest.raises(InvalidIriError):
        Iri(value)


def test_triple_rejects_wrong_kinds():
    with pytest.raises(InvalidIriError):
        Triple.of("dbr:Moneyball_(film)", "dbo:Person", "dbr:Brad_Pitt")
    with pytest.raises(InvalidIriError):
        Triple.of("dbo:starring", "dbo:starring", "dbr:Brad_Pitt")


def test_snapshot_stats(snapshot):
    stats = snapshot.stats
    assert stats.triples == 26
    assert stats.entities == 27
    assert stats.relations == 12
    assert stats.classes == 17
    assert stats.typed_entities == 30
    assert stats.constrained_relations == 12


def test_graph_lookups(graph):
    playtone, hanks = Iri("dbr:Playtone"), Iri("dbr:Tom_Hanks")
    assert graph.has_triple(Triple.of("dbr:Moneyball_(film)", "dbo:starring", "dbr:Brad_Pitt"))
    assert not graph.has_triple(Triple.of("dbr:Brad_Pitt", "dbo:starring", "dbr:Moneyball_(film)"))
    assert graph.tails(Iri("dbr:Moneyball_(film)"), Iri("dbo:starring")) == {Iri("dbr:Brad_Pitt"), Iri("dbr:Jonah_Hill")}
    assert graph.relations_between(playtone, hanks) == {Iri("dbo:founders"), Iri("dbo:owner"), Iri("dbo:keyPerson")}
    assert graph.relations_between(hanks, playtone) == frozenset()
    assert graph.tails(Iri("dbr:Nobody"), Iri("dbo:starring")) == frozenset()


def test_neighbors_mark_inverse_edges(graph):
    edges = graph.neighbors(Iri("dbr:Quentin_Tarantino"))
    assert {edge.neighbor for edge in edges} == {Iri("dbr:Django_Unchained"), Iri("dbr:Inglourious_Basterds")}
    assert all(edge.inverse for edge in edges)


def test_shortest_path_flags_inverse_hops(graph):
    path = graph.shortest_path(Iri("dbr:Quentin_Tarantino"), Iri("dbr:Christoph_Waltz"))
    assert [iri.value for iri in path.elements] == [
        "dbr:Quentin_Tarantino",
        "dbo:director",
        "dbr:Django_Unchained",
        "dbo:starring",
        "dbr:Christoph_Waltz",
    ]
    assert path.inverse == (True, False)
    for hop in path.hops():
        assert graph.has_triple(hop.stored_triple)


def test_shortest_path_same_entity(graph):
    path = graph.shortest_path(Iri("dbr:Brad_Pitt"), Iri("dbr:Brad_Pitt"))
    assert path.hop_count == 0


def test_shortest_path_unknown_entity(graph):
    with pytest.raises(KeyError):
        graph.shortest_path(Iri("dbr:Brad_Pitt"), Iri("dbr:Nobody"))


def test_shortest_path_disconnected():
    graph = KnowledgeGraph(
        [Triple.of("dbr:A", "dbo:knows", "dbr:B"), Triple.of("dbr:C", "dbo:knows", "dbr:D")]
    )
    assert graph.shortest_path(Iri("dbr:A"), Iri("dbr:D")) is None


def _random_graph(seed: int, entities: int = 12, triples: int = 18) -> KnowledgeGraph:
    rng = random.Random(seed)
    names = [f"dbr:E{index}" for index in range(entities)]
    relations = ["dbo:r1", "dbo:r2", "dbo:r3"]
    return KnowledgeGraph(
        Triple.of(rng.choice(names), rng.choice(relations), rng.choice(names)) for _ in range(triples)
    )


def _smallest_hop(graph: KnowledgeGraph, current: Iri, neighbor: Iri) -> Edge:
    forward = [Edge(relation, neighbor, False) for relation in graph.relations_between(current, neighbor)]
    backward = [Edge(relation, neighbor, True) for relation in graph.relations_between(neighbor, current)]
    return min(forward + backward)


def _lexicographic_oracle(graph: KnowledgeGraph, undirected: nx.Graph, head: Iri, tail: Iri):
    candidates = [
        tuple(_smallest_hop(graph, a, b) for a, b in zip(nodes, nodes[1:]))
        for nodes in nx.all_shortest_paths(undirected, head, tail)
    ]
    return min(candidates)


@pytest.mark.parametrize("seed", range(100))
def test_shortest_path_matches_networkx(seed):
    size = 5 + seed % 46
    graph = _random_graph(seed, entities=size, triples=size * 3 // 2)
    undirected = nx.Graph()
    undirected.add_edges_from((triple.head, triple.tail) for triple in graph)
    lengths = dict(nx.all_pairs_shortest_path_length(undirected))
    for head, tail in itertools.combinations(sorted(graph.entities), 2):
        path = graph.shortest_path(head, tail)
        if tail not in lengths[head]:
            assert path is None
            continue
        assert path.hop_count == lengths[head][tail]
        assert path.head == head and path.tail == tail
        for hop in path.hops():
            assert graph.has_triple(hop.stored_triple)
        if size <= 20:
            expected = _lexicographic_oracle(graph, undirected, head, tail)
            assert tuple(Edge(h.relation, h.tail, h.inverse) for h in path.hops()) == expected


def test_shortest_path_tie_break_is_lexicographic():
    triples = [
        Triple.of("dbr:A", "dbo:r2", "dbr:B"),
        Triple.of("dbr:B", "dbo:r1", "dbr:D"),
        Triple.of("dbr:A", "dbo:r1", "dbr:E"),
        Triple.of("dbr:E", "dbo:r0", "dbr:D"),
        Triple.of("dbr:A", "dbo:r1", "dbr:C"),
        Triple.of("dbr:C", "dbo:r9", "dbr:D"),
        Triple.of("dbr:F", "dbo:r1", "dbr:A"),
        Triple.of("dbr:F", "dbo:r5", "dbr:D"),
    ]
    expected = KgPath.of("dbr:A", "dbo:r1", "dbr:C", "dbo:r9", "dbr:D")
    for order in (triples, list(reversed(triples)), sorted(triples)):
        path = KnowledgeGraph(order).shortest_path(Iri("dbr:A"), Iri("dbr:D"))
        assert path == expected
        assert path.inverse == (False, False)
    # walking back flags every hop inverse
    back = KnowledgeGraph(triples).shortest_path(Iri("dbr:D"), Iri("dbr:A"))
    assert back == KgPath.of("dbr:D", "dbo:r0", "dbr:E", "dbo:r1", "dbr:A")
    assert back.inverse == (True, True)


def test_has_triple_rejects_perturbed_triples(graph):
    stored = set(read_triples(FIXTURES / "triples.nt"))
    entities = sorted(graph.entities)
    relations = sorted(graph.relations)
    originals = sorted(stored)
    rng = random.Random(11)
    checked = 0
    while checked < 100:
        head, relation, tail = rng.choice(originals).head, rng.choice(originals).relation, rng.choice(originals).tail
        mode = rng.randrange(4)
        if mode == 0:
            head, tail = tail, head
        elif mode == 1:
            relation = rng.choice(relations)
        elif mode == 2:
            tail = rng.choice(entities)
        else:
            head = rng.choice(entities)
        triple = Triple(head, relation, tail)
        if triple in stored:
            continue
        assert not graph.has_triple(triple)
        checked += 1
    assert all(graph.has_triple(triple) for triple in stored)


def test_relations_between_matches_a_scan(graph):
    triples = list(graph)
    for head in sorted(graph.entities):
        for tail in sorted(graph.entities):
            scanned = {triple.relation for triple in triples if (triple.head, triple.tail) == (head, tail)}
            assert graph.relations_between(head, tail) == scanned


@pytest.mark.parametrize("seed", range(20))
def test_is_subclass_or_equal_matches_closure(seed):
    rng = random.Random(seed)
    size = rng.randint(2, 30)
    classes = [Iri(f"dbo:C{index}") for index in range(size)]
    # parents always have a lower index, so the hierarchy is acyclic
    edges = [
        (classes[child], classes[parent])
        for child in range(1, size)
        for parent in range(child)
        if rng.random() < 0.15
    ]
    ontology = Ontology(classes=classes, subclass_of=edges)

    reach = {cls: {cls} for cls in classes}
    for child in classes:
        frontier = [child]
        while frontier:
            current = frontier.pop()
            for sub, sup in edges:
                if sub == current and sup not in reach[child]:
                    reach[child].add(sup)
                    frontier.append(sup)
    for sub in classes:
        for sup in classes:
            assert ontology.is_subclass_or_equal(sub, sup) == (sup in reach[sub])


def test_shortest_path_is_deterministic():
    first = _random_graph(3)
    second = KnowledgeGraph(reversed(sorted(first)))
    for head in sorted(first.entities):
        for tail in sorted(first.entities):
            a, b = first.shortest_path(head, tail), second.shortest_path(head, tail)
            assert a == b
            if a is not None:
                assert a.inverse == b.inverse


def test_ontology_hierarchy(ontology):
    assert ontology.is_subclass_or_equal(Iri("dbo:Town"), Iri("dbo:Location"))
    assert ontology.is_subclass_or_equal(Iri("dbo:Person"), Iri("dbo:Person"))
    assert not ontology.is_subclass_or_equal(Iri("dbo:Person"), Iri("dbo:Location"))
    assert ontology.superclasses(Iri("dbo:Company")) == {Iri("dbo:Organisation")}
    assert ontology.superproperties(Iri("dbo:founders")) == {Iri("dbo:founder")}
    assert ontology.domain_of(Iri("dbo:starring")) == Iri("dbo:Work")
    assert ontology.range_of(Iri("dbo:director")) == Iri("dbo:Person")
    assert ontology.range_of(Iri("dbo:award")) is None
    # constraints are not inherited along subPropertyOf
    assert ontology.domain_of(Iri("dbo:founders")) is None


def test_most_specific_types():
    ontology = Ontology(
        classes=[Iri("dbo:Place"), Iri("dbo:City")],
        subclass_of=[(Iri("dbo:City"), Iri("dbo:Place"))],
        types_of={Iri("dbr:Paris"): [Iri("dbo:City"), Iri("dbo:Place")]},
    )
    assert ontology.most_specific_types(Iri("dbr:Paris")) == {Iri("dbo:City")}
    assert ontology.types_of(Iri("dbr:Nowhere")) == frozenset()


def test_cyclic_hierarchy_is_rejected():
    a, b = Iri("dbo:A"), Iri("dbo:B")
    with pytest.raises(OntologyError, match="Cyclic"):
        Ontology(classes=[a, b], subclass_of=[(a, b), (b, a)])


def test_undeclared_class_is_rejected():
    with pytest.raises(UndeclaredClassError):
        Ontology(classes=[Iri("dbo:Person")], domain_of={Iri("dbo:spouse"): Iri("dbo:Human")})
    with pytest.raises(UndeclaredClassError):
        Ontology().is_subclass_or_equal(Iri("dbo:Person"), Iri("dbo:Agent"))


def test_read_triples_reports_line_number(tmp_path):
    path = tmp_path / "triples.nt"
    path.write_text("dbr:A dbo:knows dbr:B .\n\ndbr:A dbo:knows\n", encoding="utf-8")
    with pytest.raises(SnapshotFormatError) as info:
        read_triples(path)
    assert info.value.line_number == 3


def test_read_triples_keeps_hash_in_local_names(tmp_path):
    path = tmp_path / "triples.nt"
    path.write_text(
        "# comment\ndbr:C#_(programming_language) dbo:designer dbr:Anders_Hejlsberg . # trailing\n",
        encoding="utf-8",
    )
    (triple,) = read_triples(path)
    assert triple.head == Iri("dbr:C#_(programming_language)")


def test_read_triples_rejects_class_relation(tmp_path):
    path = tmp_path / "triples.nt"
    path.write_text("dbr:A dbo:Person dbr:B .\n", encoding="utf-8")
    with pytest.raises(SnapshotFormatError):
        read_triples(path)


def test_read_ontology_rejects_unknown_statement(tmp_path):
    path = tmp_path / "ontology.nt"
    path.write_text("dbo:Person rdfs:subClassOf owl:Thing .\ndbo:spouse owl:inverseOf dbo:spouse .\n", encoding="utf-8")
    with pytest.raises(SnapshotFormatError) as info:
        read_ontology(path)
    assert info.value.line_number == 2


def test_read_ontology_rejects_conflicting_domain(tmp_path):
    path = tmp_path / "ontology.nt"
    path.write_text(
        "dbo:Person rdfs:subClassOf owl:Thing .\n"
        "dbo:Place rdfs:subClassOf owl:Thing .\n"
        "dbo:spouse rdfs:domain dbo:Person .\n"
        "dbo:spouse rdfs:domain dbo:Place .\n",
        encoding="utf-8",
    )
    with pytest.raises(SnapshotFormatError):
        read_ontology(path)


def test_load_snapshot_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_snapshot(tmp_path / "missing.nt", FIXTURES / "ontology.nt")
