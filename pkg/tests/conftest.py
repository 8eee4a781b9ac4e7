from pathlib import Path

import pytest

from app.services.kg_store import load_snapshot
from app.services.tasks import load_contextual_dataset

FIXTURES = Path(__file__).resolve().parent.parent / "data" / "fixtures"
CONFIG = FIXTURES / "config.toml"


@pytest.fixture(scope="session")
def snapshot():
    return load_snapshot(FIXTURES / "triples.nt", FIXTURES / "ontology.nt")


@pytest.fixture(scope="session")
def graph(snapshot):
    return snapshot.graph


@pytest.fixture(scope="session")
def ontology(snapshot):
    return snapshot.ontology


@pytest.fixture(scope="session")
def contextual_queries(snapshot):
    result = load_contextual_dataset(FIXTURES / "contextual_tasks.jsonl", snapshot.graph, snapshot.ontology)
    assert not result.rejections
    return result.queries


@pytest.fixture(scope="session")
def masked_queries(snapshot):
    result = load_contextual_dataset(FIXTURES / "masked_tasks.jsonl", snapshot.graph, snapshot.ontology)
    assert not result.rejections
    return result.queries


@pytest.fixture(scope="session")
def queries(masked_queries, contextual_queries):
    return list(masked_queries) + list(contextual_queries)


@pytest.fixture(scope="session")
def query_by_id(queries):
    return {query.id: query for query in queries}
