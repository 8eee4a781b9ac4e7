import json
import random

import pytest

from app.core.errors import InvalidIriError
from app.services.kg_store import Iri, Triple
from app.services.path_model import (
    KgPath,
    ParseStatus,
    ReasonCode,
    extract_paths,
    find_candidates,
    iri_tokens,
    judge_generation,
    parse_path,
    read_answer,
    render_path,
)
from tests.conftest import FIXTURES

CORPUS = [json.loads(line) for line in (FIXTURES / "parser_corpus.jsonl").read_text(encoding="utf-8").splitlines()]

ENTITY_NAMES = [
    "dbr:Brad_Pitt",
    "dbr:Reading,_Berkshire",
    "dbr:Jean-Luc_Godard",
    "dbr:Moneyball_(film)",
    "dbr:Burbank_High_School_(Burbank,_California)",
    "dbr:C#_(programming_language)",
    "dbr:United_Kingdom",
]
RELATION_NAMES = ["dbo:starring", "dbo:isPartOf", "dbp:label", "dbo:birthPlace", "dbo:keyPerson"]
PROSE = ["Sure", "here", "is", "the", "path", "you", "asked", "for", "Hope", "this", "helps", "Answer", "Note"]


def _random_path(rng: random.Random) -> KgPath:
    hops = rng.randint(0, 6)
    values = [rng.choice(ENTITY_NAMES)]
    for _ in range(hops):
        values += [rng.choice(RELATION_NAMES), rng.choice(ENTITY_NAMES)]
    return KgPath.of(*values)


@pytest.mark.parametrize("case", CORPUS, ids=[f"corpus-{index}" for index in range(len(CORPUS))])
def test_parser_corpus(case):
    judgement = judge_generation(case["text"])
    assert judgement.outcome.tag == case["tag"]
    if case["hops"] is None:
        assert judgement.ill_formatted
        assert judgement.path is None
    else:
        assert not judgement.ill_formatted
        assert judgement.path.hop_count == case["hops"]


def test_parse_path_well_formed():
    outcome = parse_path("dbr:Playtone - dbo:founder - dbr:Tom_Hanks")
    assert outcome.status is ParseStatus.WELL_FORMED
    assert outcome.path == KgPath.of("dbr:Playtone", "dbo:founder", "dbr:Tom_Hanks")
    assert outcome.path.hop_count == 1


@pytest.mark.parametrize(
    "text, head",
    [
        ("dbr:X-Men:_First_Class, dbo:starring, dbr:Michael_Fassbender", "dbr:X-Men:_First_Class"),
        ("dbr:X-Men:_First_Class-dbo:starring-dbr:Michael_Fassbender", "dbr:X-Men:_First_Class"),
        ("dbr:Spider-Man:_Homecoming - dbo:starring - dbr:Tom_Holland", "dbr:Spider-Man:_Homecoming"),
    ],
)
def test_hyphenated_names_with_colons_stay_whole(text, head):
    outcome = parse_path(text)
    assert outcome.status is ParseStatus.WELL_FORMED
    assert outcome.path.head == Iri(head)
    assert outcome.path.hop_count == 1
    assert not judge_generation(text).ill_formatted


@pytest.mark.parametrize(
    "text, reason, position",
    [
        ("dbr:A - dbr:B", ReasonCode.NOT_ALTERNATING, 1),
        ("dbo:starring - dbr:Brad_Pitt", ReasonCode.BAD_PREFIX, 0),
        ("dbr:A, dbo:r", ReasonCode.EVEN_LENGTH, 1),
        ("dbr:A, dbo:r, xyz", ReasonCode.BAD_PREFIX, 2),
        ("dbr:A, dbo:Person, dbr:B", ReasonCode.BAD_PREFIX, 1),
        ("   ", ReasonCode.EMPTY_INPUT, None),
    ],
)
def test_parse_path_reason_codes(text, reason, position):
    outcome = parse_path(text)
    assert outcome.status is ParseStatus.ILL_FORMATTED
    assert outcome.reason is reason
    assert outcome.position == position
    assert outcome.path is None


def test_render_path():
    assert render_path(KgPath.of("dbr:A")) == "dbr:A"
    assert render_path(KgPath.of("dbr:A", "dbo:r", "dbr:B")) == "dbr:A, dbo:r, dbr:B"


def test_render_parse_round_trip():
    rng = random.Random(42)
    for _ in range(1000):
        path = _random_path(rng)
        assert parse_path(render_path(path)).path == path
        assert parse_path(" - ".join(iri.value for iri in path)).path == path


def test_single_path_survives_prose_wrappers():
    rng = random.Random(7)
    for _ in range(100):
        path = _random_path(rng)
        if path.hop_count == 0:
            continue
        before = " ".join(rng.choice(PROSE) for _ in range(rng.randint(0, 8)))
        after = " ".join(rng.choice(PROSE) for _ in range(rng.randint(0, 8)))
        text = f"{before} {render_path(path)}{rng.choice(['', '.', '!', '?'])} {after}"
        outcomes = [outcome for outcome in extract_paths(text) if outcome.well_formed]
        assert [outcome.path for outcome in outcomes] == [path], text


def test_extract_paths_in_order():
    outcomes = extract_paths("dbr:A - dbo:r1 - dbr:B\ndbr:A - dbo:r2 - dbr:C")
    assert [outcome.path.relations[0].value for outcome in outcomes] == ["dbo:r1", "dbo:r2"]
    assert extract_paths("I cannot find a path.") == []


def test_find_candidates_trims_prose_punctuation():
    assert find_candidates("(dbr:A, dbo:r, dbr:Moneyball_(film)).") == ["dbr:A, dbo:r, dbr:Moneyball_(film)"]


def test_partially_parseable_answer_keeps_a_warning():
    judgement = judge_generation("dbr:A, dbo:r, dbr:B (see also wd:Q5)")
    assert judgement.path == KgPath.of("dbr:A", "dbo:r", "dbr:B")
    assert len(judgement.warnings) == 1
    assert "BadPrefix" in judgement.warnings[0]


def test_judge_generation_min_hops():
    text = "dbr:A, dbo:r, dbr:B"
    assert not judge_generation(text, min_hops=1).ill_formatted
    assert judge_generation(text, min_hops=2).ill_formatted
    assert judge_generation("dbr:A").ill_formatted
    assert not judge_generation("dbr:A", min_hops=0).ill_formatted


def test_iri_tokens():
    tokens = iri_tokens("Link dbr:Quentin_Tarantino and dbr:Christoph_Waltz, via dbo:director.")
    assert [token.value for token in tokens] == ["dbr:Quentin_Tarantino", "dbr:Christoph_Waltz", "dbo:director"]


def test_kg_path_validation():
    with pytest.raises(InvalidIriError):
        KgPath.of("dbr:A", "dbo:r")
    with pytest.raises(InvalidIriError):
        KgPath.of("dbo:r", "dbr:A", "dbo:s")
    with pytest.raises(InvalidIriError):
        KgPath.of("dbr:A", "dbo:r", "dbr:B", inverse=(True, False))


def test_hops_keep_stored_orientation():
    path = KgPath.of("dbr:Quentin_Tarantino", "dbo:director", "dbr:Django_Unchained", inverse=(True,))
    (hop,) = path.hops()
    assert hop.triple == Triple.of("dbr:Quentin_Tarantino", "dbo:director", "dbr:Django_Unchained")
    assert hop.stored_triple == Triple.of("dbr:Django_Unchained", "dbo:director", "dbr:Quentin_Tarantino")
    # orientation flags are metadata, not identity
    assert path == KgPath.of("dbr:Quentin_Tarantino", "dbo:director", "dbr:Django_Unchained")


def test_read_answer_tail(query_by_id):
    query = query_by_id["tail-moneyball-01"]
    assert read_answer("dbr:Moneyball_(film), dbo:starring, dbr:Brad_Pitt", query).answer == Iri("dbr:Brad_Pitt")
    assert read_answer("It is dbr:Jonah_Hill.", query).answer == Iri("dbr:Jonah_Hill")
    reading = read_answer("I don't know.", query)
    assert reading.answer is None
    assert reading.reason == "no entity in answer"


def test_read_answer_relation(query_by_id):
    query = query_by_id["relation-tombraider-01"]
    text = "dbr:Tomb_Raider_(soundtrack), dbp:label, dbr:Sony_Classical_Records"
    assert read_answer(text, query).answer == Iri("dbp:label")
    assert read_answer("Probably dbo:recordLabel", query).answer == Iri("dbo:recordLabel")


def test_read_answer_relation_extraction(query_by_id):
    query = query_by_id["re-playtone-01"]
    assert read_answer("dbr:Playtone - dbo:owner - dbr:Tom_Hanks", query).answer == Iri("dbo:owner")
    assert read_answer("dbr:Playtone, dbr:Tom_Hanks", query).answer is None


def test_read_answer_rejects_path_tasks(query_by_id):
    with pytest.raises(ValueError):
        read_answer("dbr:A, dbo:r, dbr:B", query_by_id["cpg-django-01"])
