import pytest
from fastapi.testclient import TestClient

from app.core.errors import DataError
from app.main import create_app
from app.services.mock_llm import REFUSAL, ScriptedFailure, ScriptedResponder, ground_truth_script
from app.services.prompting import Strategy, render_prompt


def _chat(prompt, model="gpt-3.5-turbo"):
    return {"model": model, "messages": [{"role": "user", "content": prompt}], "temperature": 0.0, "max_tokens": 64}


@pytest.fixture
def responder():
    responder = ScriptedResponder()
    responder.add("capital of France?", "dbr:Paris")
    return responder


def test_chat_route_answers_from_the_script(responder):
    client = TestClient(create_app(responder))
    response = client.post("/v1/chat/completions", json=_chat("capital of France?"))
    assert response.status_code == 200
    body = response.json()
    assert body["model"] == "gpt-3.5-turbo"
    assert body["choices"][0]["message"] == {"role": "assistant", "content": "dbr:Paris"}

    unknown = client.post("/v1/chat/completions", json=_chat("something else"))
    assert unknown.json()["choices"][0]["message"]["content"] == REFUSAL


def test_chat_route_replays_scripted_failures(responder):
    responder.fail_next("capital of France?", ScriptedFailure(503, "overloaded"), ScriptedFailure(429))
    client = TestClient(create_app(responder))
    statuses = [client.post("/v1/chat/completions", json=_chat("capital of France?")).status_code for _ in range(3)]
    assert statuses == [503, 429, 200]


def test_chat_route_validation():
    client = TestClient(create_app())
    assert client.post("/v1/chat/completions", json={"messages": []}).status_code == 422
    no_user = client.post("/v1/chat/completions", json={"model": "m", "messages": [{"role": "system", "content": "x"}]})
    assert no_user.status_code == 400


def test_health(responder):
    client = TestClient(create_app(responder))
    assert client.get("/health").json() == {"status": "ok", "scripted_answers": 1}


def test_script_save_and_load(tmp_path, responder):
    path = tmp_path / "script.json"
    responder.save(path)
    loaded = ScriptedResponder.load(path)
    assert loaded.answer_for("capital of France?") == "dbr:Paris"
    path.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(DataError):
        ScriptedResponder.load(path)
    with pytest.raises(DataError):
        ScriptedResponder.load(tmp_path / "missing.json")


def test_ground_truth_script(query_by_id):
    tail = query_by_id["tail-moneyball-01"]
    cpg = query_by_id["cpg-django-01"]
    extraction = query_by_id["re-playtone-01"]
    responder = ground_truth_script([tail, cpg, extraction], overrides={"cpg-django-01": "no idea"})

    assert responder.answer_for(render_prompt(tail, Strategy.SINGLE_STEP)) == f"{tail.head}, {tail.relation}, {tail.ground_truth}"
    assert responder.answer_for(render_prompt(extraction, Strategy.SINGLE_STEP_AUTOCOT)) == (
        "dbr:Playtone, dbo:founder, dbr:Tom_Hanks"
    )
    assert responder.answer_for(render_prompt(cpg, Strategy.SIMPLE_INSTRUCTION)) == "no idea"
    assert responder.answer_for(render_prompt(cpg, Strategy.MULTI_STEP, 1)) == cpg.context
    # tail and relation extraction only have single-step prompts
    assert len(responder) == 2 + 6 + 2
