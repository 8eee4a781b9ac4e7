"""
Scripted chat-completion responder for offline runs and tests.

Answers are looked up by the SHA-256 of the last user message. The same
responder backs the FastAPI mock endpoint and an in-process
httpx.MockTransport.
"""
import json
import logging
import threading
from collections import Counter, defaultdict, deque
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Deque, Dict, Iterable, Mapping, Optional, Sequence, Tuple

import httpx

from app.core.errors import DataError
from app.core.storage import atomic_write_text, sha256_text
from app.services.path_model import render_path
from app.services.prompting import Strategy, render_prompt, supports
from app.services.tasks import Query, TaskKind

logger = logging.getLogger(__name__)

REFUSAL = "I cannot find a path."


@dataclass(frozen=True)
class ScriptedFailure:
    status_code: int
    body: str = "scripted failure"


def completion_payload(model: str, text: str) -> Dict:
    return {
        "object": "chat.completion",
        "model": model,
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
    }


class ScriptedResponder:
    def __init__(
        self,
        answers: Optional[Mapping[str, str]] = None,
        fallback: Optional[Callable[[str], str]] = None,
    ):
        self._answers: Dict[str, str] = dict(answers or {})
        self._failures: Dict[str, Deque[ScriptedFailure]] = defaultdict(deque)
        self._fallback = fallback or (lambda prompt: REFUSAL)
        self._lock = threading.Lock()
        self.calls: Counter = Counter()

    def __len__(self) -> int:
        return len(self._answers)

    def add(self, prompt: str, answer: str) -> None:
        self._answers[sha256_text(prompt)] = answer

    def fail_next(self, prompt: str, *failures: ScriptedFailure) -> None:
        """Queue failures returned before the scripted answer for `prompt`."""
        with self._lock:
            self._failures[sha256_text(prompt)].extend(failures)

    def answer_for(self, prompt: str) -> str:
        key = sha256_text(prompt)
        if key in self._answers:
            return self._answers[key]
        return self._fallback(prompt)

    def respond(self, payload: Mapping) -> Tuple[int, Dict]:
        """Status code and JSON body for one chat-completion request payload."""
        messages = payload.get("messages") or []
        prompts = [message.get("content", "") for message in messages if message.get("role") == "user"]
        if not prompts:
            return 400, {"error": {"message": "request has no user message"}}
        prompt = prompts[-1]
        key = sha256_text(prompt)
        with self._lock:
            self.calls[key] += 1
            failure = self._failures[key].popleft() if self._failures[key] else None
        if failure is not None:
            return failure.status_code, {"error": {"message": failure.body}}
        return 200, completion_payload(payload.get("model", "mock"), self.answer_for(prompt))

    def to_json(self) -> str:
        return json.dumps(self._answers, sort_keys=True, indent=1)

    def save(self, path: Path) -> None:
        atomic_write_text(path, self.to_json() + "\n")

    @classmethod
    def load(cls, path: Path) -> "ScriptedResponder":
        try:
            answers = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"Cannot read mock script {path}: {exc}") from exc
        if not isinstance(answers, dict):
            raise DataError(f"Mock script {path} must map prompt hashes to answers")
        return cls(answers)


def _echo_answer(query: Query) -> str:
    if query.kind is TaskKind.TAIL_PREDICTION:
        return f"{query.head}, {query.relation}, {query.ground_truth}"
    if query.kind in (TaskKind.RELATION_PREDICTION, TaskKind.RELATION_EXTRACTION):
        return f"{query.head}, {query.ground_truth}, {query.tail}"
    return render_path(query.truth_path)


def ground_truth_script(
    queries: Iterable[Query],
    strategies: Sequence[Strategy] = tuple(Strategy),
    overrides: Optional[Mapping[str, str]] = None,
) -> ScriptedResponder:
    """
    A responder that answers every prompt of `queries` with the ground truth.

    `overrides` replaces the final answer of chosen query ids. Multi-step
    scripts echo the document as support sentences and link the query
    entities to their own IRIs.
    """
    overrides = dict(overrides or {})
    responder = ScriptedResponder()
    for query in queries:
        answer = overrides.get(query.id, _echo_answer(query))
        for strategy in strategies:
            if not supports(query.kind, strategy):
                continue
            if strategy is Strategy.MULTI_STEP:
                support = query.context
                responder.add(render_prompt(query, strategy, 1), support)
                responder.add(
                    render_prompt(query, strategy, 2, support_sentences=support),
                    f"{query.head} and {query.tail}",
                )
                responder.add(
                    render_prompt(
                        query, strategy, 3, head=query.head.value, tail=query.tail.value, support_sentences=support
                    ),
                    answer,
                )
            else:
                responder.add(render_prompt(query, strategy), answer)
    logger.info("Scripted %d mock answers", len(responder))
    return responder


def mock_transport(responder: ScriptedResponder) -> httpx.MockTransport:
    def handler(request: httpx.Request) -> httpx.Response:
        try:
            payload = json.loads(request.content)
        except json.JSONDecodeError:
            return httpx.Response(400, json={"error": {"message": "body is not JSON"}})
        status, body = responder.respond(payload)
        return httpx.Response(status, json=body)

    return httpx.MockTransport(handler)
