"""
Prompt rendering and the multi-step CPG pipeline.

Templates live under app/prompts/<task kind>/<strategy>[-<step>].txt and use
Jinja2 ``{{ placeholder }}`` syntax. Placeholders: head, tail, relation,
context and (multi-step only) support_sentences.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Tuple

from jinja2 import Environment, FileSystemLoader, StrictUndefined, TemplateNotFound, UndefinedError

from app.core.errors import PromptRenderError
from app.services.kg_store import Iri, IriKind
from app.services.path_model import iri_tokens
from app.services.tasks import Query, TaskKind

logger = logging.getLogger(__name__)

PROMPTS_DIR = Path(__file__).resolve().parent.parent / "prompts"
MULTI_STEP_COUNT = 3


class Strategy(str, Enum):
    SINGLE_STEP = "single-step"
    SINGLE_STEP_AUTOCOT = "single-step-autocot"
    MULTI_STEP = "multi-step"
    SIMPLE_INSTRUCTION = "simple-instruction"


_environment = Environment(
    loader=FileSystemLoader(str(PROMPTS_DIR)),
    undefined=StrictUndefined,
    keep_trailing_newline=False,
    autoescape=False,
)


def template_name(kind: TaskKind, strategy: Strategy, step: Optional[int] = None) -> str:
    if strategy is Strategy.MULTI_STEP:
        if step not in range(1, MULTI_STEP_COUNT + 1):
            raise PromptRenderError(f"Multi-step prompts need a step between 1 and {MULTI_STEP_COUNT}, got {step}")
        return f"{kind.value}/{strategy.value}-{step}.txt"
    if step is not None:
        raise PromptRenderError(f"Strategy {strategy.value} has no steps")
    return f"{kind.value}/{strategy.value}.txt"


def supports(kind: TaskKind, strategy: Strategy) -> bool:
    """Whether a template set exists for this (task kind, strategy) pair."""
    step = 1 if strategy is Strategy.MULTI_STEP else None
    return (PROMPTS_DIR / template_name(kind, strategy, step)).exists()


def _query_variables(query: Query, strategy: Strategy, step: Optional[int]) -> Dict[str, str]:
    if strategy is Strategy.MULTI_STEP and step in (1, 2):
        # support extraction and entity linking work on surface names
        head, tail = query.surface_name("head"), query.surface_name("tail")
    else:
        head = query.head.value
        tail = query.tail.value if query.tail is not None else None
    candidates = {
        "head": head,
        "tail": tail,
        "relation": query.relation.value if query.relation is not None else None,
        "context": query.context,
    }
    return {key: value for key, value in candidates.items() if value is not None}


def render_prompt(query: Query, strategy: Strategy, step: Optional[int] = None, **overrides: str) -> str:
    """
    Render the prompt for `query` under `strategy`.

    `overrides` replace or add placeholder values (multi-step pipelines pass
    support_sentences and the linked head/tail IRIs).
    """
    name = template_name(query.kind, strategy, step)
    variables = _query_variables(query, strategy, step)
    variables.update({key: value for key, value in overrides.items() if value is not None})
    try:
        template = _environment.get_template(name)
    except TemplateNotFound as exc:
        raise PromptRenderError(
            f"No {strategy.value} prompt for {query.kind.value} tasks (template {name} not found)"
        ) from exc
    try:
        return template.render(**variables)
    except UndefinedError as exc:
        raise PromptRenderError(f"Query {query.id}: template {name} is missing a value: {exc.message}") from exc


class PromptRunner(Protocol):
    def ask(self, prompt: str) -> str: ...


@dataclass
class PipelineStep:
    prompt: str
    response: str


@dataclass
class PipelineTrace:
    query_id: str
    steps: List[PipelineStep] = field(default_factory=list)
    support_sentences: Optional[str] = None
    linked_head: Optional[Iri] = None
    linked_tail: Optional[Iri] = None
    raw_path_answer: Optional[str] = None
    error: Optional[str] = None
    warnings: List[str] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return self.error is not None

    def _record(self, prompt: str, response: str) -> None:
        self.steps.append(PipelineStep(prompt, response))


def link_entities(response: str) -> Tuple[List[Iri], List[Iri]]:
    """First two distinct entity IRIs of a linking answer, plus any extra ones."""
    entities: List[Iri] = []
    for iri in iri_tokens(response):
        if iri.kind is IriKind.ENTITY and iri not in entities:
            entities.append(iri)
    return entities[:2], entities[2:]


def run_multi_step(query: Query, runner: PromptRunner) -> PipelineTrace:
    """
    Support sentence extraction, entity linking, then path generation.

    Each step's answer feeds the next. A failed step stops the pipeline and is
    recorded on the trace; the generation then counts as ill-formatted.
    """
    if query.kind is not TaskKind.CONTEXTUAL_PATH_GENERATION:
        raise PromptRenderError(f"Multi-step prompting applies to CPG tasks only, not {query.kind.value}")

    trace = PipelineTrace(query.id)

    prompt = render_prompt(query, Strategy.MULTI_STEP, 1)
    response = runner.ask(prompt)
    trace._record(prompt, response)
    if not response.strip():
        trace.error = "step 1 (support sentences) returned an empty response"
        return trace
    trace.support_sentences = response

    prompt = render_prompt(query, Strategy.MULTI_STEP, 2, support_sentences=trace.support_sentences)
    response = runner.ask(prompt)
    trace._record(prompt, response)
    if not response.strip():
        trace.error = "step 2 (entity linking) returned an empty response"
        return trace
    linked, extra = link_entities(response)
    if len(linked) < 2:
        trace.error = f"step 2 (entity linking) returned {len(linked)} dbr: entit{'y' if len(linked) == 1 else 'ies'}"
        return trace
    if extra:
        message = f"entity linking named {2 + len(extra)} entities; using {linked[0]} and {linked[1]}"
        trace.warnings.append(message)
        logger.warning("Query %s: %s", query.id, message)
    trace.linked_head, trace.linked_tail = linked

    prompt = render_prompt(
        query,
        Strategy.MULTI_STEP,
        3,
        head=trace.linked_head.value,
        tail=trace.linked_tail.value,
        support_sentences=trace.support_sentences,
    )
    response = runner.ask(prompt)
    trace._record(prompt, response)
    if not response.strip():
        trace.error = "step 3 (path generation) returned an empty response"
        return trace
    trace.raw_path_answer = response
    return trace
