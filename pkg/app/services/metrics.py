"""
Scoring: graph edit distance between paths (GEO/NGEO), hard and soft
accuracy, and aggregation of scored run records into report rows.

GEO is an exact weighted edit distance over the element sequences of two
paths, computed with Fractions. Substitution between ontologically similar
items of the same kind costs 1/2.
"""
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import pandas as pd

from app.core.errors import DataError
from app.services.baselines import SHORTEST_PATH_MODEL
from app.services.evaluation import BASELINE_STRATEGY, RunRecord
from app.services.hallucination import FactLabel, VerdictKind, audit_path, check_ontology, path_invalid_fraction
from app.services.kg_store import Iri, IriKind, KnowledgeGraph, Ontology, Triple
from app.services.labels import LabelStore, UnresolvedAnswer
from app.services.path_model import KgPath, judge_generation, read_answer
from app.services.tasks import Query, TaskKind

logger = logging.getLogger(__name__)

ZERO = Fraction(0)
ONE = Fraction(1)
HALF = Fraction(1, 2)

TASK_ORDER = {kind: index for index, kind in enumerate(TaskKind)}


class EditCostModel:
    insert_cost = ONE
    delete_cost = ONE

    def __init__(self, ontology: Optional[Ontology] = None):
        self.ontology = ontology

    def similar(self, a: Iri, b: Iri) -> bool:
        if self.ontology is None or a.kind is not b.kind:
            return False
        if a.kind is IriKind.RELATION:
            up_a, up_b = self.ontology.superproperties(a), self.ontology.superproperties(b)
            return b in up_a or a in up_b or bool(up_a & up_b)
        if a.kind is IriKind.ENTITY:
            return bool(self.ontology.most_specific_types(a) & self.ontology.most_specific_types(b))
        return False

    def substitute(self, a: Iri, b: Iri) -> Fraction:
        if a == b:
            return ZERO
        if a.kind is not b.kind:
            return ONE
        return HALF if self.similar(a, b) else ONE


def _elements(path: Optional[Sequence[Iri]]) -> Sequence[Iri]:
    if path is None:
        return ()
    if isinstance(path, KgPath):
        return path.elements
    return tuple(path)


def geo(s: Optional[Sequence[Iri]], s_star: Sequence[Iri], cost: EditCostModel) -> Fraction:
    """Minimum cost of turning `s` into `s_star` (s may be None or empty)."""
    source, target = _elements(s), _elements(s_star)
    previous = [cost.insert_cost * j for j in range(len(target) + 1)]
    for i in range(1, len(source) + 1):
        current = [previous[0] + cost.delete_cost]
        for j in range(1, len(target) + 1):
            current.append(
                min(
                    previous[j] + cost.delete_cost,
                    current[j - 1] + cost.insert_cost,
                    previous[j - 1] + cost.substitute(source[i - 1], target[j - 1]),
                )
            )
        previous = current
    return previous[-1]


def ngeo(s: Optional[Sequence[Iri]], s_star: Sequence[Iri], cost: EditCostModel) -> Fraction:
    target = _elements(s_star)
    if not target:
        raise DataError("NGEO needs a non-empty ground-truth path")
    return min(geo(s, target, cost) / len(target), ONE)


class SoftVerdict(str, Enum):
    TRUE = "True"
    FALSE = "False"
    UNRESOLVED = "Unresolved"


def answer_triple(query: Query, answer: Iri) -> Optional[Triple]:
    """The triple a single-IRI answer asserts, or None if the answer has the wrong kind."""
    try:
        if query.kind is TaskKind.TAIL_PREDICTION:
            return Triple(query.head, query.relation, answer)
        return Triple(query.head, answer, query.tail)
    except ValueError:
        return None


def hard_accuracy(graph: KnowledgeGraph, query: Query, answer: Optional[Iri]) -> bool:
    if answer is None:
        return False
    if query.kind is TaskKind.RELATION_EXTRACTION:
        return answer == query.truth_iri
    if query.kind in (TaskKind.TAIL_PREDICTION, TaskKind.RELATION_PREDICTION):
        triple = answer_triple(query, answer)
        return triple is not None and graph.has_triple(triple)
    raise DataError(f"Hard accuracy is not defined for {query.kind.value} tasks")


def soft_accuracy(
    graph: KnowledgeGraph,
    ontology: Ontology,
    query: Query,
    answer: Optional[Iri],
    labels: LabelStore,
) -> SoftVerdict:
    """
    Hard-accurate answers are soft-accurate. Otherwise a human label decides;
    without one, an ontology-invalid or unreadable answer is False and
    anything else stays Unresolved.
    """
    if hard_accuracy(graph, query, answer):
        return SoftVerdict.TRUE
    if answer is None:
        return SoftVerdict.FALSE
    label = labels.get(query.id, answer.value)
    if label is not None:
        return SoftVerdict.TRUE if label is FactLabel.CORRECT else SoftVerdict.FALSE
    triple = answer_triple(query, answer)
    if triple is None or check_ontology(ontology, graph, triple).ontology_invalid:
        return SoftVerdict.FALSE
    return SoftVerdict.UNRESOLVED


@dataclass
class ScoredRecord:
    query_id: str
    task: TaskKind
    model: str
    strategy: str
    trial: int
    answer: Optional[str] = None
    reason: str = ""
    hard: Optional[bool] = None
    soft: Optional[SoftVerdict] = None
    ill_formatted: Optional[bool] = None
    parse_tag: Optional[str] = None
    ngeo: Optional[Fraction] = None
    invalid_fraction: Optional[Fraction] = None
    content_suspects: int = 0
    ontology_hallucinations: int = 0
    warnings: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict:
        payload = asdict(self)
        payload["task"] = self.task.value
        payload["soft"] = self.soft.value if self.soft is not None else None
        for key in ("ngeo", "invalid_fraction"):
            if payload[key] is not None:
                payload[key] = str(payload[key])
        return payload


class Scorer:
    def __init__(
        self,
        graph: KnowledgeGraph,
        ontology: Ontology,
        queries: Iterable[Query],
        labels: Optional[LabelStore] = None,
    ):
        self.graph = graph
        self.ontology = ontology
        self.queries: Dict[str, Query] = {query.id: query for query in queries}
        self.labels = labels or LabelStore()
        self.cost = EditCostModel(ontology)

    def score(self, record: RunRecord) -> ScoredRecord:
        query = self.queries.get(record.query_id)
        if query is None:
            raise DataError(f"Run record references unknown task {record.query_id}")
        scored = ScoredRecord(
            query_id=record.query_id,
            task=query.kind,
            model=record.model,
            strategy=record.strategy,
            trial=record.trial,
            warnings=list(record.warnings),
        )
        if query.kind is TaskKind.CONTEXTUAL_PATH_GENERATION:
            self._score_path(query, record, scored)
        else:
            self._score_answer(query, record, scored)
        return scored

    def score_all(self, records: Iterable[RunRecord]) -> List[ScoredRecord]:
        return [self.score(record) for record in records]

    def _score_answer(self, query: Query, record: RunRecord, scored: ScoredRecord) -> None:
        answer = None
        if record.error is not None or record.response is None:
            scored.reason = record.error or "no response"
        else:
            reading = read_answer(record.response, query)
            answer, scored.reason = reading.answer, reading.reason
        scored.answer = answer.value if answer is not None else None
        scored.hard = hard_accuracy(self.graph, query, answer)
        scored.soft = soft_accuracy(self.graph, self.ontology, query, answer, self.labels)
        triple = answer_triple(query, answer) if answer is not None else None
        if triple is not None:
            verdict = check_ontology(self.ontology, self.graph, triple)
            scored.content_suspects = int(verdict.kind is VerdictKind.CONTENT_SUSPECT)
            scored.ontology_hallucinations = int(verdict.ontology_invalid)

    def _score_path(self, query: Query, record: RunRecord, scored: ScoredRecord) -> None:
        truth = query.truth_path
        if record.error is not None or record.response is None:
            scored.ill_formatted = True
            scored.parse_tag = "PipelineError"
            scored.reason = record.error or "no response"
            scored.ngeo = ngeo(None, truth, self.cost)
            return

        judgement = judge_generation(record.response)
        scored.parse_tag = judgement.outcome.tag
        scored.warnings.extend(judgement.warnings)
        path = judgement.path
        if path is None:
            scored.ill_formatted = True
            scored.ngeo = ngeo(None, truth, self.cost)
            return

        path = _orient(path, record, truth)
        scored.ill_formatted = False
        scored.answer = str(path)
        scored.ngeo = ngeo(path, truth, self.cost)
        verdicts = audit_path(self.ontology, self.graph, path)
        scored.invalid_fraction = path_invalid_fraction(self.ontology, self.graph, path)
        scored.content_suspects = sum(1 for verdict in verdicts if verdict.kind is VerdictKind.CONTENT_SUSPECT)
        scored.ontology_hallucinations = sum(1 for verdict in verdicts if verdict.ontology_invalid)

    def unresolved(self, scored: Iterable[ScoredRecord]) -> List[UnresolvedAnswer]:
        return [
            UnresolvedAnswer(item.query_id, item.answer)
            for item in scored
            if item.soft is SoftVerdict.UNRESOLVED and item.answer is not None
        ]


def _orient(path: KgPath, record: RunRecord, truth: KgPath) -> KgPath:
    """
    Attach stored orientation to a parsed path. Flags recorded with the run win;
    a path identical to the ground truth takes the ground truth's flags. Anything
    else is checked as written.
    """
    if record.inverse_hops:
        if any(index < 0 or index >= path.hop_count for index in record.inverse_hops):
            raise DataError(
                f"Run record {record.query_id}: inverse_hops {record.inverse_hops} out of range for {path.hop_count} hops"
            )
        return KgPath(path.elements, inverse=tuple(i in record.inverse_hops for i in range(path.hop_count)))
    if path == truth:
        return KgPath(path.elements, inverse=truth.inverse)
    return path


@dataclass(frozen=True)
class MetricRow:
    model: str
    strategy: str
    task: TaskKind
    h_acc: Optional[float]
    s_acc: Optional[float]
    ngeo: Optional[float]
    if_rate: Optional[float]
    iv_rate: Optional[float]
    trials: int
    records: int
    unresolved: int
    content_suspects: int
    ontology_hallucinations: int
    expected_trials: Optional[int] = None

    @property
    def label(self) -> str:
        return f"{self.model} ({self.strategy})"

    def to_dict(self) -> Dict:
        payload = asdict(self)
        payload["task"] = self.task.value
        return payload


@dataclass(frozen=True)
class MetricReport:
    rows: List[MetricRow]

    def row(self, model: str, strategy: str, task: TaskKind) -> MetricRow:
        for row in self.rows:
            if (row.model, row.strategy, row.task) == (model, strategy, task):
                return row
        raise KeyError((model, strategy, task.value))


def _optional(value) -> Optional[float]:
    return None if value is None or pd.isna(value) else float(value)


def aggregate(
    scored: Sequence[ScoredRecord],
    expected_trials: Optional[Mapping[TaskKind, int]] = None,
) -> MetricReport:
    """
    One row per (model, strategy, task kind), ordered by model, strategy and
    task kind. Accuracies are percentages over all records of the row;
    %IF is a fraction over all generations; %IV averages only well-formed paths.
    The shortest-path baseline has no %IF or %IV.
    """
    if not scored:
        return MetricReport([])

    frame = pd.DataFrame(
        [{
            "model": item.model,
            "strategy": item.strategy,
            "task": item.task.value,
            "trial": item.trial,
            "hard": None if item.hard is None else float(item.hard),
            "soft": None if item.soft is None else float(item.soft is SoftVerdict.TRUE),
            "unresolved": int(item.soft is SoftVerdict.UNRESOLVED),
            "ngeo": None if item.ngeo is None else float(item.ngeo),
            "ill": None if item.ill_formatted is None else float(item.ill_formatted),
            "iv": None if item.invalid_fraction is None else float(item.invalid_fraction),
            "content_suspects": item.content_suspects,
            "ontology_hallucinations": item.ontology_hallucinations,
        }
        for item in scored]
    )
    for column in ("hard", "soft", "ngeo", "ill", "iv"):
        frame[column] = pd.to_numeric(frame[column])

    summary = (
        frame.groupby(["model", "strategy", "task"], sort=False)
        .agg(
            h_acc=("hard", "mean"),
            s_acc=("soft", "mean"),
            ngeo=("ngeo", "mean"),
            if_rate=("ill", "mean"),
            iv_rate=("iv", "mean"),
            trials=("trial", "nunique"),
            records=("trial", "size"),
            unresolved=("unresolved", "sum"),
            content_suspects=("content_suspects", "sum"),
            ontology_hallucinations=("ontology_hallucinations", "sum"),
        )
        .reset_index()
    )

    rows = []
    for entry in summary.itertuples(index=False):
        task = TaskKind(entry.task)
        expected = None if entry.strategy == BASELINE_STRATEGY else (expected_trials or {}).get(task)
        if expected is not None and entry.trials < expected:
            logger.warning(
                "%s (%s) %s: %d of %d trials present", entry.model, entry.strategy, task.value, entry.trials, expected
            )
        h_acc, s_acc = _optional(entry.h_acc), _optional(entry.s_acc)
        # the shortest-path baseline emits rendered KG paths, never free text
        model_free = entry.model == SHORTEST_PATH_MODEL
        rows.append(
            MetricRow(
                model=entry.model,
                strategy=entry.strategy,
                task=task,
                h_acc=None if h_acc is None else h_acc * 100,
                s_acc=None if s_acc is None else s_acc * 100,
                ngeo=_optional(entry.ngeo),
                if_rate=None if model_free else _optional(entry.if_rate),
                iv_rate=None if model_free else _optional(entry.iv_rate),
                trials=int(entry.trials),
                records=int(entry.records),
                unresolved=int(entry.unresolved),
                content_suspects=int(entry.content_suspects),
                ontology_hallucinations=int(entry.ontology_hallucinations),
                expected_trials=expected,
            )
        )
    rows.sort(key=lambda row: (row.model, row.strategy, TASK_ORDER[row.task]))
    return MetricReport(rows)
