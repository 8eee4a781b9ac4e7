"""
Baselines for contextual path generation.

The shortest-path baseline answers every CPG query with the minimum-hop
path between its entities, without any model. The simple-instruction
baseline is an ordinary evaluation run restricted to that strategy.
"""
import logging
from typing import Callable, List, Optional, Sequence

from app.core.config import ModelConfig, RunConfig
from app.services.evaluation import BASELINE_STRATEGY, RunRecord, run_evaluation
from app.services.kg_store import KnowledgeGraph
from app.services.llm_client import BatchResult, LlmClient
from app.services.path_model import render_path
from app.services.prompting import Strategy
from app.services.tasks import Query, TaskKind

logger = logging.getLogger(__name__)

SHORTEST_PATH_MODEL = "shortest-path"


def shortest_path_records(graph: KnowledgeGraph, queries: Sequence[Query], config_hash: str = "") -> List[RunRecord]:
    records = []
    for query in queries:
        if query.kind is not TaskKind.CONTEXTUAL_PATH_GENERATION:
            continue
        record = RunRecord(
            query_id=query.id,
            task_kind=query.kind.value,
            model=SHORTEST_PATH_MODEL,
            strategy=BASELINE_STRATEGY,
            trial=0,
            endpoint="none",
            config_hash=config_hash,
        )
        try:
            path = graph.shortest_path(query.head, query.tail)
        except KeyError as exc:
            record.error = str(exc.args[0])
        else:
            if path is None:
                record.error = f"{query.head} and {query.tail} are not connected"
            else:
                record.response = render_path(path)
                record.inverse_hops = [index for index, flag in enumerate(path.inverse) if flag]
        if record.error:
            logger.warning("Shortest-path baseline for %s: %s", query.id, record.error)
        records.append(record)
    logger.info("Shortest-path baseline answered %d CPG tasks", len(records))
    return records


def simple_instruction_records(
    config: RunConfig,
    queries: Sequence[Query],
    client_factory: Callable[[ModelConfig], LlmClient],
    models: Optional[Sequence[ModelConfig]] = None,
) -> BatchResult[RunRecord]:
    cpg = [query for query in queries if query.kind is TaskKind.CONTEXTUAL_PATH_GENERATION]
    return run_evaluation(config, cpg, client_factory, models=models, strategies=[Strategy.SIMPLE_INSTRUCTION])
