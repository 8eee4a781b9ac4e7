"""
Evaluation runs: the (model x strategy x task x trial) grid, executed
against chat-completion endpoints and written out as run records.

Run records carry the provenance needed to re-score them offline: config
hash, prompt hashes, cache keys and decoding parameters. They carry no
timestamps, so replaying a populated cache reproduces them byte for byte.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import httpx
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from app.core.config import ModelConfig, RunConfig
from app.core.errors import DataError
from app.core.storage import iter_jsonl, sha256_text, write_jsonl
from app.services.llm_client import BatchFailure, BatchResult, LlmClient, ModelSession, ResponseCache, run_batch
from app.services.progress_tracker import ProgressTracker, progress_tracker
from app.services.prompting import Strategy, render_prompt, run_multi_step, supports
from app.services.tasks import Query

logger = logging.getLogger(__name__)

RUN_RECORDS_FILE = "run_records.jsonl"
# Strategy label of runs that use no prompt at all
BASELINE_STRATEGY = "baseline"


class StepRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    prompt_sha256: str
    response: str


class RunRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    query_id: str
    task_kind: str
    model: str
    strategy: str
    trial: int
    endpoint: str
    prompt_sha256: List[str] = Field(default_factory=list)
    cache_keys: List[str] = Field(default_factory=list)
    response: Optional[str] = None
    inverse_hops: List[int] = Field(default_factory=list)
    steps: List[StepRecord] = Field(default_factory=list)
    linked_head: Optional[str] = None
    linked_tail: Optional[str] = None
    error: Optional[str] = None
    warnings: List[str] = Field(default_factory=list)
    config_hash: str = ""
    temperature: Optional[float] = None
    max_tokens: Optional[int] = None

    @property
    def sort_key(self):
        return (self.model, self.strategy, self.task_kind, self.query_id, self.trial)


def write_run_records(records: Iterable[RunRecord], path: Path) -> int:
    ordered = sorted(records, key=lambda record: record.sort_key)
    write_jsonl(path, (record.model_dump(mode="json") for record in ordered))
    logger.info("Wrote %d run records to %s", len(ordered), path)
    return len(ordered)


def read_run_records(path: Path) -> List[RunRecord]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Run record file not found: {path}")
    records = []
    for line_number, payload in iter_jsonl(path):
        try:
            records.append(RunRecord.model_validate(payload))
        except ValidationError as exc:
            raise DataError(f"{path}:{line_number}: invalid run record: {exc}") from exc
    return records


@dataclass(frozen=True)
class EvaluationJob:
    model: ModelConfig
    strategy: Strategy
    query: Query
    trial: int


def plan_jobs(
    config: RunConfig,
    queries: Sequence[Query],
    models: Optional[Sequence[ModelConfig]] = None,
    strategies: Optional[Sequence[Strategy]] = None,
) -> List[EvaluationJob]:
    """Every (model, strategy, query, trial) combination a template exists for."""
    jobs = []
    for model in models if models is not None else config.models:
        for strategy in strategies or model.resolved_strategies():
            runnable = [query for query in queries if supports(query.kind, strategy)]
            if not runnable:
                logger.warning("Strategy %s has no prompts for the loaded tasks; skipping for %s", strategy.value, model.name)
            for query in runnable:
                for trial in range(config.trials_for(query.kind)):
                    jobs.append(EvaluationJob(model, strategy, query, trial))
    return jobs


def run_job(job: EvaluationJob, client: LlmClient, config_hash: str) -> RunRecord:
    session = ModelSession(client, job.model.model_id, job.trial, job.model.temperature, job.model.max_tokens)
    record = RunRecord(
        query_id=job.query.id,
        task_kind=job.query.kind.value,
        model=job.model.name,
        strategy=job.strategy.value,
        trial=job.trial,
        endpoint=client.endpoint,
        config_hash=config_hash,
        temperature=job.model.temperature,
        max_tokens=job.model.max_tokens,
    )
    if job.strategy is Strategy.MULTI_STEP:
        trace = run_multi_step(job.query, session)
        record.steps = [StepRecord(prompt_sha256=sha256_text(step.prompt), response=step.response) for step in trace.steps]
        record.prompt_sha256 = [step.prompt_sha256 for step in record.steps]
        record.response = trace.raw_path_answer
        record.linked_head = trace.linked_head.value if trace.linked_head else None
        record.linked_tail = trace.linked_tail.value if trace.linked_tail else None
        record.error = trace.error
        record.warnings = list(trace.warnings)
    else:
        prompt = render_prompt(job.query, job.strategy)
        record.prompt_sha256 = [sha256_text(prompt)]
        record.response = session.ask(prompt)
    record.cache_keys = list(session.cache_keys)
    return record


def build_client(
    model: ModelConfig,
    config: RunConfig,
    http_client: Optional[httpx.Client] = None,
    default_url: Optional[str] = None,
) -> LlmClient:
    return LlmClient(
        endpoint=model.name,
        url=model.url or default_url,
        cache=ResponseCache(config.cache_dir),
        replay_only=config.replay_only,
        http_client=http_client,
    )


def run_evaluation(
    config: RunConfig,
    queries: Sequence[Query],
    client_factory: Callable[[ModelConfig], LlmClient],
    models: Optional[Sequence[ModelConfig]] = None,
    strategies: Optional[Sequence[Strategy]] = None,
    tracker: Optional[ProgressTracker] = progress_tracker,
) -> BatchResult[RunRecord]:
    """
    Run the grid, one batch per model, at most `config.max_in_flight`
    requests outstanding. Failed jobs are reported on the result, in job order.
    """
    jobs = plan_jobs(config, queries, models, strategies)
    results: List[Optional[RunRecord]] = []
    failures = []
    offset = 0
    by_model: Dict[str, List[EvaluationJob]] = {}
    for job in jobs:
        by_model.setdefault(job.model.name, []).append(job)

    for model_name, model_jobs in by_model.items():
        client = client_factory(model_jobs[0].model)
        try:
            batch = run_batch(
                [lambda job=job: run_job(job, client, config.config_hash) for job in model_jobs],
                config.max_in_flight,
                tracker,
                batch_id=model_name,
            )
        finally:
            client.close()
        results.extend(batch.results)
        failures.extend(BatchFailure(failure.index + offset, failure.message) for failure in batch.failures)
        offset += len(model_jobs)

    logger.info("Evaluation finished: %d jobs, %d failed", len(jobs), len(failures))
    return BatchResult(results, failures)
