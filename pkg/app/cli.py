"""
kgprobe command line: ingest, make-tasks, run, baseline, score, report,
label export/import and serve-mock.

Exit codes: 0 success, 1 usage error, 2 data error, 3 endpoint error.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import httpx

from app.core.config import ModelConfig, RunConfig, load_run_config, settings
from app.core.errors import KgProbeError, UsageError
from app.core.log_setup import configure_logging
from app.core.storage import write_jsonl
from app.services.baselines import shortest_path_records, simple_instruction_records
from app.services.evaluation import (
    RUN_RECORDS_FILE,
    RunRecord,
    build_client,
    read_run_records,
    run_evaluation,
    write_run_records,
)
from app.services.kg_store import Snapshot, load_snapshot
from app.services.labels import LabelStore, export_unresolved, import_labels
from app.services.llm_client import LlmClient
from app.services.metrics import Scorer, aggregate
from app.services.mock_llm import ScriptedResponder, ground_truth_script, mock_transport
from app.services.report import METRICS_JSON_FILE, load_metrics, render_table, write_report
from app.services.tasks import (
    Query,
    TaskKind,
    load_contextual_dataset,
    make_masked_queries,
    sample_per_document,
    sample_triples,
    write_tasks,
)

logger = logging.getLogger(__name__)

MOCK_URL = "http://mock.invalid/v1/chat/completions"
SHORTEST_PATH_FILE = "shortest_path_records.jsonl"
SIMPLE_INSTRUCTION_FILE = "simple_instruction_records.jsonl"
SCORES_FILE = "scores.jsonl"
MASKED_KINDS = {"tail": TaskKind.TAIL_PREDICTION, "relation": TaskKind.RELATION_PREDICTION}


class CliArgumentParser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


# Shared loaders

def _config(args: argparse.Namespace) -> RunConfig:
    config = load_run_config(Path(args.config))
    for flag, attribute in (
        ("seed", "seed"),
        ("max_in_flight", "max_in_flight"),
        ("output_dir", "output_dir"),
        ("cache_dir", "cache_dir"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(config, attribute, value)
    if getattr(args, "replay", False):
        config.replay_only = True
    if config.max_in_flight < 1:
        raise UsageError("--max-in-flight must be at least 1")
    return config


def _snapshot(config: RunConfig) -> Snapshot:
    return load_snapshot(config.kg.triples, config.kg.ontology)


def _queries(config: RunConfig, snapshot: Snapshot) -> List[Query]:
    if not config.tasks.files:
        raise UsageError("No task files configured: set [tasks] files in the config file.")
    queries: List[Query] = []
    for path in config.tasks.files:
        result = load_contextual_dataset(path, snapshot.graph, snapshot.ontology)
        if result.rejections and not result.queries:
            result.raise_for_rejections()
        if result.rejections:
            logger.warning("%d record(s) of %s were rejected and will not be evaluated", len(result.rejections), path)
        queries.extend(result.queries)
    return queries


def _selected_models(config: RunConfig, names: Optional[Sequence[str]]) -> List[ModelConfig]:
    if not config.models:
        raise UsageError("No models configured: add a [[models]] entry to the config file.")
    if not names:
        return list(config.models)
    return [config.model_named(name) for name in names]


def _responder(args: argparse.Namespace, queries: Sequence[Query]) -> Optional[ScriptedResponder]:
    mock = getattr(args, "mock", None)
    if mock is None:
        return None
    if mock == "script":
        if not args.mock_script:
            raise UsageError("--mock script needs --mock-script FILE")
        return ScriptedResponder.load(Path(args.mock_script))
    overrides: Dict[str, str] = {}
    if args.overrides:
        try:
            overrides = json.loads(Path(args.overrides).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise UsageError(f"Cannot read overrides file {args.overrides}: {exc}") from exc
    return ground_truth_script(queries, overrides=overrides)


def _client_factory(config: RunConfig, responder: Optional[ScriptedResponder]) -> Callable[[ModelConfig], LlmClient]:
    def factory(model: ModelConfig) -> LlmClient:
        if responder is None:
            return build_client(model, config)
        http_client = httpx.Client(transport=mock_transport(responder))
        return build_client(model, config, http_client=http_client, default_url=MOCK_URL)

    return factory


def _record_files(config: RunConfig, explicit: Optional[Sequence[str]]) -> List[Path]:
    if explicit:
        return [Path(item) for item in explicit]
    files = sorted(Path(config.output_dir).glob("*records.jsonl"))
    if not files:
        raise UsageError(f"No run records found in {config.output_dir}: run `kgprobe run` first.")
    return files


def _score(config: RunConfig, args: argparse.Namespace):
    snapshot = _snapshot(config)
    queries = _queries(config, snapshot)
    labels_path = Path(args.labels) if getattr(args, "labels", None) else config.tasks.labels
    labels = LabelStore.load(labels_path)
    records: List[RunRecord] = []
    for path in _record_files(config, getattr(args, "records", None)):
        records.extend(read_run_records(path))
    scorer = Scorer(snapshot.graph, snapshot.ontology, queries, labels)
    return scorer, scorer.score_all(records)


# Commands

def cmd_ingest(args: argparse.Namespace) -> int:
    if args.config:
        config = load_run_config(Path(args.config))
        triples, ontology = config.kg.triples, config.kg.ontology
    elif args.triples and args.ontology:
        triples, ontology = Path(args.triples), Path(args.ontology)
    else:
        raise UsageError("ingest needs --config or both --triples and --ontology")
    stats = load_snapshot(triples, ontology).stats
    print(f"📄 Triples file: {triples}")
    print(f"📄 Ontology file: {ontology}")
    print(f"triples: {stats.triples}")
    print(f"entities: {stats.entities}")
    print(f"relations: {stats.relations}")
    print(f"classes: {stats.classes}")
    print(f"typed entities: {stats.typed_entities}")
    print(f"constrained relations: {stats.constrained_relations}")
    return 0


def cmd_make_tasks(args: argparse.Namespace) -> int:
    config = _config(args)
    seed = config.require_seed()
    snapshot = _snapshot(config)
    out_dir = Path(args.out_dir) if args.out_dir else Path(config.output_dir)
    if args.n is None and args.per_document is None:
        raise UsageError("make-tasks needs --n (masked queries) and/or --per-document (contextual sampling)")

    if args.n is not None:
        triples = sample_triples(snapshot.graph, args.n, seed)
        for name in args.kinds:
            kind = MASKED_KINDS[name]
            path = out_dir / f"{name}_tasks.jsonl"
            write_tasks(make_masked_queries(triples, kind), path)
            print(f"{kind.value}: {len(triples)} tasks -> {path}")

    if args.per_document is not None:
        queries = _queries(config, snapshot)
        sampled = sample_per_document(queries, args.per_document, seed)
        path = out_dir / "contextual_tasks.jsonl"
        write_tasks(sampled, path)
        print(f"contextual: {len(sampled)} of {len(queries)} tasks -> {path}")

    return 0


def cmd_run(args: argparse.Namespace) -> int:
    config = _config(args)
    snapshot = _snapshot(config)
    queries = _queries(config, snapshot)
    models = _selected_models(config, args.model)
    responder = _responder(args, queries)
    if responder is not None and args.save_script:
        responder.save(Path(args.save_script))

    result = run_evaluation(config, queries, _client_factory(config, responder), models=models)
    records = [record for record in result.results if record is not None]
    path = Path(config.output_dir) / RUN_RECORDS_FILE
    write_run_records(records, path)
    print(f"{len(records)} run records -> {path}")
    result.raise_for_failures()
    return 0


def cmd_baseline(args: argparse.Namespace) -> int:
    config = _config(args)
    snapshot = _snapshot(config)
    queries = _queries(config, snapshot)

    if args.kind == "shortest-path":
        records = shortest_path_records(snapshot.graph, queries, config.config_hash)
        path = Path(config.output_dir) / SHORTEST_PATH_FILE
        write_run_records(records, path)
        print(f"{len(records)} shortest-path records -> {path}")
        return 0

    models = _selected_models(config, args.model)
    responder = _responder(args, queries)
    result = simple_instruction_records(config, queries, _client_factory(config, responder), models)
    records = [record for record in result.results if record is not None]
    path = Path(config.output_dir) / SIMPLE_INSTRUCTION_FILE
    write_run_records(records, path)
    print(f"{len(records)} simple-instruction records -> {path}")
    result.raise_for_failures()
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    config = _config(args)
    scorer, scored = _score(config, args)
    expected = {kind: config.trials_for(kind) for kind in TaskKind}
    report = aggregate(scored, expected)
    output_dir = Path(config.output_dir)
    ordered = sorted(scored, key=lambda item: (item.model, item.strategy, item.task.value, item.query_id, item.trial))
    write_jsonl(output_dir / SCORES_FILE, (item.to_dict() for item in ordered))
    write_report(report, output_dir)
    print(render_table(report), end="")
    unresolved = len(scorer.unresolved(scored))
    if unresolved:
        print(f"{unresolved} answer(s) need a factuality label: run `kgprobe label export`.")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    if args.metrics:
        metrics_path = Path(args.metrics)
    elif args.config:
        metrics_path = Path(_config(args).output_dir) / METRICS_JSON_FILE
    else:
        raise UsageError("report needs --metrics or --config")
    if not metrics_path.exists():
        raise UsageError(f"No metrics file at {metrics_path}: run `kgprobe score` first.")
    print(render_table(load_metrics(metrics_path)), end="")
    return 0


def cmd_label_export(args: argparse.Namespace) -> int:
    config = _config(args)
    scorer, scored = _score(config, args)
    count = export_unresolved(scorer.unresolved(scored), Path(args.out))
    print(f"{count} unresolved answer(s) -> {args.out}")
    return 0


def cmd_label_import(args: argparse.Namespace) -> int:
    config = _config(args)
    store_path = Path(args.labels) if args.labels else config.tasks.labels
    if store_path is None:
        raise UsageError("No label file: pass --labels or set [tasks] labels in the config file.")
    added = import_labels(Path(args.file), store_path)
    print(f"{added} new label(s) merged into {store_path}")
    return 0


def cmd_serve_mock(args: argparse.Namespace) -> int:
    import uvicorn

    from app.main import create_app

    queries: List[Query] = []
    if args.mock != "script":
        if not args.config:
            raise UsageError("serve-mock needs --config to script answers for its tasks (or --mock script)")
        config = _config(args)
        queries = _queries(config, _snapshot(config))
    responder = _responder(args, queries)
    uvicorn.run(create_app(responder), host=args.host, port=args.port)
    return 0


# Parser

def _add_config(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument("--config", required=required, help="TOML run configuration")


def _add_mock(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--mock", choices=["echo", "script"], help="answer from a scripted in-process endpoint")
    parser.add_argument("--overrides", help="JSON mapping task id -> answer, applied to the echo script")
    parser.add_argument("--mock-script", help="JSON mapping prompt SHA-256 -> answer (with --mock script)")


def build_parser() -> argparse.ArgumentParser:
    parser = CliArgumentParser(prog="kgprobe", description="Knowledge-graph reasoning tasks for LLM endpoints")
    parser.add_argument("--log-level", default=None, help=f"logging level (default {settings.LOG_LEVEL})")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliArgumentParser)

    p_ingest = sub.add_parser("ingest", help="Validate a KG snapshot and print its statistics")
    _add_config(p_ingest, required=False)
    p_ingest.add_argument("--triples")
    p_ingest.add_argument("--ontology")
    p_ingest.set_defaults(func=cmd_ingest)

    p_tasks = sub.add_parser("make-tasks", help="Write masked queries and/or sample contextual tasks")
    _add_config(p_tasks)
    p_tasks.add_argument("--seed", type=int)
    p_tasks.add_argument("--n", type=int, help="number of triples to sample for masked queries")
    p_tasks.add_argument("--kinds", nargs="+", choices=sorted(MASKED_KINDS), default=sorted(MASKED_KINDS))
    p_tasks.add_argument("--per-document", type=int, help="keep at most this many contextual tasks per document")
    p_tasks.add_argument("--out-dir")
    p_tasks.set_defaults(func=cmd_make_tasks)

    p_run = sub.add_parser("run", help="Run the model x strategy x task x trial grid")
    _add_config(p_run)
    p_run.add_argument("--model", nargs="+", help="only these configured models")
    p_run.add_argument("--replay", action="store_true", help="serve every request from the cache; a miss is an error")
    p_run.add_argument("--max-in-flight", type=int)
    p_run.add_argument("--output-dir", type=Path)
    p_run.add_argument("--cache-dir", type=Path)
    p_run.add_argument("--save-script", help="write the mock script used for this run")
    _add_mock(p_run)
    p_run.set_defaults(func=cmd_run)

    p_base = sub.add_parser("baseline", help="Run a CPG baseline")
    p_base.add_argument("kind", choices=["shortest-path", "simple-instruction"])
    _add_config(p_base)
    p_base.add_argument("--model", nargs="+")
    p_base.add_argument("--replay", action="store_true")
    p_base.add_argument("--max-in-flight", type=int)
    p_base.add_argument("--output-dir", type=Path)
    p_base.add_argument("--cache-dir", type=Path)
    _add_mock(p_base)
    p_base.set_defaults(func=cmd_baseline)

    p_score = sub.add_parser("score", help="Score run records and write the report")
    _add_config(p_score)
    p_score.add_argument("--records", nargs="+", help="run record files (default: *records.jsonl in the output dir)")
    p_score.add_argument("--labels")
    p_score.add_argument("--output-dir", type=Path)
    p_score.set_defaults(func=cmd_score)

    p_report = sub.add_parser("report", help="Print the report table from a metrics file")
    _add_config(p_report, required=False)
    p_report.add_argument("--metrics")
    p_report.add_argument("--output-dir", type=Path)
    p_report.set_defaults(func=cmd_report)

    p_label = sub.add_parser("label", help="Factuality label workflow")
    label_sub = p_label.add_subparsers(dest="label_command", required=True, parser_class=CliArgumentParser)
    p_export = label_sub.add_parser("export", help="Write unresolved answers for annotation")
    _add_config(p_export)
    p_export.add_argument("--out", required=True)
    p_export.add_argument("--records", nargs="+")
    p_export.add_argument("--labels")
    p_export.add_argument("--output-dir", type=Path)
    p_export.set_defaults(func=cmd_label_export)
    p_import = label_sub.add_parser("import", help="Merge an annotated export into the label file")
    _add_config(p_import)
    p_import.add_argument("--file", required=True)
    p_import.add_argument("--labels")
    p_import.set_defaults(func=cmd_label_import)

    p_serve = sub.add_parser("serve-mock", help="Serve a scripted chat-completion endpoint")
    _add_config(p_serve, required=False)
    _add_mock(p_serve)
    p_serve.add_argument("--host", default=settings.MOCK_HOST)
    p_serve.add_argument("--port", type=int, default=settings.MOCK_PORT)
    p_serve.set_defaults(func=cmd_serve_mock, mock="echo")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        configure_logging(args.log_level)
        return int(args.func(args))
    except KgProbeError as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
