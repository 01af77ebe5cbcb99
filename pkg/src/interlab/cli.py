"""Command-line entry point: serve, validate-run, simulate, evaluate, make-candidates, sanity-check.

Exit codes: 0 on success, 1 on operational errors (single ``error: ...`` line
on stderr), 2 when a validation or sanity check ran fine but found problems.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, GatewayConfig, load_config, load_weights
from .gateway import Gateway, GatewayError, build_adapters
from .ingest import (
    IngestError,
    parse_documents,
    parse_head_queries,
    validate_run_file,
    write_candidates,
)
from .metrics import (
    RewardWeights,
    aggregate_round,
    distributions,
    query_stats,
    reward_report_csv,
    round_report_csv,
)
from .model import TaskType
from .simulator import (
    ClickModel,
    HttpDriver,
    InProcessDriver,
    RelevanceOracle,
    TrafficConfig,
    run_simulation,
)
from .store import StoreError, load_snapshot
from .systems import sanity_check
from .baseline import tfidf_candidates


def _emit(obj: dict | list) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    config = load_config(args.config)
    gateway = Gateway.from_config(config)
    app = create_app(gateway)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def _cmd_validate_run(args: argparse.Namespace) -> int:
    known_qids = None
    known_docs = None
    if args.queries:
        known_qids = {str(q.qid) for q in parse_head_queries(args.queries)}
    if args.documents:
        known_docs = {d.doc_id for d in parse_documents(args.documents, args.schema)}
    report = validate_run_file(args.run, known_qids=known_qids, known_doc_ids=known_docs)
    _emit(report.to_dict())
    return 0 if report.ok else 2


def _pick_task(config: GatewayConfig, override: str | None) -> TaskType:
    if override:
        return TaskType(override)
    if config.default_task is not None:
        return config.default_task
    return TaskType.RANKING


def _cmd_simulate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    task = _pick_task(config, args.task)

    if task is TaskType.RANKING:
        if config.corpora.head_queries is None:
            raise ConfigError("simulation needs a head-query file in the config corpora")
        queries = parse_head_queries(config.corpora.head_queries)
        queries.sort(key=lambda q: (-q.freq, q.qid))
        vocabulary = [q.qstr for q in queries]
    else:
        if config.corpora.publications is None:
            raise ConfigError("simulation needs a publications corpus in the config corpora")
        vocabulary = [d.doc_id for d in parse_documents(config.corpora.publications, "social-science")]

    adapters = build_adapters(config)
    baseline_entry = next(
        (e for e in config.systems_for(task) if e.descriptor.is_baseline), None
    )
    if baseline_entry is None:
        raise ConfigError(f"no baseline system registered for task {task.value!r}")
    oracle = RelevanceOracle(adapters[baseline_entry.descriptor.name], args.relevant_top_m)

    traffic = TrafficConfig(
        sessions=args.sessions,
        queries_per_session=args.queries_per_session,
        zipf_exponent=args.zipf,
        seed=args.seed,
        task=task,
        relevant_top_m=args.relevant_top_m,
    )
    model = ClickModel.for_task(
        task,
        decay=args.decay,
        **(
            {}
            if args.attract is None
            else {"attract_exp": args.attract, "attract_base": args.attract}
        ),
    )

    if args.endpoint:
        driver = HttpDriver(args.endpoint)
    else:
        gateway = Gateway.from_config(config)
        driver = InProcessDriver(gateway)

    summary = run_simulation(driver, traffic, model, vocabulary, oracle)
    payload = summary.to_dict()
    if not args.endpoint:
        payload["feedback_log"] = config.feedback_log
    _emit(payload)
    return 0 if summary.aborted is None else 1


def _cmd_evaluate(args: argparse.Namespace) -> int:
    weights = load_weights(args.weights) if args.weights else RewardWeights()
    snapshot = load_snapshot(args.feedback)
    report = aggregate_round(snapshot, weights)
    stats = query_stats(snapshot)
    dists = distributions(snapshot)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = {
        "round_report.json": json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
        "round_report.csv": round_report_csv(report),
        "reward_report.csv": reward_report_csv(report, weights),
        "query_stats.json": json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n",
        "distributions.json": json.dumps(dists.to_dict(), indent=2, sort_keys=True) + "\n",
    }
    for name, content in written.items():
        (out / name).write_text(content, encoding="utf-8")
    _emit({"written": sorted(written), "out": str(out)})
    return 0


def _cmd_make_candidates(args: argparse.Namespace) -> int:
    publications = parse_documents(args.publications, "social-science")
    datasets = parse_documents(args.datasets, "social-science")
    if not publications:
        raise IngestError(args.publications, 0, "publications corpus is empty")
    if not datasets:
        raise IngestError(args.datasets, 0, "datasets corpus is empty")
    fields = tuple(args.fields.split(",")) if args.fields else (
        "title",
        "title_en",
        "abstract",
        "abstract_en",
        "topic",
        "topic_en",
    )
    lists = tfidf_candidates(publications, datasets, fields, args.top_k)
    write_candidates(
        (lists[doc.doc_id] for doc in publications if lists[doc.doc_id].candidates),
        TaskType.RECOMMENDATION,
        args.out,
    )
    _emit({"publications": len(publications), "datasets": len(datasets), "out": args.out})
    return 0


def _cmd_sanity_check(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    adapters = build_adapters(config)
    if args.system not in adapters:
        raise ConfigError(f"unknown system {args.system!r}; registered: {sorted(adapters)}")
    report = sanity_check(adapters[args.system], args.probe, page=args.page, rpp=args.rpp)
    _emit(report.to_dict())
    return 0 if report.passed else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="interlab", description="Interleaved living-lab evaluation gateway and tooling."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the gateway service")
    p.add_argument("--config", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("validate-run", help="check a six-column run file")
    p.add_argument("--run", required=True)
    p.add_argument("--queries", help="head-query file; enables unknown-qid warnings")
    p.add_argument("--documents", help="corpus file; enables unknown-document warnings")
    p.add_argument("--schema", default="literature", choices=["literature", "social-science"])
    p.set_defaults(func=_cmd_validate_run)

    p = sub.add_parser("simulate", help="drive synthetic traffic against a gateway")
    p.add_argument("--config", required=True)
    p.add_argument("--endpoint", help="base URL of a running gateway; default is in-process")
    p.add_argument("--sessions", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--task", choices=[t.value for t in TaskType])
    p.add_argument("--zipf", type=float, default=1.0)
    p.add_argument("--queries-per-session", type=float, default=2.0)
    p.add_argument("--decay", type=float, default=0.7)
    p.add_argument("--attract", type=float, help="override both teams' attractiveness")
    p.add_argument("--relevant-top-m", type=int, default=3)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("evaluate", help="compute round reports from a feedback log")
    p.add_argument("--feedback", required=True)
    p.add_argument("--weights", help="weights file (YAML/JSON)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("make-candidates", help="tf-idf candidate lists for recommendations")
    p.add_argument("--publications", required=True)
    p.add_argument("--datasets", required=True)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--fields", help="comma-separated text fields")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_make_candidates)

    p = sub.add_parser("sanity-check", help="probe one registered system")
    p.add_argument("--config", required=True)
    p.add_argument("--system", required=True)
    p.add_argument("--probe", action="append", required=True, help="repeatable probe request")
    p.add_argument("--page", type=int, default=0)
    p.add_argument("--rpp", type=int, default=10)
    p.set_defaults(func=_cmd_sanity_check)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, IngestError, StoreError, GatewayError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
