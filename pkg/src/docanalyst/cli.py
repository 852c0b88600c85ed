"""Command-line surface: gen, ingest, ask, baseline, eval, report.

Exit codes: 0 success, 2 configuration error, 3 phase failure,
4 evaluation incomplete (instances without runs).
"""

from __future__ import annotations

import argparse
import json
import logging
import shlex
import sys
from pathlib import Path

from . import benchgen, orchestrator
from .corpus import load_manifest
from .errors import ConfigError, CorpusError, DocAnalystError, PhaseError
from .extractor import RetrievalConfig
from .normalizer import NormalizeConfig

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PHASE = 3
EXIT_EVAL_INCOMPLETE = 4


def _add_provider_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--provider-mode", default="reference", choices=orchestrator.PROVIDER_MODES)
    parser.add_argument("--plan-fixtures", help="scripted planner fixture file (reference mode)")
    parser.add_argument("--code-fixtures", help="scripted coder fixture file (reference mode)")
    parser.add_argument("--script-fixtures", help="fixture file for all roles (scripted mode)")
    parser.add_argument("--http-endpoint", help="chat-completions URL (http mode, all roles)")
    parser.add_argument("--http-model", default="", help="model name for http mode")
    parser.add_argument("--http-auth-env", default="", help="env var holding the bearer token")


def _add_run_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--top-k", type=int, default=3, help="chunks per reader call")
    parser.add_argument("--chunk-chars", type=int, default=4000)
    parser.add_argument("--overlap-chars", type=int, default=200)
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--sample-size", type=int, default=4)
    parser.add_argument("--parallelism", type=int, default=8)
    parser.add_argument("--wall-ms", type=int, default=30_000)
    parser.add_argument("--memory-mb", type=int, default=512)
    parser.add_argument("--noise-ratio", type=float, default=0.0)
    parser.add_argument("--noise-seed", type=int, default=0)
    parser.add_argument("--repair-retries", type=int, default=2)
    parser.add_argument(
        "--sandbox-worker-cmd",
        help='external sandbox worker command, e.g. "python3 -m sandbox_runner"',
    )


def _http_providers(args):
    endpoint = getattr(args, "http_endpoint", None)
    if not endpoint:
        return {}
    from docanalyst.gateway import ProviderConfig

    return {
        "default": ProviderConfig(
            endpoint=endpoint, model_name=args.http_model, auth_env_var=args.http_auth_env
        )
    }


def _run_config(args, run_dir: str, run_id: str, mode: str) -> orchestrator.RunConfig:
    return orchestrator.RunConfig(
        run_id=run_id,
        run_dir=run_dir,
        mode=mode,
        provider_mode=args.provider_mode,
        plan_fixtures=getattr(args, "plan_fixtures", None),
        code_fixtures=getattr(args, "code_fixtures", None),
        script_fixtures=getattr(args, "script_fixtures", None),
        retrieval=RetrievalConfig(
            top_k=args.top_k, chunk_chars=args.chunk_chars, overlap_chars=args.overlap_chars
        ),
        normalize=NormalizeConfig(
            batch_size=args.batch_size, sample_size=args.sample_size,
            repair_retries=args.repair_retries,
        ),
        wall_ms=args.wall_ms,
        memory_mb=args.memory_mb,
        parallelism=args.parallelism,
        repair_retries=args.repair_retries,
        noise_ratio=args.noise_ratio,
        noise_seed=args.noise_seed,
        budget_multiplier=getattr(args, "budget_multiplier", 1.0),
        metadata_in_prompt=getattr(args, "metadata_in_prompt", False),
        sandbox_worker_cmd=shlex.split(args.sandbox_worker_cmd) if args.sandbox_worker_cmd else None,
        http_providers=_http_providers(args),
    )


def cmd_gen(args) -> int:
    summary = benchgen.generate_benchmark(
        out_dir=args.out,
        companies=args.companies,
        years=tuple(args.years),
        per_family=args.per_family,
        seed=args.seed,
        filler_paragraphs=args.filler,
    )
    print(
        f"generated {summary.documents} documents, {summary.instances} instances "
        f"({len(summary.families)} families) under {summary.out_dir}"
    )
    return EXIT_OK


def cmd_ingest(args) -> int:
    corpus = load_manifest(args.manifest)
    print(
        f"manifest OK: {len(corpus.documents)} documents, "
        f"schema fields {', '.join(corpus.schema.field_names)}"
    )
    return EXIT_OK


def _instances_for_ask(args):
    instances = benchgen.load_benchmark(args.benchmark)
    if args.all:
        return instances
    if not args.instance_id:
        raise ConfigError("--benchmark needs --instance-id or --all")
    chosen = [i for i in instances if i.instance_id == args.instance_id]
    if not chosen:
        raise ConfigError(f"no instance {args.instance_id!r} in {args.benchmark}")
    return chosen


def cmd_ask(args) -> int:
    corpus = load_manifest(args.manifest)
    if args.benchmark:
        instances = _instances_for_ask(args)
        runs_dir = Path(args.runs_dir or "runs")
        for instance in instances:
            cfg = _run_config(
                args, str(runs_dir / instance.instance_id), instance.instance_id, "workflow"
            )
            answer = orchestrator.run_benchmark_instance(instance, corpus, cfg, resume=args.resume)
            print(f"{instance.instance_id}: {answer.text}")
        return EXIT_OK
    if not args.question or not args.run_dir:
        raise ConfigError("ask needs either --benchmark or both --question and --run-dir")
    cfg = _run_config(args, args.run_dir, args.run_id or "adhoc", "workflow")
    answer = orchestrator.run_workflow(args.question, corpus, cfg, resume=args.resume)
    print(answer.text)
    return EXIT_OK


def cmd_baseline(args) -> int:
    corpus = load_manifest(args.manifest)
    cfg = _run_config(args, args.run_dir, args.run_id or "baseline", "baseline")
    answer = orchestrator.run_baseline(args.question, corpus, cfg)
    print(answer.answer)
    return EXIT_OK


def cmd_eval(args) -> int:
    instances = benchgen.load_benchmark(args.benchmark)
    corpus = load_manifest(args.manifest) if args.manifest else None
    cfg = orchestrator.RunConfig(
        run_id="eval", run_dir=str(Path(args.runs_dir) / "eval"), provider_mode=args.provider_mode,
        script_fixtures=getattr(args, "script_fixtures", None),
        http_providers=_http_providers(args),
    )
    gateways = orchestrator.build_gateways(
        cfg, corpus if corpus is not None else _empty_corpus()
    )
    report, missing = orchestrator.run_eval(
        instances, args.runs_dir, gateways["judge"], mode=args.mode, eval_dir=args.out
    )
    print(orchestrator.render_report(report))
    return EXIT_EVAL_INCOMPLETE if missing else EXIT_OK


def _empty_corpus():
    from .corpus import Corpus, MetadataSchema

    return Corpus(schema=MetadataSchema.default(), documents=[])


def cmd_report(args) -> int:
    payload = json.loads(Path(args.report).read_text(encoding="utf-8"))
    overall = payload["overall"]
    print(f"n = {payload['n']}  mode = {payload['mode']}")
    for name, metrics in [("overall", overall)] + sorted(payload.get("tiers", {}).items()):
        print(
            f"{name:<10} Acc_process={metrics['process_accuracy']:.4f} "
            f"Acc_final={metrics['final_accuracy']:.4f} Acc_full={metrics['full_accuracy']:.4f}"
        )
    for flag in payload.get("flags", []):
        print(f"flag: {flag}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="docanalyst",
        description="Analytical QA over metadata-indexed document collections",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--companies", type=int, default=25)
    p.add_argument("--years", nargs="+", default=["2020", "2021", "2022", "2023"])
    p.add_argument("--per-family", type=int, default=8)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--filler", type=int, default=2)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("ingest", help="validate a corpus manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("ask", help="run the multi-agent workflow")
    p.add_argument("--manifest", required=True)
    p.add_argument("--question")
    p.add_argument("--run-dir")
    p.add_argument("--run-id")
    p.add_argument("--benchmark", help="benchmark file: run stored instances instead")
    p.add_argument("--instance-id")
    p.add_argument("--all", action="store_true", help="run every benchmark instance")
    p.add_argument("--runs-dir")
    p.add_argument("--resume", action="store_true")
    _add_provider_args(p)
    _add_run_args(p)
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("baseline", help="run the flat-RAG baseline")
    p.add_argument("--manifest", required=True)
    p.add_argument("--question", required=True)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--run-id")
    p.add_argument("--budget-multiplier", type=float, default=1.0)
    p.add_argument("--metadata-in-prompt", action="store_true")
    _add_provider_args(p)
    _add_run_args(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", help="judge benchmark runs and aggregate metrics")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--runs-dir", required=True)
    p.add_argument("--manifest", help="needed for the reference judge on oracle corpora")
    p.add_argument("--mode", default="workflow", choices=["workflow", "baseline"])
    p.add_argument("--out", help="eval output directory")
    _add_provider_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="pretty-print a report file")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, CorpusError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PhaseError as exc:
        print(f"phase failure: {exc}", file=sys.stderr)
        return EXIT_PHASE
    except DocAnalystError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PHASE


if __name__ == "__main__":
    sys.exit(main())
