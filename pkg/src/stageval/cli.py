"""Command line interface for the evaluation pipeline.

Configuration comes from four layers, strongest last to weakest:
command-line flags, then STAGEVAL_* environment variables, then a
--config file (TOML or JSON), then built-in defaults. Every command
prints human output to stdout, diagnostics to stderr, and exits non-zero
on any error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Any, Optional, Sequence

try:
    import tomllib
except ImportError:
    import tomli as tomllib

from .engine import Engine
from .errors import ConfigurationError, StagevalError
from .gateway import DiskCache, Gateway, HttpProvider, MockProvider, ProviderConfig
from .ingest import load_dataset
from .model import Stage
from .store import RunStore, read_json

logger = logging.getLogger(__name__)

DEFAULTS: dict[str, Any] = {
    "store": "./store",
    "language": "en",
    "seed": None,
    "provider.base_url": "",
    "provider.model": "",
    "provider.temperature": 0.0,
    "provider.api_key_env": "STAGEVAL_API_KEY",
    "provider.timeout": 120.0,
    "provider.max_retries": 4,
    "max_concurrency": 4,
    "cache_dir": "",
    "mock_fixtures": "",
    "auth_token": "",
    "host": "127.0.0.1",
    "port": 8350,
}

_ENV_KEYS = {
    "STAGEVAL_STORE": "store",
    "STAGEVAL_LANGUAGE": "language",
    "STAGEVAL_SEED": "seed",
    "STAGEVAL_BASE_URL": "provider.base_url",
    "STAGEVAL_MODEL": "provider.model",
    "STAGEVAL_TEMPERATURE": "provider.temperature",
    "STAGEVAL_API_KEY_ENV": "provider.api_key_env",
    "STAGEVAL_TIMEOUT": "provider.timeout",
    "STAGEVAL_MAX_RETRIES": "provider.max_retries",
    "STAGEVAL_MAX_CONCURRENCY": "max_concurrency",
    "STAGEVAL_CACHE_DIR": "cache_dir",
    "STAGEVAL_MOCK_FIXTURES": "mock_fixtures",
    "STAGEVAL_AUTH_TOKEN": "auth_token",
    "STAGEVAL_HOST": "host",
    "STAGEVAL_PORT": "port",
}

_INT_KEYS = {"seed", "provider.max_retries", "max_concurrency", "port"}
_FLOAT_KEYS = {"provider.temperature", "provider.timeout"}

_FLAG_KEYS = {
    "store": "store",
    "language": "language",
    "seed": "seed",
    "base_url": "provider.base_url",
    "model": "provider.model",
    "temperature": "provider.temperature",
    "max_concurrency": "max_concurrency",
    "cache_dir": "cache_dir",
    "mock_fixtures": "mock_fixtures",
    "auth_token": "auth_token",
    "host": "host",
    "port": "port",
}


def _flatten(prefix: str, obj: Any, out: dict[str, Any]) -> None:
    if isinstance(obj, dict):
        for key, value in obj.items():
            _flatten(f"{prefix}.{key}" if prefix else str(key), value, out)
    else:
        out[prefix] = obj


def _coerce(key: str, value: Any) -> Any:
    if value is None:
        return None
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"config key {key}: {value!r} is not a number") from None
    return value


def load_config_file(path: str) -> dict[str, Any]:
    try:
        if path.endswith(".json"):
            with open(path, "r", encoding="utf-8") as f:
                raw = json.load(f)
        else:
            with open(path, "rb") as f:
                raw = tomllib.load(f)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path!r}: {exc}") from exc
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigurationError(f"config {path!r} does not parse: {exc}") from exc
    flat: dict[str, Any] = {}
    _flatten("", raw, flat)
    unknown = sorted(set(flat) - set(DEFAULTS))
    if unknown:
        raise ConfigurationError(f"unknown config keys in {path}: {unknown}")
    return flat


def resolve_config(args: argparse.Namespace) -> dict[str, Any]:
    """Defaults, then config file, then environment, then flags."""
    cfg = dict(DEFAULTS)
    config_path = getattr(args, "config", None) or os.environ.get("STAGEVAL_CONFIG")
    if config_path:
        for key, value in load_config_file(config_path).items():
            cfg[key] = _coerce(key, value)
    for env_name, key in _ENV_KEYS.items():
        if env_name in os.environ:
            cfg[key] = _coerce(key, os.environ[env_name])
    for flag, key in _FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg[key] = _coerce(key, value)
    return cfg


def build_gateway(cfg: dict[str, Any]) -> Gateway:
    if cfg["mock_fixtures"]:
        fixtures = read_json(str(cfg["mock_fixtures"]))
        provider: Any = MockProvider(fixtures)
    else:
        if not cfg["provider.base_url"] or not cfg["provider.model"]:
            raise ConfigurationError(
                "provider.base_url and provider.model are required "
                "(or set mock_fixtures for offline runs)"
            )
        provider = HttpProvider(
            ProviderConfig(
                base_url=str(cfg["provider.base_url"]),
                model=str(cfg["provider.model"]),
                temperature=float(cfg["provider.temperature"]),
                api_key_env=str(cfg["provider.api_key_env"]),
                timeout=float(cfg["provider.timeout"]),
                max_retries=int(cfg["provider.max_retries"]),
            )
        )
    cache = DiskCache(str(cfg["cache_dir"])) if cfg["cache_dir"] else None
    return Gateway(provider, cache=cache, max_concurrency=int(cfg["max_concurrency"]))


def build_engine(cfg: dict[str, Any], store: Optional[RunStore] = None) -> Engine:
    store = store or RunStore(str(cfg["store"]))
    seed = cfg["seed"]
    return Engine(store=store, gateway=build_gateway(cfg), seed=seed)


# commands


def cmd_ingest(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    dataset = load_dataset(args.manifest)
    store = RunStore(str(cfg["store"]))
    store.save_dataset(dataset)
    print(
        f"ingested {len(dataset.problems)} problems, "
        f"{len(dataset.reports)} reports into {cfg['store']}"
    )
    return 0


def cmd_decompose(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    engine = build_engine(cfg)
    try:
        engine.store.load_run(args.run)
    except LookupError:
        engine.create_run(
            args.run,
            args.problem,
            language=str(cfg["language"]),
            review_mode=args.review,
        )
    engine.run_decompose(args.run)
    for s in engine.store.load_subtasks(args.run):
        print(f"{s.ordinal}. [{s.status.value}] {s.description}")
    return 0


def cmd_rubric(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    engine = build_engine(cfg)
    rubrics = engine.run_rubrics(args.run)
    for subtask_id in sorted(rubrics):
        rubric = rubrics[subtask_id]
        stages = ", ".join(s.value for s in rubric.scored_stages())
        print(f"{subtask_id}: {len(rubric.criteria())} criteria over {stages}")
    return 0


def cmd_judge(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    engine = build_engine(cfg)
    profiles = engine.run_judge(args.run, args.rater)
    for p in profiles:
        print(f"{p.report_id} / {p.rater_id}: report score {p.report_score:.1f}")
    if args.baseline:
        for b in engine.run_baseline(args.run, args.rater):
            print(f"{b.report_id} / {b.rater_id}: baseline average {b.average:.1f}")
    return 0


def cmd_aggregate(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    engine = build_engine(cfg)
    means = engine.run_aggregate(args.run)
    for model in sorted(means):
        for stage in sorted(means[model]):
            print(f"{model} {stage.value}: {means[model][stage]:.1f}")
    return 0


def cmd_icc(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    engine = build_engine(cfg)
    stage = Stage.from_name(args.stage) if args.stage else None
    payload = engine.run_icc(
        args.run,
        scheme=args.scheme,
        level=args.level,
        stage=stage,
        expert_collapse=args.expert_collapse,
    )
    print(json.dumps(payload, sort_keys=True, indent=2))
    return 0


def cmd_failures(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    engine = build_engine(cfg)
    summary = engine.run_failures(
        args.run, threshold=args.threshold, rater_id=args.rater
    )
    print(json.dumps(summary, sort_keys=True, indent=2))
    return 0


def cmd_serve(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    import uvicorn

    from .service import create_app

    engine = build_engine(cfg)
    for run in engine.store.list_runs():
        replayed = engine.store.recover(run.run_id)
        if replayed:
            logger.info("run %s: replayed %d journal entries", run.run_id, replayed)
    app = create_app(
        engine,
        auth_token=str(cfg["auth_token"]),
        fixture_mode=bool(cfg["mock_fixtures"]),
    )
    uvicorn.run(app, host=str(cfg["host"]), port=int(cfg["port"]), log_level="warning")
    return 0


def cmd_e2e(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    """Offline golden-path run from canned fixtures; fully deterministic."""
    fixtures_dir = args.fixtures
    plan = read_json(os.path.join(fixtures_dir, "e2e.json"))
    clock_value = plan.get("clock", "2000-01-01T00:00:00+00:00")
    store = RunStore(args.out or str(cfg["store"]), clock=lambda: clock_value)
    dataset = load_dataset(os.path.join(fixtures_dir, "manifest.json"))
    store.save_dataset(dataset)

    provider = MockProvider(read_json(os.path.join(fixtures_dir, "mock_fixtures.json")))
    engine = Engine(
        store=store, gateway=Gateway(provider, max_concurrency=1), seed=plan.get("seed")
    )
    run_id = plan["run_id"]
    engine.create_run(
        run_id,
        plan["problem_id"],
        language=plan.get("language", "en"),
        review_mode=False,
    )
    engine.run_decompose(run_id)
    engine.run_rubrics(run_id)
    engine.run_judge(run_id, plan["raters"])
    engine.run_baseline(run_id, plan["raters"])
    engine.run_aggregate(run_id)
    engine.run_icc(run_id, scheme="ours", level="report")
    engine.run_failures(run_id, threshold=plan.get("threshold", 8.0))
    run = store.load_run(run_id)
    print(f"e2e run {run_id} finished in state {run.state} at {store.root}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stageval",
        description="Stage-wise evaluation of machine-generated modeling reports",
    )
    parser.add_argument("--config", help="TOML or JSON config file")
    parser.add_argument("--store", help="store directory")
    parser.add_argument("--language", help="prompt language (en or zh)")
    parser.add_argument("--seed", type=int, help="provider seed")
    parser.add_argument("--base-url", dest="base_url", help="provider base URL")
    parser.add_argument("--model", help="provider model name")
    parser.add_argument("--temperature", type=float, help="sampling temperature")
    parser.add_argument(
        "--max-concurrency", dest="max_concurrency", type=int,
        help="parallel provider calls",
    )
    parser.add_argument("--cache-dir", dest="cache_dir", help="response cache directory")
    parser.add_argument(
        "--mock-fixtures", dest="mock_fixtures",
        help="JSON fixtures file; replaces the HTTP provider",
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load a dataset manifest into the store")
    p.add_argument("--manifest", required=True)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("decompose", help="split a problem into subtasks")
    p.add_argument("--run", required=True)
    p.add_argument("--problem", required=True)
    p.add_argument(
        "--review", action="store_true",
        help="leave subtasks pending review instead of auto-approving",
    )
    p.set_defaults(fn=cmd_decompose)

    p = sub.add_parser("rubric", help="generate rubrics for approved subtasks")
    p.add_argument("--run", required=True)
    p.set_defaults(fn=cmd_rubric)

    p = sub.add_parser("judge", help="score reports criterion by criterion")
    p.add_argument("--run", required=True)
    p.add_argument("--rater", action="append", required=True)
    p.add_argument("--baseline", action="store_true", help="also run baseline scoring")
    p.set_defaults(fn=cmd_judge)

    p = sub.add_parser("aggregate", help="write stage means and distributions")
    p.add_argument("--run", required=True)
    p.set_defaults(fn=cmd_aggregate)

    p = sub.add_parser("icc", help="inter-rater agreement")
    p.add_argument("--run", required=True)
    p.add_argument("--scheme", choices=["ours", "baseline"], default="ours")
    p.add_argument("--level", choices=["report", "criterion"], default="report")
    p.add_argument("--stage", help="restrict criterion level to one stage")
    p.add_argument(
        "--expert-collapse", dest="expert_collapse",
        choices=["rater_id", "mean"], default="rater_id",
    )
    p.set_defaults(fn=cmd_icc)

    p = sub.add_parser("failures", help="mine failure causes from low stage scores")
    p.add_argument("--run", required=True)
    p.add_argument("--threshold", type=float, default=8.0)
    p.add_argument("--rater", help="rater whose profiles to mine")
    p.set_defaults(fn=cmd_failures)

    p = sub.add_parser("serve", help="run the HTTP review service")
    p.add_argument("--port", type=int)
    p.add_argument("--host")
    p.add_argument("--auth-token", dest="auth_token")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("e2e", help="deterministic offline run from fixtures")
    p.add_argument("--fixtures", required=True)
    p.add_argument("--out", help="store directory for this run")
    p.set_defaults(fn=cmd_e2e)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
        return args.fn(args, cfg)
    except (StagevalError, ValueError, LookupError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
