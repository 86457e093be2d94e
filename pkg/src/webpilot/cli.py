"""``agent`` command line.

Exit codes: 0 success, 1 task-level failures, 2 configuration error,
3 fatal runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
from dataclasses import replace
from datetime import date
from pathlib import Path
from typing import Any

from .bench import BenchmarkTask, CorpusError, load_corpus, render_report_table, run_benchmark
from .config import AppConfig, ConfigError, EndpointConfig, load_config
from .core import Task
from .env import Environment, SimEnv, WorldValidationError, load_world
from .fbc import export_fbc, load_traces, write_fbc, write_traces
from .gateway import HttpBackend, MockBackend, ModelClient, ledger_report
from .grounding import convert_records, evaluate_grounding, load_dataset, model_locator, render_table
from .localizer import LocalizerConfig
from .orchestrator import Modules, run_episode

log = logging.getLogger("webpilot")

EXIT_OK, EXIT_TASK_FAILURES, EXIT_CONFIG, EXIT_FATAL = 0, 1, 2, 3


# --- wiring ----------------------------------------------------------------


def _mock_for(app: AppConfig, script: str | None, task_id: str | None) -> MockBackend:
    if not script:
        raise ConfigError("mock backend selected but no mock_script configured (use --mock or set base_url)")
    path = app.resolve(script)
    if path.is_dir():
        if task_id is None:
            raise ConfigError(f"mock script {path} is a directory; a task id is needed to pick a file")
        path = path / f"{task_id}.json"
    if not path.exists():
        raise ConfigError(f"mock script {path} does not exist")
    return MockBackend.from_file(path)


class ClientFactory:
    """Builds one client per role. HTTP backends are shared; mock scripts are
    instantiated per task so every episode replays its own script."""

    def __init__(self, app: AppConfig, mock_override: str | None = None) -> None:
        self.app = app
        self.mock_override = mock_override
        self._http: dict[tuple[str, str | None], HttpBackend] = {}

    def endpoint(self, role: str) -> EndpointConfig:
        ep = self.app.models[role]
        if self.mock_override:
            ep = replace(ep, base_url=None, mock_script=self.mock_override)
        return ep

    def http_backends(self) -> list[HttpBackend]:
        for role in self.app.models:
            ep = self.endpoint(role)
            if ep.backend == "http":
                self._backend(ep, {}, None)
        return list(self._http.values())

    def _backend(self, ep: EndpointConfig, mocks: dict[str, MockBackend], task_id: str | None):
        if ep.backend == "http":
            key = (ep.base_url or "", ep.api_key_env_var)
            if key not in self._http:
                self._http[key] = HttpBackend(ep.base_url or "", ep.api_key_env_var)
            return self._http[key]
        script = ep.mock_script or ""
        if script not in mocks:
            mocks[script] = _mock_for(self.app, ep.mock_script, task_id)
        return mocks[script]

    def clients(self, task_id: str | None = None) -> dict[str, ModelClient]:
        mocks: dict[str, MockBackend] = {}
        out = {}
        for role in ("policy", "localizer", "validator", "judge"):
            ep = self.endpoint(role)
            out[role] = ModelClient(ep.model_id, self._backend(ep, mocks, task_id), self.app.pricing)
        return out


def build_env(app: AppConfig, world: str | Path | None) -> Environment:
    if app.driver == "sim" or world is not None:
        if world is None:
            raise ConfigError("sim driver needs a world file (--sim)")
        return load_world(world, app.env)
    if app.driver == "webdriver":
        from .env.webdriver import WebDriverEnv

        return WebDriverEnv(app.env_endpoint or "", app.env)
    from .env.cdp import CdpEnv, WebSocketSession

    return CdpEnv(WebSocketSession.for_endpoint(app.env_endpoint or ""), app.env)


def _world_for(bt: BenchmarkTask, sim: str | None, corpus_dir: Path) -> Path | None:
    if bt.world:
        p = Path(bt.world)
        return p if p.is_absolute() else corpus_dir / p
    if sim is None:
        return None
    p = Path(sim)
    return p / f"{bt.id}.json" if p.is_dir() else p


def _modules(app: AppConfig, clients: dict[str, ModelClient], env: Environment, run_id: str) -> Modules:
    modules = Modules(
        env=env,
        policy_client=clients["policy"],
        localizer_client=clients["localizer"],
        validator_client=clients["validator"],
        localizer=LocalizerConfig(max_edge=max(app.env.viewport)),
    )
    modules.ledger.id = run_id
    return modules


def _health(factory: ClientFactory) -> None:
    for backend in factory.http_backends():
        backend.check_health()


def _apply_overrides(app: AppConfig, args: argparse.Namespace) -> AppConfig:
    run = app.run
    if getattr(args, "max_steps", None):
        run = replace(run, max_steps=args.max_steps)
    if getattr(args, "max_attempts", None):
        run = replace(run, max_attempts=args.max_attempts)
    parallel = getattr(args, "parallel", None) or app.parallel
    return replace(app, run=run, parallel=parallel)


# --- commands --------------------------------------------------------------


def cmd_run(args: argparse.Namespace) -> int:
    app = _apply_overrides(load_config(args.config, check_env=not args.mock), args)
    factory = ClientFactory(app, args.mock)
    if app.live and not args.mock:
        _health(factory)
    task = Task(id="cli", website=args.url, instruction=args.task)
    clients = factory.clients(task.id)
    modules = _modules(app, clients, build_env(app, args.sim), task.id)
    try:
        result = run_episode(task, app.run, modules)
    finally:
        modules.env.close()
    traces_dir = args.traces or app.traces_dir
    if traces_dir:
        write_traces(traces_dir, [result.trace], modules.images)
    report = ledger_report(modules.ledger)
    print(f"answer: {result.answer}")
    print(f"validated: {result.validated}  attempts: {result.attempts_used}  steps: {result.steps_total}")
    print(f"cost: ${report.agent_total:.6f}")
    if result.error:
        print(f"error: {result.error}", file=sys.stderr)
    return EXIT_OK if result.validated else EXIT_TASK_FAILURES


def cmd_bench(args: argparse.Namespace) -> int:
    app = _apply_overrides(load_config(args.config, check_env=not args.mock), args)
    corpus = load_corpus(args.corpus)
    corpus_dir = Path(args.corpus).resolve().parent
    factory = ClientFactory(app, args.mock)
    if app.live and not args.mock:
        _health(factory)
    traces_dir = args.traces or app.traces_dir
    bound: dict[str, tuple[Modules, ModelClient]] = {}
    lock = threading.Lock()

    def make(bt: BenchmarkTask) -> Modules:
        clients = factory.clients(bt.id)
        modules = _modules(app, clients, build_env(app, _world_for(bt, args.sim, corpus_dir)), bt.id)
        with lock:
            bound[bt.id] = (modules, clients["judge"])
        return modules

    def keep(bt: BenchmarkTask, result: Any) -> None:
        modules = bound[bt.id][0]
        modules.env.close()
        if traces_dir:
            with lock:
                write_traces(app.resolve(traces_dir), [result.trace], modules.images)

    today = date.fromisoformat(args.today) if args.today else None
    report = run_benchmark(
        corpus,
        app.run,
        make,
        lambda bt: bound[bt.id][1],
        today=today,
        parallel=app.parallel,
        on_result=keep,
    )
    m = app.models
    report.label = {role: m[role].model_id for role in ("policy", "localizer", "validator")}
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2))
    print(render_report_table(report))
    print(f"\naccuracy {100 * report.accuracy:.1f}%  avg cost ${report.avg_cost_usd:.4f}/task  "
          f"judge cost ${report.judge_cost_usd:.4f}")
    return EXIT_OK if report.successes == report.total else EXIT_TASK_FAILURES


def cmd_ground(args: argparse.Namespace) -> int:
    app = load_config(args.config, check_env=not args.mock)
    factory = ClientFactory(app, args.mock)
    ep = factory.endpoint("localizer")
    if args.model:
        ep = replace(ep, model_id=args.model)
    if ep.model_id not in app.pricing:
        raise ConfigError(f"model {ep.model_id!r} has no price")
    backend = factory._backend(ep, {}, None)
    if isinstance(backend, HttpBackend):
        backend.check_health()
    client = ModelClient(ep.model_id, backend, app.pricing)
    dataset = load_dataset(args.dataset)
    report = evaluate_grounding(dataset, model_locator(client), root=args.dataset, parallel=args.parallel or 1)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps({"model": ep.model_id, **report.to_dict()}, indent=2))
    print(render_table({ep.model_id: report}))
    return EXIT_OK


def cmd_export_fbc(args: argparse.Namespace) -> int:
    traces, images = load_traces(args.traces)
    export = export_fbc(traces, images, require_judge=args.require_judge, max_steps=args.max_steps or 30)
    write_fbc(export, args.out, images)
    print(f"{len(export.samples)} samples from {len(traces)} traces ({len(export.warnings)} skipped)")
    return EXIT_OK


def cmd_convert_grounding(args: argparse.Namespace) -> int:
    src = Path(args.src)
    if src.suffix == ".parquet":
        import pandas as pd

        rows: Any = pd.read_parquet(src).to_dict("records")
    else:
        rows = [json.loads(line) for line in src.read_text().split("\n") if line.strip()]
        for row in rows:
            if isinstance(row.get("image"), str) and not Path(row["image"]).is_absolute():
                row["image"] = str(src.parent / row["image"])
    n = convert_records(rows, args.out)
    print(f"wrote {n} examples to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agent", description="Screenshot-only web agent")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def budgets(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="TOML or JSON config file")
        p.add_argument("--max-steps", type=int)
        p.add_argument("--max-attempts", type=int)
        p.add_argument("--parallel", type=int)
        p.add_argument("--sim", help="world file (or directory of <task id>.json worlds)")
        p.add_argument("--mock", help="mock script for every model (file or directory of <task id>.json)")
        p.add_argument("--traces", help="directory to store episode traces in")

    p = sub.add_parser("run", help="run a single task")
    p.add_argument("--task", required=True)
    p.add_argument("--url", required=True)
    budgets(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="run a benchmark corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out")
    p.add_argument("--today", help="reference date for date shifting (YYYY-MM-DD)")
    budgets(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ground", help="evaluate click accuracy on a grounding dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model")
    p.add_argument("--config")
    p.add_argument("--mock")
    p.add_argument("--parallel", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ground)

    p = sub.add_parser("export-fbc", help="export successful traces as training samples")
    p.add_argument("--traces", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--require-judge", action="store_true")
    p.add_argument("--max-steps", type=int)
    p.set_defaults(func=cmd_export_fbc)

    p = sub.add_parser("convert-grounding", help="convert released grounding rows (jsonl/parquet)")
    p.add_argument("--src", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert_grounding)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CorpusError, WorldValidationError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("fatal", exc_info=True)
        print(f"fatal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
