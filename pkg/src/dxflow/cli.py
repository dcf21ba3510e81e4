"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 validation failure, 3 runtime
failure. Failures also emit one machine-readable JSON object on stderr.
"""
from __future__ import annotations

import argparse
import json
import sys
import tempfile
from pathlib import Path

from .config import EngineConfig
from .engine import DEFAULT_RETRIEVE_K, Engine, load_cases
from .errors import EngineError, UsageError, ValidationError
from .evaluate import AblationSpec, render_report_table
from .model import PatientCase
from .planning import load_plan, save_plan, validate_plan
from .serde import dump_json_bytes, load_json


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dxflow", description="Diagnostic workflow engine")
    sub = parser.add_subparsers(dest="command", required=True)

    plan_cmd = sub.add_parser("plan", help="compile a diagnostic plan")
    plan_cmd.add_argument("disease")
    plan_cmd.add_argument("--criteria-dir", help="guideline corpus directory")
    plan_cmd.add_argument("--query", help="retrieval query override")
    plan_cmd.add_argument("--k", type=int, default=DEFAULT_RETRIEVE_K)
    plan_cmd.add_argument("--registry", help="tool registry JSON (default: packaged)")
    plan_cmd.add_argument("--backend", choices=["llm", "template"], default="template")
    plan_cmd.add_argument("--config", help="engine config JSON")
    plan_cmd.add_argument("--out", required=True)

    diag_cmd = sub.add_parser("diagnose", help="run one case against a plan")
    diag_cmd.add_argument("--plan", required=True)
    diag_cmd.add_argument("--case", required=True)
    diag_cmd.add_argument("--decider", choices=["moe", "llm"], default="moe")
    diag_cmd.add_argument("--config", help="engine config JSON")
    diag_cmd.add_argument("--out-dir", required=True)

    eval_cmd = sub.add_parser("eval", help="batch evaluation with metrics")
    eval_cmd.add_argument("--plan", required=True)
    eval_cmd.add_argument("--cases", required=True, help="directory of case JSON files")
    eval_cmd.add_argument("--decider", choices=["moe", "llm"], default="moe")
    eval_cmd.add_argument("--config", help="engine config JSON")
    eval_cmd.add_argument("--report", required=True)
    eval_cmd.add_argument("--emit-roc", help="write ROC points CSV here")
    eval_cmd.add_argument("--work-dir", help="case run directory root (default: temp)")

    ablate_cmd = sub.add_parser("ablate", help="indicator-subset ablation sweep")
    ablate_cmd.add_argument("--plan", required=True)
    ablate_cmd.add_argument("--cases", required=True)
    ablate_cmd.add_argument("--spec", required=True, help="ablation spec JSON")
    ablate_cmd.add_argument("--config", help="engine config JSON")
    ablate_cmd.add_argument("--report", required=True)
    ablate_cmd.add_argument("--work-dir", help="case run directory root (default: temp)")

    serve_cmd = sub.add_parser("serve", help="run the HTTP service")
    serve_cmd.add_argument("--config", required=True)
    serve_cmd.add_argument("--port", type=int, default=8080)
    serve_cmd.add_argument("--host", default="127.0.0.1")

    return parser


def _engine(config_path: str | None, registry_override: str | None = None) -> Engine:
    if config_path:
        config = EngineConfig.load(config_path)
    else:
        config = EngineConfig()
    if registry_override:
        from dataclasses import replace

        config = replace(config, registry_file=str(Path(registry_override).resolve()))
    return Engine(config)


def _cmd_plan(args) -> int:
    engine = _engine(args.config, args.registry)
    criteria = []
    if args.criteria_dir:
        criteria = engine.retrieve_criteria(args.disease, args.criteria_dir, args.query, args.k)
    plan = engine.build_plan(args.disease, backend=args.backend, criteria=criteria)
    report = validate_plan(plan, engine.registry)
    if not report.ok:
        from .errors import PlanInvalid

        raise PlanInvalid(report.findings)
    save_plan(args.out, plan, provenance=engine.provenance(plan))
    print(f"plan written to {args.out} ({len(plan.steps)} steps, "
          f"{len(plan.indicator_bindings)} indicators)")
    return 0


def _cmd_diagnose(args) -> int:
    engine = _engine(args.config)
    plan = load_plan(args.plan)
    report = validate_plan(plan, engine.registry)
    if not report.ok:
        from .errors import PlanInvalid

        raise PlanInvalid(report.findings)
    case_path = Path(args.case)
    case = PatientCase.from_dict(load_json(case_path.read_bytes()), base_dir=case_path.parent)
    out_dir = Path(args.out_dir) / case.case_id
    diagnosis, _ = engine.diagnose_case(case, plan, args.decider, out_dir)
    print(f"{case.case_id}: {diagnosis.label.value}"
          + (f" (risk {diagnosis.risk_score:.4f})" if diagnosis.risk_score is not None else ""))
    return 0


def _cmd_eval(args) -> int:
    engine = _engine(args.config)
    plan = load_plan(args.plan)
    cases = load_cases(args.cases)
    work_dir = args.work_dir or tempfile.mkdtemp(prefix="dxflow-eval-")
    report = engine.eval_batch(cases, plan, args.decider, work_dir, roc_path=args.emit_roc)
    Path(args.report).write_bytes(dump_json_bytes(report))
    print(render_report_table(report))
    return 0


def _cmd_ablate(args) -> int:
    engine = _engine(args.config)
    plan = load_plan(args.plan)
    cases = load_cases(args.cases)
    spec = AblationSpec.from_dict(load_json(Path(args.spec).read_bytes()))
    work_dir = args.work_dir or tempfile.mkdtemp(prefix="dxflow-ablate-")
    report = engine.run_ablation(cases, plan, spec, work_dir)
    Path(args.report).write_bytes(dump_json_bytes(report))
    print(render_report_table(report))
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    engine = _engine(args.config)
    app = create_app(engine)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


_COMMANDS = {
    "plan": _cmd_plan,
    "diagnose": _cmd_diagnose,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "serve": _cmd_serve,
}


def _emit_error(exc: Exception) -> None:
    doc = {"error": {"type": type(exc).__name__, "message": str(exc)}}
    print(json.dumps(doc, ensure_ascii=False), file=sys.stderr)


def cli_main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        _emit_error(exc)
        return 1
    except ValidationError as exc:
        _emit_error(exc)
        return 2
    except EngineError as exc:
        _emit_error(exc)
        return 3


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
