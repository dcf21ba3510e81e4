"""Case execution: match inputs to the plan, run steps, collect indicators.

Step selection is structural: a step runs when its transitive artifact
requirements are satisfiable from the case's available inputs, so a
missing modality silently excludes the subtree rooted in it. Selected
steps execute on a bounded worker pool in dependency order; a failing
step skips its descendants and leaves independent branches untouched.
Indicator bindings whose artifact was produced are summarized into
IndicatorResults; unreachable indicators are omitted entirely.

Per-case run directory layout: ``artifacts/`` payload files,
``trace.json``, ``indicators.json`` and later ``diagnosis.json``.
"""
from __future__ import annotations

import re
import shutil
import time
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import EngineError, NoIndicators, SchemaError, ValidationError
from .model import (
    EvidenceKind,
    EvidenceRef,
    IndicatorResult,
    Modality,
    PatientCase,
)
from .planning import (
    TAG_CROP_REGION,
    TAG_IMAGE_2D,
    TAG_MASK_2D,
    TAG_SCALAR,
    TAG_TEXT,
    TAG_VOLUME_LABELS_3D,
    PARAM_REF_PREFIX,
    DiagnosticPlan,
    PlanStep,
    ToolDescriptor,
    artifact_types,
)
from .serde import canonical_json_bytes, dump_json_bytes, get_number, get_str, load_json, require_mapping
from .summarize import RuleSet, summarize_numeric, summarize_text_llm, summarize_text_rule
from .tools import MockToolRegistry, Payload, ToolArtifact, ToolRequest, ToolResponse, invoke

DEFAULT_POOL_SIZE = 4
DEFAULT_STEP_TIMEOUT_S = 120.0

_EXTENSIONS = {
    TAG_SCALAR: ".json",
    TAG_CROP_REGION: ".json",
    TAG_TEXT: ".txt",
    TAG_MASK_2D: ".pgm",
    TAG_IMAGE_2D: ".pgm",
    TAG_VOLUME_LABELS_3D: ".bin",
}


@dataclass(frozen=True)
class StepTrace:
    step: str  # produces-name
    tool_id: str
    duration_s: float
    outcome: str  # "ok" | "failed"
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "tool_id": self.tool_id,
            "duration_s": self.duration_s,
            "outcome": self.outcome,
            "error": self.error,
        }


@dataclass
class ExecutionContext:
    """Mutable per-case run state; artifacts is append-only."""

    case: PatientCase
    plan: DiagnosticPlan
    run_dir: Path
    artifacts: dict = field(default_factory=dict)  # name -> absolute path
    artifact_tags: dict = field(default_factory=dict)  # name -> type tag
    trace: list = field(default_factory=list)  # StepTrace, canonical step order
    skipped: dict = field(default_factory=dict)  # step name -> reason

    def relpath(self, path: str | Path) -> str:
        path = Path(path)
        try:
            return path.relative_to(self.run_dir).as_posix()
        except ValueError:
            return str(path)


class ToolInvoker:
    """Resolves plan steps against the registry and dispatches calls."""

    def __init__(
        self,
        registry: Sequence[ToolDescriptor],
        mocks: MockToolRegistry | None = None,
        default_timeout_s: float = DEFAULT_STEP_TIMEOUT_S,
    ):
        self.registry = list(registry)
        self._by_id = {t.tool_id: t for t in self.registry}
        self.mocks = mocks
        self.default_timeout_s = default_timeout_s

    def descriptor(self, tool_id: str) -> ToolDescriptor:
        tool = self._by_id.get(tool_id)
        if tool is None:
            raise ValidationError(f"registry cannot resolve tool {tool_id!r}")
        return tool

    def invoke_step(self, step: PlanStep, request: ToolRequest, workdir: Path) -> ToolResponse:
        return invoke(
            self.descriptor(step.tool),
            request,
            timeout_s=self.default_timeout_s,
            mocks=self.mocks,
            workdir=workdir,
        )


def select_steps(plan: DiagnosticPlan, available: set[str]) -> list[PlanStep]:
    """Maximal executable step closure, in deterministic topological order.

    Repeatedly scans the plan in authored order and selects any step
    whose references are all satisfied, so ties resolve by plan order.
    Enlarging ``available`` never removes a selected step.
    """
    unknown = available - set(plan.declared_inputs)
    if unknown:
        raise ValidationError(f"available names not declared by the plan: {sorted(unknown)}")
    have = set(available)
    selected: list[PlanStep] = []
    chosen: set[str] = set()
    progress = True
    while progress:
        progress = False
        for step in plan.steps:
            if step.produces in chosen:
                continue
            if all(ref in have for ref in step.artifact_refs()):
                selected.append(step)
                chosen.add(step.produces)
                have.add(step.produces)
                progress = True
    return selected


def _sanitize(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name)


def _build_request(case_id: str, step: PlanStep, ctx: ExecutionContext) -> ToolRequest:
    object_path = ctx.artifacts[step.object]
    inputs = [
        ToolArtifact(
            name=step.object,
            type=ctx.artifact_tags[step.object],
            payload=Payload.from_path(object_path),
        )
    ]
    plain_params: dict = {}
    ref_params: list[tuple[str, str]] = []
    for key, value in step.params.items():
        if isinstance(value, str) and value.startswith(PARAM_REF_PREFIX):
            ref_params.append((key, value[len(PARAM_REF_PREFIX):]))
        else:
            plain_params[key] = value
    for key, artifact_name in sorted(ref_params):
        inputs.append(
            ToolArtifact(
                name=key,
                type=ctx.artifact_tags[artifact_name],
                payload=Payload.from_path(ctx.artifacts[artifact_name]),
            )
        )
    return ToolRequest(
        request_id=f"{case_id}:{step.produces}",
        tool_id=step.tool,
        action=step.action,
        inputs=tuple(inputs),
        params=plain_params,
    )


def _materialize_outputs(
    step: PlanStep, response: ToolResponse, ctx: ExecutionContext, produces_tag: str
) -> dict[str, str]:
    """Copy the primary output into artifacts/<produces>; returns a path
    rewrite map from original payload locations to run-relative paths."""
    artifacts_dir = ctx.run_dir / "artifacts"
    artifacts_dir.mkdir(parents=True, exist_ok=True)
    primary = response.outputs[0]
    ext = _EXTENSIONS.get(produces_tag, ".bin")
    dest = artifacts_dir / f"{_sanitize(step.produces)}{ext}"
    rewrite: dict[str, str] = {}
    if primary.payload.path is not None:
        src = Path(primary.payload.path)
        if src.resolve() != dest.resolve():
            shutil.copyfile(src, dest)
            if produces_tag == TAG_VOLUME_LABELS_3D:
                sidecar = Path(str(src) + ".json")
                if sidecar.exists():
                    shutil.copyfile(sidecar, Path(str(dest) + ".json"))
        rewrite[str(src)] = ctx.relpath(dest)
        # Builtin side files written under artifacts/ get renamed away.
        if src.exists() and src.parent == artifacts_dir and src.resolve() != dest.resolve():
            src.unlink()
    else:
        dest.write_bytes(primary.payload.read_bytes())
    ctx.artifacts[step.produces] = str(dest)
    ctx.artifact_tags[step.produces] = produces_tag
    return rewrite


def _rewrite_evidence(
    evidence: Sequence[EvidenceRef], path_map: dict[str, str]
) -> tuple[EvidenceRef, ...]:
    out = []
    for ref in evidence:
        locator = path_map.get(ref.locator, ref.locator)
        out.append(EvidenceRef(ref.kind, locator, ref.description))
    return tuple(out)


def _descendants(steps: Sequence[PlanStep], root: str) -> set[str]:
    consumers: dict[str, set[str]] = {}
    for step in steps:
        for ref in step.artifact_refs():
            consumers.setdefault(ref, set()).add(step.produces)
    reached: set[str] = set()
    frontier = [root]
    while frontier:
        current = frontier.pop()
        for nxt in consumers.get(current, ()):
            if nxt not in reached:
                reached.add(nxt)
                frontier.append(nxt)
    return reached


def prepare_context(case: PatientCase, plan: DiagnosticPlan, run_dir: str | Path) -> ExecutionContext:
    """Pre-populate declared inputs that the case can satisfy."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "artifacts").mkdir(exist_ok=True)
    ctx = ExecutionContext(case=case, plan=plan, run_dir=run_dir)
    for name, modality in plan.declared_inputs.items():
        if name in case.inputs:
            case_modality, path = case.inputs[name]
            if case_modality is not modality:
                continue  # wrong modality under a declared name: not available
            if not Path(path).exists():
                raise ValidationError(f"case {case.case_id!r}: payload missing for {name!r}: {path}")
            ctx.artifacts[name] = str(path)
            ctx.artifact_tags[name] = modality.value
        elif modality is Modality.SCALAR_METADATA and case.has_body_metrics:
            dest = run_dir / "artifacts" / f"{_sanitize(name)}.json"
            dest.write_bytes(
                canonical_json_bytes(
                    {"height_cm": case.height_cm, "weight_kg": case.weight_kg}
                )
            )
            ctx.artifacts[name] = str(dest)
            ctx.artifact_tags[name] = modality.value
    return ctx


def execute_plan(
    case: PatientCase,
    plan: DiagnosticPlan,
    invoker: ToolInvoker,
    rules: RuleSet,
    run_dir: str | Path,
    pool_size: int = DEFAULT_POOL_SIZE,
    text_llm=None,
    provenance: dict | None = None,
) -> tuple[list[IndicatorResult], ExecutionContext]:
    """Run the executable closure of the plan for one case.

    Independent steps run concurrently on a pool of ``pool_size``
    workers; results are identical for any pool size. Raises
    NoIndicators when no indicator artifact could be produced.
    """
    ctx = prepare_context(case, plan, run_dir)
    selected = select_steps(plan, set(ctx.artifacts))
    order = {step.produces: i for i, step in enumerate(selected)}
    types = artifact_types(plan, {t.tool_id: t for t in invoker.registry})

    pending = {step.produces: step for step in selected}
    running: dict = {}
    done: set[str] = set()
    failed: dict[str, str] = {}
    results: dict[str, tuple[float, str, str | None]] = {}  # duration, outcome, error
    responses: dict[str, ToolResponse] = {}
    evidence_map: dict[str, tuple[EvidenceRef, ...]] = {}
    path_map: dict[str, str] = {str(p): ctx.relpath(p) for p in ctx.artifacts.values()}

    def runnable(step: PlanStep) -> bool:
        for ref in step.artifact_refs():
            if ref in ctx.artifacts:
                continue
            return False
        return True

    def skip_descendants(root: str, reason: str) -> None:
        for name in _descendants(selected, root):
            if name in pending:
                del pending[name]
                ctx.skipped[name] = reason

    def worker(step: PlanStep, request: ToolRequest):
        start = time.perf_counter()
        response = invoker.invoke_step(step, request, ctx.run_dir / "artifacts")
        return response, time.perf_counter() - start

    with ThreadPoolExecutor(max_workers=max(1, pool_size)) as pool:
        while pending or running:
            ready = sorted(
                (step for step in pending.values() if runnable(step)),
                key=lambda s: order[s.produces],
            )
            for step in ready:
                del pending[step.produces]
                request = _build_request(case.case_id, step, ctx)
                running[pool.submit(worker, step, request)] = step
            if not running:
                break  # remaining pending steps are blocked forever
            finished, _ = wait(running, return_when=FIRST_COMPLETED)
            for future in finished:
                step = running.pop(future)
                start = time.perf_counter()
                try:
                    response, duration = future.result()
                except EngineError as exc:
                    results[step.produces] = (time.perf_counter() - start, "failed", str(exc))
                    failed[step.produces] = str(exc)
                    skip_descendants(step.produces, f"upstream step {step.produces!r} failed")
                    continue
                produces_tag = types.get(step.produces, TAG_TEXT)
                rewrite = _materialize_outputs(step, response, ctx, produces_tag)
                path_map.update(rewrite)
                path_map[ctx.artifacts[step.produces]] = ctx.relpath(ctx.artifacts[step.produces])
                responses[step.produces] = response
                evidence_map[step.produces] = response.evidence
                results[step.produces] = (duration, "ok", None)
                done.add(step.produces)

    for step in selected:
        if step.produces in results:
            duration, outcome, error = results[step.produces]
            ctx.trace.append(
                StepTrace(step.produces, step.tool, duration, outcome, error)
            )

    indicators = _summarize_indicators(ctx, rules, evidence_map, path_map, text_llm)
    _write_run_outputs(ctx, indicators, provenance or {})
    if not indicators:
        raise NoIndicators(
            f"case {case.case_id!r}: no indicator artifact was produced "
            f"({len(selected)} steps selected)"
        )
    return indicators, ctx


def _summarize_indicators(
    ctx: ExecutionContext,
    rules: RuleSet,
    evidence_map: dict[str, tuple[EvidenceRef, ...]],
    path_map: dict[str, str],
    text_llm,
) -> list[IndicatorResult]:
    by_output = ctx.plan.step_by_output()
    indicators: list[IndicatorResult] = []
    for indicator, artifact in ctx.plan.indicator_bindings.items():
        if artifact not in ctx.artifacts or artifact not in by_output:
            continue
        step = by_output[artifact]
        tag = ctx.artifact_tags[artifact]
        payload_path = Path(ctx.artifacts[artifact])
        evidence = list(_rewrite_evidence(evidence_map.get(artifact, ()), path_map))
        if tag == TAG_SCALAR:
            data = require_mapping(load_json(payload_path.read_bytes()), f"{artifact} scalar")
            value = get_number(data, "value", artifact)
            unit = get_str(data, "unit", artifact)
            status = summarize_numeric(indicator, value, unit, rules)
            indicators.append(
                IndicatorResult(
                    name=indicator,
                    status=status,
                    tool_id=step.tool,
                    raw_value=value,
                    unit=unit,
                    evidence=tuple(evidence),
                )
            )
        elif tag == TAG_TEXT:
            text = payload_path.read_text("utf-8")
            if text_llm is not None:
                status = summarize_text_llm(indicator, text, text_llm)
            else:
                status = summarize_text_rule(indicator, text, rules)
            evidence.append(
                EvidenceRef(EvidenceKind.TEXT_EXCERPT, text.strip() or "(empty)", "tool answer")
            )
            indicators.append(
                IndicatorResult(
                    name=indicator,
                    status=status,
                    tool_id=step.tool,
                    evidence=tuple(evidence),
                )
            )
        else:
            raise SchemaError(
                f"indicator {indicator!r} bound to artifact of type {tag!r}; "
                f"only scalar and text artifacts can be summarized"
            )
    return indicators


def _write_run_outputs(
    ctx: ExecutionContext, indicators: list[IndicatorResult], provenance: dict
) -> None:
    trace_doc = {
        "provenance": provenance,
        "case_id": ctx.case.case_id,
        "steps": [t.to_dict() for t in ctx.trace],
        "skipped": dict(sorted(ctx.skipped.items())),
    }
    (ctx.run_dir / "trace.json").write_bytes(dump_json_bytes(trace_doc))
    indicators_doc = {
        "provenance": provenance,
        "case_id": ctx.case.case_id,
        "indicators": [i.to_dict() for i in indicators],
    }
    (ctx.run_dir / "indicators.json").write_bytes(dump_json_bytes(indicators_doc))
