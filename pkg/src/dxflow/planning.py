"""Compilation and validation of diagnostic plans.

A plan is a DAG of (object, tool, action) steps over named artifacts.
Each step consumes one primary object plus optional extra artifacts
referenced from params values of the form ``"$artifact_name"`` (needed
for operations that combine artifacts, like ejection fraction over two
phase masks), and introduces one named output via ``produces``.

Two compilation backends exist: a deterministic per-disease template,
and an LLM backend that parses a structured plan block from the model
reply and gets one automated repair round on validation failure.
"""
from __future__ import annotations

import string
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Sequence

from .errors import (
    MissingTool,
    PlanInvalid,
    PlanParseError,
    SchemaError,
    UnknownDisease,
    ValidationError,
)
from .knowledge import RetrievedCriterion
from .model import Modality
from .serde import (
    canonical_json_bytes,
    check_fields,
    dump_json_bytes,
    get_str,
    load_json,
    require_list,
    require_mapping,
    sha256_hex,
)

# Artifact type tags: modality tags for declared inputs plus tags for
# intermediate artifacts produced by tools.
TAG_MASK_2D = "mask-2d"
TAG_VOLUME_LABELS_3D = "volume-labels-3d"
TAG_IMAGE_2D = "image-2d"
TAG_CROP_REGION = "crop-region"
TAG_TEXT = "text"
TAG_SCALAR = "scalar"

KNOWN_TAGS = {m.value for m in Modality} | {
    TAG_MASK_2D,
    TAG_VOLUME_LABELS_3D,
    TAG_IMAGE_2D,
    TAG_CROP_REGION,
    TAG_TEXT,
    TAG_SCALAR,
}

PARAM_REF_PREFIX = "$"

SUPPORTED_DISEASES = ("glaucoma", "heart-disease")


class ToolKind(Enum):
    CLASSIFICATION = "classification"
    SEGMENTATION = "segmentation"
    VQA = "vqa"
    METRIC = "metric"
    CROP = "crop"


class EndpointKind(Enum):
    BUILTIN = "builtin"
    REMOTE = "remote"
    MOCK = "mock"


@dataclass(frozen=True)
class Endpoint:
    kind: EndpointKind
    address: str = ""

    def __post_init__(self):
        if self.kind is EndpointKind.REMOTE and not self.address:
            raise SchemaError("remote endpoints require an address")

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind.value}
        if self.kind is EndpointKind.REMOTE:
            d["address"] = self.address
        return d

    @classmethod
    def from_dict(cls, data) -> "Endpoint":
        data = require_mapping(data, "Endpoint")
        check_fields(data, ["kind"], ["address"], ctx="Endpoint")
        try:
            kind = EndpointKind(get_str(data, "kind", "Endpoint"))
        except ValueError:
            raise SchemaError(f"unknown endpoint kind: {data['kind']!r}") from None
        return cls(kind=kind, address=str(data.get("address", "")))


@dataclass(frozen=True)
class ToolDescriptor:
    """Registry entry for one tool agent."""

    tool_id: str
    kind: ToolKind
    accepts: tuple[str, ...]
    produces: str
    endpoint: Endpoint
    timeout_s: float | None = None  # per-tool override of the step timeout

    def __post_init__(self):
        if not self.tool_id:
            raise SchemaError("ToolDescriptor.tool_id must be nonempty")
        if not self.accepts:
            raise SchemaError(f"tool {self.tool_id!r}: accepts must be nonempty")
        object.__setattr__(self, "accepts", tuple(self.accepts))
        for tag in self.accepts + (self.produces,):
            if tag not in KNOWN_TAGS:
                raise SchemaError(f"tool {self.tool_id!r}: unknown artifact tag {tag!r}")

    def to_dict(self) -> dict:
        return {
            "tool_id": self.tool_id,
            "kind": self.kind.value,
            "accepts": list(self.accepts),
            "produces": self.produces,
            "endpoint": self.endpoint.to_dict(),
            "timeout_s": self.timeout_s,
        }

    @classmethod
    def from_dict(cls, data, *, strict: bool = True) -> "ToolDescriptor":
        data = require_mapping(data, "ToolDescriptor")
        check_fields(
            data,
            ["tool_id", "kind", "accepts", "produces", "endpoint"],
            ["timeout_s"],
            ctx="ToolDescriptor",
            strict=strict,
        )
        try:
            kind = ToolKind(get_str(data, "kind", "ToolDescriptor"))
        except ValueError:
            raise SchemaError(f"unknown tool kind: {data['kind']!r}") from None
        timeout = data.get("timeout_s")
        return cls(
            tool_id=get_str(data, "tool_id", "ToolDescriptor"),
            kind=kind,
            accepts=tuple(str(t) for t in require_list(data["accepts"], "ToolDescriptor.accepts")),
            produces=get_str(data, "produces", "ToolDescriptor"),
            endpoint=Endpoint.from_dict(data["endpoint"]),
            timeout_s=float(timeout) if timeout is not None else None,
        )


def load_registry(path: str | Path) -> list[ToolDescriptor]:
    data = require_list(load_json(Path(path).read_bytes()), "registry")
    tools = [ToolDescriptor.from_dict(entry) for entry in data]
    seen: set[str] = set()
    for tool in tools:
        if tool.tool_id in seen:
            raise SchemaError(f"registry: duplicate tool_id {tool.tool_id!r}")
        seen.add(tool.tool_id)
    return tools


def save_registry(path: str | Path, tools: Sequence[ToolDescriptor]) -> None:
    Path(path).write_bytes(dump_json_bytes([t.to_dict() for t in tools]))


@dataclass(frozen=True)
class PlanStep:
    """One (object, tool, action) triplet with a named output."""

    object: str
    tool: str
    action: str
    produces: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in (self.object, self.tool, self.action, self.produces):
            if not name:
                raise SchemaError("PlanStep fields must be nonempty")

    def artifact_refs(self) -> list[str]:
        """All artifact names this step consumes: object plus $-params."""
        refs = [self.object]
        for value in self.params.values():
            if isinstance(value, str) and value.startswith(PARAM_REF_PREFIX):
                refs.append(value[len(PARAM_REF_PREFIX):])
        return refs

    def to_dict(self) -> dict:
        return {
            "object": self.object,
            "tool": self.tool,
            "action": self.action,
            "produces": self.produces,
            "params": dict(self.params),
        }

    @classmethod
    def from_dict(cls, data, *, strict: bool = True) -> "PlanStep":
        data = require_mapping(data, "PlanStep")
        check_fields(
            data, ["object", "tool", "action", "produces"], ["params"], ctx="PlanStep", strict=strict
        )
        params = require_mapping(data.get("params", {}), "PlanStep.params")
        return cls(
            object=get_str(data, "object", "PlanStep"),
            tool=get_str(data, "tool", "PlanStep"),
            action=get_str(data, "action", "PlanStep"),
            produces=get_str(data, "produces", "PlanStep"),
            params=dict(params),
        )


@dataclass(frozen=True)
class DiagnosticPlan:
    """Validated multi-step workflow for one disease."""

    disease_id: str
    declared_inputs: dict[str, Modality]
    steps: tuple[PlanStep, ...]
    indicator_bindings: dict[str, str]
    criteria: tuple[RetrievedCriterion, ...] = ()

    def __post_init__(self):
        obje = object
        obje.__setattr__(self, "steps", tuple(self.steps))
        obje.__setattr__(self, "criteria", tuple(self.criteria))

    def step_by_output(self) -> dict[str, PlanStep]:
        return {s.produces: s for s in self.steps}

    def to_dict(self) -> dict:
        return {
            "disease_id": self.disease_id,
            "declared_inputs": {k: m.value for k, m in self.declared_inputs.items()},
            "steps": [s.to_dict() for s in self.steps],
            "indicator_bindings": dict(self.indicator_bindings),
            "criteria": [c.to_dict() for c in self.criteria],
        }

    @classmethod
    def from_dict(cls, data, *, strict: bool = True) -> "DiagnosticPlan":
        data = require_mapping(data, "DiagnosticPlan")
        check_fields(
            data,
            ["disease_id", "declared_inputs", "steps", "indicator_bindings"],
            ["criteria", "provenance"],
            ctx="DiagnosticPlan",
            strict=strict,
        )
        bindings = require_mapping(data["indicator_bindings"], "DiagnosticPlan.indicator_bindings")
        return cls(
            disease_id=get_str(data, "disease_id", "DiagnosticPlan"),
            declared_inputs={
                name: Modality.parse(str(tag))
                for name, tag in require_mapping(
                    data["declared_inputs"], "DiagnosticPlan.declared_inputs"
                ).items()
            },
            steps=tuple(
                PlanStep.from_dict(s, strict=strict)
                for s in require_list(data["steps"], "DiagnosticPlan.steps")
            ),
            indicator_bindings={str(k): str(v) for k, v in bindings.items()},
            criteria=tuple(
                RetrievedCriterion.from_dict(c, strict=strict)
                for c in require_list(data.get("criteria", []), "DiagnosticPlan.criteria")
            ),
        )

    def canonical_bytes(self) -> bytes:
        return canonical_json_bytes(self.to_dict())

    def digest(self) -> str:
        return sha256_hex(self.canonical_bytes())


def load_plan(path: str | Path, *, strict: bool = True) -> DiagnosticPlan:
    return DiagnosticPlan.from_dict(load_json(Path(path).read_bytes()), strict=strict)


def save_plan(path: str | Path, plan: DiagnosticPlan, provenance: dict | None = None) -> None:
    data = plan.to_dict()
    if provenance is not None:
        data["provenance"] = provenance
    Path(path).write_bytes(dump_json_bytes(data))


# -- validation ----------------------------------------------------------------

class ViolationCategory(Enum):
    UNKNOWN_TOOL = "unknown-tool"
    UNKNOWN_REFERENCE = "unknown-reference"
    TYPE_MISMATCH = "type-mismatch"
    CYCLE = "cycle"
    UNBOUND_INDICATOR = "unbound-indicator"
    DUPLICATE_PRODUCES = "duplicate-produces"


@dataclass(frozen=True)
class ValidationFinding:
    category: ViolationCategory
    message: str
    step: str | None = None  # produces-name of the offending step

    def to_dict(self) -> dict:
        return {"category": self.category.value, "message": self.message, "step": self.step}


@dataclass
class ValidationReport:
    findings: list[ValidationFinding] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.findings

    def categories(self) -> set[ViolationCategory]:
        return {f.category for f in self.findings}

    def add(self, category: ViolationCategory, message: str, step: str | None = None) -> None:
        self.findings.append(ValidationFinding(category, message, step))

    def to_dict(self) -> dict:
        return {"ok": self.ok, "findings": [f.to_dict() for f in self.findings]}

    def summary(self) -> str:
        if self.ok:
            return "plan valid"
        return "; ".join(f"{f.category.value}: {f.message}" for f in self.findings)


def artifact_types(plan: DiagnosticPlan, registry_by_id: dict[str, ToolDescriptor]) -> dict[str, str]:
    """Type tag of every resolvable artifact in the plan."""
    types = {name: modality.value for name, modality in plan.declared_inputs.items()}
    for step in plan.steps:
        tool = registry_by_id.get(step.tool)
        if tool is not None:
            types[step.produces] = tool.produces
    return types


def validate_plan(plan: DiagnosticPlan, registry: Sequence[ToolDescriptor]) -> ValidationReport:
    """Structural validation; all violations are reported, none raised."""
    report = ValidationReport()
    by_id = {t.tool_id: t for t in registry}

    produced: set[str] = set()
    for step in plan.steps:
        if step.produces in produced or step.produces in plan.declared_inputs:
            report.add(
                ViolationCategory.DUPLICATE_PRODUCES,
                f"artifact {step.produces!r} is produced more than once or shadows an input",
                step.produces,
            )
        produced.add(step.produces)

    known_artifacts = set(plan.declared_inputs) | {s.produces for s in plan.steps}
    types = artifact_types(plan, by_id)

    for step in plan.steps:
        tool = by_id.get(step.tool)
        if tool is None:
            report.add(
                ViolationCategory.UNKNOWN_TOOL,
                f"step {step.produces!r} references unknown tool {step.tool!r}",
                step.produces,
            )
        for ref in step.artifact_refs():
            if ref not in known_artifacts:
                report.add(
                    ViolationCategory.UNKNOWN_REFERENCE,
                    f"step {step.produces!r} consumes unknown artifact {ref!r}",
                    step.produces,
                )
        if tool is not None:
            object_type = types.get(step.object)
            if object_type is not None and object_type not in tool.accepts:
                report.add(
                    ViolationCategory.TYPE_MISMATCH,
                    f"step {step.produces!r}: object {step.object!r} has type "
                    f"{object_type!r}, tool {tool.tool_id!r} accepts {list(tool.accepts)}",
                    step.produces,
                )

    # Cycle detection over producer -> consumer edges (Kahn's algorithm).
    by_output = plan.step_by_output()
    indegree = {s.produces: 0 for s in plan.steps}
    consumers: dict[str, list[str]] = {s.produces: [] for s in plan.steps}
    for step in plan.steps:
        for ref in step.artifact_refs():
            if ref in by_output:
                indegree[step.produces] += 1
                consumers[ref].append(step.produces)
    queue = [name for name, deg in indegree.items() if deg == 0]
    visited = 0
    while queue:
        current = queue.pop()
        visited += 1
        for nxt in consumers[current]:
            indegree[nxt] -= 1
            if indegree[nxt] == 0:
                queue.append(nxt)
    if visited != len(plan.steps):
        stuck = sorted(name for name, deg in indegree.items() if deg > 0)
        report.add(
            ViolationCategory.CYCLE,
            f"dependency cycle involving steps producing {stuck}",
        )

    step_outputs = {s.produces for s in plan.steps}
    for indicator, artifact in plan.indicator_bindings.items():
        if artifact not in step_outputs:
            report.add(
                ViolationCategory.UNBOUND_INDICATOR,
                f"indicator {indicator!r} bound to {artifact!r}, which no step produces",
            )

    return report


# -- deterministic templates ----------------------------------------------------

def _find_tool(
    registry: Sequence[ToolDescriptor], kind: ToolKind, accepts: str, produces: str
) -> ToolDescriptor:
    for tool in registry:
        if tool.kind is kind and accepts in tool.accepts and tool.produces == produces:
            return tool
    raise MissingTool(kind.value, f"accepting {accepts!r} and producing {produces!r}")


DH_QUESTION = "Are any disc hemorrhages visible at or near the optic disc margin?"
PPA_QUESTION = "Is peripapillary atrophy visible in the region around the optic disc?"


def _glaucoma_template(registry: Sequence[ToolDescriptor]) -> DiagnosticPlan:
    vqa_fundus = _find_tool(registry, ToolKind.VQA, Modality.FUNDUS_2D.value, TAG_TEXT)
    vqa_crop = _find_tool(registry, ToolKind.VQA, TAG_IMAGE_2D, TAG_TEXT)
    seg = _find_tool(registry, ToolKind.SEGMENTATION, Modality.FUNDUS_2D.value, TAG_MASK_2D)
    metric = _find_tool(registry, ToolKind.METRIC, TAG_MASK_2D, TAG_SCALAR)
    crop_region = _find_tool(registry, ToolKind.CROP, TAG_MASK_2D, TAG_CROP_REGION)
    crop_apply = _find_tool(registry, ToolKind.CROP, Modality.FUNDUS_2D.value, TAG_IMAGE_2D)
    steps = (
        PlanStep("fundus", vqa_fundus.tool_id, "query", "dh_answer", {"question": DH_QUESTION}),
        PlanStep("fundus", seg.tool_id, "segment_cup_disc", "cup_disc_mask"),
        PlanStep("cup_disc_mask", metric.tool_id, "compute_vcdr", "vcdr_value"),
        PlanStep(
            "cup_disc_mask",
            crop_region.tool_id,
            "compute_crop_region",
            "peripapillary_region",
            {"margin_factor": 1.5},
        ),
        PlanStep(
            "fundus",
            crop_apply.tool_id,
            "apply_crop",
            "peripapillary_crop",
            {"region": "$peripapillary_region"},
        ),
        PlanStep(
            "peripapillary_crop", vqa_crop.tool_id, "query", "ppa_answer", {"question": PPA_QUESTION}
        ),
        PlanStep("cup_disc_mask", metric.tool_id, "compute_rim_thickness", "rim_thickness_value"),
    )
    return DiagnosticPlan(
        disease_id="glaucoma",
        declared_inputs={"fundus": Modality.FUNDUS_2D},
        steps=steps,
        indicator_bindings={
            "vcdr": "vcdr_value",
            "rim_thickness": "rim_thickness_value",
            "ppa": "ppa_answer",
            "disc_hemorrhage": "dh_answer",
        },
    )


def _heart_template(registry: Sequence[ToolDescriptor]) -> DiagnosticPlan:
    seg = _find_tool(registry, ToolKind.SEGMENTATION, Modality.ECHO_3D.value, TAG_VOLUME_LABELS_3D)
    metric = _find_tool(registry, ToolKind.METRIC, TAG_VOLUME_LABELS_3D, TAG_SCALAR)
    steps = (
        PlanStep("echo_ed", seg.tool_id, "segment_heart", "heart_mask_ed"),
        PlanStep("echo_es", seg.tool_id, "segment_heart", "heart_mask_es"),
        PlanStep(
            "heart_mask_ed", metric.tool_id, "compute_lvef", "lvef_value", {"es_mask": "$heart_mask_es"}
        ),
        PlanStep("heart_mask_ed", metric.tool_id, "compute_lv_diameter", "edd_value"),
        PlanStep("heart_mask_es", metric.tool_id, "compute_lv_diameter", "sdd_value"),
        PlanStep(
            "heart_mask_ed",
            metric.tool_id,
            "compute_lv_mass_index",
            "lvmi_value",
            {"body": "$body_metrics"},
        ),
    )
    return DiagnosticPlan(
        disease_id="heart-disease",
        declared_inputs={
            "echo_ed": Modality.ECHO_3D,
            "echo_es": Modality.ECHO_3D,
            "body_metrics": Modality.SCALAR_METADATA,
        },
        steps=steps,
        indicator_bindings={
            "lvef": "lvef_value",
            "edd": "edd_value",
            "sdd": "sdd_value",
            "lvmi": "lvmi_value",
        },
    )


def compile_plan_template(
    disease_id: str,
    registry: Sequence[ToolDescriptor],
    criteria: Sequence[RetrievedCriterion] = (),
) -> DiagnosticPlan:
    """Canonical deterministic plan for a supported disease."""
    if disease_id == "glaucoma":
        plan = _glaucoma_template(registry)
    elif disease_id == "heart-disease":
        plan = _heart_template(registry)
    else:
        raise UnknownDisease(disease_id)
    if criteria:
        plan = DiagnosticPlan(
            disease_id=plan.disease_id,
            declared_inputs=plan.declared_inputs,
            steps=plan.steps,
            indicator_bindings=plan.indicator_bindings,
            criteria=tuple(criteria),
        )
    return plan


# -- LLM compilation -------------------------------------------------------------

def load_prompt(name: str) -> str:
    """Prompt body from the versioned template file (header line dropped)."""
    text = resources.files("dxflow").joinpath(f"prompts/{name}.txt").read_text("utf-8")
    lines = text.splitlines()
    if lines and lines[0].startswith("version:"):
        lines = lines[1:]
    return "\n".join(lines).strip() + "\n"


def _coerce_param(raw: str):
    raw = raw.strip()
    if raw.startswith(PARAM_REF_PREFIX):
        return raw
    lowered = raw.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def _extract_block(text: str) -> str:
    """Content of the first fenced code block in the reply."""
    lines = text.splitlines()
    inside = False
    block: list[str] = []
    for line in lines:
        if line.strip().startswith("```"):
            if inside:
                return "\n".join(block)
            inside = True
            continue
        if inside:
            block.append(line)
    raise PlanParseError("no fenced plan block in model reply", text)


def parse_plan_block(text: str, disease_id: str) -> DiagnosticPlan:
    """Parse the structured plan format out of a model reply.

    Lines inside the first fenced block, one record each:
      input | <name> | <modality>
      step  | <object> | <tool> | <action> | <produces> [| k=v; k2=v2]
      bind  | <indicator> | <artifact>
    """
    block = _extract_block(text)
    declared: dict[str, Modality] = {}
    steps: list[PlanStep] = []
    bindings: dict[str, str] = {}
    for raw_line in block.splitlines():
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split("|")]
        record = parts[0].lower()
        try:
            if record == "input" and len(parts) == 3:
                declared[parts[1]] = Modality.parse(parts[2])
            elif record == "step" and len(parts) in (5, 6):
                params: dict = {}
                if len(parts) == 6 and parts[5]:
                    for pair in parts[5].split(";"):
                        if not pair.strip():
                            continue
                        if "=" not in pair:
                            raise PlanParseError(f"malformed param {pair!r}", text)
                        key, value = pair.split("=", 1)
                        params[key.strip()] = _coerce_param(value)
                steps.append(PlanStep(parts[1], parts[2], parts[3], parts[4], params))
            elif record == "bind" and len(parts) == 3:
                bindings[parts[1]] = parts[2]
            else:
                raise PlanParseError(f"unrecognized plan line: {line!r}", text)
        except SchemaError as exc:
            raise PlanParseError(f"bad plan line {line!r}: {exc}", text) from exc
    if not steps:
        raise PlanParseError("plan block contains no steps", text)
    return DiagnosticPlan(
        disease_id=disease_id,
        declared_inputs=declared,
        steps=tuple(steps),
        indicator_bindings=bindings,
    )


def render_plan_prompt(
    disease_id: str,
    criteria: Sequence[RetrievedCriterion],
    registry: Sequence[ToolDescriptor],
) -> str:
    template = string.Template(load_prompt("plan_compile"))
    tools_block = "\n".join(
        f"- {t.tool_id} (kind {t.kind.value}): accepts {', '.join(t.accepts)}; produces {t.produces}"
        for t in registry
    )
    criteria_block = (
        "\n".join(f"[{c.doc_id}] {c.passage}" for c in criteria) if criteria else "(none retrieved)"
    )
    return template.substitute(
        disease_id=disease_id, tools=tools_block, criteria=criteria_block
    )


def compile_plan_llm(
    criteria: Sequence[RetrievedCriterion],
    registry: Sequence[ToolDescriptor],
    disease_id: str,
    llm,
) -> DiagnosticPlan:
    """Compile a plan via the chat backend, with one repair round."""
    if not registry:
        raise ValidationError("cannot compile a plan against an empty tool registry")
    prompt = render_plan_prompt(disease_id, criteria, registry)
    reply = llm.chat([("user", prompt)])
    plan = parse_plan_block(reply, disease_id)
    plan = DiagnosticPlan(
        disease_id=plan.disease_id,
        declared_inputs=plan.declared_inputs,
        steps=plan.steps,
        indicator_bindings=plan.indicator_bindings,
        criteria=tuple(criteria),
    )
    report = validate_plan(plan, registry)
    if report.ok:
        return plan
    repair_prompt = (
        prompt
        + "\nYour previous plan failed validation with these errors:\n"
        + "\n".join(f"- {f.category.value}: {f.message}" for f in report.findings)
        + "\nEmit a corrected plan block.\n"
    )
    reply = llm.chat([("user", repair_prompt)])
    plan = parse_plan_block(reply, disease_id)
    plan = DiagnosticPlan(
        disease_id=plan.disease_id,
        declared_inputs=plan.declared_inputs,
        steps=plan.steps,
        indicator_bindings=plan.indicator_bindings,
        criteria=tuple(criteria),
    )
    report = validate_plan(plan, registry)
    if not report.ok:
        raise PlanInvalid(report.findings)
    return plan
