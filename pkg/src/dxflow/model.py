"""Shared domain types: cases, indicators, evidence, diagnoses.

All types are immutable value objects and safe to share across
concurrently executing cases. Serialization is UTF-8 JSON with
snake_case fields; unknown fields are rejected in strict mode
(the default for internal files) and ignored in lenient mode.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

from .errors import SchemaError
from .serde import check_fields, get_number, get_str, require_list, require_mapping


class Modality(Enum):
    """Semantic tag for a patient input artifact. Closed enumeration."""

    FUNDUS_2D = "fundus-2d"
    ECHO_3D = "echo-3d"
    IOP_SCALAR = "iop-scalar"
    CLINICAL_TEXT = "clinical-text"
    SCALAR_METADATA = "scalar-metadata"

    @classmethod
    def parse(cls, tag: str) -> "Modality":
        try:
            return cls(tag)
        except ValueError:
            raise SchemaError(f"unknown modality tag: {tag!r}") from None


class IndicatorStatus(Enum):
    ABNORMAL = "abnormal"
    UNCERTAIN = "uncertain"
    NORMAL = "normal"

    @classmethod
    def parse(cls, value: str) -> "IndicatorStatus":
        try:
            return cls(value)
        except ValueError:
            raise SchemaError(f"unknown indicator status: {value!r}") from None


_STATUS_CODES = {
    IndicatorStatus.ABNORMAL: 1.0,
    IndicatorStatus.UNCERTAIN: 0.5,
    IndicatorStatus.NORMAL: 0.0,
}


def encode_status(status: IndicatorStatus) -> float:
    """Numeric encoding of an indicator status: 1, 0.5 or 0."""
    return _STATUS_CODES[status]


class DiagnosisLabel(Enum):
    SICK = "sick"
    HEALTHY = "healthy"
    # Not produced by the weighted-score decider; represents an LLM
    # decider reply that could not be collapsed to a clear yes/no.
    INDETERMINATE = "indeterminate"

    @classmethod
    def parse(cls, value: str) -> "DiagnosisLabel":
        try:
            return cls(value)
        except ValueError:
            raise SchemaError(f"unknown diagnosis label: {value!r}") from None


class EvidenceKind(Enum):
    MASK_FILE = "mask-file"
    CROP_REGION = "crop-region"
    TEXT_EXCERPT = "text-excerpt"
    NUMERIC_TRACE = "numeric-trace"


@dataclass(frozen=True)
class EvidenceRef:
    """Pointer to a supporting artifact: a file, a region, or inline text."""

    kind: EvidenceKind
    locator: str
    description: str

    def __post_init__(self):
        if not self.locator:
            raise SchemaError("EvidenceRef.locator must be nonempty")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "locator": self.locator, "description": self.description}

    @classmethod
    def from_dict(cls, data: Any, *, strict: bool = True) -> "EvidenceRef":
        data = require_mapping(data, "EvidenceRef")
        check_fields(data, ["kind", "locator", "description"], ctx="EvidenceRef", strict=strict)
        kind_tag = get_str(data, "kind", "EvidenceRef")
        try:
            kind = EvidenceKind(kind_tag)
        except ValueError:
            raise SchemaError(f"unknown evidence kind: {kind_tag!r}") from None
        return cls(
            kind=kind,
            locator=get_str(data, "locator", "EvidenceRef"),
            description=get_str(data, "description", "EvidenceRef"),
        )


@dataclass(frozen=True)
class IndicatorResult:
    """One named indicator with its normalized status and raw evidence."""

    name: str
    status: IndicatorStatus
    tool_id: str
    raw_value: float | None = None
    unit: str | None = None
    evidence: tuple[EvidenceRef, ...] = ()

    def __post_init__(self):
        if not self.name:
            raise SchemaError("IndicatorResult.name must be nonempty")
        if self.raw_value is not None and not self.unit:
            raise SchemaError(f"indicator {self.name!r}: raw_value requires a unit tag")
        object.__setattr__(self, "evidence", tuple(self.evidence))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "status": self.status.value,
            "tool_id": self.tool_id,
            "raw_value": self.raw_value,
            "unit": self.unit,
            "evidence": [e.to_dict() for e in self.evidence],
        }

    @classmethod
    def from_dict(cls, data: Any, *, strict: bool = True) -> "IndicatorResult":
        data = require_mapping(data, "IndicatorResult")
        check_fields(
            data,
            ["name", "status", "tool_id"],
            ["raw_value", "unit", "evidence"],
            ctx="IndicatorResult",
            strict=strict,
        )
        raw_value = data.get("raw_value")
        if raw_value is not None:
            raw_value = get_number(data, "raw_value", "IndicatorResult")
        unit = data.get("unit")
        if unit is not None and not isinstance(unit, str):
            raise SchemaError("IndicatorResult.unit must be a string")
        return cls(
            name=get_str(data, "name", "IndicatorResult"),
            status=IndicatorStatus.parse(get_str(data, "status", "IndicatorResult")),
            tool_id=get_str(data, "tool_id", "IndicatorResult"),
            raw_value=raw_value,
            unit=unit,
            evidence=tuple(
                EvidenceRef.from_dict(e, strict=strict)
                for e in require_list(data.get("evidence", []), "IndicatorResult.evidence")
            ),
        )


@dataclass(frozen=True)
class PatientCase:
    """Multi-modal inputs plus scalar metadata for one subject.

    ``inputs`` maps artifact names to (modality, payload path). Height and
    weight must be present together or not at all; the optional ground
    truth label exists for evaluation only.
    """

    case_id: str
    inputs: dict[str, tuple[Modality, str]] = field(default_factory=dict)
    height_cm: float | None = None
    weight_kg: float | None = None
    ground_truth: DiagnosisLabel | None = None

    def __post_init__(self):
        if not self.case_id:
            raise SchemaError("PatientCase.case_id must be nonempty")
        if (self.height_cm is None) != (self.weight_kg is None):
            raise SchemaError("height and weight must be present together or both absent")
        if self.height_cm is not None and self.height_cm <= 0:
            raise SchemaError("height_cm must be > 0")
        if self.weight_kg is not None and self.weight_kg <= 0:
            raise SchemaError("weight_kg must be > 0")
        if self.ground_truth is DiagnosisLabel.INDETERMINATE:
            raise SchemaError("ground_truth must be sick or healthy")

    @property
    def has_body_metrics(self) -> bool:
        return self.height_cm is not None

    def to_dict(self) -> dict:
        metadata = None
        if self.has_body_metrics:
            metadata = {"height_cm": self.height_cm, "weight_kg": self.weight_kg}
        return {
            "case_id": self.case_id,
            "inputs": {
                name: {"modality": modality.value, "path": path}
                for name, (modality, path) in self.inputs.items()
            },
            "metadata": metadata,
            "ground_truth": self.ground_truth.value if self.ground_truth else None,
        }

    @classmethod
    def from_dict(cls, data: Any, *, strict: bool = True, base_dir: Path | None = None) -> "PatientCase":
        data = require_mapping(data, "PatientCase")
        check_fields(
            data, ["case_id", "inputs"], ["metadata", "ground_truth"], ctx="PatientCase", strict=strict
        )
        inputs: dict[str, tuple[Modality, str]] = {}
        for name, entry in require_mapping(data["inputs"], "PatientCase.inputs").items():
            entry = require_mapping(entry, f"PatientCase.inputs[{name!r}]")
            check_fields(entry, ["modality", "path"], ctx=f"PatientCase.inputs[{name!r}]", strict=strict)
            path = get_str(entry, "path", "PatientCase.inputs")
            if base_dir is not None:
                path = str((base_dir / path).resolve())
            inputs[name] = (Modality.parse(get_str(entry, "modality", "PatientCase.inputs")), path)
        height = weight = None
        metadata = data.get("metadata")
        if metadata is not None:
            metadata = require_mapping(metadata, "PatientCase.metadata")
            check_fields(
                metadata, ["height_cm", "weight_kg"], ctx="PatientCase.metadata", strict=strict
            )
            height = get_number(metadata, "height_cm", "PatientCase.metadata")
            weight = get_number(metadata, "weight_kg", "PatientCase.metadata")
        truth = data.get("ground_truth")
        return cls(
            case_id=get_str(data, "case_id", "PatientCase"),
            inputs=inputs,
            height_cm=height,
            weight_kg=weight,
            ground_truth=DiagnosisLabel.parse(truth) if truth is not None else None,
        )


@dataclass(frozen=True)
class Diagnosis:
    """Final label with score, per-indicator table and decider identity."""

    label: DiagnosisLabel
    decider_id: str
    rationale: str
    risk_score: float | None = None
    indicators: tuple[IndicatorResult, ...] = ()

    def __post_init__(self):
        if self.risk_score is not None and not 0.0 <= self.risk_score <= 1.0:
            raise SchemaError(f"risk_score out of [0, 1]: {self.risk_score}")
        if self.decider_id == "moe" and self.risk_score is None:
            raise SchemaError("weighted-score diagnoses must carry a risk_score")
        if self.label is DiagnosisLabel.INDETERMINATE and self.decider_id == "moe":
            raise SchemaError("the weighted-score decider never yields indeterminate")
        object.__setattr__(self, "indicators", tuple(self.indicators))

    def to_dict(self) -> dict:
        return {
            "label": self.label.value,
            "decider_id": self.decider_id,
            "rationale": self.rationale,
            "risk_score": self.risk_score,
            "indicators": [i.to_dict() for i in self.indicators],
        }

    @classmethod
    def from_dict(cls, data: Any, *, strict: bool = True) -> "Diagnosis":
        data = require_mapping(data, "Diagnosis")
        check_fields(
            data,
            ["label", "decider_id", "rationale"],
            ["risk_score", "indicators", "provenance"],
            ctx="Diagnosis",
            strict=strict,
        )
        risk = data.get("risk_score")
        if risk is not None:
            risk = get_number(data, "risk_score", "Diagnosis")
        return cls(
            label=DiagnosisLabel.parse(get_str(data, "label", "Diagnosis")),
            decider_id=get_str(data, "decider_id", "Diagnosis"),
            rationale=get_str(data, "rationale", "Diagnosis"),
            risk_score=risk,
            indicators=tuple(
                IndicatorResult.from_dict(i, strict=strict)
                for i in require_list(data.get("indicators", []), "Diagnosis.indicators")
            ),
        )
