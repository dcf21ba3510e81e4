"""Final diagnosis from indicator results.

Two deciders exist. The weighted-score ("moe") decider computes
s = sum(w_i * x_i) over the present indicators, with x encoding
abnormal/uncertain/normal as 1/0.5/0, and labels the case sick when
s >= theta (boundary inclusive). Weights are renormalized over the
indicators actually present so s and theta stay on a common [0, 1]
scale when some modalities are missing. The LLM decider prompts the
chat backend with the indicator table and collapses the reply to a
yes/no through a second summarization call; an uncollapsible reply
yields the indeterminate label.
"""
from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import (
    DegenerateWeights,
    NoIndicators,
    SchemaError,
    UnknownIndicator,
    WeightParseError,
)
from .knowledge import RetrievedCriterion
from .model import Diagnosis, DiagnosisLabel, IndicatorResult, encode_status
from .serde import check_fields, load_json, require_mapping

DEFAULT_THETA = 0.5


@dataclass(frozen=True)
class MoeConfig:
    """Per-indicator weights plus the decision threshold."""

    weights: dict  # indicator name -> weight >= 0
    theta: float = DEFAULT_THETA
    normalize: bool = True

    def __post_init__(self):
        if not self.weights:
            raise SchemaError("MoeConfig.weights must be nonempty")
        for name, w in self.weights.items():
            if not isinstance(w, (int, float)) or isinstance(w, bool) or w < 0:
                raise SchemaError(f"weight for {name!r} must be a nonnegative number, got {w!r}")
        if not any(w > 0 for w in self.weights.values()):
            raise SchemaError("MoeConfig needs at least one positive weight")
        if not 0.0 <= self.theta <= 1.0:
            raise SchemaError(f"theta out of [0, 1]: {self.theta}")

    def to_dict(self) -> dict:
        return {"weights": dict(self.weights), "theta": self.theta, "normalize": self.normalize}

    @classmethod
    def from_dict(cls, data) -> "MoeConfig":
        data = require_mapping(data, "MoeConfig")
        check_fields(data, ["weights"], ["theta", "normalize"], ctx="MoeConfig")
        return cls(
            weights=dict(require_mapping(data["weights"], "MoeConfig.weights")),
            theta=float(data.get("theta", DEFAULT_THETA)),
            normalize=bool(data.get("normalize", True)),
        )


def load_moe_config(path: str | Path) -> MoeConfig:
    return MoeConfig.from_dict(load_json(Path(path).read_bytes()))


@dataclass(frozen=True)
class MoeOutcome:
    score: float
    label: DiagnosisLabel
    contributions: dict = field(default_factory=dict)  # indicator -> w_i * x_i


def moe_score(indicators: Sequence[IndicatorResult], config: MoeConfig) -> MoeOutcome:
    """Weighted risk score and threshold decision over present indicators."""
    if not indicators:
        raise NoIndicators("cannot score an empty indicator list")
    names = [i.name for i in indicators]
    for name in names:
        if name not in config.weights:
            raise UnknownIndicator(f"no weight configured for indicator {name!r}")
    weights = [float(config.weights[name]) for name in names]
    total = sum(weights)
    if total == 0.0:
        raise DegenerateWeights("all effective weights are zero for the present indicators")
    if config.normalize:
        weights = [w / total for w in weights]
    contributions = {}
    score = 0.0
    for indicator, w in zip(indicators, weights):
        term = w * encode_status(indicator.status)
        contributions[indicator.name] = term
        score += term
    label = DiagnosisLabel.SICK if score >= config.theta else DiagnosisLabel.HEALTHY
    return MoeOutcome(score=score, label=label, contributions=contributions)


def moe_diagnose(
    indicators: Sequence[IndicatorResult],
    config: MoeConfig,
    rule_version: str = "",
) -> Diagnosis:
    outcome = moe_score(indicators, config)
    terms = " + ".join(
        f"{name}({value:.4f})" for name, value in outcome.contributions.items()
    )
    rationale = (
        f"risk score {outcome.score:.4f} = {terms}; theta {config.theta}; "
        f"weights normalized={config.normalize}"
    )
    if rule_version:
        rationale += f"; rules v{rule_version}"
    return Diagnosis(
        label=outcome.label,
        decider_id="moe",
        rationale=rationale,
        risk_score=outcome.score,
        indicators=tuple(indicators),
    )


_JSON_BLOCK_RE = re.compile(r"\{.*\}", re.DOTALL)


def assign_weights_llm(
    indicator_names: Sequence[str],
    criteria: Sequence[RetrievedCriterion],
    llm,
    default_theta: float = DEFAULT_THETA,
) -> MoeConfig:
    """Ask the chat backend for indicator weights; normalize to sum 1."""
    from .planning import load_prompt

    prompt = string.Template(load_prompt("assign_weights")).substitute(
        indicators=", ".join(indicator_names),
        criteria="\n".join(f"[{c.doc_id}] {c.passage}" for c in criteria) or "(none)",
    )
    reply = llm.chat([("user", prompt)])
    match = _JSON_BLOCK_RE.search(reply)
    if match is None:
        raise WeightParseError(f"no JSON object in weight reply: {reply[:200]!r}")
    try:
        data = json.loads(match.group())
    except json.JSONDecodeError as exc:
        raise WeightParseError(f"unparseable weight JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise WeightParseError("weight reply must be a JSON object")
    theta = default_theta
    if "theta" in data:
        theta_raw = data.pop("theta")
        if isinstance(theta_raw, (int, float)) and 0.0 <= float(theta_raw) <= 1.0:
            theta = float(theta_raw)
    if set(data.keys()) != set(indicator_names):
        raise WeightParseError(
            f"weight names {sorted(data.keys())} do not match indicators {sorted(indicator_names)}"
        )
    weights = {}
    for name, value in data.items():
        if not isinstance(value, (int, float)) or isinstance(value, bool) or value < 0:
            raise WeightParseError(f"weight for {name!r} must be nonnegative, got {value!r}")
        weights[name] = float(value)
    total = sum(weights.values())
    if total <= 0:
        raise WeightParseError("weights must not all be zero")
    return MoeConfig(
        weights={name: w / total for name, w in weights.items()},
        theta=theta,
        normalize=True,
    )


def uniform_weights(indicator_names: Sequence[str], theta: float = DEFAULT_THETA) -> MoeConfig:
    if not indicator_names:
        raise NoIndicators("cannot build weights for zero indicators")
    w = 1.0 / len(indicator_names)
    return MoeConfig(weights={name: w for name in indicator_names}, theta=theta)


def assign_weights_or_uniform(
    indicator_names: Sequence[str],
    criteria: Sequence[RetrievedCriterion],
    llm,
    default_theta: float = DEFAULT_THETA,
) -> tuple[MoeConfig, str | None]:
    """LLM-assigned weights, falling back to uniform on a parse failure.

    Returns the config plus a note describing the fallback (None when
    the model reply parsed cleanly); callers log the note into the
    diagnosis rationale so every fallback stays visible.
    """
    try:
        return assign_weights_llm(indicator_names, criteria, llm, default_theta), None
    except WeightParseError as exc:
        return (
            uniform_weights(indicator_names, default_theta),
            f"weight assignment failed ({exc}); fell back to uniform weights",
        )


def _indicator_table(indicators: Sequence[IndicatorResult]) -> str:
    lines = []
    for ind in indicators:
        line = f"- {ind.name}: {ind.status.value}"
        if ind.raw_value is not None:
            line += f" (raw value {ind.raw_value:.4f} {ind.unit})"
        for ev in ind.evidence:
            line += f"; evidence: {ev.description}"
        lines.append(line)
    return "\n".join(lines)


def decide_llm(
    indicators: Sequence[IndicatorResult],
    llm,
    disease_id: str = "the suspected disease",
) -> Diagnosis:
    """Chat-backed diagnosis; reply collapsed to yes/no by a second call."""
    from .planning import load_prompt

    if not indicators:
        raise NoIndicators("cannot decide over an empty indicator list")
    prompt = string.Template(load_prompt("decide")).substitute(
        disease_id=disease_id, indicators=_indicator_table(indicators)
    )
    reply = llm.chat([("user", prompt)])
    collapse_prompt = string.Template(load_prompt("collapse_decision")).substitute(text=reply)
    verdict = llm.chat([("user", collapse_prompt)]).strip().lower().rstrip(".!")
    if verdict == "yes":
        label = DiagnosisLabel.SICK
    elif verdict == "no":
        label = DiagnosisLabel.HEALTHY
    else:
        label = DiagnosisLabel.INDETERMINATE
    return Diagnosis(
        label=label,
        decider_id="llm",
        rationale=reply,
        risk_score=None,
        indicators=tuple(indicators),
    )
