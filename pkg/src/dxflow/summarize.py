"""Normalization of raw tool outputs into abnormal/uncertain/normal.

Numeric values fall into one of three half-open bands (closed on the
left) that must partition the indicator's declared range without gaps
or overlap. Free text goes through keyword rules with a short negation
window, or optionally through the chat backend constrained to a single
token answer.
"""
from __future__ import annotations

import re
import string
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import NoRule, SchemaError, UnitMismatch, ValueOutOfRange
from .model import IndicatorStatus
from .serde import check_fields, get_str, load_json, require_list, require_mapping

NEGATION_TOKENS = {"no", "without", "absent"}
NEGATION_WINDOW = 3

_BAND_ORDER = ("normal", "uncertain", "abnormal")


@dataclass(frozen=True)
class BandRule:
    """Three numeric intervals for one indicator, [lo, hi) each.

    A ``None`` upper bound means unbounded above; the intervals must be
    contiguous and non-overlapping over the declared range.
    """

    indicator: str
    unit: str
    bands: dict  # status name -> (lo, hi | None)

    def __post_init__(self):
        if set(self.bands) != set(_BAND_ORDER):
            raise SchemaError(
                f"band rule {self.indicator!r}: needs exactly the bands {_BAND_ORDER}"
            )
        intervals = sorted(self.bands.items(), key=lambda kv: kv[1][0])
        for (_, (_, hi)), (_, (lo_next, _)) in zip(intervals, intervals[1:]):
            if hi is None or hi != lo_next:
                raise SchemaError(
                    f"band rule {self.indicator!r}: intervals must partition the range "
                    f"with no gap or overlap"
                )

    @property
    def range_lo(self) -> float:
        return min(lo for lo, _ in self.bands.values())

    def classify(self, value: float) -> IndicatorStatus:
        if value < self.range_lo:
            raise ValueOutOfRange(
                f"{self.indicator}: value {value} below declared range start {self.range_lo}"
            )
        for status_name, (lo, hi) in self.bands.items():
            if value >= lo and (hi is None or value < hi):
                return IndicatorStatus(status_name)
        # The overall range top is inclusive when the last band is bounded.
        top_name, (_, top_hi) = max(self.bands.items(), key=lambda kv: kv[1][0])
        if top_hi is not None and value == top_hi:
            return IndicatorStatus(top_name)
        raise ValueOutOfRange(f"{self.indicator}: value {value} outside declared bands")

    def to_dict(self) -> dict:
        return {
            "indicator": self.indicator,
            "unit": self.unit,
            **{name: list(interval) for name, interval in self.bands.items()},
        }

    @classmethod
    def from_dict(cls, data) -> "BandRule":
        data = require_mapping(data, "BandRule")
        check_fields(
            data, ["indicator", "unit", "normal", "uncertain", "abnormal"], ctx="BandRule"
        )
        bands = {}
        for name in _BAND_ORDER:
            interval = require_list(data[name], f"BandRule.{name}")
            if len(interval) != 2:
                raise SchemaError(f"BandRule.{name}: expected [lo, hi]")
            lo = float(interval[0])
            hi = float(interval[1]) if interval[1] is not None else None
            bands[name] = (lo, hi)
        return cls(
            indicator=get_str(data, "indicator", "BandRule"),
            unit=get_str(data, "unit", "BandRule"),
            bands=bands,
        )


@dataclass(frozen=True)
class KeywordRule:
    indicator: str
    yes_patterns: tuple[str, ...]
    no_patterns: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "yes_patterns", tuple(p.lower() for p in self.yes_patterns))
        object.__setattr__(self, "no_patterns", tuple(p.lower() for p in self.no_patterns))
        if set(self.yes_patterns) & set(self.no_patterns):
            raise SchemaError(f"keyword rule {self.indicator!r}: pattern lists must be disjoint")

    def to_dict(self) -> dict:
        return {
            "indicator": self.indicator,
            "yes_patterns": list(self.yes_patterns),
            "no_patterns": list(self.no_patterns),
        }

    @classmethod
    def from_dict(cls, data) -> "KeywordRule":
        data = require_mapping(data, "KeywordRule")
        check_fields(data, ["indicator", "yes_patterns", "no_patterns"], ctx="KeywordRule")
        return cls(
            indicator=get_str(data, "indicator", "KeywordRule"),
            yes_patterns=tuple(str(p) for p in require_list(data["yes_patterns"], "yes_patterns")),
            no_patterns=tuple(str(p) for p in require_list(data["no_patterns"], "no_patterns")),
        )


@dataclass(frozen=True)
class RuleSet:
    version: str
    bands: dict  # indicator -> BandRule
    keywords: dict  # indicator -> KeywordRule

    @classmethod
    def from_dict(cls, data) -> "RuleSet":
        data = require_mapping(data, "RuleSet")
        check_fields(data, ["version", "bands", "keywords"], ctx="RuleSet")
        bands = {}
        for entry in require_list(data["bands"], "RuleSet.bands"):
            rule = BandRule.from_dict(entry)
            bands[rule.indicator] = rule
        keywords = {}
        for entry in require_list(data["keywords"], "RuleSet.keywords"):
            rule = KeywordRule.from_dict(entry)
            keywords[rule.indicator] = rule
        return cls(version=get_str(data, "version", "RuleSet"), bands=bands, keywords=keywords)

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "bands": [rule.to_dict() for rule in self.bands.values()],
            "keywords": [rule.to_dict() for rule in self.keywords.values()],
        }


def load_rules(path: str | Path) -> RuleSet:
    return RuleSet.from_dict(load_json(Path(path).read_bytes()))


def default_rules() -> RuleSet:
    data = resources.files("dxflow").joinpath("data/default_rules.json").read_bytes()
    return RuleSet.from_dict(load_json(data))


def summarize_numeric(
    indicator: str, value: float, unit: str, rules: RuleSet
) -> IndicatorStatus:
    """Status of the band interval containing ``value``."""
    rule = rules.bands.get(indicator)
    if rule is None:
        raise NoRule(f"no band rule for indicator {indicator!r} (rules v{rules.version})")
    if rule.unit != unit:
        raise UnitMismatch(
            f"indicator {indicator!r}: value unit {unit!r} does not match rule unit {rule.unit!r}"
        )
    return rule.classify(value)


_WORD_RE = re.compile(r"\w+", re.UNICODE)


def _negated(text: str, match_start: int) -> bool:
    """True when a negation token occurs within the window before the match."""
    preceding = [m for m in _WORD_RE.finditer(text, 0, match_start)]
    window = preceding[-NEGATION_WINDOW:]
    return any(m.group() in NEGATION_TOKENS for m in window)


def summarize_text_rule(indicator: str, text: str, rules: RuleSet) -> IndicatorStatus:
    """Keyword-based collapse of free text to a status.

    A yes-pattern hit negated within the window counts as evidence of
    absence. Unambiguous yes evidence maps to abnormal, unambiguous no
    evidence to normal, anything else to uncertain.
    """
    rule = rules.keywords.get(indicator)
    if rule is None:
        raise NoRule(f"no keyword rule for indicator {indicator!r} (rules v{rules.version})")
    lowered = text.lower()
    yes_hit = False
    no_hit = any(pattern in lowered for pattern in rule.no_patterns)
    for pattern in rule.yes_patterns:
        start = lowered.find(pattern)
        while start != -1:
            if _negated(lowered, start):
                no_hit = True
            else:
                yes_hit = True
            start = lowered.find(pattern, start + 1)
    if yes_hit and not no_hit:
        return IndicatorStatus.ABNORMAL
    if no_hit and not yes_hit:
        return IndicatorStatus.NORMAL
    return IndicatorStatus.UNCERTAIN


def summarize_text_llm(indicator: str, text: str, llm) -> IndicatorStatus:
    """Chat-backed collapse to a single yes/no/uncertain token."""
    from .planning import load_prompt

    prompt = string.Template(load_prompt("summarize_text")).substitute(
        indicator=indicator, text=text
    )
    reply = llm.chat([("user", prompt)]).strip().lower().rstrip(".!")
    if reply == "yes":
        return IndicatorStatus.ABNORMAL
    if reply == "no":
        return IndicatorStatus.NORMAL
    return IndicatorStatus.UNCERTAIN
