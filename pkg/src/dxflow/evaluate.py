"""Classification metrics and the batch / ablation evaluation harness.

mACC is the mean of per-class recall (in percent), F1 the harmonic
precision/recall mean (percent), and AUC the Mann-Whitney statistic
over (sick, healthy) score pairs with ties counted half, which equals
trapezoidal integration of the ROC curve.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .decide import MoeConfig, decide_llm, moe_diagnose
from .errors import ClassEmpty, EmptyBatch, SchemaError, ValidationError
from .model import Diagnosis, DiagnosisLabel, IndicatorResult, IndicatorStatus, PatientCase
from .serde import check_fields, require_list, require_mapping

INDETERMINATE_POLICIES = ("count-as-wrong", "exclude")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise SchemaError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def add(self, truth: DiagnosisLabel, predicted_sick: bool) -> "ConfusionCounts":
        if truth is DiagnosisLabel.SICK:
            return ConfusionCounts(
                self.tp + int(predicted_sick), self.fp, self.fn + int(not predicted_sick), self.tn
            )
        return ConfusionCounts(
            self.tp, self.fp + int(predicted_sick), self.fn, self.tn + int(not predicted_sick)
        )

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


def macc(c: ConfusionCounts) -> float:
    """Mean per-class recall in percent."""
    if c.tp + c.fn == 0 or c.tn + c.fp == 0:
        raise ClassEmpty("mACC needs at least one member of each class")
    sensitivity = c.tp / (c.tp + c.fn)
    specificity = c.tn / (c.tn + c.fp)
    return 100.0 * (sensitivity + specificity) / 2.0


def f1(c: ConfusionCounts) -> float:
    """F1 in percent; 0 when the denominator vanishes."""
    denominator = 2 * c.tp + c.fp + c.fn
    if denominator == 0:
        return 0.0
    return 100.0 * 2 * c.tp / denominator


def auc(scored: Sequence[tuple[float, DiagnosisLabel]]) -> float:
    """Mann-Whitney AUC: P(score_sick > score_healthy), ties count 0.5."""
    sick = [s for s, label in scored if label is DiagnosisLabel.SICK]
    healthy = [s for s, label in scored if label is DiagnosisLabel.HEALTHY]
    if not sick or not healthy:
        raise ClassEmpty("AUC needs scores from both classes")
    wins = 0.0
    for s in sick:
        for h in healthy:
            if s > h:
                wins += 1.0
            elif s == h:
                wins += 0.5
    return wins / (len(sick) * len(healthy))


def roc_points(scored: Sequence[tuple[float, DiagnosisLabel]]) -> list[tuple[float, float, float]]:
    """(threshold, fpr, tpr) points sweeping the predicted-sick rule score >= t."""
    sick = [s for s, label in scored if label is DiagnosisLabel.SICK]
    healthy = [s for s, label in scored if label is DiagnosisLabel.HEALTHY]
    if not sick or not healthy:
        raise ClassEmpty("ROC needs scores from both classes")
    thresholds = sorted({s for s, _ in scored}, reverse=True)
    points = [(float("inf"), 0.0, 0.0)]
    for t in thresholds:
        tpr = sum(1 for s in sick if s >= t) / len(sick)
        fpr = sum(1 for h in healthy if h >= t) / len(healthy)
        points.append((t, fpr, tpr))
    if points[-1][1:] != (1.0, 1.0):
        points.append((float("-inf"), 1.0, 1.0))
    return points


def auc_trapezoidal(scored: Sequence[tuple[float, DiagnosisLabel]]) -> float:
    """Trapezoidal area under the ROC curve; agrees with :func:`auc`."""
    points = roc_points(scored)
    area = 0.0
    for (_, fpr0, tpr0), (_, fpr1, tpr1) in zip(points, points[1:]):
        area += (fpr1 - fpr0) * (tpr0 + tpr1) / 2.0
    return area


@dataclass(frozen=True)
class AblationSpec:
    """Indicator subsets and deciders for an ablation sweep."""

    indicator_subsets: tuple[tuple[str, ...], ...]
    deciders: tuple[str, ...] = ("single", "moe")
    uncertain_maps_to: str = "healthy"  # single-indicator mapping for uncertain

    def __post_init__(self):
        if not self.indicator_subsets:
            raise SchemaError("AblationSpec needs at least one indicator subset")
        for subset in self.indicator_subsets:
            if not subset:
                raise ValidationError("ablation subsets must be nonempty")
        for decider in self.deciders:
            if decider not in ("single", "moe", "llm"):
                raise SchemaError(f"unknown decider {decider!r}")
        if self.uncertain_maps_to not in ("healthy", "sick"):
            raise SchemaError("uncertain_maps_to must be healthy or sick")
        object.__setattr__(
            self, "indicator_subsets", tuple(tuple(s) for s in self.indicator_subsets)
        )
        object.__setattr__(self, "deciders", tuple(self.deciders))

    @classmethod
    def from_dict(cls, data) -> "AblationSpec":
        data = require_mapping(data, "AblationSpec")
        check_fields(
            data, ["indicator_subsets"], ["deciders", "uncertain_maps_to"], ctx="AblationSpec"
        )
        return cls(
            indicator_subsets=tuple(
                tuple(str(n) for n in require_list(subset, "indicator subset"))
                for subset in require_list(data["indicator_subsets"], "indicator_subsets")
            ),
            deciders=tuple(str(d) for d in data.get("deciders", ["single", "moe"])),
            uncertain_maps_to=str(data.get("uncertain_maps_to", "healthy")),
        )


@dataclass
class CaseOutcome:
    case_id: str
    ground_truth: DiagnosisLabel
    indicators: list[IndicatorResult]
    diagnosis: Diagnosis | None = None


def _aggregate(
    outcomes: Sequence[CaseOutcome],
    label_of: Callable[[CaseOutcome], DiagnosisLabel],
    indeterminate_policy: str,
) -> ConfusionCounts:
    counts = ConfusionCounts()
    for outcome in outcomes:
        label = label_of(outcome)
        if label is DiagnosisLabel.INDETERMINATE:
            if indeterminate_policy == "exclude":
                continue
            counts = counts.add(outcome.ground_truth, outcome.ground_truth is not DiagnosisLabel.SICK)
        else:
            counts = counts.add(outcome.ground_truth, label is DiagnosisLabel.SICK)
    return counts


def _metrics_block(counts: ConfusionCounts, scored) -> dict:
    try:
        macc_value = macc(counts)
    except ClassEmpty:
        macc_value = None
    block = {
        "counts": counts.to_dict(),
        "macc": macc_value,
        "f1": f1(counts),
        "auc": None,
    }
    if scored:
        try:
            block["auc"] = auc(scored)
        except ClassEmpty:
            pass
    return block


class BatchRunner:
    """Executes cases against a plan and aggregates evaluation metrics.

    ``execute`` must return the indicator list for one case; it is
    injected so the evaluation logic stays independent of tool wiring.
    """

    def __init__(
        self,
        execute: Callable[[PatientCase], list[IndicatorResult]],
        moe_config: MoeConfig | None = None,
        llm=None,
        indeterminate_policy: str = "count-as-wrong",
        parallel_cases: int = 4,
    ):
        if indeterminate_policy not in INDETERMINATE_POLICIES:
            raise SchemaError(
                f"indeterminate policy must be one of {INDETERMINATE_POLICIES}"
            )
        self._execute = execute
        self.moe_config = moe_config
        self.llm = llm
        self.indeterminate_policy = indeterminate_policy
        self.parallel_cases = max(1, parallel_cases)

    def _run_cases(self, cases: Sequence[PatientCase]) -> list[CaseOutcome]:
        if not cases:
            raise EmptyBatch("evaluation needs at least one case")
        for case in cases:
            if case.ground_truth is None:
                raise ValidationError(f"case {case.case_id!r} lacks a ground_truth label")
        with ThreadPoolExecutor(max_workers=self.parallel_cases) as pool:
            indicator_lists = list(pool.map(self._execute, cases))
        return [
            CaseOutcome(case.case_id, case.ground_truth, indicators)
            for case, indicators in zip(cases, indicator_lists)
        ]

    def _decide(self, outcome: CaseOutcome, decider: str, restrict: tuple[str, ...] | None) -> Diagnosis:
        indicators = outcome.indicators
        if restrict is not None:
            indicators = [i for i in indicators if i.name in restrict]
        if decider == "moe":
            if self.moe_config is None:
                raise ValidationError("moe decider requires a weight configuration")
            weights = self.moe_config.weights
            if restrict is not None:
                weights = {k: v for k, v in weights.items() if k in restrict}
                if not weights:
                    raise ValidationError(f"no weights left for subset {restrict}")
            config = MoeConfig(
                weights=weights, theta=self.moe_config.theta, normalize=self.moe_config.normalize
            )
            return moe_diagnose(indicators, config)
        if decider == "llm":
            if self.llm is None:
                raise ValidationError("llm decider requires a chat client")
            return decide_llm(indicators, self.llm)
        raise SchemaError(f"unknown decider {decider!r}")

    def run_batch(self, cases: Sequence[PatientCase], decider: str = "moe") -> dict:
        """Evaluation report over all cases with one decider."""
        outcomes = self._run_cases(cases)
        per_case = []
        scored = []
        for outcome in outcomes:
            outcome.diagnosis = self._decide(outcome, decider, None)
            row = {
                "case_id": outcome.case_id,
                "ground_truth": outcome.ground_truth.value,
                "label": outcome.diagnosis.label.value,
                "risk_score": outcome.diagnosis.risk_score,
                "indicators": {i.name: i.status.value for i in outcome.indicators},
            }
            per_case.append(row)
            if outcome.diagnosis.risk_score is not None:
                scored.append((outcome.diagnosis.risk_score, outcome.ground_truth))
        counts = _aggregate(outcomes, lambda o: o.diagnosis.label, self.indeterminate_policy)
        report = {
            "decider": decider,
            "n_cases": len(outcomes),
            "indeterminate_policy": self.indeterminate_policy,
            **_metrics_block(counts, scored),
            "per_case": per_case,
        }
        return report

    def run_ablation(self, cases: Sequence[PatientCase], spec: AblationSpec) -> dict:
        """One metrics row per (indicator subset, decider) pairing.

        Cases execute once against the full plan; subsets filter the
        collected indicators. ``single`` bypasses the decider: abnormal
        maps to sick, anything else to the configured side.
        """
        outcomes = self._run_cases(cases)
        rows = []
        for subset in spec.indicator_subsets:
            for decider in spec.deciders:
                if decider == "single" and len(subset) != 1:
                    continue
                if decider == "single":
                    name = subset[0]

                    def single_label(outcome: CaseOutcome, name=name) -> DiagnosisLabel:
                        status = next(
                            (i.status for i in outcome.indicators if i.name == name), None
                        )
                        if status is IndicatorStatus.ABNORMAL:
                            return DiagnosisLabel.SICK
                        if status is IndicatorStatus.UNCERTAIN and spec.uncertain_maps_to == "sick":
                            return DiagnosisLabel.SICK
                        return DiagnosisLabel.HEALTHY

                    counts = _aggregate(outcomes, single_label, self.indeterminate_policy)
                    scored = []
                else:
                    diagnoses = {
                        o.case_id: self._decide(o, decider, subset) for o in outcomes
                    }
                    counts = _aggregate(
                        outcomes,
                        lambda o: diagnoses[o.case_id].label,
                        self.indeterminate_policy,
                    )
                    scored = [
                        (diagnoses[o.case_id].risk_score, o.ground_truth)
                        for o in outcomes
                        if diagnoses[o.case_id].risk_score is not None
                    ]
                rows.append(
                    {
                        "indicators": list(subset),
                        "decider": decider,
                        **_metrics_block(counts, scored),
                    }
                )
        return {
            "n_cases": len(outcomes),
            "indeterminate_policy": self.indeterminate_policy,
            "uncertain_maps_to": spec.uncertain_maps_to,
            "rows": rows,
        }


def render_report_table(report: dict) -> str:
    """Plain-text table for a batch report or an ablation report."""
    lines = []
    if "rows" in report:
        header = f"{'indicators':<40} {'decider':<8} {'mACC':>7} {'F1':>7} {'AUC':>7}"
        lines.append(header)
        lines.append("-" * len(header))
        for row in report["rows"]:
            names = "+".join(row["indicators"])
            lines.append(
                f"{names:<40} {row['decider']:<8} "
                f"{_fmt(row['macc']):>7} {_fmt(row['f1']):>7} {_fmt(row['auc']):>7}"
            )
    else:
        counts = report["counts"]
        lines.append(f"cases: {report['n_cases']}  decider: {report['decider']}")
        lines.append(
            f"tp={counts['tp']} fp={counts['fp']} fn={counts['fn']} tn={counts['tn']}"
        )
        lines.append(
            f"mACC={_fmt(report['macc'])}  F1={_fmt(report['f1'])}  AUC={_fmt(report['auc'])}"
        )
    return "\n".join(lines)


def _fmt(value) -> str:
    if value is None:
        return "-"
    return f"{value:.2f}"


def write_roc_csv(path: str | Path, scored: Sequence[tuple[float, DiagnosisLabel]]) -> None:
    rows = ["threshold,tpr,fpr"]
    for threshold, fpr, tpr in roc_points(scored):
        rows.append(f"{threshold},{tpr},{fpr}")
    Path(path).write_text("\n".join(rows) + "\n", "utf-8")
