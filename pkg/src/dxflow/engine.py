"""High-level engine shared by the CLI and the HTTP service.

Both front ends call the same methods here, so identical inputs and
configuration produce byte-identical output documents. Every output
file embeds a provenance block: config digest, summarizer rule version
and plan digest.
"""
from __future__ import annotations

import threading
from importlib import resources
from pathlib import Path
from typing import Sequence

from .config import EngineConfig
from .decide import DEFAULT_THETA, MoeConfig, decide_llm, load_moe_config, moe_diagnose
from .errors import SchemaError, ValidationError
from .evaluate import AblationSpec, BatchRunner, render_report_table, write_roc_csv
from .knowledge import RetrievedCriterion, ingest, load_corpus
from .llm import ChatClient
from .model import Diagnosis, PatientCase
from .orchestrate import ToolInvoker, execute_plan
from .planning import (
    DiagnosticPlan,
    ToolDescriptor,
    compile_plan_llm,
    compile_plan_template,
    load_registry,
    validate_plan,
)
from .serde import dump_json_bytes, load_json
from .summarize import RuleSet, default_rules, load_rules
from .tools import MockToolRegistry

DEFAULT_RETRIEVE_K = 8


def _packaged(name: str) -> bytes:
    return resources.files("dxflow").joinpath(f"data/{name}").read_bytes()


class Engine:
    def __init__(self, config: EngineConfig | None = None):
        self.config = config or EngineConfig()
        self._lock = threading.Lock()  # guards lazy wiring under concurrent cases
        self._registry: list[ToolDescriptor] | None = None
        self._rules: RuleSet | None = None
        self._moe: MoeConfig | None = None
        self._mocks: MockToolRegistry | None = None
        self._chat: ChatClient | None = None

    # -- lazily wired components ------------------------------------------------

    @property
    def registry(self) -> list[ToolDescriptor]:
        with self._lock:
            if self._registry is None:
                if self.config.registry_file:
                    self._registry = load_registry(self.config.registry_file)
                else:
                    from .serde import require_list

                    data = require_list(load_json(_packaged("default_registry.json")), "registry")
                    self._registry = [ToolDescriptor.from_dict(e) for e in data]
            return self._registry

    @property
    def rules(self) -> RuleSet:
        with self._lock:
            if self._rules is None:
                if self.config.summarizer.rule_file:
                    self._rules = load_rules(self.config.summarizer.rule_file)
                else:
                    self._rules = default_rules()
            return self._rules

    @property
    def moe_config(self) -> MoeConfig:
        with self._lock:
            if self._moe is None:
                if self.config.decider.weights_file:
                    moe = load_moe_config(self.config.decider.weights_file)
                else:
                    moe = MoeConfig.from_dict(load_json(_packaged("default_weights.json")))
                if self.config.decider.theta is not None:
                    moe = MoeConfig(
                        weights=moe.weights,
                        theta=self.config.decider.theta,
                        normalize=moe.normalize,
                    )
                self._moe = moe
            return self._moe

    @property
    def mocks(self) -> MockToolRegistry:
        with self._lock:
            if self._mocks is None:
                mocks = MockToolRegistry()
                if self.config.mock_fixtures_dir:
                    mocks.load_dir(self.config.mock_fixtures_dir)
                self._mocks = mocks
            return self._mocks

    @property
    def chat(self) -> ChatClient:
        with self._lock:
            if self._chat is None:
                llm = self.config.llm
                self._chat = ChatClient(
                    endpoint=llm.endpoint,
                    model=llm.model,
                    temperature=llm.temperature,
                    api_key_env=llm.api_key_env,
                    cache_dir=llm.cache_dir,
                    mode=llm.mode,
                )
            return self._chat

    def invoker(self) -> ToolInvoker:
        return ToolInvoker(
            self.registry,
            mocks=self.mocks,
            default_timeout_s=self.config.orchestrator.step_timeout_s,
        )

    # -- provenance ----------------------------------------------------------------

    def provenance(self, plan: DiagnosticPlan | None = None) -> dict:
        block = {
            "config_digest": self.config.digest(),
            "rule_version": self.rules.version,
        }
        block["plan_digest"] = plan.digest() if plan is not None else None
        return block

    # -- planning --------------------------------------------------------------------

    def retrieve_criteria(
        self, disease_id: str, criteria_dir: str | Path, query: str | None = None, k: int = DEFAULT_RETRIEVE_K
    ) -> list[RetrievedCriterion]:
        corpus = load_corpus(criteria_dir)
        index = ingest(corpus)
        return index.retrieve(query or f"{disease_id} diagnosis criteria indicators", k)

    def build_plan(
        self,
        disease_id: str,
        backend: str = "template",
        criteria: Sequence[RetrievedCriterion] = (),
    ) -> DiagnosticPlan:
        if backend == "template":
            plan = compile_plan_template(disease_id, self.registry, criteria)
        elif backend == "llm":
            plan = compile_plan_llm(list(criteria), self.registry, disease_id, self.chat)
        else:
            raise SchemaError(f"unknown plan backend {backend!r}")
        report = validate_plan(plan, self.registry)
        if not report.ok:
            from .errors import PlanInvalid

            raise PlanInvalid(report.findings)
        return plan

    # -- diagnosis --------------------------------------------------------------------

    def diagnose_case(
        self,
        case: PatientCase,
        plan: DiagnosticPlan,
        decider: str,
        run_dir: str | Path,
    ) -> tuple[Diagnosis, bytes]:
        """Execute, decide and write the run directory; returns the
        diagnosis plus the exact bytes written to diagnosis.json."""
        provenance = self.provenance(plan)
        indicators, ctx = execute_plan(
            case,
            plan,
            self.invoker(),
            self.rules,
            run_dir,
            pool_size=self.config.orchestrator.worker_pool_size,
            provenance=provenance,
        )
        if decider == "moe":
            diagnosis = moe_diagnose(indicators, self.moe_config, rule_version=self.rules.version)
        elif decider == "llm":
            diagnosis = decide_llm(indicators, self.chat, disease_id=plan.disease_id)
        else:
            raise SchemaError(f"unknown decider {decider!r}")
        doc = {**diagnosis.to_dict(), "provenance": provenance}
        payload = dump_json_bytes(doc)
        (ctx.run_dir / "diagnosis.json").write_bytes(payload)
        return diagnosis, payload

    # -- evaluation ---------------------------------------------------------------------

    def _batch_runner(self, plan: DiagnosticPlan, work_dir: str | Path, decider: str) -> BatchRunner:
        work_dir = Path(work_dir)
        provenance = self.provenance(plan)
        invoker = self.invoker()
        rules = self.rules

        def execute(case: PatientCase):
            indicators, _ = execute_plan(
                case,
                plan,
                invoker,
                rules,
                work_dir / case.case_id,
                pool_size=self.config.orchestrator.worker_pool_size,
                provenance=provenance,
            )
            return indicators

        return BatchRunner(
            execute,
            moe_config=self.moe_config,
            llm=self.chat if decider == "llm" else None,
            parallel_cases=self.config.orchestrator.worker_pool_size,
        )

    def eval_batch(
        self,
        cases: Sequence[PatientCase],
        plan: DiagnosticPlan,
        decider: str,
        work_dir: str | Path,
        roc_path: str | Path | None = None,
    ) -> dict:
        runner = self._batch_runner(plan, work_dir, decider)
        report = runner.run_batch(cases, decider=decider)
        report["provenance"] = self.provenance(plan)
        if roc_path is not None:
            scored = [
                (row["risk_score"], _truth(row["ground_truth"]))
                for row in report["per_case"]
                if row["risk_score"] is not None
            ]
            write_roc_csv(roc_path, scored)
        return report

    def run_ablation(
        self,
        cases: Sequence[PatientCase],
        plan: DiagnosticPlan,
        spec: AblationSpec,
        work_dir: str | Path,
    ) -> dict:
        deciders = set(spec.deciders)
        runner = self._batch_runner(plan, work_dir, "llm" if "llm" in deciders else "moe")
        report = runner.run_ablation(cases, spec)
        report["provenance"] = self.provenance(plan)
        return report


def _truth(value: str):
    from .model import DiagnosisLabel

    return DiagnosisLabel.parse(value)


def load_cases(directory: str | Path) -> list[PatientCase]:
    """All case files (*.json) in a directory, payload paths resolved."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ValidationError(f"cases directory not found: {directory}")
    cases = []
    for path in sorted(directory.glob("*.json")):
        cases.append(PatientCase.from_dict(load_json(path.read_bytes()), base_dir=path.parent))
    return cases


__all__ = [
    "Engine",
    "load_cases",
    "render_report_table",
    "DEFAULT_RETRIEVE_K",
    "DEFAULT_THETA",
]
