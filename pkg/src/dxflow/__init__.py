"""dxflow: a diagnostic workflow engine.

Compiles retrieved clinical criteria into validated multi-step plans,
executes them over multi-modal patient inputs via pluggable tool
agents, and produces evidence-backed diagnoses through a weighted
indicator score or a chat-backed decider.
"""
from .config import EngineConfig
from .decide import MoeConfig, MoeOutcome, decide_llm, moe_score
from .engine import Engine, load_cases
from .evaluate import AblationSpec, ConfusionCounts, auc, f1, macc
from .knowledge import DocumentRecord, KnowledgeIndex, RetrievedCriterion, ingest
from .model import (
    Diagnosis,
    DiagnosisLabel,
    EvidenceKind,
    EvidenceRef,
    IndicatorResult,
    IndicatorStatus,
    Modality,
    PatientCase,
    encode_status,
)
from .orchestrate import ExecutionContext, ToolInvoker, execute_plan, select_steps
from .planning import (
    DiagnosticPlan,
    PlanStep,
    ToolDescriptor,
    compile_plan_llm,
    compile_plan_template,
    validate_plan,
)
from .summarize import BandRule, KeywordRule, RuleSet, summarize_numeric, summarize_text_rule
from .tools import MockToolRegistry, ToolRequest, ToolResponse, invoke, register_mock

__version__ = "0.1.0"

__all__ = [
    "AblationSpec",
    "BandRule",
    "ConfusionCounts",
    "Diagnosis",
    "DiagnosisLabel",
    "DiagnosticPlan",
    "DocumentRecord",
    "Engine",
    "EngineConfig",
    "EvidenceKind",
    "EvidenceRef",
    "ExecutionContext",
    "IndicatorResult",
    "IndicatorStatus",
    "KeywordRule",
    "KnowledgeIndex",
    "MockToolRegistry",
    "Modality",
    "MoeConfig",
    "MoeOutcome",
    "PatientCase",
    "PlanStep",
    "RetrievedCriterion",
    "RuleSet",
    "ToolDescriptor",
    "ToolInvoker",
    "ToolRequest",
    "ToolResponse",
    "auc",
    "compile_plan_llm",
    "compile_plan_template",
    "decide_llm",
    "encode_status",
    "execute_plan",
    "f1",
    "ingest",
    "invoke",
    "load_cases",
    "macc",
    "moe_score",
    "register_mock",
    "select_steps",
    "summarize_numeric",
    "summarize_text_rule",
    "validate_plan",
]
