"""Engine configuration: one JSON file wires every backend together."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import SchemaError
from .serde import check_fields, digest_of, load_json, require_mapping


@dataclass(frozen=True)
class LlmConfig:
    endpoint: str = ""
    model: str = "default"
    temperature: float = 0.0
    api_key_env: str = ""
    cache_dir: str | None = None
    mode: str = "replay"

    def __post_init__(self):
        if self.mode not in ("live", "record", "replay"):
            raise SchemaError(f"llm.mode must be live, record or replay, got {self.mode!r}")
        if self.mode == "replay" and not self.cache_dir:
            raise SchemaError("llm.mode replay requires llm.cache_dir")
        if self.mode in ("record", "replay") and self.temperature != 0.0:
            raise SchemaError("llm.temperature must be 0 in record/replay modes")

    def to_dict(self) -> dict:
        return {
            "endpoint": self.endpoint,
            "model": self.model,
            "temperature": self.temperature,
            "api_key_env": self.api_key_env,
            "cache_dir": self.cache_dir,
            "mode": self.mode,
        }


@dataclass(frozen=True)
class DeciderConfig:
    weights_file: str | None = None  # None: packaged defaults
    theta: float | None = None  # None: value from the weights file

    def to_dict(self) -> dict:
        return {"weights_file": self.weights_file, "theta": self.theta}


@dataclass(frozen=True)
class SummarizerConfig:
    rule_file: str | None = None  # None: packaged defaults

    def to_dict(self) -> dict:
        return {"rule_file": self.rule_file}


@dataclass(frozen=True)
class OrchestratorConfig:
    worker_pool_size: int = 4
    step_timeout_s: float = 120.0

    def __post_init__(self):
        if self.worker_pool_size < 1:
            raise SchemaError("orchestrator.worker_pool_size must be >= 1")
        if self.step_timeout_s <= 0:
            raise SchemaError("orchestrator.step_timeout_s must be > 0")

    def to_dict(self) -> dict:
        return {
            "worker_pool_size": self.worker_pool_size,
            "step_timeout_s": self.step_timeout_s,
        }


@dataclass(frozen=True)
class EngineConfig:
    llm: LlmConfig = LlmConfig(cache_dir="llm-cache")
    decider: DeciderConfig = DeciderConfig()
    summarizer: SummarizerConfig = SummarizerConfig()
    orchestrator: OrchestratorConfig = OrchestratorConfig()
    registry_file: str | None = None  # None: packaged default registry
    mock_fixtures_dir: str | None = None

    def to_dict(self) -> dict:
        return {
            "llm": self.llm.to_dict(),
            "decider": self.decider.to_dict(),
            "summarizer": self.summarizer.to_dict(),
            "orchestrator": self.orchestrator.to_dict(),
            "registry_file": self.registry_file,
            "mock_fixtures_dir": self.mock_fixtures_dir,
        }

    def digest(self) -> str:
        return digest_of(self.to_dict())

    @classmethod
    def from_dict(cls, data, base_dir: Path | None = None) -> "EngineConfig":
        data = require_mapping(data, "EngineConfig")
        check_fields(
            data,
            [],
            ["llm", "decider", "summarizer", "orchestrator", "registry_file", "mock_fixtures_dir"],
            ctx="EngineConfig",
        )

        def resolve(value):
            if value is None or base_dir is None:
                return value
            return str((base_dir / value).resolve())

        llm_data = require_mapping(data.get("llm", {}), "EngineConfig.llm")
        check_fields(
            llm_data,
            [],
            ["endpoint", "model", "temperature", "api_key_env", "cache_dir", "mode"],
            ctx="EngineConfig.llm",
        )
        decider_data = require_mapping(data.get("decider", {}), "EngineConfig.decider")
        check_fields(decider_data, [], ["weights_file", "theta"], ctx="EngineConfig.decider")
        summarizer_data = require_mapping(data.get("summarizer", {}), "EngineConfig.summarizer")
        check_fields(summarizer_data, [], ["rule_file"], ctx="EngineConfig.summarizer")
        orch_data = require_mapping(data.get("orchestrator", {}), "EngineConfig.orchestrator")
        check_fields(
            orch_data, [], ["worker_pool_size", "step_timeout_s"], ctx="EngineConfig.orchestrator"
        )
        theta = decider_data.get("theta")
        return cls(
            llm=LlmConfig(
                endpoint=str(llm_data.get("endpoint", "")),
                model=str(llm_data.get("model", "default")),
                temperature=float(llm_data.get("temperature", 0.0)),
                api_key_env=str(llm_data.get("api_key_env", "")),
                cache_dir=resolve(llm_data.get("cache_dir")),
                mode=str(llm_data.get("mode", "replay")),
            ),
            decider=DeciderConfig(
                weights_file=resolve(decider_data.get("weights_file")),
                theta=float(theta) if theta is not None else None,
            ),
            summarizer=SummarizerConfig(rule_file=resolve(summarizer_data.get("rule_file"))),
            orchestrator=OrchestratorConfig(
                worker_pool_size=int(orch_data.get("worker_pool_size", 4)),
                step_timeout_s=float(orch_data.get("step_timeout_s", 120.0)),
            ),
            registry_file=resolve(data.get("registry_file")),
            mock_fixtures_dir=resolve(data.get("mock_fixtures_dir")),
        )

    @classmethod
    def load(cls, path: str | Path) -> "EngineConfig":
        path = Path(path)
        return cls.from_dict(load_json(path.read_bytes()), base_dir=path.parent)
