"""Chat-completion client with transcript caching.

Requests are keyed by a SHA-256 digest over the canonical request
(model id, messages, temperature). ``record`` mode performs the live
call and persists the transcript; ``replay`` serves cached transcripts
and never touches the network, which keeps the test suite and batch
evaluations deterministic. Cache writes are atomic (temp file plus
rename) so concurrent recorders produce exactly one entry.
"""
from __future__ import annotations

import datetime as _dt
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import httpx

from .errors import ReplayMiss, SchemaError, TransportError
from .serde import canonical_json_bytes, dump_json_bytes, load_json, require_mapping, sha256_hex

MODES = ("live", "record", "replay")


def request_digest(model: str, messages: list[tuple[str, str]], temperature: float) -> str:
    payload = {
        "model": model,
        "messages": [{"role": role, "content": text} for role, text in messages],
        "temperature": temperature,
    }
    return sha256_hex(canonical_json_bytes(payload))


@dataclass(frozen=True)
class ChatTranscript:
    request_digest: str
    response_text: str
    recorded_at: str

    def to_dict(self) -> dict:
        return {
            "request_digest": self.request_digest,
            "response_text": self.response_text,
            "recorded_at": self.recorded_at,
        }

    @classmethod
    def from_dict(cls, data) -> "ChatTranscript":
        data = require_mapping(data, "ChatTranscript")
        return cls(
            request_digest=str(data["request_digest"]),
            response_text=str(data["response_text"]),
            recorded_at=str(data.get("recorded_at", "")),
        )


class ChatClient:
    """Backend-agnostic chat client; see EngineConfig.llm for knobs."""

    def __init__(
        self,
        endpoint: str = "",
        model: str = "default",
        temperature: float = 0.0,
        api_key_env: str = "",
        cache_dir: str | Path | None = None,
        mode: str = "replay",
        transport: httpx.BaseTransport | None = None,
        timeout_s: float = 60.0,
    ):
        if mode not in MODES:
            raise SchemaError(f"chat mode must be one of {MODES}, got {mode!r}")
        if mode in ("record", "replay") and cache_dir is None:
            raise SchemaError(f"{mode} mode requires a cache directory")
        if mode in ("record", "replay") and temperature != 0.0:
            raise SchemaError("temperature must be 0 in record/replay modes")
        self.endpoint = endpoint
        self.model = model
        self.temperature = temperature
        self.api_key_env = api_key_env
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self.mode = mode
        self._transport = transport
        self._timeout_s = timeout_s

    def _cache_path(self, digest: str) -> Path:
        assert self.cache_dir is not None
        return self.cache_dir / f"{digest}.json"

    def _read_cache(self, digest: str) -> str | None:
        path = self._cache_path(digest)
        if not path.exists():
            return None
        return ChatTranscript.from_dict(load_json(path.read_bytes())).response_text

    def _write_cache(self, digest: str, response_text: str) -> None:
        assert self.cache_dir is not None
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        transcript = ChatTranscript(
            request_digest=digest,
            response_text=response_text,
            recorded_at=_dt.datetime.now(_dt.timezone.utc).isoformat(),
        )
        fd, tmp_name = tempfile.mkstemp(dir=self.cache_dir, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(dump_json_bytes(transcript.to_dict()))
            os.replace(tmp_name, self._cache_path(digest))
        finally:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)

    def _call_endpoint(self, messages: list[tuple[str, str]]) -> str:
        headers = {}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        body = {
            "model": self.model,
            "messages": [{"role": role, "content": text} for role, text in messages],
            "temperature": self.temperature,
        }
        try:
            with httpx.Client(transport=self._transport, timeout=self._timeout_s) as client:
                response = client.post(self.endpoint, json=body, headers=headers)
        except httpx.HTTPError as exc:
            raise TransportError(f"chat endpoint unreachable: {exc}") from exc
        if response.status_code != 200:
            raise TransportError(
                f"chat endpoint returned HTTP {response.status_code}", response.status_code
            )
        data = require_mapping(response.json(), "chat response")
        try:
            return str(data["choices"][0]["message"]["content"])
        except (KeyError, IndexError, TypeError):
            raise TransportError("chat response missing choices[0].message.content") from None

    def chat(self, messages: list[tuple[str, str]]) -> str:
        digest = request_digest(self.model, messages, self.temperature)
        if self.mode == "replay":
            cached = self._read_cache(digest)
            if cached is None:
                raise ReplayMiss(digest)
            return cached
        text = self._call_endpoint(messages)
        if self.mode == "record":
            self._write_cache(digest, text)
        return text

    def seed_transcript(self, messages: list[tuple[str, str]], response_text: str) -> str:
        """Persist a transcript without a network call; returns the digest.

        Used to pin golden replies for replay-mode runs.
        """
        digest = request_digest(self.model, messages, self.temperature)
        self._write_cache(digest, response_text)
        return digest
