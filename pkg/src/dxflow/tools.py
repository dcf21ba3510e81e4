"""Uniform tool invocation: builtin metrics, mock fixtures, remote agents.

Every tool call goes through :func:`invoke` with a ToolRequest and comes
back as a ToolResponse. The wire protocol for remote agents is HTTP POST
``{address}/v1/invoke`` with these exact JSON shapes (plus a GET
``/healthz`` probe answering ``ok``).

Request inputs are ordered: the first entry is always the step's object
artifact; any further entries are extra artifacts referenced from step
params (sorted by param key) and are named after that key. Payloads up
to 1 MiB travel inline as base64, larger ones as file paths on a shared
volume.
"""
from __future__ import annotations

import base64
import hashlib
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import httpx

from . import imaging
from .errors import SchemaError, ToolError, ToolTimeout, ToolUnreachable, ValidationError
from .model import EvidenceKind, EvidenceRef
from .planning import (
    TAG_CROP_REGION,
    TAG_IMAGE_2D,
    TAG_SCALAR,
    EndpointKind,
    ToolDescriptor,
)
from .serde import (
    canonical_json_bytes,
    check_fields,
    get_str,
    load_json,
    require_list,
    require_mapping,
)

INLINE_PAYLOAD_LIMIT = 1 << 20  # 1 MiB

UNIT_RATIO = "ratio-dimensionless"
UNIT_PERCENT = "percent"
UNIT_MM = "mm"
UNIT_ML = "mL"
UNIT_G_PER_M2 = "g/m2"


@dataclass(frozen=True)
class Payload:
    """Exactly one of inline base64 content or a file path."""

    inline_base64: str | None = None
    path: str | None = None

    def __post_init__(self):
        if (self.inline_base64 is None) == (self.path is None):
            raise SchemaError("payload needs exactly one of inline_base64 or path")

    @classmethod
    def from_bytes(cls, data: bytes) -> "Payload":
        return cls(inline_base64=base64.b64encode(data).decode("ascii"))

    @classmethod
    def from_path(cls, path: str | Path) -> "Payload":
        return cls(path=str(path))

    def read_bytes(self) -> bytes:
        if self.inline_base64 is not None:
            try:
                return base64.b64decode(self.inline_base64, validate=True)
            except Exception as exc:
                raise SchemaError(f"invalid base64 payload: {exc}") from exc
        return Path(self.path).read_bytes()

    def to_dict(self) -> dict:
        if self.inline_base64 is not None:
            return {"inline_base64": self.inline_base64}
        return {"path": self.path}

    @classmethod
    def from_dict(cls, data) -> "Payload":
        data = require_mapping(data, "Payload")
        check_fields(data, [], ["inline_base64", "path"], ctx="Payload")
        return cls(
            inline_base64=data.get("inline_base64"),
            path=data.get("path"),
        )


@dataclass(frozen=True)
class ToolArtifact:
    """Named, typed payload inside a request or response."""

    name: str
    type: str
    payload: Payload

    def to_dict(self) -> dict:
        return {"name": self.name, "type": self.type, "payload": self.payload.to_dict()}

    @classmethod
    def from_dict(cls, data, *, strict: bool = True) -> "ToolArtifact":
        data = require_mapping(data, "ToolArtifact")
        check_fields(data, ["name", "type", "payload"], ctx="ToolArtifact", strict=strict)
        return cls(
            name=get_str(data, "name", "ToolArtifact"),
            type=get_str(data, "type", "ToolArtifact"),
            payload=Payload.from_dict(data["payload"]),
        )


@dataclass(frozen=True)
class ToolRequest:
    request_id: str
    tool_id: str
    action: str
    inputs: tuple[ToolArtifact, ...]
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))

    def to_dict(self) -> dict:
        return {
            "request_id": self.request_id,
            "tool_id": self.tool_id,
            "action": self.action,
            "inputs": [i.to_dict() for i in self.inputs],
            "params": dict(self.params),
        }

    def canonical_bytes(self) -> bytes:
        return canonical_json_bytes(self.to_dict())

    @classmethod
    def from_dict(cls, data, *, strict: bool = True) -> "ToolRequest":
        data = require_mapping(data, "ToolRequest")
        check_fields(
            data,
            ["request_id", "tool_id", "action", "inputs"],
            ["params"],
            ctx="ToolRequest",
            strict=strict,
        )
        return cls(
            request_id=get_str(data, "request_id", "ToolRequest"),
            tool_id=get_str(data, "tool_id", "ToolRequest"),
            action=get_str(data, "action", "ToolRequest"),
            inputs=tuple(
                ToolArtifact.from_dict(i, strict=strict)
                for i in require_list(data["inputs"], "ToolRequest.inputs")
            ),
            params=dict(require_mapping(data.get("params", {}), "ToolRequest.params")),
        )


@dataclass(frozen=True)
class ToolResponse:
    request_id: str
    status: str  # "ok" | "error"
    outputs: tuple[ToolArtifact, ...] = ()
    confidence: float | None = None
    message: str | None = None
    evidence: tuple[EvidenceRef, ...] = ()

    def __post_init__(self):
        if self.status not in ("ok", "error"):
            raise SchemaError(f"ToolResponse.status must be ok or error, got {self.status!r}")
        if self.status == "ok" and not self.outputs:
            raise SchemaError("ok responses must carry at least one output")
        if self.status == "error" and not self.message:
            raise SchemaError("error responses must carry a message")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise SchemaError(f"confidence out of [0, 1]: {self.confidence}")
        object.__setattr__(self, "outputs", tuple(self.outputs))
        object.__setattr__(self, "evidence", tuple(self.evidence))

    def to_dict(self) -> dict:
        return {
            "request_id": self.request_id,
            "status": self.status,
            "outputs": [o.to_dict() for o in self.outputs],
            "confidence": self.confidence,
            "message": self.message,
            "evidence": [e.to_dict() for e in self.evidence],
        }

    def canonical_bytes(self) -> bytes:
        return canonical_json_bytes(self.to_dict())

    @classmethod
    def from_dict(cls, data, *, strict: bool = True) -> "ToolResponse":
        data = require_mapping(data, "ToolResponse")
        check_fields(
            data,
            ["request_id", "status"],
            ["outputs", "confidence", "message", "evidence"],
            ctx="ToolResponse",
            strict=strict,
        )
        confidence = data.get("confidence")
        return cls(
            request_id=get_str(data, "request_id", "ToolResponse"),
            status=get_str(data, "status", "ToolResponse"),
            outputs=tuple(
                ToolArtifact.from_dict(o, strict=strict)
                for o in require_list(data.get("outputs", []), "ToolResponse.outputs")
            ),
            confidence=float(confidence) if confidence is not None else None,
            message=data.get("message"),
            evidence=tuple(
                EvidenceRef.from_dict(e, strict=strict)
                for e in require_list(data.get("evidence", []), "ToolResponse.evidence")
            ),
        )


def input_digest(inputs: Sequence[ToolArtifact]) -> str:
    """SHA-256 over the concatenated canonical payload bytes, in order."""
    hasher = hashlib.sha256()
    for artifact in inputs:
        hasher.update(artifact.payload.read_bytes())
    return hasher.hexdigest()


# -- mock endpoint ---------------------------------------------------------------

class MockToolRegistry:
    """Pinned responses keyed by (tool_id, action, input digest)."""

    def __init__(self):
        self._responses: dict[tuple[str, str, str], ToolResponse] = {}
        self._lock = threading.Lock()

    def register(self, tool_id: str, action: str, input_digest_hex: str, response: ToolResponse) -> None:
        with self._lock:
            self._responses[(tool_id, action, input_digest_hex)] = response

    def lookup(self, tool_id: str, action: str, input_digest_hex: str) -> ToolResponse | None:
        with self._lock:
            return self._responses.get((tool_id, action, input_digest_hex))

    def load_dir(self, directory: str | Path) -> int:
        """Load fixture files named ``<tool_id>__<action>__<digest>.json``.

        Path payloads inside fixtures are resolved against the fixture
        directory. Returns the number of fixtures loaded.
        """
        directory = Path(directory)
        count = 0
        for path in sorted(directory.glob("*.json")):
            parts = path.stem.split("__")
            if len(parts) != 3:
                raise SchemaError(f"bad mock fixture filename: {path.name}")
            response = ToolResponse.from_dict(load_json(path.read_bytes()))
            response = _resolve_response_paths(response, directory)
            self.register(parts[0], parts[1], parts[2], response)
            count += 1
        return count


def _resolve_response_paths(response: ToolResponse, base_dir: Path) -> ToolResponse:
    outputs = []
    for out in response.outputs:
        if out.payload.path is not None and not Path(out.payload.path).is_absolute():
            out = ToolArtifact(
                out.name, out.type, Payload.from_path(str((base_dir / out.payload.path).resolve()))
            )
        outputs.append(out)
    return ToolResponse(
        request_id=response.request_id,
        status=response.status,
        outputs=tuple(outputs),
        confidence=response.confidence,
        message=response.message,
        evidence=response.evidence,
    )


def register_mock(
    registry: MockToolRegistry,
    tool_id: str,
    action: str,
    input_digest_hex: str,
    response: ToolResponse,
) -> None:
    """Pin a response for a (tool, action, input digest) key; last wins."""
    registry.register(tool_id, action, input_digest_hex, response)


# -- builtin endpoint --------------------------------------------------------------

def _scalar_output(name: str, value: float, unit: str) -> ToolArtifact:
    body = canonical_json_bytes({"value": value, "unit": unit})
    return ToolArtifact(name=name, type=TAG_SCALAR, payload=Payload.from_bytes(body))


def _load_mask(artifact: ToolArtifact) -> imaging.Mask2D:
    if artifact.payload.path is not None:
        return imaging.read_mask(artifact.payload.path)
    return imaging.mask_from_pixels(imaging.parse_pgm(artifact.payload.read_bytes()))


def _load_volume(artifact: ToolArtifact) -> imaging.Volume3D:
    if artifact.payload.path is None:
        raise ValidationError("volume payloads must travel as file paths")
    return imaging.read_volume(artifact.payload.path)


def _named_input(request: ToolRequest, name: str) -> ToolArtifact:
    for artifact in request.inputs[1:]:
        if artifact.name == name:
            return artifact
    raise ValidationError(f"action {request.action!r} needs an input named {name!r}")


def _mask_evidence(artifact: ToolArtifact) -> list[EvidenceRef]:
    if artifact.payload.path is not None:
        return [
            EvidenceRef(EvidenceKind.MASK_FILE, artifact.payload.path, "segmentation mask input")
        ]
    return []


def _builtin_compute_vcdr(request: ToolRequest, workdir: Path) -> ToolResponse:
    mask = _load_mask(request.inputs[0])
    value = imaging.compute_vcdr(mask)
    trace = EvidenceRef(
        EvidenceKind.NUMERIC_TRACE,
        f"vcdr={value:.6f} disc_vertical_extent={imaging.disc_vertical_extent(mask)}",
        "vertical extents from pixel scan",
    )
    return ToolResponse(
        request_id=request.request_id,
        status="ok",
        outputs=(_scalar_output("vcdr", value, UNIT_RATIO),),
        evidence=tuple([trace] + _mask_evidence(request.inputs[0])),
    )


def _builtin_compute_rim_thickness(request: ToolRequest, workdir: Path) -> ToolResponse:
    mask = _load_mask(request.inputs[0])
    laterality = str(request.params.get("laterality", "right"))
    thicknesses = imaging.compute_rim_thickness(mask, laterality=laterality)
    extent = imaging.disc_vertical_extent(mask)
    # Scalar summary: thinnest rim relative to the disc's vertical extent.
    value = min(thicknesses.values()) / extent
    detail = " ".join(f"{k}={v}px" for k, v in sorted(thicknesses.items()))
    trace = EvidenceRef(
        EvidenceKind.NUMERIC_TRACE,
        f"{detail} disc_vertical_extent={extent}",
        "per-direction rim thickness from centroid ray walk",
    )
    return ToolResponse(
        request_id=request.request_id,
        status="ok",
        outputs=(_scalar_output("rim_thickness", value, UNIT_RATIO),),
        evidence=tuple([trace] + _mask_evidence(request.inputs[0])),
    )


def _builtin_compute_crop_region(request: ToolRequest, workdir: Path) -> ToolResponse:
    mask = _load_mask(request.inputs[0])
    factor = float(request.params.get("margin_factor", 1.5))
    region = imaging.crop_peripapillary(mask, margin_factor=factor)
    body = canonical_json_bytes(region.to_dict())
    evidence = EvidenceRef(
        EvidenceKind.CROP_REGION,
        f"{region.x0},{region.y0},{region.x1},{region.y1}",
        f"disc bounding region scaled by {factor}",
    )
    return ToolResponse(
        request_id=request.request_id,
        status="ok",
        outputs=(
            ToolArtifact(name="crop_region", type=TAG_CROP_REGION, payload=Payload.from_bytes(body)),
        ),
        evidence=(evidence,),
    )


def _builtin_apply_crop(request: ToolRequest, workdir: Path) -> ToolResponse:
    pixels = imaging.parse_pgm(request.inputs[0].payload.read_bytes())
    region_artifact = _named_input(request, "region")
    region = imaging.CropRegion.from_dict(load_json(region_artifact.payload.read_bytes()))
    cropped = imaging.apply_crop(pixels, region)
    out_path = workdir / f"{request.request_id.replace('/', '_')}_crop.pgm"
    imaging.write_pgm(out_path, cropped)
    evidence = EvidenceRef(
        EvidenceKind.CROP_REGION,
        f"{region.x0},{region.y0},{region.x1},{region.y1}",
        "pixel bounds applied to the source image",
    )
    return ToolResponse(
        request_id=request.request_id,
        status="ok",
        outputs=(
            ToolArtifact(name="crop", type=TAG_IMAGE_2D, payload=Payload.from_path(out_path)),
        ),
        evidence=(evidence,),
    )


def _builtin_compute_lvef(request: ToolRequest, workdir: Path) -> ToolResponse:
    ed = _load_volume(request.inputs[0])
    es = _load_volume(_named_input(request, "es_mask"))
    edv = imaging.compute_volume(ed, imaging.LABEL_LV_CAVITY)
    esv = imaging.compute_volume(es, imaging.LABEL_LV_CAVITY)
    value = imaging.compute_lvef(edv, esv)
    trace = EvidenceRef(
        EvidenceKind.NUMERIC_TRACE,
        f"edv={edv:.3f}mL esv={esv:.3f}mL",
        "cavity volumes at both phases",
    )
    return ToolResponse(
        request_id=request.request_id,
        status="ok",
        outputs=(_scalar_output("lvef", value, UNIT_PERCENT),),
        evidence=(trace,),
    )


def _builtin_compute_lv_diameter(request: ToolRequest, workdir: Path) -> ToolResponse:
    vol = _load_volume(request.inputs[0])
    value = imaging.compute_lv_diameter(vol)
    return ToolResponse(
        request_id=request.request_id,
        status="ok",
        outputs=(_scalar_output("lv_diameter", value, UNIT_MM),),
        evidence=(
            EvidenceRef(
                EvidenceKind.NUMERIC_TRACE,
                f"diameter={value:.3f}mm",
                "short-axis extent at mid long-axis slice",
            ),
        ),
    )


def _builtin_compute_lv_mass_index(request: ToolRequest, workdir: Path) -> ToolResponse:
    vol = _load_volume(request.inputs[0])
    body_artifact = _named_input(request, "body")
    body = require_mapping(load_json(body_artifact.payload.read_bytes()), "body metrics")
    height = float(body["height_cm"])
    weight = float(body["weight_kg"])
    myo = imaging.compute_volume(vol, imaging.LABEL_MYOCARDIUM)
    value = imaging.compute_lv_mass_index(myo, height, weight)
    trace = EvidenceRef(
        EvidenceKind.NUMERIC_TRACE,
        f"myo_volume={myo:.3f}mL height={height}cm weight={weight}kg "
        f"bsa={imaging.dubois_bsa(height, weight):.4f}m2",
        "mass over Du Bois body surface area",
    )
    return ToolResponse(
        request_id=request.request_id,
        status="ok",
        outputs=(_scalar_output("lvmi", value, UNIT_G_PER_M2),),
        evidence=(trace,),
    )


BUILTIN_ACTIONS: dict[str, Callable[[ToolRequest, Path], ToolResponse]] = {
    "compute_vcdr": _builtin_compute_vcdr,
    "compute_rim_thickness": _builtin_compute_rim_thickness,
    "compute_crop_region": _builtin_compute_crop_region,
    "apply_crop": _builtin_apply_crop,
    "compute_lvef": _builtin_compute_lvef,
    "compute_lv_diameter": _builtin_compute_lv_diameter,
    "compute_lv_mass_index": _builtin_compute_lv_mass_index,
}


# -- invocation --------------------------------------------------------------------

def invoke(
    descriptor: ToolDescriptor,
    request: ToolRequest,
    timeout_s: float = 120.0,
    *,
    mocks: MockToolRegistry | None = None,
    workdir: str | Path | None = None,
) -> ToolResponse:
    """Dispatch one tool call to its endpoint and return the response.

    Raises ToolTimeout / ToolUnreachable / ToolError for runtime
    failures; precondition violations raise ValidationError.
    """
    if request.tool_id != descriptor.tool_id:
        raise ValidationError(
            f"request targets {request.tool_id!r} but descriptor is {descriptor.tool_id!r}"
        )
    if not request.inputs:
        raise ValidationError("request carries no inputs")
    object_type = request.inputs[0].type
    if object_type not in descriptor.accepts:
        raise ValidationError(
            f"tool {descriptor.tool_id!r} does not accept object type {object_type!r}"
        )
    if descriptor.timeout_s is not None:
        timeout_s = descriptor.timeout_s

    if descriptor.endpoint.kind is EndpointKind.BUILTIN:
        handler = BUILTIN_ACTIONS.get(request.action)
        if handler is None:
            raise ToolError(f"no builtin action {request.action!r}")
        try:
            return handler(request, Path(workdir) if workdir is not None else Path("."))
        except (ValidationError, ToolError):
            raise
        except Exception as exc:
            raise ToolError(f"builtin {request.action!r} failed: {exc}") from exc

    if descriptor.endpoint.kind is EndpointKind.MOCK:
        if mocks is None:
            raise ToolError(f"no mock registry available for tool {descriptor.tool_id!r}")
        digest = input_digest(request.inputs)
        response = mocks.lookup(descriptor.tool_id, request.action, digest)
        if response is None:
            raise ToolError(
                f"no fixture for ({descriptor.tool_id}, {request.action}, {digest[:12]}...)"
            )
        return ToolResponse.from_dict({**response.to_dict(), "request_id": request.request_id})

    # remote
    url = descriptor.endpoint.address.rstrip("/") + "/v1/invoke"
    wire_request = _inline_small_payloads(request)
    try:
        with httpx.Client(timeout=timeout_s) as client:
            http_response = client.post(url, content=wire_request.canonical_bytes(),
                                        headers={"content-type": "application/json"})
    except httpx.TimeoutException as exc:
        raise ToolTimeout(f"tool {descriptor.tool_id!r} timed out after {timeout_s}s") from exc
    except httpx.HTTPError as exc:
        raise ToolUnreachable(f"tool {descriptor.tool_id!r} unreachable: {exc}") from exc
    if http_response.status_code != 200:
        raise ToolError(
            f"tool {descriptor.tool_id!r} returned HTTP {http_response.status_code}: "
            f"{http_response.text[:200]}"
        )
    response = ToolResponse.from_dict(load_json(http_response.content))
    if response.status == "error":
        raise ToolError(f"tool {descriptor.tool_id!r} error: {response.message}")
    return response


def _inline_small_payloads(request: ToolRequest) -> ToolRequest:
    """Path payloads up to 1 MiB travel inline over the wire; larger ones
    stay as paths on the shared volume."""
    inputs = []
    changed = False
    for artifact in request.inputs:
        payload = artifact.payload
        if payload.path is not None:
            path = Path(payload.path)
            if path.exists() and path.stat().st_size <= INLINE_PAYLOAD_LIMIT:
                payload = Payload.from_bytes(path.read_bytes())
                changed = True
        inputs.append(ToolArtifact(artifact.name, artifact.type, payload))
    if not changed:
        return request
    return ToolRequest(
        request_id=request.request_id,
        tool_id=request.tool_id,
        action=request.action,
        inputs=tuple(inputs),
        params=request.params,
    )


def probe_health(address: str, timeout_s: float = 5.0) -> bool:
    try:
        with httpx.Client(timeout=timeout_s) as client:
            response = client.get(address.rstrip("/") + "/healthz")
        return response.status_code == 200 and response.text.strip() == "ok"
    except httpx.HTTPError:
        return False
