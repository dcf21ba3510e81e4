"""Shared fixtures: a synthetic glaucoma fixture set with pinned tool mocks.

The set has 20 cases (10 sick, 10 healthy). Each case maps to one of 8
mask geometries that realize a chosen (vcdr, rim thickness) status pair,
plus pinned VQA answers for the two text indicators. The per-case
statuses, the resulting confusion counts and the metric values are
frozen here and asserted by the evaluation and acceptance tests.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from dxflow import imaging
from dxflow.config import EngineConfig
from dxflow.engine import Engine
from dxflow.model import IndicatorStatus
from dxflow.planning import save_plan

# Cup row spans (inclusive) inside a disc spanning rows 100..149 and
# cols 80..159; the cup occupies cols 90..149. First letter: vcdr
# status, second: rim-thickness status (A abnormal, U uncertain, N normal).
MASK_SHAPES = {
    "AA": (104, 145),
    "AU": (107, 142),
    "AN": (110, 139),
    "UA": (104, 130),
    "UN": (111, 137),
    "NA": (104, 121),
    "NU": (106, 123),
    "NN": (116, 133),
}

DH_TEXTS = {
    "A": "Hemorrhage present near the superior disc rim.",
    "N": "No hemorrhage is visible on the optic disc.",
    "U": "Image quality too poor to assess.",
}
PPA_TEXTS = {
    "A": "Peripapillary atrophy is clearly visible around the disc.",
    "N": "The peripapillary region appears normal.",
    "U": "Image quality too poor to assess the region.",
}

# (case_id, mask shape, ppa status, dh status, ground truth)
CASE_TABLE = [
    ("s01", "AA", "A", "A", "sick"),
    ("s02", "AA", "A", "N", "sick"),
    ("s03", "AN", "A", "A", "sick"),
    ("s04", "AA", "N", "N", "sick"),
    ("s05", "NA", "A", "A", "sick"),
    ("s06", "AU", "A", "N", "sick"),
    ("s07", "AA", "U", "U", "sick"),
    ("s08", "UA", "A", "N", "sick"),
    ("s09", "AN", "N", "A", "sick"),
    ("s10", "NN", "A", "N", "sick"),
    ("h01", "NN", "N", "N", "healthy"),
    ("h02", "NN", "N", "A", "healthy"),
    ("h03", "NA", "N", "N", "healthy"),
    ("h04", "NN", "U", "N", "healthy"),
    ("h05", "UN", "N", "N", "healthy"),
    ("h06", "NA", "N", "A", "healthy"),
    ("h07", "AN", "N", "N", "healthy"),
    ("h08", "NN", "A", "N", "healthy"),
    ("h09", "NU", "N", "A", "healthy"),
    ("h10", "AN", "A", "N", "healthy"),
]

# Frozen expectations for the 20-case set under the default weights
# {vcdr 0.4, rim 0.2, ppa 0.2, dh 0.2}, theta 0.5. Derived by direct
# evaluation of the weighted-sum rule over the status table above.
EXPECTED_COUNTS = {"tp": 9, "fp": 1, "fn": 1, "tn": 9}
EXPECTED_MACC = 90.0
EXPECTED_F1 = 90.0
EXPECTED_AUC = 0.92
EXPECTED_SINGLE_MACC = {
    "vcdr": 75.0,
    "rim_thickness": 70.0,
    "ppa": 75.0,
    "disc_hemorrhage": 55.00000000000001,
}

_STATUS = {
    "A": IndicatorStatus.ABNORMAL,
    "U": IndicatorStatus.UNCERTAIN,
    "N": IndicatorStatus.NORMAL,
}


def build_shape_mask(shape: str) -> imaging.Mask2D:
    top, bottom = MASK_SHAPES[shape]
    grid = np.zeros((256, 256), dtype=np.uint8)
    grid[100:150, 80:160] = imaging.LABEL_DISC
    grid[top : bottom + 1, 90:150] = imaging.LABEL_CUP
    return imaging.Mask2D(256, 256, grid)


def build_fundus(case_index: int) -> np.ndarray:
    pixels = np.full((256, 256), 30, dtype=np.uint8)
    pixels[100:150, 80:160] = 160
    pixels[100, 100] = 50 + case_index  # per-case marker inside the crop region
    return pixels


def pgm_bytes(pixels: np.ndarray) -> bytes:
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.astype(np.uint8).tobytes()


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _mock_text_response(answer: str) -> dict:
    return {
        "request_id": "fixture",
        "status": "ok",
        "outputs": [
            {
                "name": "answer",
                "type": "text",
                "payload": {"inline_base64": __import__("base64").b64encode(answer.encode()).decode()},
            }
        ],
        "confidence": None,
        "message": None,
        "evidence": [
            {"kind": "text-excerpt", "locator": answer, "description": "vqa answer"}
        ],
    }


def _mock_mask_response(mask_rel_path: str) -> dict:
    return {
        "request_id": "fixture",
        "status": "ok",
        "outputs": [
            {"name": "mask", "type": "mask-2d", "payload": {"path": mask_rel_path}}
        ],
        "confidence": None,
        "message": None,
        "evidence": [],
    }


@dataclass(frozen=True)
class CaseRow:
    case_id: str
    shape: str
    ppa: str
    dh: str
    ground_truth: str

    def expected_statuses(self) -> dict:
        return {
            "vcdr": _STATUS[self.shape[0]],
            "rim_thickness": _STATUS[self.shape[1]],
            "ppa": _STATUS[self.ppa],
            "disc_hemorrhage": _STATUS[self.dh],
        }


@dataclass(frozen=True)
class FixtureSet:
    root: Path
    cases_dir: Path
    mocks_dir: Path
    engine_config_path: Path
    plan_path: Path
    ablation_path: Path
    golden_case_path: Path  # extra case: statuses (A, N, U, N)
    rows: tuple[CaseRow, ...]

    def engine(self) -> Engine:
        return Engine(EngineConfig.load(self.engine_config_path))


def _write_case_mocks(
    mocks_dir: Path, image_bytes: bytes, crop_bytes: bytes, shape: str, ppa: str, dh: str
) -> None:
    image_digest = sha256_hex(image_bytes)
    crop_digest = sha256_hex(crop_bytes)
    entries = {
        f"seg-cup-disc__segment_cup_disc__{image_digest}": _mock_mask_response(
            f"../masks/{shape}.pgm"
        ),
        f"vqa-general__query__{image_digest}": _mock_text_response(DH_TEXTS[dh]),
        f"vqa-general__query__{crop_digest}": _mock_text_response(PPA_TEXTS[ppa]),
    }
    for stem, doc in entries.items():
        (mocks_dir / f"{stem}.json").write_text(json.dumps(doc, indent=2), "utf-8")


def build_fixture_set(root: Path) -> FixtureSet:
    masks_dir = root / "masks"
    images_dir = root / "images"
    cases_dir = root / "cases"
    extra_dir = root / "cases_extra"
    mocks_dir = root / "mocks"
    for directory in (masks_dir, images_dir, cases_dir, extra_dir, mocks_dir):
        directory.mkdir(parents=True, exist_ok=True)

    for shape in MASK_SHAPES:
        imaging.write_mask(masks_dir / f"{shape}.pgm", build_shape_mask(shape))

    # The crop region is identical for every mask (same disc bounding box).
    any_mask = build_shape_mask("AA")
    region = imaging.crop_peripapillary(any_mask, 1.5)

    rows = tuple(CaseRow(*entry) for entry in CASE_TABLE)
    for index, row in enumerate(rows):
        pixels = build_fundus(index)
        image_bytes = pgm_bytes(pixels)
        (images_dir / f"{row.case_id}.pgm").write_bytes(image_bytes)
        crop_bytes = pgm_bytes(imaging.apply_crop(pixels, region))
        _write_case_mocks(mocks_dir, image_bytes, crop_bytes, row.shape, row.ppa, row.dh)
        case_doc = {
            "case_id": row.case_id,
            "inputs": {
                "fundus": {"modality": "fundus-2d", "path": f"../images/{row.case_id}.pgm"}
            },
            "metadata": None,
            "ground_truth": row.ground_truth,
        }
        (cases_dir / f"{row.case_id}.json").write_text(json.dumps(case_doc, indent=2), "utf-8")

    # Extra golden case with statuses (abnormal, normal, uncertain, normal).
    golden_pixels = build_fundus(97)
    golden_bytes = pgm_bytes(golden_pixels)
    (images_dir / "golden.pgm").write_bytes(golden_bytes)
    golden_crop = pgm_bytes(imaging.apply_crop(golden_pixels, region))
    _write_case_mocks(mocks_dir, golden_bytes, golden_crop, "AN", "U", "N")
    golden_case_path = extra_dir / "golden.json"
    golden_case_path.write_text(
        json.dumps(
            {
                "case_id": "golden",
                "inputs": {"fundus": {"modality": "fundus-2d", "path": "../images/golden.pgm"}},
                "metadata": None,
                "ground_truth": "sick",
            },
            indent=2,
        ),
        "utf-8",
    )

    engine_config_path = root / "engine.json"
    engine_config_path.write_text(
        json.dumps(
            {
                "llm": {"mode": "replay", "cache_dir": "llm-cache"},
                "mock_fixtures_dir": "mocks",
            },
            indent=2,
        ),
        "utf-8",
    )

    fixture = FixtureSet(
        root=root,
        cases_dir=cases_dir,
        mocks_dir=mocks_dir,
        engine_config_path=engine_config_path,
        plan_path=root / "plan.json",
        ablation_path=root / "ablation.json",
        golden_case_path=golden_case_path,
        rows=rows,
    )
    engine = fixture.engine()
    plan = engine.build_plan("glaucoma")
    save_plan(fixture.plan_path, plan, provenance=engine.provenance(plan))
    fixture.ablation_path.write_text(
        json.dumps(
            {
                "indicator_subsets": [
                    ["vcdr"],
                    ["rim_thickness"],
                    ["ppa"],
                    ["disc_hemorrhage"],
                    ["vcdr", "rim_thickness", "ppa", "disc_hemorrhage"],
                ],
                "deciders": ["single", "moe"],
            },
            indent=2,
        ),
        "utf-8",
    )
    return fixture


@pytest.fixture(autouse=True, scope="session")
def forbid_external_network():
    """The suite must be network-free: only loopback sockets are allowed."""
    import socket

    real_getaddrinfo = socket.getaddrinfo

    def guarded(host, *args, **kwargs):
        if host not in ("127.0.0.1", "localhost", "::1", "", None):
            raise AssertionError(f"external network access attempted: {host!r}")
        return real_getaddrinfo(host, *args, **kwargs)

    socket.getaddrinfo = guarded
    try:
        yield
    finally:
        socket.getaddrinfo = real_getaddrinfo


@pytest.fixture(scope="session")
def fixture_set(tmp_path_factory) -> FixtureSet:
    return build_fixture_set(tmp_path_factory.mktemp("glaucoma-fixtures"))


@pytest.fixture()
def default_registry():
    from importlib import resources

    from dxflow.planning import ToolDescriptor

    data = json.loads(
        resources.files("dxflow").joinpath("data/default_registry.json").read_text("utf-8")
    )
    return [ToolDescriptor.from_dict(entry) for entry in data]


@pytest.fixture()
def replay_client(tmp_path):
    """Replay-mode chat client whose cache the test seeds explicitly."""
    from dxflow.llm import ChatClient

    return ChatClient(model="test-model", cache_dir=tmp_path / "transcripts", mode="replay")
