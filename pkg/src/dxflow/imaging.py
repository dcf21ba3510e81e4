"""Deterministic image and volume measurements for diagnostic indicators.

These pure functions replace free-form generated analysis code with
fixed, auditable arithmetic over segmentation masks: cup-to-disc ratio,
rim thickness, peripapillary crop, cavity volumes, ejection fraction,
chamber diameter and mass index.

Mask files are binary PGM (P5, maxval 255) whose pixel values are the
label bytes {0 background, 1 disc, 2 cup}. Volumes are a flat byte grid
file plus a JSON sidecar named ``<file>.json`` with dims, spacing and a
label legend.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyDisc, EmptyStructure, InvalidInput, InvalidVolume, SchemaError
from .serde import check_fields, dump_json_bytes, load_json, require_mapping

LABEL_BACKGROUND = 0
LABEL_DISC = 1
LABEL_CUP = 2

LABEL_MYOCARDIUM = 1
LABEL_LV_CAVITY = 2

# Grams of myocardium per mL of segmented tissue; standard clinical
# constant, configurable at the call site.
MYOCARDIAL_DENSITY_G_PER_ML = 1.05

RIM_DIRECTIONS = ("superior", "inferior", "nasal", "temporal")


@dataclass(frozen=True)
class Mask2D:
    """Row-major 2D label grid with values {0, 1, 2}."""

    width: int
    height: int
    labels: np.ndarray  # shape (height, width), dtype uint8

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise SchemaError("Mask2D dimensions must be positive")
        if self.labels.shape != (self.height, self.width):
            raise SchemaError(
                f"Mask2D grid shape {self.labels.shape} does not match "
                f"{self.height}x{self.width}"
            )
        if self.labels.dtype != np.uint8:
            object.__setattr__(self, "labels", self.labels.astype(np.uint8))
        if self.labels.max(initial=0) > 2:
            raise SchemaError("Mask2D labels restricted to {0, 1, 2}")


@dataclass(frozen=True)
class Volume3D:
    """Flat 3D label grid with per-axis spacing in mm."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    labels: np.ndarray  # shape (nx, ny, nz), dtype uint8

    def __post_init__(self):
        if any(d <= 0 for d in self.dims):
            raise SchemaError("Volume3D dims must be positive")
        if any(s <= 0 for s in self.spacing):
            raise SchemaError("Volume3D spacing must be strictly positive")
        if self.labels.shape != self.dims:
            raise SchemaError(
                f"Volume3D grid shape {self.labels.shape} does not match dims {self.dims}"
            )
        if self.labels.dtype != np.uint8:
            object.__setattr__(self, "labels", self.labels.astype(np.uint8))


@dataclass(frozen=True)
class CropRegion:
    """Inclusive pixel bounds, x0 < x1 and y0 < y1 after clamping."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise SchemaError(f"degenerate crop region: {self}")

    def to_dict(self) -> dict:
        return {"x0": self.x0, "y0": self.y0, "x1": self.x1, "y1": self.y1}

    @classmethod
    def from_dict(cls, data) -> "CropRegion":
        data = require_mapping(data, "CropRegion")
        check_fields(data, ["x0", "y0", "x1", "y1"], ctx="CropRegion")
        return cls(int(data["x0"]), int(data["y0"]), int(data["x1"]), int(data["y1"]))


# -- PGM (P5) I/O --------------------------------------------------------------

def write_pgm(path: str | Path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim != 2:
        raise SchemaError("PGM requires a 2D grid")
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_pgm(fh.read(), ctx=str(path))


def parse_pgm(data: bytes, ctx: str = "<bytes>") -> np.ndarray:
    path = ctx
    if not data.startswith(b"P5"):
        raise SchemaError(f"{path}: not a binary PGM (P5) file")
    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # with optional '#' comment lines.
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise SchemaError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError:
        raise SchemaError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise SchemaError(f"{path}: expected maxval 255, got {maxval}")
    body = data[pos : pos + w * h]
    if len(body) != w * h:
        raise SchemaError(f"{path}: PGM body has {len(body)} bytes, expected {w * h}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()


def write_mask(path: str | Path, mask: Mask2D) -> None:
    write_pgm(path, mask.labels)


def read_mask(path: str | Path) -> Mask2D:
    return mask_from_pixels(read_pgm(path))


def mask_from_pixels(pixels: np.ndarray) -> Mask2D:
    h, w = pixels.shape
    return Mask2D(width=w, height=h, labels=pixels)


# -- volume I/O ----------------------------------------------------------------

def volume_sidecar_path(grid_path: str | Path) -> Path:
    return Path(str(grid_path) + ".json")


def write_volume(grid_path: str | Path, vol: Volume3D) -> None:
    # Fortran order keeps x fastest-varying, matching the flat-grid layout.
    with open(grid_path, "wb") as fh:
        fh.write(np.asfortranarray(vol.labels).tobytes(order="F"))
    sidecar = {
        "dims": list(vol.dims),
        "spacing_mm": list(vol.spacing),
        "labels": {"1": "myocardium", "2": "lv_cavity"},
    }
    volume_sidecar_path(grid_path).write_bytes(dump_json_bytes(sidecar))


def read_volume(grid_path: str | Path) -> Volume3D:
    sidecar_path = volume_sidecar_path(grid_path)
    if not sidecar_path.exists():
        raise SchemaError(f"missing volume sidecar: {sidecar_path}")
    sidecar = require_mapping(load_json(sidecar_path.read_bytes()), "volume sidecar")
    check_fields(sidecar, ["dims", "spacing_mm"], ["labels"], ctx="volume sidecar")
    dims = tuple(int(d) for d in sidecar["dims"])
    spacing = tuple(float(s) for s in sidecar["spacing_mm"])
    if len(dims) != 3 or len(spacing) != 3:
        raise SchemaError("volume sidecar dims and spacing_mm must have 3 entries")
    raw = Path(grid_path).read_bytes()
    expected = dims[0] * dims[1] * dims[2]
    if len(raw) != expected:
        raise SchemaError(f"{grid_path}: grid has {len(raw)} bytes, expected {expected}")
    labels = np.frombuffer(raw, dtype=np.uint8).reshape(dims, order="F").copy()
    return Volume3D(dims=dims, spacing=spacing, labels=labels)


# -- 2D metrics ----------------------------------------------------------------

def _vertical_extent(rows: np.ndarray) -> int:
    return int(rows.max()) - int(rows.min()) + 1


def compute_vcdr(mask: Mask2D) -> float:
    """Vertical cup-to-disc ratio over inclusive row extents.

    Pixels labeled 1 or 2 count as disc; label 2 alone is the cup. An
    absent cup yields 0.
    """
    disc_rows = np.nonzero((mask.labels == LABEL_DISC) | (mask.labels == LABEL_CUP))[0]
    if disc_rows.size == 0:
        raise EmptyDisc("mask contains no disc pixels")
    cup_rows = np.nonzero(mask.labels == LABEL_CUP)[0]
    if cup_rows.size == 0:
        return 0.0
    return _vertical_extent(cup_rows) / _vertical_extent(disc_rows)


def _disc_centroid(mask: Mask2D) -> tuple[int, int]:
    rows, cols = np.nonzero(mask.labels >= LABEL_DISC)
    return int(rows.mean()), int(cols.mean())


def _ray_thickness(line: np.ndarray) -> int:
    """Rim width along one ray: last disc pixel minus last cup pixel.

    ``line`` holds label values starting at the centroid, increasing
    outward. If the ray never crosses the cup the cup edge defaults to
    the centroid itself.
    """
    disc_idx = np.nonzero(line >= LABEL_DISC)[0]
    last_disc = int(disc_idx.max()) if disc_idx.size else 0
    cup_idx = np.nonzero(line == LABEL_CUP)[0]
    last_cup = int(cup_idx.max()) if cup_idx.size else 0
    return max(last_disc - last_cup, 0)


def compute_rim_thickness(mask: Mask2D, laterality: str = "right") -> dict[str, int]:
    """Rim thickness in pixels along the four axis-aligned rays.

    Rays start at the integer centroid of the disc. With the default
    right-eye laterality, nasal maps to the -x ray and temporal to +x;
    left-eye swaps them.
    """
    if laterality not in ("right", "left"):
        raise InvalidInput(f"laterality must be 'right' or 'left', got {laterality!r}")
    if not (mask.labels >= LABEL_DISC).any():
        raise EmptyStructure("mask contains no disc pixels")
    if not (mask.labels == LABEL_CUP).any():
        raise EmptyStructure("mask contains no cup pixels")
    cy, cx = _disc_centroid(mask)
    grid = mask.labels
    rays = {
        "superior": grid[cy::-1, cx],  # -y
        "inferior": grid[cy:, cx],  # +y
        "neg_x": grid[cy, cx::-1],
        "pos_x": grid[cy, cx:],
    }
    nasal_key, temporal_key = ("neg_x", "pos_x") if laterality == "right" else ("pos_x", "neg_x")
    return {
        "superior": _ray_thickness(rays["superior"]),
        "inferior": _ray_thickness(rays["inferior"]),
        "nasal": _ray_thickness(rays[nasal_key]),
        "temporal": _ray_thickness(rays[temporal_key]),
    }


def disc_vertical_extent(mask: Mask2D) -> int:
    rows = np.nonzero(mask.labels >= LABEL_DISC)[0]
    if rows.size == 0:
        raise EmptyDisc("mask contains no disc pixels")
    return _vertical_extent(rows)


def crop_peripapillary(mask: Mask2D, margin_factor: float = 1.5) -> CropRegion:
    """Disc bounding box scaled about its center, clamped to the image."""
    rows, cols = np.nonzero(mask.labels >= LABEL_DISC)
    if rows.size == 0:
        raise EmptyDisc("mask contains no disc pixels")
    if margin_factor <= 0:
        raise InvalidInput(f"margin_factor must be > 0, got {margin_factor}")
    y0, y1 = int(rows.min()), int(rows.max())
    x0, x1 = int(cols.min()), int(cols.max())
    cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    half_w, half_h = (x1 - x0) / 2.0 * margin_factor, (y1 - y0) / 2.0 * margin_factor
    return CropRegion(
        x0=max(0, math.floor(cx - half_w)),
        y0=max(0, math.floor(cy - half_h)),
        x1=min(mask.width - 1, math.ceil(cx + half_w)),
        y1=min(mask.height - 1, math.ceil(cy + half_h)),
    )


def apply_crop(pixels: np.ndarray, region: CropRegion) -> np.ndarray:
    h, w = pixels.shape
    if region.x1 >= w or region.y1 >= h:
        raise InvalidInput(f"crop region {region} exceeds image bounds {w}x{h}")
    return pixels[region.y0 : region.y1 + 1, region.x0 : region.x1 + 1].copy()


# -- 3D metrics ----------------------------------------------------------------

def compute_volume(vol: Volume3D, label: int) -> float:
    """Labeled volume in mL: voxel count times voxel size."""
    if label not in (LABEL_MYOCARDIUM, LABEL_LV_CAVITY):
        raise InvalidInput(f"label must be 1 or 2, got {label}")
    count = int((vol.labels == label).sum())
    sx, sy, sz = vol.spacing
    return count * (sx * sy * sz) / 1000.0


def compute_lvef(edv_ml: float, esv_ml: float) -> float:
    """Ejection fraction in percent from end-diastolic and end-systolic volumes."""
    if edv_ml <= 0:
        raise InvalidVolume(f"end-diastolic volume must be > 0, got {edv_ml}")
    if esv_ml < 0 or esv_ml > edv_ml:
        raise InvalidVolume(f"end-systolic volume out of [0, edv]: {esv_ml}")
    return 100.0 * (edv_ml - esv_ml) / edv_ml


def compute_lv_diameter(vol: Volume3D) -> float:
    """Maximal cavity extent in the short-axis plane at the mid long-axis slice.

    The long axis is the z dimension by the volume format's convention;
    the reported diameter is the larger of the axis-aligned x/y extents
    at the mid-slice, in mm.
    """
    cavity = vol.labels == LABEL_LV_CAVITY
    if not cavity.any():
        raise EmptyStructure("volume contains no cavity voxels")
    zs = np.nonzero(cavity.any(axis=(0, 1)))[0]
    mid_z = (int(zs.min()) + int(zs.max())) // 2
    slice_xy = cavity[:, :, mid_z]
    xs = np.nonzero(slice_xy.any(axis=1))[0]
    ys = np.nonzero(slice_xy.any(axis=0))[0]
    if xs.size == 0:
        raise EmptyStructure("cavity absent from its own mid-slice")
    extent_x = (int(xs.max()) - int(xs.min()) + 1) * vol.spacing[0]
    extent_y = (int(ys.max()) - int(ys.min()) + 1) * vol.spacing[1]
    return float(max(extent_x, extent_y))


def dubois_bsa(height_cm: float, weight_kg: float) -> float:
    """Du Bois body surface area in square meters."""
    return 0.007184 * height_cm**0.725 * weight_kg**0.425


def compute_lv_mass_index(myo_volume_ml: float, height_cm: float, weight_kg: float) -> float:
    """Myocardial mass over body surface area, in g per square meter."""
    if myo_volume_ml <= 0 or height_cm <= 0 or weight_kg <= 0:
        raise InvalidInput(
            f"all inputs must be > 0: volume={myo_volume_ml}, "
            f"height={height_cm}, weight={weight_kg}"
        )
    mass_g = myo_volume_ml * MYOCARDIAL_DENSITY_G_PER_ML
    return mass_g / dubois_bsa(height_cm, weight_kg)
