"""Metric operations against brute-force and synthetic oracles."""
from __future__ import annotations

import math

import numpy as np
import pytest

from dxflow import imaging
from dxflow.errors import EmptyDisc, EmptyStructure, InvalidInput, InvalidVolume
from dxflow.imaging import (
    CropRegion,
    Mask2D,
    Volume3D,
    compute_lv_diameter,
    compute_lv_mass_index,
    compute_lvef,
    compute_rim_thickness,
    compute_vcdr,
    compute_volume,
    crop_peripapillary,
)


def make_mask(height=200, width=200) -> np.ndarray:
    return np.zeros((height, width), dtype=np.uint8)


def disk(grid: np.ndarray, cy: int, cx: int, radius: int, label: int) -> None:
    ys, xs = np.ogrid[: grid.shape[0], : grid.shape[1]]
    grid[(ys - cy) ** 2 + (xs - cx) ** 2 <= radius**2] = label


# -- vcdr ------------------------------------------------------------------------

def brute_force_vcdr(mask: Mask2D) -> float:
    disc_min = disc_max = cup_min = cup_max = None
    for row in range(mask.height):
        for col in range(mask.width):
            label = int(mask.labels[row, col])
            if label >= 1:
                disc_min = row if disc_min is None else min(disc_min, row)
                disc_max = row if disc_max is None else max(disc_max, row)
            if label == 2:
                cup_min = row if cup_min is None else min(cup_min, row)
                cup_max = row if cup_max is None else max(cup_max, row)
    assert disc_min is not None
    if cup_min is None:
        return 0.0
    return (cup_max - cup_min + 1) / (disc_max - disc_min + 1)


def test_vcdr_rectangle_example():
    grid = make_mask()
    grid[10:60, 50:150] = 1
    grid[25:45, 70:130] = 2
    assert compute_vcdr(Mask2D(200, 200, grid)) == pytest.approx(0.4)


def test_vcdr_cup_equals_disc():
    grid = make_mask()
    grid[30:70, 30:70] = 2  # cup pixels also count as disc
    assert compute_vcdr(Mask2D(200, 200, grid)) == 1.0


def test_vcdr_empty_cup():
    grid = make_mask()
    grid[30:70, 30:70] = 1
    assert compute_vcdr(Mask2D(200, 200, grid)) == 0.0


def test_vcdr_empty_disc():
    with pytest.raises(EmptyDisc):
        compute_vcdr(Mask2D(10, 10, np.zeros((10, 10), dtype=np.uint8)))


def test_vcdr_randomized_vs_bruteforce():
    rng = np.random.default_rng(7)
    for _ in range(25):
        grid = make_mask(80, 80)
        top = int(rng.integers(5, 30))
        bottom = int(rng.integers(top + 10, 70))
        left = int(rng.integers(5, 30))
        right = int(rng.integers(left + 10, 70))
        grid[top : bottom + 1, left : right + 1] = 1
        if rng.random() > 0.2:
            cup_top = int(rng.integers(top, bottom))
            cup_bottom = int(rng.integers(cup_top, bottom))
            grid[cup_top : cup_bottom + 1, left : right + 1] = 2
        mask = Mask2D(80, 80, grid)
        assert compute_vcdr(mask) == pytest.approx(brute_force_vcdr(mask), abs=1e-12)
        assert 0.0 <= compute_vcdr(mask) <= 1.0


def test_vcdr_stable_under_integer_upscale():
    grid = make_mask(60, 60)
    grid[10:40, 10:50] = 1
    grid[18:30, 20:40] = 2
    base = compute_vcdr(Mask2D(60, 60, grid))
    for k in (2, 3):
        scaled = np.repeat(np.repeat(grid, k, axis=0), k, axis=1)
        mask_k = Mask2D(60 * k, 60 * k, scaled)
        extent = imaging.disc_vertical_extent(mask_k)
        assert abs(compute_vcdr(mask_k) - base) <= 2.0 / (k * extent)


# -- rim thickness ------------------------------------------------------------------

def ray_walk_oracle(mask: Mask2D, cy: int, cx: int, dy: int, dx: int) -> int:
    """Step pixel by pixel from the centroid; last disc minus last cup."""
    last_disc = last_cup = 0
    step = 0
    y, x = cy, cx
    while 0 <= y < mask.height and 0 <= x < mask.width:
        label = int(mask.labels[y, x])
        if label >= 1:
            last_disc = step
        if label == 2:
            last_cup = step
        y += dy
        x += dx
        step += 1
    return max(last_disc - last_cup, 0)


def oracle_thickness(mask: Mask2D) -> dict:
    rows, cols = np.nonzero(mask.labels >= 1)
    cy, cx = int(rows.mean()), int(cols.mean())
    return {
        "superior": ray_walk_oracle(mask, cy, cx, -1, 0),
        "inferior": ray_walk_oracle(mask, cy, cx, 1, 0),
        "nasal": ray_walk_oracle(mask, cy, cx, 0, -1),
        "temporal": ray_walk_oracle(mask, cy, cx, 0, 1),
    }


def test_rim_concentric_disks():
    grid = make_mask(240, 240)
    disk(grid, 120, 120, 50, 1)
    disk(grid, 120, 120, 20, 2)
    thicknesses = compute_rim_thickness(Mask2D(240, 240, grid))
    for direction in ("superior", "inferior", "nasal", "temporal"):
        assert abs(thicknesses[direction] - 30) <= 1


def test_rim_cup_touching_boundary():
    grid = make_mask(100, 100)
    grid[20:61, 20:61] = 1
    grid[20:41, 30:51] = 2  # cup reaches the superior disc edge
    thicknesses = compute_rim_thickness(Mask2D(100, 100, grid))
    assert thicknesses["superior"] == 0


def test_rim_offset_cup():
    grid = make_mask(240, 240)
    disk(grid, 120, 120, 50, 1)
    disk(grid, 110, 120, 20, 2)  # 10 px superior of the disc center
    thicknesses = compute_rim_thickness(Mask2D(240, 240, grid))
    assert abs(thicknesses["superior"] - 20) <= 1
    assert abs(thicknesses["inferior"] - 40) <= 1


def test_rim_laterality_swap():
    grid = make_mask(240, 240)
    disk(grid, 120, 120, 50, 1)
    disk(grid, 120, 130, 20, 2)  # shifted temporally for a right eye
    right = compute_rim_thickness(Mask2D(240, 240, grid), laterality="right")
    left = compute_rim_thickness(Mask2D(240, 240, grid), laterality="left")
    assert right["nasal"] == left["temporal"]
    assert right["temporal"] == left["nasal"]
    assert right["superior"] == left["superior"]


def test_rim_requires_both_structures():
    grid = make_mask(50, 50)
    grid[10:40, 10:40] = 1
    with pytest.raises(EmptyStructure):
        compute_rim_thickness(Mask2D(50, 50, grid))


def test_rim_randomized_concentric_vs_oracle():
    rng = np.random.default_rng(11)
    for _ in range(25):
        size = 200
        grid = make_mask(size, size)
        r_disc = int(rng.integers(25, 60))
        r_cup = int(rng.integers(5, max(6, int(r_disc * 0.8))))
        cy = int(rng.integers(r_disc + 2, size - r_disc - 2))
        cx = int(rng.integers(r_disc + 2, size - r_disc - 2))
        disk(grid, cy, cx, r_disc, 1)
        disk(grid, cy, cx, r_cup, 2)
        mask = Mask2D(size, size, grid)
        assert compute_rim_thickness(mask) == oracle_thickness(mask)
        for value in compute_rim_thickness(mask).values():
            assert abs(value - (r_disc - r_cup)) <= 1


# -- peripapillary crop -----------------------------------------------------------

def test_crop_example():
    grid = make_mask()
    grid[40:61, 40:61] = 1
    region = crop_peripapillary(Mask2D(200, 200, grid), 1.5)
    assert (region.x0, region.y0, region.x1, region.y1) == (35, 35, 65, 65)


def test_crop_identity_factor():
    grid = make_mask()
    grid[40:61, 40:61] = 1
    region = crop_peripapillary(Mask2D(200, 200, grid), 1.0)
    assert (region.x0, region.y0, region.x1, region.y1) == (40, 40, 60, 60)


def test_crop_clamps_to_image():
    grid = make_mask(100, 100)
    grid[0:21, 0:21] = 1
    region = crop_peripapillary(Mask2D(100, 100, grid), 2.0)
    assert region.x0 >= 0 and region.y0 >= 0
    assert region.x1 <= 99 and region.y1 <= 99


def test_crop_empty_disc():
    with pytest.raises(EmptyDisc):
        crop_peripapillary(Mask2D(10, 10, np.zeros((10, 10), dtype=np.uint8)), 1.5)


def test_crop_randomized_arithmetic_oracle():
    rng = np.random.default_rng(3)
    for _ in range(25):
        w = h = 150
        grid = make_mask(h, w)
        x0, y0 = int(rng.integers(0, 100)), int(rng.integers(0, 100))
        x1, y1 = int(rng.integers(x0 + 5, 149)), int(rng.integers(y0 + 5, 149))
        grid[y0 : y1 + 1, x0 : x1 + 1] = 1
        factor = float(rng.uniform(1.0, 3.0))
        region = crop_peripapillary(Mask2D(h, w, grid), factor)
        cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
        half_w, half_h = (x1 - x0) / 2 * factor, (y1 - y0) / 2 * factor
        assert region.x0 == max(0, math.floor(cx - half_w))
        assert region.y0 == max(0, math.floor(cy - half_h))
        assert region.x1 == min(w - 1, math.ceil(cx + half_w))
        assert region.y1 == min(h - 1, math.ceil(cy + half_h))


# -- volumes ------------------------------------------------------------------------

def test_volume_unit_conversion():
    labels = np.zeros((10, 10, 10), dtype=np.uint8)
    labels[:, :, :] = 2
    vol = Volume3D((10, 10, 10), (1.0, 1.0, 1.0), labels)
    assert compute_volume(vol, 2) == pytest.approx(1.0)


def test_volume_empty():
    vol = Volume3D((5, 5, 5), (1.0, 1.0, 1.0), np.zeros((5, 5, 5), dtype=np.uint8))
    assert compute_volume(vol, 1) == 0.0


def test_volume_half_millimeter_spacing():
    labels = np.zeros((50, 60, 40), dtype=np.uint8)
    labels[:, :, :] = 2  # 120000 voxels
    vol = Volume3D((50, 60, 40), (0.5, 0.5, 0.5), labels)
    assert compute_volume(vol, 2) == pytest.approx(15.0)


def test_volume_randomized_count_oracle():
    rng = np.random.default_rng(5)
    for _ in range(20):
        dims = tuple(int(d) for d in rng.integers(4, 10, size=3))
        labels = rng.integers(0, 3, size=dims).astype(np.uint8)
        spacing = tuple(float(s) for s in rng.uniform(0.3, 2.0, size=3))
        vol = Volume3D(dims, spacing, labels)
        count = 0
        for x in range(dims[0]):
            for y in range(dims[1]):
                for z in range(dims[2]):
                    if labels[x, y, z] == 2:
                        count += 1
        expected = count * spacing[0] * spacing[1] * spacing[2] / 1000.0
        assert compute_volume(vol, 2) == pytest.approx(expected, abs=1e-12)


def test_volume_additive_over_disjoint_regions():
    labels_a = np.zeros((8, 8, 8), dtype=np.uint8)
    labels_a[:4] = 2
    labels_b = np.zeros((8, 8, 8), dtype=np.uint8)
    labels_b[4:] = 2
    union = np.maximum(labels_a, labels_b)
    spacing = (1.0, 1.0, 1.0)
    assert compute_volume(Volume3D((8, 8, 8), spacing, union), 2) == pytest.approx(
        compute_volume(Volume3D((8, 8, 8), spacing, labels_a), 2)
        + compute_volume(Volume3D((8, 8, 8), spacing, labels_b), 2)
    )


# -- LVEF ------------------------------------------------------------------------------

def test_lvef_examples():
    assert compute_lvef(120.0, 60.0) == pytest.approx(50.0)
    assert compute_lvef(100.0, 100.0) == 0.0
    assert compute_lvef(130.0, 49.4) == pytest.approx(62.0, abs=1e-9)


def test_lvef_guards():
    with pytest.raises(InvalidVolume):
        compute_lvef(0.0, 0.0)
    with pytest.raises(InvalidVolume):
        compute_lvef(100.0, 120.0)
    with pytest.raises(InvalidVolume):
        compute_lvef(100.0, -1.0)


def test_lvef_scale_invariant():
    rng = np.random.default_rng(9)
    for _ in range(20):
        edv = float(rng.uniform(50, 250))
        esv = float(rng.uniform(0, edv))
        c = float(rng.uniform(0.1, 10))
        assert compute_lvef(c * edv, c * esv) == pytest.approx(compute_lvef(edv, esv))


# -- LV diameter -------------------------------------------------------------------------

def box_volume(nx, ny, nz, bx, by, bz, spacing=(1.0, 1.0, 1.0)) -> Volume3D:
    labels = np.zeros((nx, ny, nz), dtype=np.uint8)
    labels[: bx, : by, : bz] = 2
    return Volume3D((nx, ny, nz), spacing, labels)


def test_diameter_box():
    vol = box_volume(100, 100, 100, 40, 30, 60)
    assert compute_lv_diameter(vol) == pytest.approx(40.0)


def test_diameter_single_voxel():
    labels = np.zeros((5, 5, 5), dtype=np.uint8)
    labels[2, 2, 2] = 2
    assert compute_lv_diameter(Volume3D((5, 5, 5), (1.5, 0.5, 1.0), labels)) == pytest.approx(1.5)


def test_diameter_sphere():
    labels = np.zeros((60, 60, 60), dtype=np.uint8)
    xs, ys, zs = np.ogrid[:60, :60, :60]
    labels[(xs - 30) ** 2 + (ys - 30) ** 2 + (zs - 30) ** 2 <= 400] = 2
    vol = Volume3D((60, 60, 60), (1.0, 1.0, 1.0), labels)
    assert abs(compute_lv_diameter(vol) - 40.0) <= 1.0


def test_diameter_empty():
    with pytest.raises(EmptyStructure):
        compute_lv_diameter(Volume3D((5, 5, 5), (1, 1, 1), np.zeros((5, 5, 5), dtype=np.uint8)))


def test_diameter_randomized_boxes():
    rng = np.random.default_rng(13)
    for _ in range(20):
        bx, by, bz = (int(v) for v in rng.integers(2, 20, size=3))
        spacing = tuple(float(s) for s in rng.uniform(0.5, 2.0, size=3))
        vol = box_volume(24, 24, 24, bx, by, bz, spacing)
        expected = max(bx * spacing[0], by * spacing[1])
        assert compute_lv_diameter(vol) == pytest.approx(expected, abs=1e-12)


# -- LV mass index ----------------------------------------------------------------------------

def test_lvmi_example():
    # Independent arithmetic: 150 mL * 1.05 g/mL over Du Bois BSA.
    bsa = 0.007184 * 180.0**0.725 * 75.0**0.425
    assert compute_lv_mass_index(150.0, 180.0, 75.0) == pytest.approx(157.5 / bsa, abs=1e-12)
    assert compute_lv_mass_index(150.0, 180.0, 75.0) == pytest.approx(81.06, abs=0.05)


def test_lvmi_bsa_inversion():
    # Solve for the height that makes BSA exactly 1 at 60 kg; the index
    # then equals the mass numerically.
    weight = 60.0
    height = (1.0 / (0.007184 * weight**0.425)) ** (1.0 / 0.725)
    assert compute_lv_mass_index(100.0, height, weight) == pytest.approx(105.0, abs=1e-9)


def test_lvmi_near_zero_volume():
    assert compute_lv_mass_index(0.0001, 170.0, 70.0) == pytest.approx(0.0, abs=1e-4)


def test_lvmi_guards():
    for args in ((0, 170, 70), (100, 0, 70), (100, 170, 0)):
        with pytest.raises(InvalidInput):
            compute_lv_mass_index(*args)


def test_lvmi_randomized_oracle():
    rng = np.random.default_rng(17)
    for _ in range(20):
        volume = float(rng.uniform(20, 300))
        height = float(rng.uniform(120, 210))
        weight = float(rng.uniform(35, 150))
        expected = (volume * 1.05) / (0.007184 * height**0.725 * weight**0.425)
        assert compute_lv_mass_index(volume, height, weight) == pytest.approx(expected, abs=1e-12)


# -- file formats ------------------------------------------------------------------------------

def test_pgm_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    pixels = rng.integers(0, 3, size=(33, 47)).astype(np.uint8)
    path = tmp_path / "mask.pgm"
    imaging.write_mask(path, Mask2D(47, 33, pixels))
    loaded = imaging.read_mask(path)
    assert loaded.width == 47 and loaded.height == 33
    assert np.array_equal(loaded.labels, pixels)


def test_pgm_header_with_comment(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# a comment\n3 2\n255\n" + bytes(6))
    pixels = imaging.read_pgm(path)
    assert pixels.shape == (2, 3)


def test_volume_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    labels = rng.integers(0, 3, size=(6, 5, 4)).astype(np.uint8)
    vol = Volume3D((6, 5, 4), (0.5, 1.0, 2.0), labels)
    path = tmp_path / "heart.bin"
    imaging.write_volume(path, vol)
    loaded = imaging.read_volume(path)
    assert loaded.dims == (6, 5, 4)
    assert loaded.spacing == (0.5, 1.0, 2.0)
    assert np.array_equal(loaded.labels, labels)


def test_apply_crop_bounds():
    pixels = np.arange(100, dtype=np.uint8).reshape(10, 10)
    region = CropRegion(2, 3, 5, 6)
    cropped = imaging.apply_crop(pixels, region)
    assert cropped.shape == (4, 4)
    assert cropped[0, 0] == pixels[3, 2]
    with pytest.raises(InvalidInput):
        imaging.apply_crop(pixels, CropRegion(5, 5, 20, 20))
