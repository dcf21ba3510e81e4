"""Acceptance criteria. One test per criterion; each prints a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines.
All tolerances are pinned here: exact equality for structural
reproductions, 1e-12 for the weighted-score oracle, 1e-9 for the AUC
dual-method agreement, and the stated discretization bands for the
synthetic imaging oracles.
"""
from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import (
    EXPECTED_AUC,
    EXPECTED_COUNTS,
    EXPECTED_F1,
    EXPECTED_MACC,
    EXPECTED_SINGLE_MACC,
    build_fixture_set,
)
from dxflow import imaging
from dxflow.decide import MoeConfig, moe_score
from dxflow.engine import load_cases
from dxflow.errors import NoIndicators, ToolError
from dxflow.evaluate import AblationSpec, ConfusionCounts, auc, auc_trapezoidal, f1, macc
from dxflow.model import (
    DiagnosisLabel,
    IndicatorResult,
    IndicatorStatus,
    PatientCase,
    encode_status,
)
from dxflow.orchestrate import ToolInvoker, execute_plan
from dxflow.planning import (
    DiagnosticPlan,
    PlanStep,
    ViolationCategory,
    compile_plan_template,
    load_plan,
    validate_plan,
)
from dxflow.serde import load_json


def _report(name: str, ok: bool) -> None:
    print(f"{'PASS' if ok else 'FAIL'}: {name}")
    assert ok, name


@pytest.fixture(scope="module")
def fixtures(tmp_path_factory):
    return build_fixture_set(tmp_path_factory.mktemp("acceptance-fixtures"))


# -- criterion: degenerate-predictor reproduction -----------------------------------------

def test_degenerate_predictor_reproduction():
    """All-healthy predictor on a balanced set: mACC 50.0, F1 0.0, exactly."""
    counts = ConfusionCounts(tp=0, fp=0, fn=50, tn=50)
    ok = macc(counts) == 50.0 and f1(counts) == 0.0
    _report("degenerate all-healthy predictor reproduces mACC 50.0 / F1 0.0", ok)


# -- criterion: weighted-score decider oracle -----------------------------------------------

def test_moe_decider_oracle_1000():
    """1000 randomized instances match term-by-term summation to 1e-12."""
    rng = np.random.default_rng(101)
    statuses_pool = list(IndicatorStatus)
    checked = 0
    for trial in range(1000):
        n = int(rng.integers(1, 9))
        names = [f"i{k}" for k in range(n)]
        weights = {name: float(rng.uniform(0.001, 3.0)) for name in names}
        statuses = {name: statuses_pool[int(rng.integers(0, 3))] for name in names}
        normalize = bool(rng.integers(0, 2))
        indicators = [IndicatorResult(name, statuses[name], "t") for name in names]

        # independent brute force, term by term
        expected = 0.0
        ws = [weights[name] for name in names]
        if normalize:
            total = sum(ws)
            ws = [w / total for w in ws]
        for w, name in zip(ws, names):
            expected += w * encode_status(statuses[name])

        if trial % 10 == 0:
            theta = min(max(expected, 0.0), 1.0)  # boundary: s == theta decides sick
        else:
            theta = float(rng.uniform(0, 1))
        outcome = moe_score(indicators, MoeConfig(weights=weights, theta=theta, normalize=normalize))
        assert abs(outcome.score - expected) <= 1e-12
        expected_label = DiagnosisLabel.SICK if outcome.score >= theta else DiagnosisLabel.HEALTHY
        assert outcome.label is expected_label
        if trial % 10 == 0 and outcome.score == theta:
            assert outcome.label is DiagnosisLabel.SICK
        checked += 1
    _report(f"weighted-score oracle on {checked} randomized instances (1e-12)", checked == 1000)


# -- criterion: AUC dual-method agreement ------------------------------------------------------

def test_auc_dual_method_agreement_200():
    rng = np.random.default_rng(103)
    agreements = 0
    for _ in range(200):
        n = int(rng.integers(2, 200))
        scored = [
            (
                float(rng.choice([0.1, 0.3, 0.5, 0.7, 0.9])) if rng.random() < 0.4 else float(rng.random()),
                DiagnosisLabel.SICK if rng.random() < 0.5 else DiagnosisLabel.HEALTHY,
            )
            for _ in range(n)
        ]
        labels = {label for _, label in scored}
        if len(labels) < 2:
            scored.append((0.42, DiagnosisLabel.SICK))
            scored.append((0.42, DiagnosisLabel.HEALTHY))
        assert abs(auc(scored) - auc_trapezoidal(scored)) <= 1e-9
        agreements += 1
    _report("AUC pairwise vs trapezoidal agreement on 200 randomized sets (1e-9)", agreements == 200)


# -- criterion: metric oracles ---------------------------------------------------------------------

def test_metric_oracles_randomized():
    rng = np.random.default_rng(107)

    # vcdr: nested rectangles vs brute-force pixel scan
    for _ in range(20):
        grid = np.zeros((90, 90), dtype=np.uint8)
        top, bottom = sorted(rng.integers(5, 80, size=2))
        bottom = max(bottom, top + 5)
        grid[top : bottom + 1, 10:80] = 1
        cup_top = int(rng.integers(top, bottom))
        cup_bottom = int(rng.integers(cup_top, bottom))
        grid[cup_top : cup_bottom + 1, 20:70] = 2
        mask = imaging.Mask2D(90, 90, grid)
        disc_min = disc_max = cup_min = cup_max = None
        for row in range(90):
            for col in range(90):
                v = int(grid[row, col])
                if v >= 1:
                    disc_min = row if disc_min is None else disc_min
                    disc_max = row
                if v == 2:
                    cup_min = row if cup_min is None else cup_min
                    cup_max = row
        expected = (cup_max - cup_min + 1) / (disc_max - disc_min + 1)
        assert abs(imaging.compute_vcdr(mask) - expected) <= 1e-12

    # rim thickness: concentric disks, per-ray walk oracle and radius band
    for _ in range(20):
        size = 160
        grid = np.zeros((size, size), dtype=np.uint8)
        r_disc = int(rng.integers(20, 50))
        r_cup = int(rng.integers(4, max(5, int(r_disc * 0.75))))
        cy = int(rng.integers(r_disc + 1, size - r_disc - 1))
        cx = int(rng.integers(r_disc + 1, size - r_disc - 1))
        ys, xs = np.ogrid[:size, :size]
        grid[(ys - cy) ** 2 + (xs - cx) ** 2 <= r_disc**2] = 1
        grid[(ys - cy) ** 2 + (xs - cx) ** 2 <= r_cup**2] = 2
        mask = imaging.Mask2D(size, size, grid)
        thicknesses = imaging.compute_rim_thickness(mask)

        rows, cols = np.nonzero(grid >= 1)
        oy, ox = int(rows.mean()), int(cols.mean())
        for direction, (dy, dx) in {
            "superior": (-1, 0),
            "inferior": (1, 0),
            "nasal": (0, -1),
            "temporal": (0, 1),
        }.items():
            last_disc = last_cup = 0
            y, x, step = oy, ox, 0
            while 0 <= y < size and 0 <= x < size:
                if grid[y, x] >= 1:
                    last_disc = step
                if grid[y, x] == 2:
                    last_cup = step
                y, x, step = y + dy, x + dx, step + 1
            assert thicknesses[direction] == max(last_disc - last_cup, 0)
            assert abs(thicknesses[direction] - (r_disc - r_cup)) <= 1

    # crop: center-scale arithmetic oracle with clamping
    for _ in range(20):
        w = h = 120
        grid = np.zeros((h, w), dtype=np.uint8)
        x0, y0 = int(rng.integers(0, 70)), int(rng.integers(0, 70))
        x1, y1 = int(rng.integers(x0 + 4, 119)), int(rng.integers(y0 + 4, 119))
        grid[y0 : y1 + 1, x0 : x1 + 1] = 1
        factor = float(rng.uniform(1.0, 2.5))
        region = imaging.crop_peripapillary(imaging.Mask2D(h, w, grid), factor)
        cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
        half_w, half_h = (x1 - x0) / 2 * factor, (y1 - y0) / 2 * factor
        assert region.x0 == max(0, math.floor(cx - half_w))
        assert region.y0 == max(0, math.floor(cy - half_h))
        assert region.x1 == min(w - 1, math.ceil(cx + half_w))
        assert region.y1 == min(h - 1, math.ceil(cy + half_h))

    # volume: voxel-count oracle
    for _ in range(20):
        dims = tuple(int(v) for v in rng.integers(3, 9, size=3))
        labels = rng.integers(0, 3, size=dims).astype(np.uint8)
        spacing = tuple(float(s) for s in rng.uniform(0.25, 2.5, size=3))
        vol = imaging.Volume3D(dims, spacing, labels)
        count = sum(
            1
            for x in range(dims[0])
            for y in range(dims[1])
            for z in range(dims[2])
            if labels[x, y, z] == 2
        )
        expected = count * spacing[0] * spacing[1] * spacing[2] / 1000.0
        assert abs(imaging.compute_volume(vol, 2) - expected) <= 1e-12

    # lvef: arithmetic oracle
    for _ in range(20):
        edv = float(rng.uniform(40, 250))
        esv = float(rng.uniform(0, edv))
        assert abs(imaging.compute_lvef(edv, esv) - 100.0 * (edv - esv) / edv) <= 1e-12

    # diameter: synthetic boxes (exact) and spheres (discretization band)
    for _ in range(20):
        bx, by, bz = (int(v) for v in rng.integers(2, 18, size=3))
        spacing = tuple(float(s) for s in rng.uniform(0.5, 2.0, size=3))
        labels = np.zeros((20, 20, 20), dtype=np.uint8)
        labels[:bx, :by, :bz] = 2
        vol = imaging.Volume3D((20, 20, 20), spacing, labels)
        expected = max(bx * spacing[0], by * spacing[1])
        assert abs(imaging.compute_lv_diameter(vol) - expected) <= 1e-12
    for _ in range(4):
        r = int(rng.integers(8, 18))
        size = 2 * r + 6
        labels = np.zeros((size, size, size), dtype=np.uint8)
        xs, ys, zs = np.ogrid[:size, :size, :size]
        c = size // 2
        labels[(xs - c) ** 2 + (ys - c) ** 2 + (zs - c) ** 2 <= r * r] = 2
        vol = imaging.Volume3D((size, size, size), (1.0, 1.0, 1.0), labels)
        assert abs(imaging.compute_lv_diameter(vol) - 2.0 * r) <= 1.0

    # lv mass index: independent Du Bois recomputation
    for _ in range(20):
        volume_ml = float(rng.uniform(30, 280))
        height = float(rng.uniform(130, 205))
        weight = float(rng.uniform(40, 140))
        bsa = 0.007184 * height**0.725 * weight**0.425
        expected = volume_ml * 1.05 / bsa
        assert abs(imaging.compute_lv_mass_index(volume_ml, height, weight) - expected) <= 1e-12

    _report("metric oracles on >= 20 randomized inputs each, within stated bands", True)


# -- criterion: plan validity + mutation rejection ------------------------------------------------

def _mutate(plan: DiagnosticPlan, registry, kind: str, rng) -> tuple[DiagnosticPlan, ViolationCategory]:
    steps = [PlanStep(s.object, s.tool, s.action, s.produces, dict(s.params)) for s in plan.steps]
    bindings = dict(plan.indicator_bindings)
    idx = int(rng.integers(0, len(steps)))
    step = steps[idx]
    if kind == "unknown-tool":
        steps[idx] = PlanStep(step.object, f"ghost-tool-{rng.integers(1e6)}", step.action, step.produces, step.params)
        expected = ViolationCategory.UNKNOWN_TOOL
    elif kind == "unknown-reference":
        steps[idx] = PlanStep(f"ghost-artifact-{rng.integers(1e6)}", step.tool, step.action, step.produces, step.params)
        expected = ViolationCategory.UNKNOWN_REFERENCE
    elif kind == "type-mismatch":
        by_id = {t.tool_id: t for t in registry}
        from dxflow.planning import artifact_types

        types = artifact_types(plan, by_id)
        object_type = types[step.object]
        incompatible = [t for t in registry if object_type not in t.accepts]
        tool = incompatible[int(rng.integers(0, len(incompatible)))]
        steps[idx] = PlanStep(step.object, tool.tool_id, step.action, step.produces, step.params)
        expected = ViolationCategory.TYPE_MISMATCH
    elif kind == "cycle":
        consumers = {}
        for s in plan.steps:
            for ref in s.artifact_refs():
                consumers.setdefault(ref, set()).add(s.produces)
        reached, frontier = set(), [step.produces]
        while frontier:
            current = frontier.pop()
            for nxt in consumers.get(current, ()):
                if nxt not in reached:
                    reached.add(nxt)
                    frontier.append(nxt)
        target = sorted(reached)[0] if reached else step.produces
        steps[idx] = PlanStep(target, step.tool, step.action, step.produces, step.params)
        expected = ViolationCategory.CYCLE
    elif kind == "unbound-indicator":
        name = sorted(bindings)[int(rng.integers(0, len(bindings)))]
        bindings[name] = f"ghost-output-{rng.integers(1e6)}"
        expected = ViolationCategory.UNBOUND_INDICATOR
    else:  # duplicate-produces
        other = steps[(idx + 1) % len(steps)]
        steps[idx] = PlanStep(step.object, step.tool, step.action, other.produces, step.params)
        expected = ViolationCategory.DUPLICATE_PRODUCES
    mutated = DiagnosticPlan(
        disease_id=plan.disease_id,
        declared_inputs=plan.declared_inputs,
        steps=tuple(steps),
        indicator_bindings=bindings,
        criteria=plan.criteria,
    )
    return mutated, expected


def test_plan_validity_and_mutation_rejection(default_registry):
    for disease in ("glaucoma", "heart-disease"):
        plan = compile_plan_template(disease, default_registry)
        assert validate_plan(plan, default_registry).ok

    rng = np.random.default_rng(109)
    kinds = [
        "unknown-tool",
        "unknown-reference",
        "type-mismatch",
        "cycle",
        "unbound-indicator",
        "duplicate-produces",
    ]
    rejected = 0
    for i in range(100):
        disease = "glaucoma" if i % 2 == 0 else "heart-disease"
        plan = compile_plan_template(disease, default_registry)
        mutated, expected = _mutate(plan, default_registry, kinds[i % len(kinds)], rng)
        report = validate_plan(mutated, default_registry)
        assert not report.ok, f"mutation {i} ({expected}) not rejected"
        assert expected in report.categories(), (
            f"mutation {i}: expected {expected}, got {report.categories()}"
        )
        rejected += 1
    _report(
        "template plans valid; 100 mutated plans rejected with the correct category",
        rejected == 100,
    )


# -- criterion: orchestrator determinism and failure isolation --------------------------------------

class _FailingInvoker(ToolInvoker):
    def __init__(self, registry, mocks, fail_step):
        super().__init__(registry, mocks=mocks)
        self.fail_step = fail_step

    def invoke_step(self, step, request, workdir):
        if step.produces == self.fail_step:
            raise ToolError("injected fault")
        return super().invoke_step(step, request, workdir)


def _golden_case(fixtures) -> PatientCase:
    return PatientCase.from_dict(
        load_json(fixtures.golden_case_path.read_bytes()),
        base_dir=fixtures.golden_case_path.parent,
    )


def test_orchestrator_determinism_and_failure_isolation(fixtures, tmp_path):
    engine = fixtures.engine()
    plan = load_plan(fixtures.plan_path)
    case = _golden_case(fixtures)
    provenance = engine.provenance(plan)

    blobs = set()
    for i in range(10):
        pool = 1 if i % 2 == 0 else 4
        _, ctx = execute_plan(
            case, plan, engine.invoker(), engine.rules, tmp_path / f"det{i}",
            pool_size=pool, provenance=provenance,
        )
        blobs.add((ctx.run_dir / "indicators.json").read_bytes())
    assert len(blobs) == 1, "indicators.json bytes differ across runs/pool sizes"

    baseline, _ = execute_plan(
        case, plan, engine.invoker(), engine.rules, tmp_path / "baseline",
        provenance=provenance,
    )
    baseline_by_name = {i.name: i for i in baseline}

    consumers = {}
    for step in plan.steps:
        for ref in step.artifact_refs():
            consumers.setdefault(ref, set()).add(step.produces)

    def descendants(root):
        reached, frontier = set(), [root]
        while frontier:
            current = frontier.pop()
            for nxt in consumers.get(current, ()):
                if nxt not in reached:
                    reached.add(nxt)
                    frontier.append(nxt)
        return reached

    for step in plan.steps:
        affected = descendants(step.produces) | {step.produces}
        expected_names = {
            name for name, artifact in plan.indicator_bindings.items() if artifact not in affected
        }
        invoker = _FailingInvoker(engine.registry, engine.mocks, step.produces)
        try:
            survived, _ = execute_plan(
                case, plan, invoker, engine.rules, tmp_path / f"fault-{step.produces}",
                pool_size=4, provenance=provenance,
            )
        except NoIndicators:
            survived = []
        survived_by_name = {i.name: i for i in survived}
        assert set(survived_by_name) == expected_names, f"fault in {step.produces}"
        for name, indicator in survived_by_name.items():
            assert indicator == baseline_by_name[name], (
                f"fault in {step.produces} changed non-descendant indicator {name}"
            )
    _report("orchestrator determinism (10 runs, pools 1 and 4) and failure isolation", True)


# -- criterion: end-to-end golden run -----------------------------------------------------------------

def test_end_to_end_golden_run(fixtures, tmp_path):
    engine = fixtures.engine()
    assert engine.config.llm.mode == "replay"  # network-free by construction
    plan = load_plan(fixtures.plan_path)
    cases = load_cases(fixtures.cases_dir)
    report = engine.eval_batch(cases, plan, "moe", tmp_path / "runs")
    ok = (
        report["counts"] == EXPECTED_COUNTS
        and report["macc"] == pytest.approx(EXPECTED_MACC, abs=1e-9)
        and report["f1"] == pytest.approx(EXPECTED_F1, abs=1e-9)
        and report["auc"] == pytest.approx(EXPECTED_AUC, abs=1e-12)
    )
    _report(
        "end-to-end golden run reproduces frozen counts, mACC, F1 and AUC exactly", ok
    )


# -- criterion: multi-indicator decider beats every single indicator ----------------------------------

def test_structural_multi_indicator_advantage(fixtures, tmp_path):
    engine = fixtures.engine()
    plan = load_plan(fixtures.plan_path)
    cases = load_cases(fixtures.cases_dir)
    spec = AblationSpec(
        indicator_subsets=(
            ("vcdr",),
            ("rim_thickness",),
            ("ppa",),
            ("disc_hemorrhage",),
            ("vcdr", "rim_thickness", "ppa", "disc_hemorrhage"),
        ),
        deciders=("single", "moe"),
    )
    report = engine.run_ablation(cases, plan, spec, tmp_path / "runs")
    single_rows = [r for r in report["rows"] if r["decider"] == "single"]
    full_row = [r for r in report["rows"] if len(r["indicators"]) == 4 and r["decider"] == "moe"][0]
    assert len(single_rows) == 4
    for row in single_rows:
        name = row["indicators"][0]
        assert row["macc"] == pytest.approx(EXPECTED_SINGLE_MACC[name], abs=1e-9)
        assert row["macc"] < 100.0  # individually imperfect
        assert full_row["macc"] > row["macc"], (
            f"multi-indicator decider not better than {name}"
        )
    _report(
        "multi-indicator weighted decider strictly beats every single-indicator row on mACC",
        True,
    )
