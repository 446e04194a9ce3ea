"""Acceptance criteria, one test each; every test records a PASS/FAIL line for the summary."""
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from oracles import brute_force_rec, edge_function_mask, procrustes_cases
from posemon.harness import (HIGHER_IS_WORSE, benchmark_data, bench_monitors, correlation_table, level_trend, lookup,
                             prediction_correlations, prune_worst, run_monitors)
from posemon.imgproc import canny, gaussian_blur, gaussian_kernel, sobel
from posemon.learner import AtomConfig, atom_forward, bench_forward, gradient_check, init_model, train
from posemon.metrics import LOSS_NAMES, mask_iou, mpjpe, rec_error
from posemon.monitors import SubjectHistory, external_mask_m, pose_consistency, shape_consistency, time_m_observe
from posemon.raster import rasterize_triangles, triangle_coverage
from posemon.synth import rodrigues

SEEDS = (0, 1, 2)


def record(num: int, title: str, checks: dict, elapsed: float, budget: float | None):
    """Store the summary line and fail the test if any check (or the time budget) fails."""
    checks = dict(checks)
    if budget is not None:
        checks[f"runtime {elapsed:.2f}s < {budget:g}s"] = elapsed < budget
    ok = all(bool(v) for v in checks.values())
    bad = [k for k, v in checks.items() if not v]
    line = f"[{'PASS' if ok else 'FAIL'}] {num:>2}. {title} ({elapsed:.1f}s)"
    if bad:
        line += "  failed: " + "; ".join(bad)
    ACCEPTANCE_LINES[num] = line
    print(line)
    assert ok, line


# ------------------------------------------------------------------ 1

def test_criterion_01_formula_examples():
    t0 = time.perf_counter()
    z = np.zeros(4)
    hist = SubjectHistory("a", np.array([1.0, -1, 0, 3]), 1, 5, [np.zeros((5, 3))])
    J = np.zeros((5, 3))
    moved = J.copy()
    moved[3] = [0, 2, 0]
    w = np.ones(5)
    w_small = w.copy()
    w_small[3] = 0.25
    bufs = []
    for d in (2.0, 1.0, 3.0):
        b = J.copy()
        b[0, 0] = d
        bufs.append(b)

    from posemon.core import Camera, Mesh, PoseEstimate
    est = PoseEstimate("new", 0.0, np.zeros((3, 3)), z, Camera(1.0),
                       Mesh(np.zeros((3, 3)), np.array([[0, 1, 2]])), np.ones((3, 3)))
    checks = {
        "L_sc identical beta = 0": shape_consistency(np.array([1.0, -1, 0, 3]), hist) == 0.0,
        "L_sc example = 9": shape_consistency(np.array([2.0, 1, 2, 3]), hist) == 9.0,
        "L_pc weighted example = 1.0": pose_consistency(moved, SubjectHistory("a", z, 1, 5, [J]), w_small) == 1.0,
        "L_pc min{4,1,9} = 1": pose_consistency(J, SubjectHistory("a", z, 3, 5, bufs), w) == 1.0,
        "first encounter = 0": time_m_observe({}, est, np.ones(3)).value == 0.0,
    }
    record(1, "formula unit suite (shape/pose consistency, first encounter)", checks, time.perf_counter() - t0, 1.0)


# ------------------------------------------------------------------ 2

def test_criterion_02_dice_and_iou():
    t0 = time.perf_counter()
    m = np.zeros((4, 4), bool)
    m[0, :2] = True
    other = np.zeros((4, 4), bool)
    other[3, 2:] = True
    half = np.zeros((4, 4), bool)
    half[0, 1:3] = True
    a = np.zeros((3, 3), bool)
    a[0, :2] = True
    b = np.zeros((3, 3), bool)
    b[2, 2] = True
    c = np.zeros((3, 3), bool)
    c[0, 1:3] = True
    checks = {
        "Dice identical = 1": external_mask_m([m], m).value == 1.0,
        "Dice disjoint = 0": external_mask_m([other], m).value == 0.0,
        "Dice half = 0.5": external_mask_m([half], m).value == 0.5,
        "IoU identical = 1": mask_iou(a, a) == 1.0,
        "IoU disjoint = 0": mask_iou(a, b) == 0.0,
        "IoU overlap = 1/3": mask_iou(a, c) == 1 / 3,
    }
    rng = np.random.default_rng(2)
    violations = 0
    for _ in range(1000):
        shape = tuple(rng.integers(2, 9, 2))
        dens = rng.uniform(0, 1, 3)
        p, x, y = (rng.random(shape) < d for d in dens)
        one = external_mask_m([x], p).value
        two = external_mask_m([x, y], p).value
        violations += not (one <= two <= 1.0 and two == max(one, external_mask_m([y], p).value))
    checks["max-over-candidates monotone on 1000 triples"] = violations == 0
    record(2, "Dice/IoU suite", checks, time.perf_counter() - t0, 5.0)


# ------------------------------------------------------------------ 3

def test_criterion_03_rasterizer():
    t0 = time.perf_counter()
    tri = np.array([[[0, 0], [4, 0], [0, 4]]], dtype=float)
    got = rasterize_triangles(tri, 8, 8)
    checks = {"8x8 triangle matches edge-function oracle": np.array_equal(got, edge_function_mask(tri[0], 8, 8))
              and got.sum() == 6}
    rng = np.random.default_rng(3)
    bad = 0
    quads = 0
    while quads < 40:
        # convex quads with half-integer vertices, so pixel centres land exactly on edges
        c = rng.integers(4, 12, 2)
        ang = np.sort(rng.uniform(0, 2 * math.pi, 4))
        r = rng.uniform(2, 4, 4)
        pts = np.round(2 * (c + np.column_stack([r * np.cos(ang), r * np.sin(ang)]))) / 2
        cross = [np.cross(np.append(pts[(i + 1) % 4] - pts[i], 0), np.append(pts[(i + 2) % 4] - pts[(i + 1) % 4], 0))[2]
                 for i in range(4)]
        if not all(x > 0 for x in cross):
            continue
        quads += 1
        a, b, cc, d = pts
        covers = []
        for split in ([[a, b, cc], [a, cc, d]], [[a, b, d], [b, cc, d]]):
            _, ys, xs = triangle_coverage(np.array(split), 16, 16)
            cnt = np.zeros((16, 16), int)
            np.add.at(cnt, (ys, xs), 1)
            covers.append(cnt)
        want = edge_function_mask([a, b, cc], 16, 16) | edge_function_mask([a, cc, d], 16, 16)
        for cnt in covers:
            bad += int((cnt > 1).sum()) + int(((cnt == 0) & want).sum()) + int(((cnt == 1) & ~want).sum())
    checks["40 convex quads, both diagonals: zero dropped/doubled pixels"] = bad == 0
    record(3, "rasterizer oracle and quad fill rule", checks, time.perf_counter() - t0, 1.0)


# ------------------------------------------------------------------ 4

def test_criterion_04_canny():
    t0 = time.perf_counter()
    img = np.zeros((16, 16), np.uint8)
    img[:, 8:] = 255
    # hand oracle: the blurred step's Sobel response peaks at the first bright column, on every row
    row = np.array([0.0] * 8 + [255.0] * 8)
    k = gaussian_kernel(1.4)
    r = len(k) // 2
    idx = np.abs(np.arange(-r, 16 + r))
    idx = np.where(idx > 15, 30 - idx, idx)
    smooth = np.convolve(row[idx], k, mode="valid")
    padded = np.concatenate([[smooth[1]], smooth, [smooth[-2]]])
    mag = np.abs(4 * (padded[2:] - padded[:-2]))
    peak = [x for x in range(1, 15) if mag[x] >= mag[x - 1] and mag[x] > mag[x + 1]]
    want = np.zeros((16, 16), bool)
    want[:, peak] = True
    gx, gy = sobel(gaussian_blur(img, 1.4))
    checks = {
        "uniform image -> no edges": not canny(np.full((16, 16), 90, np.uint8), 20, 40).any(),
        "hand oracle peak is column 8": peak == [8] and np.allclose(np.abs(gx[7]), mag) and np.allclose(gy, 0),
        "step -> exact 1-px column": np.array_equal(canny(img, 20, 40), want),
    }
    record(4, "Canny regression", checks, time.perf_counter() - t0, 1.0)


# ------------------------------------------------------------------ 5

def test_criterion_05_procrustes():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst_sim = 0.0
    for _ in range(1000):
        k = int(rng.integers(3, 24))
        gt = rng.normal(size=(k, 3))
        R = rodrigues(rng.normal(size=3))
        pred = rng.uniform(0.2, 5.0) * gt @ R.T + rng.normal(scale=3, size=3)
        worst_sim = max(worst_sim, rec_error(pred, gt))
    worst_gap = -math.inf
    for _ in range(10_000):
        k = int(rng.integers(3, 24))
        a, b = rng.normal(size=(k, 3)), rng.normal(size=(k, 3))
        worst_gap = max(worst_gap, rec_error(a, b) - mpjpe(a, b))
    worst_brute = max(abs(rec_error(p, g) - brute_force_rec(p, g)[0]) for p, g in procrustes_cases())
    checks = {
        f"similarity-transformed gt: max rec {worst_sim:.2e} < 1e-9": worst_sim < 1e-9,
        f"10^4 random pairs: max(rec - mpjpe) {worst_gap:.3f} <= 1e-9": worst_gap <= 1e-9,
        f"20 brute-force cases: max gap {worst_brute:.1e} < 1e-3": worst_brute < 1e-3,
    }
    record(5, "Procrustes", checks, time.perf_counter() - t0, 60.0)


# ------------------------------------------------------------------ 6

def test_criterion_06_gradient_check():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    worst32 = worst64 = 0.0
    for _ in range(10):
        n_conv = int(rng.integers(1, 4))
        cfg = AtomConfig(input_size=(int(rng.integers(6, 17)), int(rng.integers(6, 17))),
                         conv_channels=tuple(int(c) for c in rng.integers(2, 7, n_conv)),
                         fc_sizes=tuple(int(c) for c in rng.integers(3, 13, int(rng.integers(1, 3)))),
                         num_joints=int(rng.integers(2, 17)), seed=int(rng.integers(1 << 30)))
        model = init_model(cfg)
        n = int(rng.integers(1, 5))
        x = rng.random((n, 2) + cfg.input_size)
        aux = rng.normal(size=(n, cfg.aux_size))
        y = rng.normal(size=(n, 4))
        worst32 = max(worst32, gradient_check(model, x, aux, y, max_entries=30)[0])
        worst64 = max(worst64, gradient_check(model.astype("float64"), x, aux, y, max_entries=30)[0])
    checks = {f"float32 max rel err {worst32:.1e} < 1e-3": worst32 < 1e-3,
              f"float64 max rel err {worst64:.1e} < 1e-6": worst64 < 1e-6}
    record(6, "learner gradient check (10 random configurations)", checks, time.perf_counter() - t0, 60.0)


# ------------------------------------------------------------------ 7

def test_criterion_07_ablation_contracts():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    checks = {}
    for flag, name in (("use_mask", "noMask"), ("use_joints", "noJoint")):
        model = init_model(AtomConfig(**{flag: False}, seed=7))
        equal = 0
        for _ in range(100):
            img = rng.integers(0, 256, (128, 128)).astype(np.uint8)
            m1, m2 = rng.random((128, 128)) < rng.random(), rng.random((128, 128)) < rng.random()
            j1, j2 = rng.normal(size=(16, 3)), rng.normal(size=(16, 3))
            cam = [rng.uniform(0.5, 1.5), *rng.normal(scale=0.1, size=2)]
            if flag == "use_mask":
                a, b = atom_forward(model, img, m1, j1, cam), atom_forward(model, img, m2, j1, cam)
            else:
                a, b = atom_forward(model, img, m1, j1, cam), atom_forward(model, img, m1, j2, cam)
            equal += np.array_equal(a.as_array(), b.as_array())
        checks[f"{name}: {equal}/100 bit-equal"] = equal == 100
    record(7, "ablation contracts", checks, time.perf_counter() - t0, 10.0)


# ------------------------------------------------------------- 8 and 9

@pytest.fixture(scope="module")
def benchmark_runs():
    """Per seed: data, trained full and noAug models, and the test-split monitor report."""
    runs = {"build_s": time.perf_counter()}
    for seed in SEEDS:
        train_set, val_set, test_set, shard = benchmark_data(seed)
        out = {"trend": level_trend(list(train_set) + list(val_set) + list(test_set))[0]}
        for variant, cfg in (("full", AtomConfig(seed=seed)), ("noAug", AtomConfig(seed=seed, augment=False))):
            t = time.perf_counter()
            model, _ = train(init_model(cfg), train_set, val_set, cfg)
            out[f"{variant}_train_s"] = time.perf_counter() - t
            out[f"{variant}_model"] = model
            cors = prediction_correlations(model, shard)
            out[f"{variant}_shard"] = float(np.mean([cors[m] for m in LOSS_NAMES]))
        out["report"] = run_monitors(test_set, model=out["full_model"])
        out["table"] = correlation_table(out["report"])
        out["test"] = test_set
        runs[seed] = out
    runs["build_s"] = time.perf_counter() - runs["build_s"]
    return runs


@pytest.mark.slow
def test_criterion_08_directional_reproduction(benchmark_runs):
    t0 = time.perf_counter()
    rows = {}
    for seed in SEEDS:
        r = benchmark_runs[seed]
        tab = r["table"]
        rows[seed] = {
            "a": r["trend"],
            "b": lookup(tab, "atom:mpjpe", "mpjpe"),
            "atom_m": lookup(tab, "atom:mask_iou", "mask_iou"),
            "canny_m": lookup(tab, "cannym", "mask_iou"),
            "feat_m": lookup(tab, "featurem", "mask_iou"),
            "time_j": lookup(tab, "timem", "mpjpe"),
            "feat_j": lookup(tab, "featurem", "mpjpe"),
            "full_shard": r["full_shard"],
            "noaug_shard": r["noAug_shard"],
            "train_s": max(r["full_train_s"], r["noAug_train_s"]),
        }
    for seed, v in rows.items():
        print(f"seed {seed}: " + ", ".join(f"{k}={x:.3f}" for k, x in v.items()))
    mean = {k: float(np.mean([v[k] for v in rows.values()])) for k in rows[0]}
    print("mean: " + ", ".join(f"{k}={x:.3f}" for k, x in mean.items()))

    def votes(pred):
        return sum(bool(pred(v)) for v in rows.values())

    tests = {
        "(a) Spearman(eps, MPJPE) >= 0.9": lambda v: v["a"] >= 0.9,
        "(b) ATOM Pearson with MPJPE >= 0.6": lambda v: v["b"] >= 0.6,
        "(c) ATOM > CannyM on mask IoU": lambda v: v["atom_m"] > v["canny_m"],
        "(c) CannyM > FeatureM on mask IoU": lambda v: v["canny_m"] > v["feat_m"],
        "(c) TimeM > FeatureM on MPJPE": lambda v: v["time_j"] > v["feat_j"],
        "(d) noAug <= full on high-eps shard": lambda v: v["noaug_shard"] <= v["full_shard"],
    }
    checks = {f"{k}: {votes(f)}/3 seeds": votes(f) >= 2 for k, f in tests.items()}
    checks[f"training <= 10 min single-core (max {max(v['train_s'] for v in rows.values()):.0f}s)"] = \
        all(v["train_s"] <= 600 for v in rows.values())
    summary = (f"mean: trend {mean['a']:.2f}, ATOM/MPJPE {mean['b']:.2f}, mask IoU ATOM {mean['atom_m']:.2f} > "
               f"CannyM {mean['canny_m']:.2f} > FeatureM {mean['feat_m']:.2f}, MPJPE TimeM {mean['time_j']:.2f} > "
               f"FeatureM {mean['feat_j']:.2f}, shard full {mean['full_shard']:.2f} vs noAug {mean['noaug_shard']:.2f}")
    print(summary)
    record(8, "end-to-end directional reproduction, 3 seeds", checks,
           benchmark_runs["build_s"] + time.perf_counter() - t0, None)


@pytest.mark.slow
def test_criterion_09_pruning(benchmark_runs):
    t0 = time.perf_counter()
    first = benchmark_runs[SEEDS[0]]
    rep = first["report"]
    truth = rep.losses()[:, LOSS_NAMES.index("mpjpe")]
    rep.add_scores("oracle", truth, HIGHER_IS_WORSE)
    removed = set(prune_worst(rep, "oracle", 0.2)[LOSS_NAMES.index("mpjpe")].removed)
    k = int(0.2 * len(truth))
    ids = [r.frame_id for r in rep.records]
    want = {ids[i] for i in np.argsort(-truth, kind="stable")[:k]}
    checks = {f"oracle prune removes exactly the top {k} frames": removed == want}
    for seed in SEEDS:
        r = benchmark_runs[seed]
        res = prune_worst(r["report"], "atom:mpjpe", 0.2)[LOSS_NAMES.index("mpjpe")]
        print(f"seed {seed}: avg {res.full_avg:.4f} -> {res.kept_avg:.4f} ({res.avg_improvement:.1f}%), "
              f"worst {res.full_worst:.4f} -> {res.kept_worst:.4f}")
        checks[f"seed {seed}: avg MPJPE improves {res.avg_improvement:.1f}% >= 5%"] = res.avg_improvement >= 5.0
        checks[f"seed {seed}: worst MPJPE strictly decreases"] = res.kept_worst < res.full_worst
    record(9, "pruning harness", checks, time.perf_counter() - t0, 60.0)


# ----------------------------------------------------------------- 10

@pytest.mark.slow
def test_criterion_10_timing(benchmark_runs):
    t0 = time.perf_counter()
    r = benchmark_runs[SEEDS[0]]
    atom_s = bench_forward(r["full_model"], 20)
    timing = bench_monitors(r["test"][:23])
    suite = timing["model_based_suite_s"]
    checks = {f"ATOM forward {atom_s * 1e3:.1f} ms/frame < 50 ms": atom_s < 0.05,
              f"monitor suite {suite * 1e3:.1f} ms/frame < 500 ms": suite < 0.5}
    record(10, "per-frame timing at 128x128, one core", checks, time.perf_counter() - t0, 60.0)
