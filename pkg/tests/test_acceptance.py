"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` (or ``python tests/test_acceptance.py``)
to see the lines as they are produced; they are also repeated in pytest's
terminal summary. Criteria 6 and 7 take a few minutes each on one core.
"""

import io
import math
import sys
import time
from collections import Counter
from contextlib import redirect_stdout
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import oracles  # noqa: E402
from conftest import disk_pair  # noqa: E402
from ofx import cli, fcn, imaging, metrics, offaxis, pipeline  # noqa: E402
from ofx.fcn import RELU, SIGMOID, LayerSpec, Network  # noqa: E402

RESULTS = []


def report(number, title, ok, detail, seconds):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}: {detail} ({seconds:.1f} s)"
    RESULTS.append(line)
    print(line, flush=True)
    return ok


# --- 1, 2: complexity ----------------------------------------------------------

def test_criterion_1_complexity_exact():
    t = time.perf_counter()
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = cli.main(["complexity"])
    rep = fcn.complexity()
    dt = time.perf_counter() - t
    text = buf.getvalue()
    ok = (code == 0 and rep.total_parameters == 74_593 and rep.total_macs == 1_426_636_800
          and "74,593" in text and "1,426,636,800" in text and "1426.64M" in text and dt < 1.0)
    assert report(1, "complexity exactness", ok,
                  f"{rep.total_parameters:,} parameters, {rep.total_macs:,} MAC", dt)


def test_criterion_2_parameter_storage():
    t = time.perf_counter()
    rep = fcn.complexity()
    mb = f"{rep.parameter_megabytes:.2f}"
    ok = rep.parameter_bytes == 74_593 * 4 == 298_372 and mb == "0.28"
    assert report(2, "parameter storage", ok, f"{rep.parameter_bytes:,} B = {mb} MB", time.perf_counter() - t)


# --- 3, 4: network correctness -------------------------------------------------

def test_criterion_3_gradient_check():
    t = time.perf_counter()
    specs = [LayerSpec(1, 8, RELU), LayerSpec(8, 8, RELU), LayerSpec(8, 1, SIGMOID)]
    net = Network.initialize(specs, seed=123, dtype=np.float64)
    rng = np.random.default_rng(123)
    for b in net.biases:
        b[:] = rng.normal(0, 0.1, b.shape)
    x = rng.random((2, 6, 6))
    y = (rng.random((2, 6, 6)) > 0.5).astype(np.float64)
    pred, cache = net.forward(x)
    grads = net.backward(cache, fcn.mse_loss(pred, y)[1])

    def loss():
        return fcn.mse_loss(net.forward(x)[0], y)[0]

    h = 1e-4
    worst, checked = 0.0, 0
    for p, g in zip(net.params(), grads):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss()
            p[idx] = old - h
            down = loss()
            p[idx] = old
            num = (up - down) / (2 * h)
            # relative error, floored so gradients that are zero on both sides count as agreeing
            err = abs(num - g[idx]) / max(abs(num), abs(g[idx]), 1e-7)
            worst = max(worst, err)
            checked += 1
    dt = time.perf_counter() - t
    ok = worst < 1e-3 and dt < 60
    assert report(3, "gradient correctness", ok, f"{checked} parameters, worst relative error {worst:.2e}", dt)


def test_criterion_4_forward_oracle():
    t = time.perf_counter()
    worst = 0.0
    for case in range(50):
        rng = np.random.default_rng(case)
        net = Network.initialize(seed=case)
        for b in net.biases:
            b[:] = rng.normal(0, 0.05, b.shape).astype(np.float32)
        h, w = rng.integers(1, 9, size=2)
        x = rng.random((h, w)).astype(np.float32)
        out = net.forward(x)[0][0]
        worst = max(worst, float(np.max(np.abs(out - oracles.forward_direct(net, x)))))
    dt = time.perf_counter() - t
    ok = worst <= 1e-5 and dt < 60
    assert report(4, "forward-pass oracle equivalence", ok, f"50 cases, max |diff| {worst:.2e}", dt)


# --- 5: overfit ----------------------------------------------------------------

def overfit_pairs(n=8, size=24):
    rng = np.random.default_rng(0)
    xs, ys = [], []
    for i in range(n):
        img, mask = disk_pair(size, size, cy=rng.uniform(9, 14), cx=rng.uniform(9, 14), r=rng.uniform(5, 8),
                              noise=4, seed=i)
        xs.append(img / 255.0)
        ys.append(mask)
    return np.array(xs, np.float32), np.array(ys, np.float32)


@pytest.mark.slow
def test_criterion_5_overfit():
    t = time.perf_counter()
    x, y = overfit_pairs()
    net = Network.initialize(seed=0)
    adam = fcn.AdamState.for_params(net.params(), lr=fcn.TRAIN_LR)
    first_hit, min_acc, loss, step = None, 0.0, math.inf, 0
    while step < 2000:
        pred, cache = net.forward(x)
        loss, grad = fcn.mse_loss(pred, y)
        if loss < 0.005 and first_hit is None:
            first_hit = step
        if first_hit is not None and step % 50 == 0:
            min_acc = min(metrics.metrics(metrics.confusion(metrics.binarize(p, 0.55), m))["accuracy"]
                          for p, m in zip(pred, y))
            if min_acc > 0.99:
                break
        fcn.adam_step(adam, net.params(), net.backward(cache, grad))
        step += 1
    dt = time.perf_counter() - t
    ok = first_hit is not None and min_acc > 0.99 and dt < 600
    hit = f"MSE < 0.005 after {first_hit} steps" if first_hit is not None else f"MSE {loss:.4f} after {step} steps"
    assert report(5, "overfit capacity", ok, f"{hit}; min per-image accuracy {min_acc:.4f} at step {step}", dt)


# --- 6: composition --------------------------------------------------------------

@pytest.mark.slow
def test_criterion_6_composition(tmp_path_factory):
    t = time.perf_counter()
    root = tmp_path_factory.mktemp("composition")
    rng = np.random.default_rng(6)
    sources = []
    for i in range(10_000):
        img, mask = disk_pair(cy=rng.uniform(45, 75), cx=rng.uniform(60, 100), r=rng.uniform(20, 35),
                              noise=6, seed=i)
        imaging.write_image(root / "src" / "images" / f"s{i}.png", img)
        imaging.write_mask(root / "src" / "masks" / f"s{i}.png", mask)
        sources.append(pipeline.Record(f"s{i}", f"s{i}", f"images/s{i}.png", f"masks/s{i}.png", pipeline.ORIGINAL))
    cfg = pipeline.BuildConfig(seed=2024, output_dir=str(root / "out"))
    records, warnings = pipeline.build_dataset(sources, cfg, jobs=pipeline.default_jobs(), manifest_dir=root / "src")
    plans = [r.plan for r in records]
    comp = pipeline.composition(plans)
    row_dev = max(abs(comp[label] - target) for label, _, target, _ in pipeline.COMPOSITION_TARGETS)
    fr = pipeline.subset_fractions(plans)
    target = {pipeline.ORIGINAL: 1 / 6, pipeline.UNCONSTRAINED: 1 / 6,
              pipeline.OFF_AXIS: 1 / 3, pipeline.OFF_AXIS_UNCONSTRAINED: 1 / 3}
    subset_dev = 100 * max(abs(fr[s] - target[s]) for s in target)
    dt = time.perf_counter() - t
    ok = len(records) == 60_000 and warnings == 0 and row_dev <= 1.5 and subset_dev <= 1.0 and dt < 900
    print(pipeline.audit_table(plans))
    assert report(6, "workflow composition", ok,
                  f"{len(records):,} records, max row deviation {row_dev:.2f} pp, max subset deviation "
                  f"{subset_dev:.2f} pp", dt)


# --- 7: invariants ---------------------------------------------------------------

def _check_mask(mask, shape=(120, 160)):
    return mask.shape == shape and mask.dtype == np.uint8 and bool(np.all((mask == 0) | (mask == 1)))


@pytest.mark.slow
def test_criterion_7_invariants():
    t = time.perf_counter()
    pool = [disk_pair(cy=55 + 3 * k, cx=70 + 4 * k, r=22 + k, noise=7, seed=k) for k in range(16)]
    failures = Counter()
    subsets = (pipeline.OFF_AXIS, pipeline.UNCONSTRAINED, pipeline.OFF_AXIS_UNCONSTRAINED)
    for i in range(10_000):
        plan = pipeline.make_plan(77, f"inv{i}", subsets[i % 3])
        img, mask = pool[i % len(pool)]
        cur_img, cur_mask = img, mask
        if plan.warped:
            d = plan.warp_draws
            for s, lam, direction in ((160, d.col_lambda, d.col_direction), (120, d.row_lambda, d.row_direction)):
                y = offaxis.build_axis_map(s, lam, direction).positions
                if not (y[0] == 1 and np.all(np.diff(y) > 0)):
                    failures["column map monotonicity"] += 1
            cur_img, cur_mask = offaxis.warp_sample(cur_img, cur_mask, d)
            failures["mask after warp"] += not _check_mask(cur_mask)
            failures["mask-only warp path"] += not np.array_equal(offaxis.warp_mask(mask, d), cur_mask)
        if plan.tilted:
            before = cur_mask
            cur_img, cur_mask = offaxis.apply_tilt(cur_img, cur_mask, plan.tilt_draws)
            failures["mask after tilt"] += not _check_mask(cur_mask)
            failures["mask-only tilt path"] += not np.array_equal(offaxis.tilt_mask(before, plan.tilt_draws), cur_mask)
        geo_mask = cur_mask
        out_img, out_mask = pipeline.execute_plan(img, mask, plan)
        failures["image shape"] += out_img.shape != (120, 160)
        failures["mask after quality stages"] += not np.array_equal(out_mask, geo_mask)
        if not (plan.warped or plan.tilted):
            failures["quality-only mask invariance"] += not np.array_equal(out_mask, mask)
        again = pipeline.execute_plan(img, mask, pipeline.AugmentationPlan.from_json(plan.to_json()))
        failures["replay hash"] += pipeline.output_hash(*again) != pipeline.output_hash(out_img, out_mask)
    for k, (img, mask) in enumerate(pool):
        for s, direction in ((160, "toward_start"), (120, "toward_end")):
            failures["unit lambda map"] += not np.array_equal(offaxis.build_axis_map(s, 1.0, direction).positions,
                                                              np.arange(1, s + 1))
        for out in (offaxis.warp_sample(img, mask, offaxis.WarpDraws.identity()),
                    offaxis.apply_tilt(img, mask, offaxis.TiltDraws.identity())):
            failures["degenerate identity"] += not (np.array_equal(out[0], img) and np.array_equal(out[1], mask))
    dt = time.perf_counter() - t
    bad = {k: v for k, v in failures.items() if v}
    ok = not bad and dt < 600
    assert report(7, "augmentation invariants", ok,
                  "10,000 draws, no violations" if not bad else f"violations {bad}", dt)


# --- 8: metrics ------------------------------------------------------------------

def test_criterion_8_metrics_oracle():
    t = time.perf_counter()
    rng = np.random.default_rng(8)
    worst, undefined_ok, undefined_seen = 0.0, True, 0
    # densities include 0 and 1 so empty and full masks (undefined denominators) occur
    densities = np.array([0.0, 0.02, 0.3, 0.5, 0.7, 0.98, 1.0])
    for _ in range(1000):
        pred = (rng.random((16, 16)) < rng.choice(densities)).astype(np.uint8)
        truth = (rng.random((16, 16)) < rng.choice(densities)).astype(np.uint8)
        got = metrics.metrics(metrics.confusion(pred, truth))
        ref = oracles.rates(*oracles.confusion(pred, truth))
        for name in metrics.METRIC_NAMES:
            if (got[name] is None) != (ref[name] is None):
                undefined_ok = False
            elif got[name] is None:
                undefined_seen += 1
            else:
                worst = max(worst, abs(got[name] - ref[name]))
    dt = time.perf_counter() - t
    ok = undefined_ok and worst <= 1e-12 and undefined_seen > 0 and dt < 60
    assert report(8, "metrics oracle equivalence", ok,
                  f"1,000 pairs, max |diff| {worst:.1e}, {undefined_seen} undefined values matched", dt)


def test_criterion_9_not_a_target():
    line = ("[INFO] criterion 9: segmentation scores on licensed datasets are not reproducible here "
            "and are not acceptance targets; criteria 1-8 stand in for them")
    RESULTS.append(line)
    print(line)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-s", "-q"]))
