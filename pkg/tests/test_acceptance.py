"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line that is printed at the end of the pytest
session (see ``conftest.py``).  Run just these with::

    pytest -v tests/test_acceptance.py

The desk-scale training runs (criteria 6-8) share one cache, so the whole
file trains 15 small models once; expect roughly an hour on one core.
"""

import math
import statistics
import time
from functools import lru_cache

import numpy as np
import pytest

from geocaps import tensor as T
from fractions import Fraction

from geocaps.backbone import BackboneConfig
from geocaps.capsules import CapsuleConfig, dynamic_routing
from geocaps.cli import main as cli_main
from geocaps.config import desk_model_config
from geocaps.data import SyntheticSpec, generate_synthetic_pairs
from geocaps.gradcheck import check_gradients
from geocaps.model import ModelConfig, build_model
from geocaps.objective import LossConfig, margin_trihard_loss, pairwise_sq_distances, soft_trihard_loss
from geocaps.retrieval import recall_curve, report_from_distances
from geocaps.train import Adam, TrainConfig, fit

RESULTS = []  # (criterion, passed, detail), printed by conftest
SEEDS = (0, 1, 2)


def record(criterion, passed, detail):
    RESULTS.append((criterion, bool(passed), detail))
    return passed


# ----------------------------------------------------------------------
# 1. architecture
# ----------------------------------------------------------------------
def test_criterion_1_full_scale_shape_chain():
    start = time.perf_counter()
    model = build_model(ModelConfig(variant="II"))
    x = T.Tensor(np.random.default_rng(0).standard_normal((1, 3, 224, 224)).astype(np.float32))
    feats = model.features(x, "ground", "eval")
    head = model.heads["ground"]
    conv = head.primary.conv(feats)
    caps = head.capsules(feats)
    desc = model.embed(x, "ground", "eval")
    chain = (feats.shape, conv.shape, caps.shape, desc.shape)
    elapsed = time.perf_counter() - start
    ok = chain == ((1, 2048, 7, 7), (1, 8 * 32, 5, 5), (1, 32, 64), (1, 2048)) and elapsed < 60
    record(1, ok, f"224x224x3 -> {feats.shape[2]}x{feats.shape[3]}x{feats.shape[1]} -> 5x5x8x32 -> "
                  f"{caps.shape[1]}x{caps.shape[2]} -> {desc.shape[1]} in {elapsed:.1f}s")
    assert ok, chain


# ----------------------------------------------------------------------
# 2. routing and squash invariants
# ----------------------------------------------------------------------
def test_criterion_2_routing_invariants():
    rng = np.random.default_rng(2)
    worst_sum = worst_norm = 0.0
    uniform = True
    below_one = True
    with T.precision(np.float64):
        for trial in range(200):
            iters = 1 + trial % 6
            uh = rng.standard_normal((2, 12, 5, 6)) * rng.uniform(0.01, 4)
            v, state = dynamic_routing(T.Tensor(uh), iters)
            for c in state.history:
                worst_sum = max(worst_sum, float(np.abs(c.sum(axis=2) - 1).max()))
            s = np.einsum("ngj,ngjd->njd", state.couplings, uh)
            n = np.linalg.norm(s, axis=-1)
            out = np.linalg.norm(v.data, axis=-1)
            below_one &= bool(np.all(out < 1))
            worst_norm = max(worst_norm, float(np.abs(out - n ** 2 / (1 + n ** 2)).max()))
            if iters == 1:
                uniform &= bool(np.all(state.couplings == 1 / 5))
    ok = worst_sum <= 1e-6 and worst_norm <= 1e-6 and below_one and uniform
    record(2, ok, f"max |sum c - 1| {worst_sum:.1e}, max norm err {worst_norm:.1e}, "
                  f"norms < 1: {below_one}, one-iteration uniform: {uniform}")
    assert ok


# ----------------------------------------------------------------------
# 3. gradient suite
# ----------------------------------------------------------------------
def _param(rng, *shape):
    return T.parameter(rng.standard_normal(shape))


def _primitive_suite(rng):
    x4, k, kb, k1 = _param(rng, 3, 3, 6, 6), _param(rng, 4, 3, 3, 3), _param(rng, 4), _param(rng, 4, 3, 1, 1)
    gamma, beta = _param(rng, 3), _param(rng, 3)
    stats = T.RunningStats(3)
    stats.mean[:] = rng.standard_normal(3)
    stats.var[:] = rng.uniform(0.5, 2, 3)
    m, other = _param(rng, 12, 10), _param(rng, 12, 10)
    w, b = _param(rng, 10, 11), _param(rng, 11)
    a3, b3 = _param(rng, 4, 5, 6), _param(rng, 6, 7)
    return {
        "conv2d": (lambda: T.conv2d(x4, k, 1, "valid", kb), [x4, k, kb]),
        "conv2d stride 2 same": (lambda: T.conv2d(x4, k, 2, "same"), [x4, k]),
        "conv2d 1x1 stride 2": (lambda: T.conv2d(x4, k1, 2, "valid", kb), [x4, k1, kb]),
        "batch_norm train": (lambda: T.batch_norm(x4, gamma, beta, "train"), [x4, gamma, beta]),
        "batch_norm eval": (lambda: T.batch_norm(x4, gamma, beta, "eval", stats), [x4, gamma, beta]),
        "affine": (lambda: T.affine(m, w, b), [m, w, b]),
        "relu": (lambda: T.relu(m), [m]),
        "softmax": (lambda: T.softmax(m, axis=1), [m]),
        "add": (lambda: T.add(a3, T.sum_(b3, axis=1)), [a3, b3]),
        "mul": (lambda: T.mul(m, other), [m, other]),
        "matmul": (lambda: T.matmul(a3, b3), [a3, b3]),
        "reshape/transpose": (lambda: T.transpose(T.reshape(m, (3, 4, 10)), (2, 0, 1)), [m]),
        "sum": (lambda: T.sum_(a3, axis=1, keepdims=True), [a3]),
        "l2_normalize": (lambda: T.l2_normalize(m, axis=1), [m]),
        "softplus": (lambda: T.softplus(T.mul(m, 3.0)), [m]),
        "squash": (lambda: T.squash(m, axis=1), [m]),
    }


def test_criterion_3_gradient_suite():
    start = time.perf_counter()
    errors = {}
    with T.precision(np.float64):
        rng = np.random.default_rng(3)
        for name, (fn, params) in _primitive_suite(rng).items():
            probe = rng.standard_normal(fn().shape)
            errors[name] = (check_gradients(lambda: T.sum_(T.mul(fn(), probe)), params, n_coords=120), 1e-6)

        uh = _param(rng, 2, 8, 4, 5)
        probe = rng.standard_normal((2, 4, 5))
        errors["routing x4"] = (check_gradients(
            lambda: T.sum_(T.mul(dynamic_routing(uh, 4)[0], probe)), [uh], n_coords=150), 1e-4)

        tiny = build_model(ModelConfig(
            variant="II",
            backbone=BackboneConfig(input_size=(16, 16), block_counts=(1, 1, 1, 1), width_scale=Fraction(1, 16)),
            capsules=CapsuleConfig(n_primary=3, d_primary=4, primary_kernel=(1, 1), n_out=4, d_out=4,
                                   routing_iterations=4),
            seed=3))
        ground = rng.standard_normal((4, 3, 16, 16))
        satellite = rng.standard_normal((4, 3, 16, 16))

        def loss():
            d = pairwise_sq_distances(tiny.embed(ground, "ground"), tiny.embed(satellite, "satellite"))
            return soft_trihard_loss(d, alpha=15.0)

        errors["soft-trihard end to end"] = (check_gradients(loss, tiny.parameters(), n_coords=200), 1e-4)

    failed = {k: v for k, (v, tol) in errors.items() if not v < tol}
    worst = max(errors, key=lambda k: errors[k][0] / errors[k][1])
    elapsed = time.perf_counter() - start
    ok = not failed and elapsed < 300
    record(3, ok, f"{len(errors)} checks, worst {worst} {errors[worst][0]:.1e} (tol {errors[worst][1]:.0e}), "
                  f"{elapsed:.0f}s")
    assert ok, failed


# ----------------------------------------------------------------------
# 4. loss oracle
# ----------------------------------------------------------------------
def _loop_losses(D, alpha, theta):
    m = len(D)
    margin = soft = 0.0
    for a in range(m):
        hardest = min(D[a][n] for n in range(m) if n != a)
        margin += max(0.0, D[a][a] - hardest + theta)
        soft += math.log1p(math.exp(alpha * (D[a][a] - hardest)))
    return margin / m, soft / m


def test_criterion_4_loss_oracle():
    rng = np.random.default_rng(4)
    worst = 0.0
    with T.precision(np.float64):
        for _ in range(1000):
            D = rng.uniform(0, 4, (8, 8))
            margin, soft = _loop_losses(D.tolist(), 15.0, 0.2)
            worst = max(worst, abs(float(margin_trihard_loss(T.Tensor(D), 0.2).data) - margin),
                        abs(float(soft_trihard_loss(T.Tensor(D), 15.0).data) - soft))
    ok = worst < 1e-9
    record(4, ok, f"1000 batches, max |diff| {worst:.1e}")
    assert ok


# ----------------------------------------------------------------------
# 5. retrieval oracle
# ----------------------------------------------------------------------
def test_criterion_5_retrieval_oracle():
    rng = np.random.default_rng(5)
    mismatches = 0
    for trial in range(100):
        d = rng.uniform(0, 4, (500, 500))
        if trial % 5 == 0:
            d = np.round(d, 2)
        rep = report_from_distances(d, (1, 5, 10, 50), (1, 10))
        order = np.sort(d, axis=1)
        # rank by sorting: first sorted position holding the true distance
        ranks = np.array([int(np.searchsorted(order[i], d[i, i], side="left")) + 1 for i in range(500)])
        expect_k = {k: float(np.mean(ranks <= k)) for k in (1, 5, 10, 50)}
        expect_p = {1.0: float(np.mean(ranks <= 5)), 10.0: float(np.mean(ranks <= 50))}
        if (rep.ranks.tolist() != ranks.tolist() or rep.recall_at_k != expect_k
                or rep.recall_at_top_percent != expect_p):
            mismatches += 1

    hits = []
    for _ in range(10):
        g = rng.standard_normal((1000, 32))
        s = rng.standard_normal((1000, 32))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        s /= np.linalg.norm(s, axis=1, keepdims=True)
        hits.append(recall_curve(g, s, (1,), (1,)).recall_at_top_percent[1.0])
    chance = float(np.mean(hits))
    ok = mismatches == 0 and abs(chance - 0.01) <= 0.005
    record(5, ok, f"{mismatches}/100 oracle mismatches, random recall@top1% {chance:.4f} over 10000 queries")
    assert ok


# ----------------------------------------------------------------------
# 6-8. desk-scale training
# ----------------------------------------------------------------------
DESK_EPOCHS = 50


@lru_cache(maxsize=None)
def desk_run(seed, kind="soft_trihard", head="caps", batch_m=32):
    """Train the desk preset on 512 synthetic locations and score the 128 held out."""
    start = time.perf_counter()
    data = generate_synthetic_pairs(SyntheticSpec(n_locations=640, image_size=64, seed=seed))
    train, test = data.split(0.8)
    model = build_model(desk_model_config(head=head, seed=seed))
    config = TrainConfig(batch_M=batch_m, epochs=DESK_EPOCHS, seed=seed)
    fit(model, train, config, LossConfig(kind=kind), Adam(model.named_parameters(), config))
    ground = model.embed(test.ground, "ground", "eval").data
    satellite = model.embed(test.satellite, "satellite", "eval").data
    report = recall_curve(ground, satellite, k_list=tuple(range(1, 81)), percent_list=(1, 10))
    return report, time.perf_counter() - start


def _top1(seed, **kw):
    return desk_run(seed, **kw)[0].recall_at_top_percent[1.0]


@pytest.mark.slow
def test_criterion_6_desk_end_to_end():
    report, elapsed = desk_run(0)
    r1 = report.recall_at_k[1]
    r10 = report.recall_at_top_percent[10.0]
    ok = r1 >= 0.5 and r10 >= 0.95 and elapsed <= 1800
    record(6, ok, f"variant II soft-trihard, 128 held-out: recall@1 {r1:.3f} (>= 0.5), "
                  f"recall@top10% {r10:.3f} (>= 0.95), {elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_criterion_7_ablation_directions():
    soft = statistics.median(_top1(s) for s in SEEDS)
    triplet = statistics.median(_top1(s, kind="soft_triplet") for s in SEEDS)
    caps = soft
    fc = statistics.median(_top1(s, head="fc") for s in SEEDS)
    curves = [[desk_run(s)[0].recall_at_k[k] for k in range(1, 81)] for s in SEEDS]
    median_curve = [statistics.median(col) for col in zip(*curves)]
    monotone = all(b >= a for a, b in zip(median_curve, median_curve[1:]))
    ok = soft > triplet and caps >= fc and monotone
    record(7, ok, f"median recall@top1%: soft-trihard {soft:.3f} vs triplet {triplet:.3f}; "
                  f"caps {caps:.3f} vs fc {fc:.3f}; curve non-decreasing in K: {monotone}")
    assert ok


def batch_size_trend_ok(values, slack=0.02):
    """Non-decreasing, except at most one adjacent drop of at most ``slack``."""
    drops = [a - b for a, b in zip(values, values[1:]) if b < a]
    return len(drops) == 0 or (len(drops) == 1 and drops[0] <= slack + 1e-12)


def test_batch_size_trend_rule():
    assert batch_size_trend_ok([0.1, 0.2, 0.3, 0.4])
    assert batch_size_trend_ok([0.1, 0.3, 0.29, 0.4])
    assert not batch_size_trend_ok([0.1, 0.3, 0.25, 0.4])
    assert not batch_size_trend_ok([0.3, 0.29, 0.4, 0.39])


@pytest.mark.slow
def test_criterion_8_batch_size_trend():
    sizes = (4, 8, 16, 32)
    medians = [statistics.median(_top1(s, batch_m=m) for s in SEEDS) for m in sizes]
    ok = batch_size_trend_ok(medians)
    record(8, ok, "median recall@top1% by M: " + ", ".join(f"{m}: {v:.3f}" for m, v in zip(sizes, medians)))
    assert ok


# ----------------------------------------------------------------------
# 9. determinism
# ----------------------------------------------------------------------
def test_criterion_9_determinism(tmp_path):
    import json

    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"train": {"epochs": 2, "seed": 9}, "data": {"synthetic": {"seed": 9}}}))
    outputs = []
    for run in ("a", "b"):
        ckpt = tmp_path / f"{run}.gcap"
        report = tmp_path / f"{run}.csv"
        assert cli_main(["train", "--config", str(cfg), "--out", str(ckpt)]) == 0
        assert cli_main(["eval", "--config", str(cfg), "--ckpt", str(ckpt), "--report", str(report)]) == 0
        outputs.append((ckpt.read_bytes(), report.read_bytes(), (tmp_path / f"{run}.gcap.loss.csv").read_bytes()))
    same = [x == y for x, y in zip(*outputs)]
    ok = all(same)
    record(9, ok, f"checkpoint identical {same[0]} ({len(outputs[0][0])} bytes), report identical {same[1]}, "
                  f"loss log identical {same[2]}")
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main(["-v", __file__]))
