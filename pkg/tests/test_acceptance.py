"""Acceptance gate: one test per primary criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (add ``-s`` to see the
lines interleaved with progress); the benchmark criteria share one cached set
of pipeline runs.
"""

import functools
import math
import time

import numpy as np
import pytest

from faircondense import fairnet, metrics, numkernel as nk
from faircondense.cli import main
from faircondense.condenser import (CondensedGraph, ProxyNet, allocate_attributes, build_adjacency,
                                    compute_budget, cond_loss)
from faircondense.config import PipelineConfig, SpectralConfig, TrainConfig
from faircondense.graph_core import DistributionStats, split_graph, stats_from_arrays
from faircondense.pipeline import run_pipeline
from faircondense.spectral import (init_encoder_params, normalized_laplacian, refine_backward,
                                   refine_encodings, sinusoidal_encode, spectral_basis)
from faircondense.store import read_manifest
from faircondense.synthetic import make_synthetic

from conftest import brute_force_rates, union_find_components

BENCH_SEEDS = range(10)
ARMS = {"full": (False, False), "base": (True, True), "w/o C": (True, False), "w/o F": (False, True)}


@pytest.fixture
def emit(capsys):
    def _emit(name, ok, detail, elapsed):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail} ({elapsed:.1f}s)")
    return _emit


def _gate(emit, name, ok, detail, t0, budget):
    elapsed = time.perf_counter() - t0
    within = elapsed < budget
    emit(name, ok and within, detail if within else f"{detail}; over the {budget}s budget", elapsed)
    assert ok, detail
    assert within, f"{name} took {elapsed:.1f}s, budget {budget}s"


def test_budget_formula(emit):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    mismatches = []
    for _ in range(200):
        n = int(rng.integers(1, 200_000))
        milli = int(rng.integers(1, 1000))
        rho = float(f"0.{milli:03d}")
        want = max(10, (milli * n) // 1000)
        if compute_budget(n, rho) != want:
            mismatches.append((n, rho))
    _gate(emit, "budget formula", not mismatches, f"{200 - len(mismatches)}/200 grid cases exact", t0, 1)


def test_distribution_preservation(emit):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_marginal, worst_joint, failures = 0.0, 0.0, 0
    for _ in range(200):
        c, a = int(rng.integers(2, 6)), int(rng.integers(2, 5))
        p = rng.dirichlet(np.ones(c * a)).reshape(c, a)
        stats = DistributionStats(p.sum(1), p.sum(0), p, 1000)
        n_syn = int(rng.integers(10, 500))
        seed = int(rng.integers(2**31))
        for mode in ("marginal", "joint"):
            y, s, _ = allocate_attributes(stats, n_syn, seed, mode)
            got = stats_from_arrays(y, s, c, a)
            gap = max(np.abs(got.class_props - stats.class_props).max(),
                      np.abs(got.group_props - stats.group_props).max())
            worst_marginal = max(worst_marginal, gap * n_syn)
            ok = gap <= 1 / n_syn + 1e-12
            if mode == "joint":
                jgap = np.abs(got.joint_props - stats.joint_props).mean()
                worst_joint = max(worst_joint, jgap * n_syn)
                ok = ok and jgap <= 2 / n_syn + 1e-12
            failures += not ok
    detail = (f"200 pairs x 2 modes, {failures} failures; worst marginal gap {worst_marginal:.3f}/n_syn, "
              f"worst joint mean gap {worst_joint:.3f}/n_syn")
    _gate(emit, "distribution preservation", failures == 0, detail, t0, 10)


def _random_condensed_adjacency(rng, i):
    n = int(rng.integers(10, 101))
    if i % 3 == 0:
        # non-negative features on disjoint coordinate blocks: cosine 0 across blocks
        blocks = int(rng.integers(2, 5))
        x = np.zeros((n, 4 * blocks))
        owner = rng.integers(0, blocks, n)
        for j in range(n):
            x[j, 4 * owner[j]:4 * owner[j] + 4] = rng.random(4) + 0.1
    else:
        x = rng.standard_normal((n, 6))
    adj, _ = build_adjacency(x, k_dense=int(rng.integers(2, 11)))
    return adj


def test_spectral_correctness(emit):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    problems = []
    multi = 0
    for i in range(50):
        adj = _random_condensed_adjacency(rng, i)
        n = adj.shape[0]
        lap = normalized_laplacian(adj)
        b = spectral_basis(lap, n)
        lam, u = b.eigenvalues, b.eigenvectors
        u_, v_ = np.nonzero(np.triu(adj, 1))
        comps = union_find_components(n, zip(u_, v_))
        multi += comps > 1
        zeros = int(np.sum(np.abs(lam) < 1e-8))
        recon = np.linalg.norm((u * lam) @ u.T - lap) / np.linalg.norm(lap)
        if lam.min() < -1e-9 or lam.max() > 2 + 1e-9:
            problems.append(f"graph {i}: eigenvalue outside [0, 2]")
        if np.max(np.abs(u.T @ u - np.eye(n))) >= 1e-8:
            problems.append(f"graph {i}: eigenvectors not orthonormal")
        if zeros != comps:
            problems.append(f"graph {i}: {zeros} zero eigenvalues vs {comps} components")
        if recon >= 1e-8:
            problems.append(f"graph {i}: reconstruction error {recon:.2e}")
    detail = f"50 graphs ({multi} disconnected), {len(problems)} violations" + (f": {problems[:3]}" if problems else "")
    _gate(emit, "spectral correctness", not problems, detail, t0, 60)


def test_encoding_identity(emit):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(10_000):
        lam = rng.uniform(0, 2)
        d = 2 * int(rng.integers(1, 129))
        e = sinusoidal_encode([lam], d)
        worst = max(worst, float(np.max(np.abs(e[:, 0::2] ** 2 + e[:, 1::2] ** 2 - 1.0))))
    _gate(emit, "encoding identity", worst <= 1e-12, f"10^4 cases, max |sin^2+cos^2-1| = {worst:.1e}", t0, 1)


def _cond_loss_error(seed):
    rng = np.random.default_rng(seed)
    n, d, h, c = int(rng.integers(5, 15)), int(rng.integers(2, 7)), int(rng.integers(3, 9)), int(rng.integers(2, 4))
    x = rng.standard_normal((n, d))
    y = rng.integers(0, c, n)
    params = ProxyNet.init(d, h, c, seed).params
    params["b1"] = rng.standard_normal(h) * 0.1
    _, grads = cond_loss(x, y, params)
    errs = [nk.grad_check(lambda v: cond_loss(v, y, params)[0], x, grads["X"])[0]]
    errs += [nk.grad_check(lambda _: cond_loss(x, y, params)[0], params[k], grads[k])[0] for k in params]
    return max(errs)


def _refine_error(seed):
    rng = np.random.default_rng(seed)
    k, d = int(rng.integers(1, 7)), 8
    p = init_encoder_params(d, seed)
    for key in ("ln1_g", "ln2_g"):
        p[key] = rng.uniform(0.5, 1.5, d)
    for key in ("ln1_b", "ln2_b", "ffn_b1", "ffn_b2"):
        p[key] = rng.standard_normal(p[key].shape) * 0.1
    e0 = rng.standard_normal((k, d))
    w = rng.standard_normal((k, d))
    f = lambda _: float(np.sum(w * refine_encodings(e0, p, 2)[0]))
    _, cache = refine_encodings(e0, p, 2)
    grads, de0 = refine_backward(w, cache, p)
    errs = [nk.grad_check(f, p[key], grads[key])[0] for key in p]
    return max(errs + [nk.grad_check(f, e0, de0)[0]])


def _fulayer_error(seed):
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(4, 10)), int(rng.integers(2, 6))
    train_mode = bool(seed % 2)
    cfg = TrainConfig(layers=int(rng.integers(1, 4)), hidden=5, dropout=0.3 if train_mode else 0.0)
    p = fairnet.init_params(d, 3, cfg, SpectralConfig(d_enc=4, heads=2), seed)
    p.buffers["bn_var"] = rng.uniform(0.5, 2, 5)
    p.buffers["bn_mean"] = rng.standard_normal(5) * 0.1
    # zero biases put all-inactive rows exactly on a ReLU kink; use a generic point
    for key, w in p.weights.items():
        if key.endswith(("_b", "_b1", "_b2")):
            p.weights[key] = rng.standard_normal(w.shape) * 0.1
    x, z = rng.standard_normal((n, d)), rng.standard_normal((n, 4))
    targets = fairnet.smooth_labels(nk.one_hot(rng.integers(0, 3, n), 3), 0.1, 3)
    masks = [nk.dropout_mask((n, 5), 0.3, rng) for _ in range(cfg.layers)] if train_mode else None
    frozen = {k: v.copy() for k, v in p.buffers.items()}

    def loss(_):
        p.buffers = {k: v.copy() for k, v in frozen.items()}
        return nk.soft_cross_entropy(fairnet.forward(x, z, p, train_mode, masks=masks)[0], targets)[0]

    p.buffers = {k: v.copy() for k, v in frozen.items()}
    logits, cache = fairnet.forward(x, z, p, train_mode, masks=masks)
    grads, dz = fairnet.backward(nk.soft_cross_entropy(logits, targets)[1], cache, p)
    errs = [nk.grad_check(loss, w, grads[k])[0] for k, w in p.weights.items() if not k.startswith("spec_")]
    return max(errs + [nk.grad_check(loss, z, dz)[0]])


def test_gradient_fidelity(emit):
    t0 = time.perf_counter()
    worst = {name: max(fn(seed) for seed in range(20)) for name, fn in
             (("cond loss", _cond_loss_error), ("refinement", _refine_error),
              ("fusion+head", _fulayer_error))}
    detail = "20 seeds each, max rel err " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    _gate(emit, "gradient fidelity", all(v < 1e-4 for v in worst.values()), detail, t0, 120)


def _tiny_condensed():
    rng = np.random.default_rng(0)
    y = np.repeat([0, 1], 15)
    x = rng.standard_normal((30, 4)) + (2 * y[:, None] - 1)
    adj, _ = build_adjacency(x, k_dense=5)
    return CondensedGraph(x, y, rng.integers(0, 2, 30), adj, 2, 2, {}), spectral_basis(normalized_laplacian(adj), 8)


def test_curriculum_semantics(emit):
    t0 = time.perf_counter()
    sums_exact = all(math.fsum(row) == 1.0
                     for c in range(2, 11) for eps in (0.0, 0.05, 0.1, 0.2, 0.3)
                     for row in fairnet.smooth_labels(nk.one_hot(np.arange(c), c), eps, c))
    rng = np.random.default_rng(4)
    logits = rng.standard_normal((64, 5)) * 3
    y = rng.integers(0, 5, 64)
    soft, _ = nk.soft_cross_entropy(logits, fairnet.smooth_labels(nk.one_hot(y, 5), 0.0, 5))
    logp = logits - logits.max(axis=1, keepdims=True)
    logp = logp - np.log(np.exp(logp).sum(axis=1, keepdims=True))
    hard = -float(np.sum(logp[np.arange(64), y])) / 64
    identical = soft == hard
    cg, basis = _tiny_condensed()
    cfg = TrainConfig(epochs=45, hidden=16)
    params = fairnet.init_params(4, 2, cfg, SpectralConfig(num_components=8, d_enc=8, heads=2), 0)
    _, log = fairnet.train(cg, basis, params, cfg)
    phases = [r["phase"] for r in log.records]
    switch = phases[:40] == ["smoothed"] * 40 and phases[40:] == ["hard"] * 5
    detail = f"row sums exact: {sums_exact}; eps=0 bit-identical NLL: {identical}; switch after epoch 40: {switch}"
    _gate(emit, "curriculum semantics", sums_exact and identical and switch, detail, t0, 5)


def test_metric_oracle_equivalence(emit):
    t0 = time.perf_counter()
    bad = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        pred, true = rng.integers(0, 2, 500), rng.integers(0, 2, 500)
        s = (rng.random(500) < rng.uniform(0.2, 0.8)).astype(int)
        acc, sp, eo = brute_force_rates(pred, true, s)
        got = (metrics.accuracy(pred, true), metrics.delta_sp(pred, s), metrics.delta_eo(pred, true, s))
        bad += got != (acc, sp, eo)
    _gate(emit, "metric oracle equivalence", bad == 0, f"{50 - bad}/50 instances exact", t0, 5)


def test_scheduler_closed_form(emit):
    t0 = time.perf_counter()
    total, hi, lo = 300, 1e-3, 1e-5
    t = np.arange(total)
    # independent route through cos^2(x/2) = (1 + cos x) / 2
    expected = lo + (hi - lo) * np.cos(np.pi * t / (2 * total)) ** 2
    got = np.array([nk.cosine_lr(i, total, hi, lo) for i in range(total)])
    worst = float(np.max(np.abs(got - expected)))
    _gate(emit, "scheduler closed form", worst <= 1e-12, f"T=300, max deviation {worst:.1e}", t0, 1)


def _cli_run(root, cache):
    data = root / "data"
    assert main(["make-synthetic", "--n", "1000", "--seed", "0", "--out", str(data)]) == 0
    common = ["--nodes", str(data / "nodes.csv"), "--edges", str(data / "edges.txt"),
              "--set", "condense.rho=0.05", "--set", "train.epochs=50", "--set", "evaluate.seeds=1"]
    assert main(["condense", *common, "--out", str(root / "cg")]) == 0
    assert main(["train", *common, "--condensed", str(root / "cg"), "--out", str(root / "ckpt"),
                 "--cache-dir", str(cache)]) == 0
    assert main(["evaluate", *common, "--checkpoint", str(root / "ckpt"), "--condensed", str(root / "cg"),
                 "--json", str(root / "report.json")]) == 0
    hashes = {"dataset": (data / "dataset.json").read_bytes(),
              "condensed": read_manifest(root / "cg")["content_hash"],
              "checkpoint": read_manifest(root / "ckpt")["content_hash"],
              "report": (root / "report.json").read_bytes()}
    for sub in ("cg", "ckpt"):
        hashes[f"{sub}/manifest"] = (root / sub / "manifest.json").read_bytes()
    return hashes


def test_determinism(emit, tmp_path):
    t0 = time.perf_counter()
    a = _cli_run(tmp_path / "a", tmp_path / "cache_a")
    b = _cli_run(tmp_path / "b", tmp_path / "cache_b")
    differing = [k for k in a if a[k] != b[k]]
    detail = f"{len(a)} artifacts compared, differing: {differing or 'none'}"
    _gate(emit, "determinism", not differing, detail, t0, 300)


@functools.lru_cache(maxsize=None)
def benchmark_runs():
    """Seed-wise (accuracy, ΔSP, ΔEO) for every arm on the SBM benchmark."""
    out = {arm: [] for arm in ARMS}
    start = time.perf_counter()
    for seed in BENCH_SEEDS:
        g = split_graph(make_synthetic(2000, 0.6, 0.7, seed), (0.5, 0.25, 0.25), seed)
        for arm, (coreset, plain) in ARMS.items():
            cfg = PipelineConfig(seed=seed)
            cfg.condense.random_coreset = coreset
            cfg.train.disable_fairness = plain
            r = run_pipeline(g, cfg.validate(), seed)["report"]
            out[arm].append((r.accuracy, r.delta_sp, r.delta_eo))
    return {k: np.array(v) for k, v in out.items()}, time.perf_counter() - start


def test_directional_fairness_claim(emit):
    t0 = time.perf_counter()
    runs, cost = benchmark_runs()
    full, base = runs["full"], runs["base"]
    both = int(np.sum((full[:, 1] < base[:, 1]) & (full[:, 2] < base[:, 2])))
    fm, bm = full.mean(axis=0), base.mean(axis=0)
    acc_gap = abs(fm[0] - bm[0])
    ok = both >= 8 and fm[1] < bm[1] and fm[2] < bm[2] and acc_gap <= 0.05
    detail = (f"both gaps lower in {both}/10 seeds; mean ΔSP {fm[1]:.3f} vs {bm[1]:.3f}, "
              f"ΔEO {fm[2]:.3f} vs {bm[2]:.3f}, accuracy {fm[0]:.3f} vs {bm[0]:.3f}")
    # the shared benchmark cost is charged to whichever criterion runs first
    _gate(emit, "directional fairness claim", ok, detail, t0, 900)


def test_ablation_ordering(emit):
    t0 = time.perf_counter()
    runs, _ = benchmark_runs()
    sp = {arm: float(runs[arm][:, 1].mean()) for arm in ("full", "w/o C", "w/o F")}
    ok = sp["full"] <= sp["w/o C"] <= sp["w/o F"]
    detail = "mean ΔSP " + ", ".join(f"{k} {v:.3f}" for k, v in sp.items())
    _gate(emit, "ablation ordering", ok, detail, t0, 900)
