"""Acceptance suite: one test per release criterion.

Each test prints a single PASS line (visible with ``pytest -s`` or in the
captured output) after asserting the criterion at its stated tolerance
and runtime budget.
"""

import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from htkit.analysis import (
    ComplexityQuery,
    complexity_estimate,
    complexity_query_for,
    hybrid_model_build,
    space_bound_check,
)
from htkit.datasets import mnist_like, toy_image_set, train_val_split
from htkit.gradcheck import central_differences, relative_errors
from htkit.gradients import fc_backward, format_gradients, gradient_shape
from htkit.ht import ht_decompose, ht_reconstruct, random_ht_format
from htkit.layers import (
    ConvKernelSpec,
    LSTMCellParams,
    LSTMGate,
    TensorizedFCSpec,
    conv_forward,
    factor_arrays,
    fc_forward,
    fuse_kernel,
    init_conv_params,
    init_fc_params,
    lstm_cell_forward,
)
from htkit.models import CompressedFC, DenseFC, Flatten, Model, ReLU
from htkit.training import TrainSchedule, train
from htkit.tt import random_tt_format, tt_decompose, tt_from_degenerate_ht, tt_reconstruct

from oracles import dense_conv, ht_oracle_gradients, tt_oracle_kron_matrices, tt_oracle_gradients


def report(criterion, detail):
    print(f"PASS criterion {criterion}: {detail}", flush=True)


def rel_err(a, b):
    denom = np.linalg.norm(b)
    return np.linalg.norm(a - b) / (denom if denom else 1.0)


def random_dims(rng, d):
    return tuple(int(v) for v in rng.integers(2, 7, size=d))


def test_criterion_1_exact_rank_round_trips():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        d = 2 if seed % 2 == 0 else 4
        dims = random_dims(rng, d)
        rank = int(rng.integers(1, 4))

        ht = random_ht_format(dims, rank, rng=rng)
        t = ht_reconstruct(ht)
        back = ht_reconstruct(ht_decompose(t, ht.tree, rank=rank))
        worst = max(worst, rel_err(back, t))

        tt = random_tt_format(dims, rank, rng=rng)
        t = tt_reconstruct(tt)
        back = tt_reconstruct(tt_decompose(t, rank=rank))
        worst = max(worst, rel_err(back, t))
    elapsed = time.perf_counter() - t0
    assert worst <= 1e-10
    assert elapsed < 30.0
    report(1, f"50 HT + 50 TT exact-rank round-trips, worst error "
              f"{worst:.2e}, {elapsed:.1f}s")


def test_criterion_2_degenerate_tree_equivalence():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        d = int(rng.integers(2, 5))
        dims = random_dims(rng, d)
        fmt = random_ht_format(dims, int(rng.integers(1, 4)),
                               kind="degenerate", rng=rng)
        tt = tt_from_degenerate_ht(fmt)
        worst = max(worst, rel_err(tt_reconstruct(tt), ht_reconstruct(fmt)))
    elapsed = time.perf_counter() - t0
    assert worst <= 1e-12
    assert elapsed < 5.0
    report(2, f"20 degenerate-tree conversions preserve the tensor, worst "
              f"{worst:.2e}, {elapsed:.1f}s")


def _random_fc_spec(rng, kind):
    d = 2 if rng.integers(2) == 0 else 4
    cap = 4 if d == 4 else 16
    m = tuple(int(v) for v in rng.integers(2, 5, size=d))[:d]
    n = tuple(int(v) for v in rng.integers(2, 5, size=d))[:d]
    while np.prod(m) > 256:
        m = m[:-1] + (2,)
    while np.prod(n) > 256:
        n = n[:-1] + (2,)
    return TensorizedFCSpec(m=m, n=n, format_kind=kind,
                            rank=int(rng.integers(1, cap)))


def test_criterion_3_chain_equals_recovery():
    t0 = time.perf_counter()
    worst = 0.0
    for kind in ("ht", "tt"):
        for seed in range(100):
            rng = np.random.default_rng(2000 + seed)
            spec = _random_fc_spec(rng, kind)
            params = init_fc_params(spec, rng)
            x = rng.standard_normal((3, spec.N))
            y_chain = fc_forward(spec, params, x, mode="chain")
            y_rec = fc_forward(spec, params, x, mode="recovery")
            worst = max(worst, rel_err(y_chain, y_rec))
    elapsed = time.perf_counter() - t0
    assert worst <= 1e-8
    assert elapsed < 60.0
    report(3, f"chain vs recovery on 100 HT + 100 TT specs, worst relative "
              f"difference {worst:.2e}, {elapsed:.1f}s")


def _fd_check_fc(rng, kind):
    spec = TensorizedFCSpec(
        m=tuple(int(v) for v in rng.integers(2, 4, size=2)),
        n=tuple(int(v) for v in rng.integers(2, 4, size=2)),
        format_kind=kind, rank=int(rng.integers(1, 3)),
    )
    params = init_fc_params(spec, rng)
    x = rng.standard_normal((2, spec.N))
    dl_dy = rng.standard_normal((2, spec.M))
    bundle = fc_backward(spec, params, x, dl_dy)

    def loss():
        return float(np.sum(dl_dy * fc_forward(spec, params, x)))

    fd = central_differences(loss, factor_arrays(params))
    return max(relative_errors(bundle.factor_grads, fd).values())


def _fd_check_conv(rng, kind):
    from htkit.gradients import conv_backward

    spec = ConvKernelSpec(l=3, c=(2,), s=(2,), format_kind=kind,
                          rank=int(rng.integers(1, 3)))
    params = init_conv_params(spec, rng)
    img = rng.standard_normal((2, 4, 4, spec.C))
    out = conv_forward(spec, params, img)
    upstream = rng.standard_normal(out.shape)
    bundle = conv_backward(spec, params, img, upstream)

    def loss():
        return float(np.sum(upstream * conv_forward(spec, params, img)))

    fd = central_differences(loss, factor_arrays(params))
    return max(relative_errors(bundle.factor_grads, fd).values())


def _fd_check_lstm(rng):
    from htkit.gradients import lstm_cell_backward

    spec = TensorizedFCSpec(m=(2, 2), n=(2, 2), format_kind="ht", rank=2)
    gates = {
        name: LSTMGate(w=init_fc_params(spec, rng),
                       r=init_fc_params(spec, rng),
                       b=0.1 * rng.standard_normal(4))
        for name in LSTMCellParams.GATE_NAMES
    }
    cell = LSTMCellParams(spec, spec, gates)
    x = rng.standard_normal((2, 4))
    a_prev = rng.standard_normal((2, 4))
    c_prev = rng.standard_normal((2, 4))
    dl_da = rng.standard_normal((2, 4))
    bundle = lstm_cell_backward(cell, x, a_prev, c_prev, dl_da)

    arrays = {}
    for name in LSTMCellParams.GATE_NAMES:
        gate = cell.gates[name]
        for prefix, fmt in ((f"W{name}", gate.w), (f"R{name}", gate.r)):
            for fid, arr in factor_arrays(fmt).items():
                arrays[f"{prefix}.{fid}"] = arr
        arrays[f"b{name}"] = gate.b

    def loss():
        a_t, _ = lstm_cell_forward(cell, x, a_prev, c_prev)
        return float(np.sum(dl_da * a_t))

    fd = central_differences(loss, arrays)
    analytic = {name: bundle.factor_grads[name] for name in arrays}
    return max(relative_errors(analytic, fd).values())


def test_criterion_4_gradients_match_finite_differences():
    t0 = time.perf_counter()
    worst = {}
    for i in range(20):
        rng = np.random.default_rng(3000 + i)
        worst["ht-fc"] = max(worst.get("ht-fc", 0), _fd_check_fc(rng, "ht"))
        worst["tt-fc"] = max(worst.get("tt-fc", 0), _fd_check_fc(rng, "tt"))
        worst["tt-conv"] = max(worst.get("tt-conv", 0), _fd_check_conv(rng, "tt"))
        worst["ht-conv"] = max(worst.get("ht-conv", 0), _fd_check_conv(rng, "ht"))
        worst["ht-lstm"] = max(worst.get("ht-lstm", 0), _fd_check_lstm(rng))
    elapsed = time.perf_counter() - t0
    assert all(v <= 1e-4 for v in worst.values()), worst
    assert elapsed < 300.0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(4, f"finite differences over 20 specs per layer kind: {detail}, "
              f"{elapsed:.0f}s")


def test_criterion_5_gradient_formula_oracles():
    worst = 0.0
    # hierarchical format: environment-matrix (chained product) oracle
    for seed in range(10):
        rng = np.random.default_rng(4000 + seed)
        d = int(rng.integers(2, 5))
        fmt = random_ht_format(random_dims(rng, d), int(rng.integers(1, 4)),
                               rng=rng)
        upstream = rng.standard_normal(fmt.dims)
        got = format_gradients(fmt, upstream)
        want = ht_oracle_gradients(fmt, upstream)
        for name in want:
            worst = max(worst, float(np.max(np.abs(got[name] - want[name]))))
    # train format: left/right product oracle plus literal Kronecker forms
    for seed in range(10):
        rng = np.random.default_rng(4100 + seed)
        d = int(rng.integers(2, 5))
        fmt = random_tt_format(random_dims(rng, d), int(rng.integers(1, 4)),
                               rng=rng)
        upstream = rng.standard_normal(fmt.dims)
        got = format_gradients(fmt, upstream)
        for oracle in (tt_oracle_gradients(fmt, upstream),):
            for name in oracle:
                worst = max(worst, float(np.max(np.abs(got[name] - oracle[name]))))
    assert worst <= 1e-10

    # oracle shapes match the closed-form size formulas exactly
    spec_ht = TensorizedFCSpec(m=(2, 2, 2, 2), n=(2, 2, 2, 2),
                               format_kind="ht", rank=2)
    fmt = init_fc_params(spec_ht, np.random.default_rng(5))
    from oracles import ht_leaf_oracle_shape

    for k in range(4):
        assert ht_leaf_oracle_shape(fmt, k) == gradient_shape("ht", spec_ht, k)
    spec_tt = TensorizedFCSpec(m=(2, 2, 2), n=(2, 2, 2), format_kind="tt",
                               rank=2)
    fmt_tt = init_fc_params(spec_tt, np.random.default_rng(6))
    mats = tt_oracle_kron_matrices(fmt_tt)
    for k in range(3):
        assert mats[k].shape == gradient_shape("tt", spec_tt, k)
    report(5, f"dense formula oracles match reverse mode, worst abs "
              f"difference {worst:.2e}; oracle shapes equal the size formulas")


HAND_CHECKS = [
    # (query kwargs, expected compute, expected space)
    (dict(method="fc", M=1024, N=1024), 1048576, 1048576),
    (dict(method="fc", M=16, N=16), 256, 256),
    (dict(method="fc", M=8, N=4), 32, 32),
    (dict(method="ht", d=4, m=2, n=2, r=2, M=16, N=16), 1792, 56),
    (dict(method="ht", d=4, m=4, n=4, r=3, M=256, N=256), 193536, 273),
    (dict(method="ht", d=2, m=2, n=3, r=2, M=4, N=9), 324, 32),
    (dict(method="tt", d=4, m=2, n=2, r=3, M=16, N=16), 1152, 96),
    (dict(method="tt", d=4, m=4, n=4, r=2, M=256, N=256), 16384, 192),
    (dict(method="tt", d=3, m=2, n=2, r=2, M=8, N=8), 192, 32),
    (dict(method="tr", d=4, m=4, n=4, r=2, M=256, N=256), 16384, 128),
    (dict(method="tr", d=2, m=3, n=2, r=3, M=9, N=4), 702, 90),
    (dict(method="tr", d=4, m=2, n=2, r=4, M=16, N=16), 8192, 256),
    (dict(method="btd", d=4, m=2, n=2, r=2, C=2, M=16, N=16), 4096, 96),
    (dict(method="btd", d=2, m=4, n=4, r=3, C=1, M=16, N=16), 1152, 105),
    (dict(method="btd", d=3, m=2, n=2, r=2, C=3, M=8, N=8), 1152, 96),
]


def test_criterion_6_complexity_calculators():
    for kwargs, compute, space in HAND_CHECKS:
        est = complexity_estimate(ComplexityQuery(**kwargs))
        assert est["compute"] == compute, kwargs
        assert est["space"] == space, kwargs

    # exact parameter count bounded by the storage formula for every
    # constructed format; equality on uniform train dims
    for seed in range(30):
        rng = np.random.default_rng(5000 + seed)
        dims = random_dims(rng, int(rng.integers(2, 5)))
        rank = int(rng.integers(1, 4))
        ht = random_ht_format(dims, rank, rng=rng)
        tt = random_tt_format(dims, rank, rng=rng)
        assert space_bound_check(ht, complexity_query_for(ht))["within_bound"]
        assert space_bound_check(tt, complexity_query_for(tt))["within_bound"]
    uniform = random_tt_format((4, 4, 4, 4), 2, rng=np.random.default_rng(1))
    rep = space_bound_check(uniform, complexity_query_for(uniform))
    assert rep["param_count"] == rep["space_formula"] == 48
    report(6, "15 hand-substituted spot checks exact; 60 random formats "
              "within the storage bound; uniform train dims at equality")


def test_criterion_7_conv_recovery_equivalence():
    worst = 0.0
    channel_plans = [((2, 2), (2, 4)), ((2, 4), (2, 2)), ((2, 3), (3, 2))]
    for seed in range(8):
        rng = np.random.default_rng(6000 + seed)
        c, s = channel_plans[seed % 3]
        kind = "tt" if seed % 2 == 0 else "ht"
        spec = ConvKernelSpec(l=3, c=c, s=s, format_kind=kind, rank=64)
        kernel = rng.standard_normal((3, 3, spec.C, spec.S))
        fused = fuse_kernel(kernel, c, s)
        if kind == "ht":
            params = ht_decompose(fused, spec.tree(), rank=64)
        else:
            params = tt_decompose(fused, rank=64)
        img = rng.standard_normal((2, 6, 6, spec.C))
        out = conv_forward(spec, params, img, stride=1, padding="same")
        oracle = dense_conv(img, kernel, stride=1, pad=1)
        worst = max(worst, rel_err(out, oracle))
    assert worst <= 1e-9
    report(7, f"full-rank decomposed 3x3 kernels reproduce dense "
              f"convolution, worst {worst:.2e}")


def _mnist_model(m, n, rank):
    spec = TensorizedFCSpec(m=m, n=n, format_kind="ht", rank=rank)
    return Model(
        [Flatten(), CompressedFC("fc1", spec), ReLU(),
         DenseFC("out", 1024, 10)],
        input_shape=(32, 32),
    )


def test_criterion_8_balanced_vs_unbalanced_experiment():
    t0 = time.perf_counter()
    x, y = mnist_like(4000, seed=0)
    data = train_val_split(x, y, 0.2, seed=0)
    wins = 0
    pairs = []
    for seed in range(5):
        accs = {}
        for label, m, n in (
            ("balanced", (4, 4, 8, 8), (8, 8, 4, 4)),      # fused 32^4
            ("unbalanced", (2, 2, 16, 16), (2, 2, 16, 16)),  # fused 4,4,256,256
        ):
            model = _mnist_model(m, n, rank=4)
            sched = TrainSchedule(learning_rate=0.05, momentum=0.9, epochs=5,
                                  batch_size=64, seed=seed)
            accs[label] = train(model, data, sched)[-1]["val_acc"]
        pairs.append((accs["balanced"], accs["unbalanced"]))
        wins += accs["balanced"] >= accs["unbalanced"]
    elapsed = time.perf_counter() - t0
    assert wins >= 4, pairs
    assert elapsed < 1200.0
    detail = "; ".join(f"{b:.3f} vs {u:.3f}" for b, u in pairs)
    report(8, f"balanced >= unbalanced in {wins}/5 seeds ({detail}), "
              f"{elapsed:.0f}s")


DEMO_CNN = {
    "input_shape": [8, 8, 4],
    "layers": [
        {"type": "conv", "name": "conv1", "l": 3, "in_channels": 4,
         "out_channels": 8, "c": [2, 2], "s": [2, 4], "rank": 2},
        {"type": "relu"},
        {"type": "maxpool2"},
        {"type": "flatten"},
        {"type": "fc", "name": "fc1", "in": 128, "out": 32,
         "m": [4, 8], "n": [8, 16], "rank": 4},
        {"type": "relu"},
        {"type": "fc_dense", "name": "out", "in": 32, "out": 10},
    ],
}


def test_criterion_9_hybrid_build_sanity():
    x, y = toy_image_set(600, seed=0)
    data = train_val_split(x, y, 0.2, seed=0)
    results = {}
    for strategy in ("hybrid", "ht", "tt"):
        model = hybrid_model_build({**DEMO_CNN, "strategy": strategy})
        sched = TrainSchedule(learning_rate=0.05, momentum=0.9, epochs=30,
                              batch_size=32, seed=0)
        metrics = train(model, data, sched)
        factors = {
            r["layer"]: round(r["compression_factor"], 2)
            for r in model.compression_report()
        }
        results[strategy] = (metrics[-1]["val_acc"], factors)
        print(f"  {strategy}: val acc {metrics[-1]['val_acc']:.3f}, "
              f"compression {factors}", flush=True)
    assert all(acc >= 0.90 for acc, _ in results.values()), results
    report(9, "hybrid, pure-HT and pure-TT demo CNNs all reach >= 90% "
              "within 30 epochs; compression factors reported above")


def test_criterion_10_training_determinism(tmp_path):
    config = {
        "model": {"layers": [
            {"type": "flatten"},
            {"type": "fc", "name": "fc1", "in": 64, "out": 64,
             "m": [8, 8], "n": [8, 8], "format": "ht", "rank": 2},
            {"type": "relu"},
            {"type": "fc_dense", "name": "out", "in": 64, "out": 10},
        ]},
        "dataset": {"kind": "toy_images", "n": 80, "seed": 0},
        "schedule": {"learning_rate": 0.05, "momentum": 0.9, "epochs": 3,
                     "batch_size": 16, "seed": 11},
    }
    # the toy image set is 8x8x4 = 256 features; use a conv-free flat model
    config["model"]["layers"][1].update(
        {"in": 256, "out": 64, "m": [8, 8], "n": [16, 16]}
    )
    config["model"]["layers"][3]["in"] = 64
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(config))
    blobs = []
    for name in ("run_a", "run_b"):
        out = tmp_path / name
        proc = subprocess.run(
            [sys.executable, "-m", "htkit.cli", "train",
             "--config", str(cfg_path), "--out", str(out),
             "--seed", "11", "--threads", "1"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        blobs.append((out / "metrics.csv").read_bytes())
    assert blobs[0] == blobs[1]
    report(10, "two single-threaded runs produced byte-identical "
               "metrics CSVs")
