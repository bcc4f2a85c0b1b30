"""Acceptance criteria 1-11. Each test prints one PASS/FAIL line, collected
in the terminal summary. Run alone with ``pytest tests/test_acceptance.py``."""

import time

import numpy as np
import pytest
import scipy.linalg as sla

from otta import spd
from otta.alignment import AlignmentState
from otta.buffer import RingBuffer, Trial, Weighting
from otta.data import (
    DatasetFormatError,
    dataset_from_bytes,
    dataset_to_bytes,
    generate_subject,
    default_spec,
)
from otta.engine import AdaptationConfig, Engine, run_stream
from otta.harness import BenchmarkConfig, CheckpointCache, Method, make_benchmark, run_methods
from otta.nn import ArchConfig, CheckpointError, Adam, Network, entropy, entropy_loss, load_checkpoint, save_checkpoint
from otta.training import TrainConfig

import gradcheck
from conftest import ACCEPTANCE_LINES, random_spd

BENCH = BenchmarkConfig.desk()
TRAIN = TrainConfig(epochs=40, warmup_epochs=5, seeds=(0, 1, 2, 3, 4))
HELD_OUT = ("S1", "S2")
SMALL_BUFFERS = (1, 2, 4)


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


A = AdaptationConfig
FULL = A(alignment="ra", weighting="ema(0.1)", bn_mode="bn1", entropy_min=True)
METHODS = [
    Method("source", A()),
    Method("EA(EMA)", A(alignment="ea")),
    Method("RA(EMA)", A(alignment="ra")),
    Method("BN-1", A(bn_mode="bn1")),
    Method("EM(delta=0.4)", A(entropy_min=True), 0.4),
    Method("full(delta=0.4)", FULL, 0.4),
    Method("full(delta=0)", FULL, 0.0),
]
for _b in SMALL_BUFFERS:
    METHODS += [Method(f"BN-1@{_b}", A(bn_mode="bn1", buffer_size=_b)),
                Method(f"BN-0.5@{_b}", A(bn_mode="bn_alpha(0.5)", buffer_size=_b))]


@pytest.fixture(scope="session")
def directional():
    """Every directional experiment on the default benchmark, sharing one
    set of trained source models."""
    t0 = time.perf_counter()
    subjects = make_benchmark(BENCH)
    cache = CheckpointCache()
    reps = run_methods("cross_subject", subjects, TRAIN, METHODS, HELD_OUT, cache)
    out = {r.method: r for r in reps}
    out["continual"] = run_methods("continual", subjects, TRAIN, [Method("continual", FULL, 0.4)], HELD_OUT, cache)[0]
    # phase 1 from a different subject: the stored state no longer matches
    mismatched = dict(subjects)
    for i, name in enumerate(HELD_OUT):
        other = HELD_OUT[1 - i]
        mismatched[name] = [subjects[other][1], subjects[name][1]]
    out["mismatched"] = run_methods("continual", mismatched, TRAIN, [Method("mismatched", FULL, 0.4)], HELD_OUT,
                                    CheckpointCache())[0]
    out["_seconds"] = time.perf_counter() - t0
    return out


def test_criterion_01_whitening_identity():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        mix = rng.standard_normal((8, 8))
        buf = RingBuffer(32, Weighting("uniform"))
        for i in range(32):
            buf.push(Trial(mix @ rng.standard_normal((8, 128)), trial_id=i + 1))
        state = AlignmentState("ea")
        state.update_reference(buf)
        aligned = state.align_data(buf.stacked())
        mean_cov = np.mean(aligned @ aligned.transpose(0, 2, 1), axis=0)
        worst = max(worst, float(np.linalg.norm(mean_cov - np.eye(8))))
    elapsed = (time.perf_counter() - t0) / 10
    report(1, worst < 1e-6 and elapsed < 1.0, f"max ||mean cov - I||_F = {worst:.2e}, {elapsed:.3f} s per buffer")


def test_criterion_02_geometric_mean_oracle():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        c = int(rng.integers(2, 9))
        a, b = random_spd(rng, c, 100), random_spd(rng, c, 100)
        ah = sla.sqrtm(a).real
        aih = np.linalg.inv(ah)
        mid = ah @ sla.sqrtm(aih @ b @ aih).real @ ah
        worst = max(worst, float(np.max(np.abs(spd.geometric_mean([a, b]) - mid))))
    elapsed = time.perf_counter() - t0
    report(2, worst < 1e-8 and elapsed < 5.0, f"max abs error {worst:.2e} over 100 cases, {elapsed:.2f} s")


def test_criterion_03_gradients():
    t0 = time.perf_counter()
    errors = {}
    for i in range(9):
        name, layer, x, phase, reset = gradcheck.layer_cases(np.random.default_rng(i))[i]
        errors[name] = max(gradcheck.check_layer(layer, x, phase, reset).values())
    for mode in ("source", "bn1"):
        errors[f"network_{mode}"] = max(gradcheck.check_network(mode).values())
    worst = max(errors, key=errors.get)
    elapsed = time.perf_counter() - t0
    report(3, errors[worst] < 1e-4 and elapsed < 30.0,
           f"max relative error {errors[worst]:.2e} ({worst}), {elapsed:.2f} s")


def test_criterion_04_bn_alpha_endpoints():
    rng = np.random.default_rng(4)
    net = Network(ArchConfig(8, 128, 4, kernel_length=32), seed=4)
    net.bn.running_mean = rng.standard_normal(16).astype(np.float32)
    net.bn.running_var = rng.uniform(0.5, 2.0, 16).astype(np.float32)
    x = rng.standard_normal((16, 8, 128)) * 2 + 0.5
    outputs = {}
    for mode in ("source", "bn_alpha(0)", "bn1", "bn_alpha(1)"):
        net.bn_mode = mode
        outputs[mode] = net.forward(x)
    exact = np.array_equal(outputs["source"], outputs["bn_alpha(0)"])
    diff = float(np.max(np.abs(outputs["bn1"] - outputs["bn_alpha(1)"])))
    report(4, exact and diff < 1e-7, f"alpha=0 bit-identical: {exact}, alpha=1 max diff {diff:.1e}")


def test_criterion_05_entropy_endpoints():
    uniform_err = float(np.max(np.abs(entropy(np.zeros((3, 4))) - np.log(4))))
    peaked = float(np.max(entropy(np.array([[40.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 60.0]]))))
    not_increased = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        net = Network(ArchConfig(4, 64, 3, n_temporal=4, kernel_length=16, pool=4), seed=seed)
        net.bn_mode = "bn1"
        net.set_scope("bn_affine")
        x = rng.standard_normal((8, 4, 64))
        h0, grad = entropy_loss(net.forward(x, "adapt"))
        Adam(lr=5e-4).step(net.params, net.backward(grad))
        h1 = float(np.mean(entropy(net.forward(x))))
        not_increased += h1 <= h0
    ok = uniform_err < 1e-9 and peaked < 1e-6 and not_increased >= 95
    report(5, ok, f"|H(uniform)-ln C| = {uniform_err:.1e}, H(one-hot) = {peaked:.1e}, "
                  f"EM step did not raise entropy in {not_increased}/100")


def test_criterion_06_cross_subject_ordering(directional):
    m = {k: v.mean for k, v in directional.items() if not k.startswith("_")}
    singles = ("EA(EMA)", "RA(EMA)", "BN-1", "EM(delta=0.4)")
    ok = (m["source"] < m["RA(EMA)"] and m["source"] < m["BN-1"]
          and all(m["full(delta=0.4)"] >= m[k] for k in singles)
          and m["full(delta=0.4)"] - m["source"] >= 0.05
          and directional["_seconds"] < 600)
    table = ", ".join(f"{k} {100 * directional[k].mean:.1f}+-{100 * directional[k].std:.1f}"
                      for k in ("source", *singles, "full(delta=0.4)"))
    report(6, ok, f"{table}; all directional runs {directional['_seconds']:.0f} s")


def test_criterion_07_small_buffer_bn(directional):
    m = {k: v.mean for k, v in directional.items() if not k.startswith("_")}
    bn1_small = np.mean([m[f"BN-1@{b}"] for b in SMALL_BUFFERS])
    a5_small = np.mean([m[f"BN-0.5@{b}"] for b in SMALL_BUFFERS])
    per_size = ", ".join(f"b={b}: BN-1 {100 * m[f'BN-1@{b}']:.1f} BN-0.5 {100 * m[f'BN-0.5@{b}']:.1f}"
                         for b in SMALL_BUFFERS)
    ok = bn1_small < m["BN-1"] and a5_small > bn1_small
    report(7, ok, f"b<=4 mean: BN-1 {100 * bn1_small:.1f} vs b=32 {100 * m['BN-1']:.1f}, "
                  f"BN-0.5 {100 * a5_small:.1f}; per size {per_size}")


def test_criterion_08_label_smoothing(directional):
    d4, d0 = directional["full(delta=0.4)"], directional["full(delta=0)"]
    report(8, d4.mean >= d0.mean, f"delta=0.4 {100 * d4.mean:.2f} vs delta=0 {100 * d0.mean:.2f} over 5 seeds")


def test_criterion_09_online_contract():
    arch = ArchConfig(4, 64, 3, n_temporal=2, kernel_length=8, pool=4)
    full = A(alignment="ra", bn_mode="bn1", entropy_min=True, buffer_size=4, lr=5e-3)
    causal = labels_ok = identical = True
    for seed in range(10):
        rng = np.random.default_rng(seed)
        net = Network(arch, seed=seed)
        stream = [Trial(rng.standard_normal((4, 64)), int(rng.integers(0, 3)), i + 1) for i in range(20)]
        base = run_stream(net, full, stream).predictions()
        k = int(rng.integers(1, 20))
        tail = [Trial(rng.standard_normal((4, 64)) * 4, t.label, t.trial_id) for t in stream[k:]]
        causal &= run_stream(net, full, stream[:k] + tail).predictions()[:k] == base[:k]
        shuffled = [Trial(t.data, int(rng.integers(0, 3)), t.trial_id) for t in stream]
        labels_ok &= run_stream(net, full, shuffled).predictions() == base
        off = full.with_(entropy_min=False)
        engine = Engine(net, off)
        before = save_checkpoint(engine.net)
        run_stream(net, off, stream, engine=engine)
        identical &= save_checkpoint(engine.net) == before
    report(9, causal and labels_ok and identical,
           f"prefix causality {causal}, label non-interference {labels_ok}, bit-identity without EM {identical}")


def test_criterion_10_continual(directional):
    cont, stream, mis = directional["continual"], directional["full(delta=0.4)"], directional["mismatched"]
    ok = cont.mean >= stream.mean
    report(10, ok, f"continual {100 * cont.mean:.2f} vs fresh stream {100 * stream.mean:.2f}; "
                   f"mismatched phase 1 (logged only) {100 * mis.mean:.2f}")


def test_criterion_11_format_roundtrips():
    ds = generate_subject(default_spec(8, 128, 4, 128.0), 24)
    raw = dataset_to_bytes(ds)
    back = dataset_from_bytes(raw)
    ds_ok = back.data.tobytes() == ds.data.tobytes() and np.array_equal(back.labels, ds.labels)
    net = Network(ArchConfig(8, 128, 4, kernel_length=32), seed=1)
    ck = save_checkpoint(net)
    ck_ok = save_checkpoint(load_checkpoint(ck)) == ck
    rng = np.random.default_rng(11)
    untyped = []
    for blob, reader, err in ((raw, dataset_from_bytes, DatasetFormatError), (ck, load_checkpoint, CheckpointError)):
        for _ in range(200):
            corrupt = bytearray(blob)
            kind = rng.integers(3)
            if kind == 0:
                corrupt = corrupt[:int(rng.integers(0, len(blob)))]
            elif kind == 1:
                corrupt += bytes(rng.integers(0, 256, int(rng.integers(1, 9)), dtype=np.uint8))
            else:
                for pos in rng.integers(0, len(blob), 4):
                    corrupt[pos] = int(rng.integers(0, 256))
            try:
                reader(bytes(corrupt))
            except err:
                pass
            except Exception as exc:  # noqa: BLE001
                untyped.append(type(exc).__name__)
    ok = ds_ok and ck_ok and not untyped
    report(11, ok, f"dataset bit-exact {ds_ok}, checkpoint bit-exact {ck_ok}, "
                   f"untyped failures in 600 corruptions: {len(untyped)} {sorted(set(untyped))}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
