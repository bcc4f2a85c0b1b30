import json

import numpy as np
import pytest

from otta import config as cfgmod
from otta.cli import main
from otta.engine import AdaptationConfig, evaluate
from otta.harness import (
    BenchmarkConfig,
    CheckpointCache,
    ExperimentReport,
    Method,
    PartitionError,
    RunRecord,
    emit_report,
    load_report,
    make_benchmark,
    partitions,
    read_csv_records,
    run_methods,
    run_setting,
    sweep,
    table_grid,
)
from otta.training import TrainConfig, preprocess

TINY = BenchmarkConfig.desk(n_channels=4, n_samples=64, sample_rate=64.0, n_subjects=3, trials_per_session=16)
TRAIN = TrainConfig(epochs=2, warmup_epochs=1, seeds=(0, 1), lowpass_hz=20.0)


@pytest.fixture(scope="module")
def subjects():
    return make_benchmark(TINY)


def test_benchmark_shape_and_determinism(subjects):
    assert list(subjects) == ["S1", "S2", "S3"]
    assert all(len(s) == 2 and len(s[0]) == 16 for s in subjects.values())
    again = make_benchmark(TINY)
    np.testing.assert_array_equal(again["S2"][1].data, subjects["S2"][1].data)
    assert not np.allclose(subjects["S1"][0].data, subjects["S2"][0].data)


def test_cross_subject_partitions_are_disjoint(subjects):
    for part in partitions("cross_subject", subjects):
        assert part.subject not in part.train_subjects()
        assert part.stream not in part.train
        assert len(part.train) == 2
    for part in partitions("cross_session", subjects):
        assert part.train == ((part.subject, 0),) and part.stream == (part.subject, 1)
    for part in partitions("continual", subjects, ["S2"]):
        assert part.warmup == ("S2", 0) and part.subject not in part.train_subjects()


def test_partition_validation(subjects):
    with pytest.raises(PartitionError):
        partitions("cross_subject", {"S1": subjects["S1"]})
    with pytest.raises(PartitionError):
        partitions("cross_session", {"S1": subjects["S1"][:1]})
    with pytest.raises(PartitionError):
        partitions("loso", subjects)
    with pytest.raises(PartitionError):
        partitions("cross_subject", subjects, ["S9"])
    odd = dict(subjects, S4=[subjects["S1"][0].subset(range(4)), make_benchmark(
        BenchmarkConfig.desk(n_channels=5, n_samples=64, sample_rate=64.0, n_subjects=1, trials_per_session=8))["S1"][0]])
    with pytest.raises(PartitionError):
        partitions("cross_subject", odd)


def test_table_grid_rows():
    names = [m.name for m in table_grid()]
    assert names[0] == "source"
    assert {"EA", "EA(linear)", "EA(EMA)", "RA", "RA(linear)", "RA(EMA)", "BN-1", "BN-0.5", "BN-EMA"} <= set(names)
    assert "RA(EMA)-BN-1" in names and "RA(linear)-BN-EMA" in names
    assert names[-2:] == ["RA(EMA)-BN-1(delta=0)+EM", "RA(EMA)-BN-1(delta=0.4)+EM"]
    assert len(names) == len(set(names))
    full = table_grid()[-1]
    assert full.delta == 0.4 and full.adapt.entropy_min and full.train_alignment == "ra"


def test_source_method_equals_plain_evaluation(subjects):
    cache = CheckpointCache()
    rep = run_setting("cross_subject", subjects, TRAIN, AdaptationConfig(), ["S1"], cache)
    net = cache.get(subjects, partitions("cross_subject", subjects, ["S1"])[0], TRAIN, 0)
    ds = preprocess(subjects["S1"][1], TRAIN)
    assert rep.accuracy(0, "S1") == evaluate(net, ds.data, ds.labels)


def test_checkpoints_shared_between_methods(subjects):
    cache = CheckpointCache()
    ms = [Method("a", AdaptationConfig()), Method("b", AdaptationConfig(bn_mode="bn1")),
          Method("c", AdaptationConfig(alignment="ea"))]
    reps = run_methods("cross_session", subjects, TRAIN, ms, ["S1", "S2"], cache)
    # 2 seeds x 2 subjects x 2 training alignments
    assert cache.trained == 8
    assert [len(r.records) for r in reps] == [4, 4, 4]


def test_report_statistics():
    rep = ExperimentReport("cross_subject", "m", [
        RunRecord(0, "S1", 0.5, 10), RunRecord(0, "S2", 0.7, 10),
        RunRecord(1, "S1", 0.8, 10), RunRecord(1, "S2", 0.8, 10),
    ])
    assert rep.per_seed() == {0: pytest.approx(0.6), 1: pytest.approx(0.8)}
    assert rep.mean == pytest.approx(0.7)
    assert rep.std == pytest.approx(0.1)  # population std over seeds


def test_report_json_roundtrip_and_determinism(subjects, tmp_path):
    a = run_setting("continual", subjects, TRAIN, AdaptationConfig(alignment="ra", bn_mode="bn1", entropy_min=True,
                                                                   buffer_size=4), ["S3"])
    b = run_setting("continual", subjects, TRAIN, AdaptationConfig(alignment="ra", bn_mode="bn1", entropy_min=True,
                                                                   buffer_size=4), ["S3"])
    pa, pb = emit_report(a, tmp_path / "a.json", include_timing=False), emit_report(b, tmp_path / "b.json",
                                                                                    include_timing=False)
    assert pa.read_bytes() == pb.read_bytes()
    assert "wall_clock" not in json.loads(pa.read_text())
    full = emit_report(a, tmp_path / "c.json")
    back = load_report(full)
    assert back.records == a.records and back.wall_clock == a.wall_clock
    assert back.config["setting"] == "continual"
    assert back.mean == a.mean


def test_sweep_csv_recount(subjects, tmp_path):
    cache = CheckpointCache()
    reps = sweep("buffer", subjects, TRAIN, AdaptationConfig(), values=(1, 4), bn_modes=("bn1", "bn_alpha(0.5)"),
                 held_out=["S1", "S2"], cache=cache)
    assert len(reps) == 4
    assert cache.trained == 4
    path = emit_report(reps, tmp_path / "s.csv")
    rows = read_csv_records(path)
    assert len(rows) == 4 * 2 * 2
    for rep in reps:
        mine = [r for r in rows if r["point"] == rep.point and r["method"] == rep.method]
        by_seed = {}
        for r in mine:
            by_seed.setdefault(int(r["seed"]), []).append(float(r["accuracy"]))
        means = [np.mean(v) for v in by_seed.values()]
        assert np.mean(means) == pytest.approx(rep.mean, abs=1e-15)
        assert np.std(means) == pytest.approx(rep.std, abs=1e-15)
    d = sweep("delta", subjects, TRAIN, values=(0.0, 0.2), held_out=["S1"], cache=cache)
    assert [r.point for r in d] == ["delta=0", "delta=0.2"]
    with pytest.raises(ValueError):
        sweep("lr", subjects, TRAIN)


def test_config_parsing():
    run = cfgmod.build(cfgmod.parse_pairs("""
        # desk run
        preset = desk
        setting = cross_session
        held_out = S1, S2
        delta = 0.4
        train.seeds = 0,1
        train.epochs = 5
        train.warmup_epochs = 1
        adapt.bn_mode = bn_alpha(0.5)
        adapt.entropy_min = true
        bench.noise = 2
    """))
    assert run.bench.n_channels == 8 and run.bench.noise == 2.0
    assert run.held_out == ("S1", "S2") and run.delta == 0.4
    assert run.train.seeds == (0, 1) and run.train.epochs == 5
    assert str(run.adapt.bn_mode) == "bn_alpha(0.5)" and run.adapt.entropy_min
    assert cfgmod.build(cfgmod.parse_pairs(run.to_text())) == run


@pytest.mark.parametrize("text", ["train.epoch = 3", "foo = 1", "adapt.buffer_size = x", "setting = loso",
                                  "adapt.entropy_min = maybe", "train.epochs", "a = 1\na = 2", "adapt.buffer_size = 0"])
def test_config_errors(text):
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.build(cfgmod.parse_pairs(text))


def test_cli_end_to_end(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("preset = desk\nbench.n_channels = 4\nbench.n_samples = 64\nbench.sample_rate = 64\n"
                   "bench.n_subjects = 2\nbench.trials_per_session = 8\ntrain.epochs = 2\ntrain.warmup_epochs = 1\n"
                   "train.seeds = 0\ntrain.lowpass_hz = 20\nheld_out = S1\n")
    data = tmp_path / "d"
    assert main(["gen", "--config", str(cfg), "--out", str(data)]) == 0
    assert sorted(p.name for p in data.glob("*.ottd")) == ["S1_ses1.ottd", "S1_ses2.ottd", "S2_ses1.ottd",
                                                            "S2_ses2.ottd"]
    ckpt = tmp_path / "m.ckpt"
    assert main(["train", "--config", str(cfg), str(data / "S2_ses1.ottd"), "--out", str(ckpt)]) == 0
    out = tmp_path / "r.json"
    assert main(["run", "--config", str(cfg), "--data-dir", str(data), "--checkpoint", str(ckpt),
                 "--set", "adapt.bn_mode=bn1", "--out", str(out), "--no-timing"]) == 0
    rep = load_report(out)
    assert rep.records[0].n_trials == 8
    assert main(["run", "--config", str(cfg), "--set", "nope=1", "--out", str(out)]) == 2
    assert "unknown key" in capsys.readouterr().err
    (data / "S1_ses2.ottd").write_bytes(b"junk")
    assert main(["run", "--config", str(cfg), "--data-dir", str(data), "--out", str(out)]) == 2
