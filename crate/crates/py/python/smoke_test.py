"""Smoke test for the beamfl Python extension.

Build the module first, then run this script with the module on the path:

    cargo build --release -p beamfl-py --features extension-module
    cp target/release/libbeamfl_py.so crates/py/python/beamfl.so
    python3 crates/py/python/smoke_test.py
"""

import math
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import beamfl  # noqa: E402


def small_config():
    cfg = beamfl.Config()
    cfg.num_snapshots = 60
    cfg.rounds = 2
    cfg.local_epochs = 1
    cfg.master_seed = 7
    assert cfg.validation_errors() == []
    return cfg


def check_config_round_trip():
    cfg = beamfl.Config()
    back = beamfl.Config.from_toml(cfg.to_toml())
    assert back.to_toml() == cfg.to_toml()
    bad = beamfl.Config()
    bad.rounds = 0
    assert any("rounds" in e for e in bad.validation_errors())
    try:
        beamfl.Config.from_toml("master_seed = 'x'")
    except ValueError:
        pass
    else:
        raise AssertionError("malformed TOML accepted")


def check_dataset(cfg, out):
    ds = beamfl.Dataset.generate(cfg)
    assert len(ds) > 0 and ds.n_beams == 16
    assert all(0 <= lab < 16 for lab in ds.labels())
    assert min(ds.elevations()) >= 10.0
    path = out / "ds.csv"
    ds.save(str(path))
    header = path.read_text().splitlines()[0]
    assert header.startswith("plane_id,ue_id,sat_id,snapshot,elevation_deg")
    again = beamfl.Dataset.load(str(path))
    assert again.labels() == ds.labels()
    assert again.replay_agreement(cfg) >= 0.99
    shards = ds.partition(0.2)
    assert sum(len(tr) + len(te) for _, tr, te in shards) == len(ds)
    return ds


def check_model(cfg, ds, out):
    for kind, width in (("mlp", 8), ("gnn", 64)):
        m = beamfl.Model.init(cfg, kind)
        assert m.kind == kind and m.input_width == width
        x = ds.inputs(kind, list(range(5)))
        logits = m.forward(x)
        assert len(logits) == 5 and len(logits[0]) == 16
        loss, grad = m.loss_and_grad(x, ds.labels()[:5])
        assert math.isfinite(loss) and len(grad) == m.param_count()
        path = out / f"{kind}.bfl"
        m.save(str(path))
        back = beamfl.Model.load(str(path))
        assert max(abs(a - b) for a, b in zip(back.params, m.params)) < 1e-6
        report = beamfl.grad_check(cfg, kind)
        assert report["max_rel_error"] < 1e-4, report


def check_helpers():
    assert beamfl.fedavg([([1.0, 2.0], 1), ([3.0, 6.0], 3)]) == [2.5, 5.0]
    logits = [[0.1, 0.9, 0.0], [0.8, 0.1, 0.3]]
    assert beamfl.topk_accuracy(logits, [1, 2], 1) == 0.5
    assert beamfl.topk_accuracy(logits, [1, 2], 2) == 1.0
    try:
        beamfl.fedavg([([1.0], 1), ([1.0, 2.0], 1)])
    except beamfl.BeamflError:
        pass
    else:
        raise AssertionError("mismatched lengths accepted")


def check_pipeline(cfg, out):
    counts = beamfl.simulate(cfg, str(out))
    assert sum(n for _, n in counts) > 0
    for kind in ("mlp", "gnn"):
        model, curve = beamfl.train(cfg, str(out), kind)
        assert model.kind == kind and len(curve) == cfg.rounds
    reports = beamfl.evaluate(cfg, str(out))
    assert [r["model"] for r in reports] == ["mlp", "gnn"]
    for r in reports:
        assert 0.0 <= r["top1"] <= r["top3"] <= 1.0
    assert (out / "reports" / "comparison.csv").exists()


def main():
    cfg = small_config()
    check_config_round_trip()
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp)
        ds = check_dataset(cfg, out)
        check_model(cfg, ds, out)
        check_helpers()
        check_pipeline(cfg, out / "run")
    print("beamfl python smoke test passed")


if __name__ == "__main__":
    main()
