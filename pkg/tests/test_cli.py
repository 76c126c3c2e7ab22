import csv
import json

import numpy as np
import pytest

from clzsl.cli import main
from clzsl.config import TRAIN_PRESETS, resolve_train_config
from clzsl.data import load_corpus


@pytest.fixture()
def corpus_dir(tmp_path):
    out = tmp_path / "corpus"
    rc = main(["synth", "--out", str(out), "--set", "c_seen=4", "--set", "c_unseen=2",
               "--set", "samples_per_class=6", "--set", "seed=3"])
    assert rc == 0
    return out


TINY_TRAIN = ["--set", "epochs=2", "--set", "batch_size=8", "--set", "k_neighbors=2",
              "--set", "update_start_epoch=1", "--set", "pcl_hidden1=8",
              "--set", "pcl_delta_dim=4", "--set", "pcl_label_dim=4",
              "--set", "pcl_epoch_dim=4", "--set", "pcl_hidden2=8"]


def test_synth_produces_loadable_corpus(corpus_dir):
    corpus, space = load_corpus(corpus_dir)
    assert corpus.num_classes == 6
    assert (corpus_dir / "run_manifest.json").exists()


def test_synth_refuses_overwrite(corpus_dir, capsys):
    rc = main(["synth", "--out", str(corpus_dir)])
    assert rc == 1
    assert "force" in capsys.readouterr().err
    rc = main(["synth", "--out", str(corpus_dir), "--force", "--set", "c_seen=4",
               "--set", "c_unseen=2", "--set", "samples_per_class=6", "--set", "seed=3"])
    assert rc == 0


def test_synth_determinism(tmp_path):
    args = ["--set", "c_seen=3", "--set", "c_unseen=2", "--set", "samples_per_class=4"]
    main(["synth", "--out", str(tmp_path / "a"), *args])
    main(["synth", "--out", str(tmp_path / "b"), *args])
    for name in ("manifest.json", "features.bin", "ground_truth.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_synth_malformed_config_diagnostics(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"c_seen": 4,}')
    rc = main(["synth", "--out", str(tmp_path / "x"), "--config", str(bad)])
    assert rc == 1
    err = capsys.readouterr().err
    assert "line" in err and "column" in err


def test_synth_unknown_field(tmp_path, capsys):
    rc = main(["synth", "--out", str(tmp_path / "x"), "--set", "bogus=1"])
    assert rc == 1
    assert "bogus" in capsys.readouterr().err


def test_train_writes_outputs_and_is_deterministic(corpus_dir, tmp_path):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    for out in (out1, out2):
        rc = main(["train", "--corpus", str(corpus_dir), "--out", str(out), *TINY_TRAIN])
        assert rc == 0
    assert (out1 / "metrics.jsonl").read_bytes() == (out2 / "metrics.jsonl").read_bytes()
    assert (out1 / "checkpoints" / "checkpoint_0002.bin").read_bytes() == \
        (out2 / "checkpoints" / "checkpoint_0002.bin").read_bytes()
    history = [json.loads(line) for line in (out1 / "metrics.jsonl").read_text().splitlines()]
    assert len(history) == 2 and history[0]["epoch"] == 1


def test_train_manifest_replay(corpus_dir, tmp_path):
    out1 = tmp_path / "orig"
    main(["train", "--corpus", str(corpus_dir), "--out", str(out1), *TINY_TRAIN])
    out2 = tmp_path / "replayed"
    rc = main(["train", "--manifest", str(out1 / "run_manifest.json"), "--out", str(out2)])
    assert rc == 0
    assert (out1 / "metrics.jsonl").read_bytes() == (out2 / "metrics.jsonl").read_bytes()


def test_train_ablation_flags_keep_prototypes_bitwise(corpus_dir, tmp_path):
    out = tmp_path / "ablate"
    rc = main(["train", "--corpus", str(corpus_dir), "--out", str(out),
               "--no-pcl", "--no-pup", *TINY_TRAIN])
    assert rc == 0
    from clzsl.training import load_checkpoint

    ck = load_checkpoint(out / "checkpoints" / "checkpoint_0002.json")
    _, space = load_corpus(corpus_dir)
    assert np.array_equal(ck.store.current, space.prototypes)
    assert ck.config.pcl_enabled is False and ck.config.pup_enabled is False


def test_train_missing_corpus_exit_code(tmp_path, capsys):
    rc = main(["train", "--corpus", str(tmp_path / "nope"), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "nope" in capsys.readouterr().err


def test_cub_paper_preset_resolves_published_values():
    config = resolve_train_config(preset="cub-paper")
    assert config.temperature == 10.0
    assert config.kappa == 0.9
    assert config.percentile == 0.8
    assert config.eta == 0.08
    assert config.k_neighbors == 10
    assert config.update_start_epoch == 15
    assert config.epochs == 50 and config.batch_size == 50
    assert config.lr_phi == 0.01 and config.lr_theta == 5e-4


def test_sun_and_awa2_presets_resolve():
    sun = resolve_train_config(preset="sun-paper")
    assert sun.temperature == 30.0 and sun.kappa == 0.5 and sun.percentile == 0.7
    assert sun.eta == 1e-4 and sun.k_neighbors == 35 and sun.lr_theta == 3e-4
    awa2 = resolve_train_config(preset="awa2-paper")
    assert awa2.eta == 0.1 and awa2.beta == 0.995 and awa2.update_start_epoch == 25
    assert set(TRAIN_PRESETS) == {"awa2-paper", "sun-paper", "cub-paper", "synthetic-desk"}


def test_eval_both_modes(corpus_dir, tmp_path, capsys):
    out = tmp_path / "run"
    main(["train", "--corpus", str(corpus_dir), "--out", str(out), *TINY_TRAIN])
    capsys.readouterr()  # drop the train summary
    rc = main(["eval", "--checkpoint", str(out / "checkpoints" / "checkpoint_0002.json"),
               "--corpus", str(corpus_dir), "--both"])
    assert rc == 0
    payload = json.loads(capsys.readouterr().out)
    assert set(payload) == {"czsl", "gzsl"}
    assert "acc_czsl" in payload["czsl"]
    assert {"acc_seen", "acc_unseen", "harmonic"} <= set(payload["gzsl"])


def test_eval_corrupted_checkpoint(corpus_dir, tmp_path, capsys):
    out = tmp_path / "run"
    main(["train", "--corpus", str(corpus_dir), "--out", str(out), *TINY_TRAIN])
    payload = out / "checkpoints" / "checkpoint_0002.bin"
    blob = bytearray(payload.read_bytes())
    blob[0] ^= 0xFF
    payload.write_bytes(bytes(blob))
    rc = main(["eval", "--checkpoint", str(out / "checkpoints" / "checkpoint_0002.json"),
               "--corpus", str(corpus_dir)])
    assert rc == 2
    assert "corrupt" in capsys.readouterr().err


def test_sweep_grid_rows(corpus_dir, tmp_path):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"temperature": [1, 10, 30]}))
    base = tmp_path / "base.json"
    base.write_text(json.dumps({"epochs": 1, "batch_size": 8, "k_neighbors": 2,
                                "pcl_hidden1": 8, "pcl_delta_dim": 4, "pcl_label_dim": 4,
                                "pcl_epoch_dim": 4, "pcl_hidden2": 8, "seed": 5}))
    out = tmp_path / "sweep.csv"
    rc = main(["sweep", "--corpus", str(corpus_dir), "--grid", str(grid),
               "--config", str(base), "--out", str(out)])
    assert rc == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 3
    assert [r["temperature"] for r in rows] == ["1", "10", "30"]
    # deterministic seed derivation: base seed + grid index
    assert [r["seed"] for r in rows] == ["5", "6", "7"]
    assert all(r["harmonic"] != "" for r in rows)


def test_sweep_empty_grid_header_only(corpus_dir, tmp_path):
    grid = tmp_path / "grid.json"
    grid.write_text("{}")
    out = tmp_path / "sweep.csv"
    rc = main(["sweep", "--corpus", str(corpus_dir), "--grid", str(grid), "--out", str(out)])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines == ["index,seed,acc_czsl,acc_unseen,acc_seen,harmonic"]


def test_sweep_unknown_field(corpus_dir, tmp_path, capsys):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"not_a_field": [1]}))
    rc = main(["sweep", "--corpus", str(corpus_dir), "--grid", str(grid),
               "--out", str(tmp_path / "s.csv")])
    assert rc == 1
    assert "not_a_field" in capsys.readouterr().err


def test_inspect_weights_report(corpus_dir, tmp_path, capsys):
    out = tmp_path / "run"
    main(["train", "--corpus", str(corpus_dir), "--out", str(out), "--log-weights",
          *TINY_TRAIN])
    rc = main(["inspect-weights", "--weights", str(out / "weights.csv"),
               "--top", "3", "--bottom", "3"])
    assert rc == 0
    text = capsys.readouterr().out
    assert "epoch 1:" in text and "epoch 2:" in text

    # ranking must match an independent sort of the CSV
    rows = list(csv.DictReader(open(out / "weights.csv")))
    epoch1 = [(int(r["sample_index"]), float(r["omega"])) for r in rows if r["epoch"] == "1"]
    best = max(epoch1, key=lambda r: (r[1], -r[0]))
    first_top = next(line for line in text.splitlines() if "top" in line)
    assert f"sample {best[0]:6d}" in first_top


def test_inspect_weights_flags_uniform(tmp_path, capsys):
    path = tmp_path / "w.csv"
    with open(path, "w") as fh:
        fh.write("epoch,batch,sample_index,loss,omega\n")
        for i in range(4):
            fh.write(f"1,0,{i},0.5,0.25\n")
    rc = main(["inspect-weights", "--weights", str(path)])
    assert rc == 0
    assert "no differentiation" in capsys.readouterr().out


def test_inspect_weights_malformed(tmp_path, capsys):
    path = tmp_path / "w.csv"
    path.write_text("epoch,batch,sample_index,loss,omega\n1,0,x,notafloat,0.5\n")
    rc = main(["inspect-weights", "--weights", str(path)])
    assert rc == 2
    assert "malformed" in capsys.readouterr().err


def test_usage_error_exit_code(capsys):
    rc = main(["train", "--out", "somewhere"])
    assert rc == 1
    assert "usage error" in capsys.readouterr().err


def test_unknown_preset(corpus_dir, tmp_path, capsys):
    rc = main(["train", "--corpus", str(corpus_dir), "--out", str(tmp_path / "x"),
               "--preset", "mystery"])
    assert rc == 1
