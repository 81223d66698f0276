import json
import os
import struct

import numpy as np
import pytest
import yaml

from dennlm import cli, corpus, modelfile
from dennlm.config import ConfigError, load_config


def write_config(path, data_dir, out, **extra):
    raw = {
        "seed": 3,
        "out": str(out),
        "data": {"dir": str(data_dir)},
        "model": {"kind": "denn", "order": 3, "branches": [[4, 6], [3, 5]]},
        "loss": {"beta": 0.5, "gamma": 1.0, "K": 20},
        "optim": {"learning_rate": 0.01, "max_epochs": 2, "batch_size": 64},
    }
    for section, body in extra.items():
        if isinstance(body, dict) and isinstance(raw.get(section), dict):
            raw[section] = {**raw[section], **body}
        else:
            raw[section] = body
    path.write_text(yaml.safe_dump(raw))
    return path


@pytest.fixture(scope="module")
def prepared(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    assert cli.main(["synth", "--out", str(root / "raw"), "--train-tokens", "3000",
                     "--valid-tokens", "500", "--test-tokens", "500", "--seed", "1"]) == 0
    args = ["prepare", "--train", str(root / "raw/train.txt"), "--valid", str(root / "raw/valid.txt"),
            "--test", str(root / "raw/test.txt"), "--vocab-cap", "150", "--out", str(root / "prep")]
    assert cli.main(args) == 0
    return root


def files_bytes(d):
    return {name: (d / name).read_bytes() for name in sorted(os.listdir(d)) if (d / name).is_file()}


def test_prepare_writes_artifacts_and_is_byte_stable(prepared, tmp_path):
    prep = prepared / "prep"
    meta = json.loads((prep / "meta.json").read_text())
    assert meta["V"] == 150
    vocab, data = cli.load_prepared(str(prep))
    assert vocab.V == 150 and meta["vocab_hash"] == vocab.digest()
    assert data.train.max() < 150 and len(data.valid) == meta["tokens"]["valid"]
    assert np.load(prep / "train.npy").dtype == np.dtype("<i4")
    raw = prepared / "raw"
    cli.cmd_prepare(str(raw / "train.txt"), str(raw / "valid.txt"), str(raw / "test.txt"), str(tmp_path), 150)
    assert files_bytes(tmp_path) == files_bytes(prep)


def test_prepare_missing_file_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.txt"
    (tmp_path / "a.txt").write_text("a b\n")
    rc = cli.main(["prepare", "--train", str(missing), "--valid", str(tmp_path / "a.txt"),
                   "--test", str(tmp_path / "a.txt"), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert str(missing) in capsys.readouterr().err


def test_prepare_reports_bad_utf8_line(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_bytes(b"fine line\nbroken \xff here\n")
    with pytest.raises(cli.CommandError, match=r"bad.txt:2"):
        cli.cmd_prepare(str(bad), str(bad), str(bad), str(tmp_path / "o"))


def test_config_rejects_out_of_range_values(prepared, tmp_path):
    path = write_config(tmp_path / "c.yaml", prepared / "prep", tmp_path / "run", loss={"beta": 1.5})
    with pytest.raises(ConfigError, match="beta"):
        load_config(str(path))
    path = write_config(tmp_path / "g.yaml", prepared / "prep", tmp_path / "run", grid={"gamma": [1.0, -2.0]})
    with pytest.raises(ConfigError, match="grid.gamma"):
        load_config(str(path))
    path = write_config(tmp_path / "u.yaml", prepared / "prep", tmp_path / "run", optim={"momentum": 0.9})
    with pytest.raises(ConfigError, match="unknown"):
        load_config(str(path))
    path = write_config(tmp_path / "d.yaml", tmp_path / "absent", tmp_path / "run")
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(str(path))


def test_train_eval_and_model_file_roundtrip(prepared, tmp_path):
    cfg_path = write_config(tmp_path / "c.yaml", prepared / "prep", tmp_path / "run")
    assert cli.main(["train", "--config", str(cfg_path)]) == 0
    model_path = tmp_path / "run" / "model.denn"
    log_lines = (tmp_path / "run" / "train_log.csv").read_text().splitlines()
    assert log_lines[0] == "epoch,train_total,mixture_nll,individual_nll,diversity,heldout_ppl,lr"
    params, meta = modelfile.load(str(model_path))
    assert meta["branches"] == [[4, 6], [3, 5]] and meta["hyperparams"]["loss.gamma"] == 1.0
    again = tmp_path / "again.denn"
    modelfile.save(str(again), params, meta["vocab_hash"], meta["hyperparams"])
    assert again.read_bytes() == model_path.read_bytes()

    assert cli.main(["train", "--config", str(cfg_path), "--kind", "ngram", "--out", str(tmp_path / "kn")]) == 0
    kn_path = tmp_path / "kn" / "model.denn"
    kn, kn_meta = modelfile.load(str(kn_path))
    assert kn_meta["kind"] == "kn" and kn.N == 3
    modelfile.save(str(again), kn, kn_meta["vocab_hash"], kn_meta["hyperparams"])
    assert again.read_bytes() == kn_path.read_bytes()

    out = tmp_path / "eval"
    rc = cli.main(["eval", str(model_path), str(kn_path), "--data", str(prepared / "prep"),
                   "--interpolate", "--correlate", "--out", str(out)])
    assert rc == 0
    rows = (out / "report.csv").read_text().splitlines()
    assert rows[0] == "model,perplexity,weight" and rows[-1].startswith("interpolated,")
    ppl = [float(r.split(",")[1]) for r in rows[1:]]
    assert ppl[2] < min(ppl[:2])
    assert (out / "correlation.csv").read_text().splitlines()[-1].startswith("mean_offdiag,")


def test_model_file_version_gate(prepared, tmp_path):
    cfg = load_config(str(write_config(tmp_path / "c.yaml", prepared / "prep", tmp_path / "run")))
    path = cli.cmd_train(cfg, kind="ngram")
    raw = bytearray(open(path, "rb").read())
    raw[4:8] = struct.pack("<I", 99)
    bad = tmp_path / "future.denn"
    bad.write_bytes(bytes(raw))
    with pytest.raises(modelfile.ModelFileError, match="version 99"):
        modelfile.load(str(bad))
    bad.write_bytes(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(modelfile.ModelFileError, match="magic"):
        modelfile.load(str(bad))


def test_eval_refuses_foreign_vocabulary(prepared, tmp_path, capsys):
    cfg = load_config(str(write_config(tmp_path / "c.yaml", prepared / "prep", tmp_path / "run")))
    path = cli.cmd_train(cfg, kind="ngram")
    raw = prepared / "raw"
    other = tmp_path / "other"
    cli.cmd_prepare(str(raw / "train.txt"), str(raw / "valid.txt"), str(raw / "test.txt"), str(other), 120)
    rc = cli.main(["eval", path, "--data", str(other), "--out", str(tmp_path / "e")])
    assert rc == 2
    assert "vocabulary hash" in capsys.readouterr().err


def test_eval_on_raw_text_maps_unknown_words(prepared, tmp_path):
    cfg = load_config(str(write_config(tmp_path / "c.yaml", prepared / "prep", tmp_path / "run")))
    path = cli.cmd_train(cfg, kind="ngram")
    text = tmp_path / "t.txt"
    text.write_text("never seen words here\n")
    res = cli.cmd_eval([path], str(prepared / "prep"), str(tmp_path / "e"), test_path=str(text))
    assert res["rows"][0]["perplexity"] > 1


def test_gridsearch_rows_and_byte_identical_rerun(prepared, tmp_path):
    cfg_path = write_config(tmp_path / "c.yaml", prepared / "prep", tmp_path / "grid",
                            grid={"beta": [0.2, 0.8], "gamma": [0.0, 2.0]}, optim={"max_epochs": 1})
    cfg = load_config(str(cfg_path))
    table, failures = cli.cmd_gridsearch(cfg)
    assert not failures and len(table.rows) == 4
    assert table.across_run_corr is not None
    first = {p: (tmp_path / "grid" / p).read_bytes()
             for p in ["scatter.csv", "gridsearch.json", "run_000/model.denn", "run_003/train_log.csv"]}
    assert len((tmp_path / "grid" / "scatter.csv").read_text().splitlines()) == 5
    cli.cmd_gridsearch(load_config(str(cfg_path)))
    for p, b in first.items():
        assert (tmp_path / "grid" / p).read_bytes() == b, p


def test_single_point_grid_has_no_correlation(prepared, tmp_path):
    cfg_path = write_config(tmp_path / "c.yaml", prepared / "prep", tmp_path / "one", optim={"max_epochs": 1})
    table, _ = cli.cmd_gridsearch(load_config(str(cfg_path)))
    assert len(table.rows) == 1 and table.across_run_corr is None
    meta = json.loads((tmp_path / "one" / "gridsearch.json").read_text())
    assert meta["across_run_corr"] is None


def test_run_seeds_are_distinct_and_stable():
    seeds = [cli.run_seed(0, i) for i in range(16)]
    assert len(set(seeds)) == 16
    assert seeds == [cli.run_seed(0, i) for i in range(16)]
