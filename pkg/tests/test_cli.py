import csv
import json

import numpy as np
import pytest

from idcwh.cli import EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, main, parse_grid
from idcwh.core import ConfigError, pack_signs, read_config_file, seeded_rng
from idcwh.data import load_features, make_splits, save_features, synth_gaussian
from idcwh.encoder import encode_binary, load_checkpoint
from idcwh.experiment import evaluate_encoder
from idcwh.retrieval import load_codes, save_codes
from idcwh.trainer import train

FAST = ["--epochs", "3", "--code-length", "8", "--batch-size", "16", "--hidden-sizes", "12",
        "--lr-encoder", "1e-3", "--lr-centers", "1e-3"]


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    """4 classes x 20 samples; 3 queries and 10 training samples per class."""
    rng = seeded_rng(11)
    ds, _ = synth_gaussian(4, 6, 20, 0.3, 3.0, rng)
    ds = make_splits(ds, 3, 10, rng)
    path = tmp_path_factory.mktemp("data") / "tiny.idcw"
    save_features(ds, path)
    return path


def run(*argv):
    return main([str(a) for a in argv])


class TestTrain:
    def test_smoke(self, tiny, tmp_path):
        assert run("train", "--data", tiny, "--out", tmp_path, *FAST) == 0
        for name in ("checkpoint.idcp", "train_log.tsv", "config.txt", "final_loss.json", "loss.png"):
            assert (tmp_path / name).stat().st_size > 0
        lines = (tmp_path / "train_log.tsv").read_text().splitlines()
        assert lines[0].startswith("# variant=IDCWH ")
        assert lines[1].split("\t")[0] == "epoch"
        assert len(lines) == 2 + 3
        final = json.loads((tmp_path / "final_loss.json").read_text())
        assert final["final"]["total"] == float(lines[-1].split("\t")[4])
        params, mu = load_checkpoint(tmp_path / "checkpoint.idcp")
        assert params.sizes == [6, 12, 8] and mu.shape == (4, 8)

    def test_preset_default_config(self, tmp_path):
        assert run("train", "--data", "preset:blobs10", "--out", tmp_path, "--epochs", "2", "--no-plots") == 0
        assert (tmp_path / "checkpoint.idcp").exists()
        assert not (tmp_path / "loss.png").exists()

    def test_single_variant_header(self, tiny, tmp_path):
        assert run("train", "--data", tiny, "--out", tmp_path, *FAST, "--gamma", "0") == 0
        assert "variant=IDCWH-Single" in (tmp_path / "train_log.tsv").read_text().splitlines()[0]

    def test_byte_identical_reruns(self, tiny, tmp_path):
        for d in ("a", "b"):
            assert run("train", "--data", tiny, "--out", tmp_path / d, *FAST) == 0
        for name in ("checkpoint.idcp", "train_log.tsv", "final_loss.json", "loss.png"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_config_file_and_flag_precedence(self, tiny, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# base\nsigma_sq = 2.0\nbeta = 0.1\nepochs = 2\n")
        assert run("train", "--data", tiny, "--out", tmp_path / "o", "--config", cfg,
                   "--code-length", "8", "--hidden-sizes", "12", "--beta", "0.05") == 0
        got = read_config_file(tmp_path / "o" / "config.txt")
        assert (got.sigma_sq, got.beta, got.epochs) == (2.0, 0.05, 2)

    def test_config_error(self, tiny, tmp_path, capsys):
        assert run("train", "--data", tiny, "--out", tmp_path, "--sigma-sq", "-1") == EXIT_CONFIG
        assert "sigma_sq" in capsys.readouterr().err
        bad = tmp_path / "bad.cfg"
        bad.write_text("epochs = 3\nmomentum = lots\n")
        assert run("train", "--data", tiny, "--out", tmp_path, "--config", bad) == EXIT_CONFIG
        assert "bad.cfg:2" in capsys.readouterr().err

    def test_data_error(self, tmp_path, capsys):
        bad = tmp_path / "junk.idcw"
        bad.write_bytes(b"nope")
        assert run("train", "--data", bad, "--out", tmp_path / "o") == EXIT_DATA
        assert "junk.idcw" in capsys.readouterr().err
        assert run("train", "--data", tmp_path / "missing.idcw", "--out", tmp_path / "o") == EXIT_DATA
        assert run("train", "--data", "preset:nope", "--out", tmp_path / "o") == EXIT_DATA

    def test_divergence_exit(self, tiny, tmp_path, capsys):
        assert run("train", "--data", tiny, "--out", tmp_path, *FAST, "--lr-encoder", "1e6",
                   "--lr-centers", "1e6") == EXIT_DIVERGED
        assert "epoch" in capsys.readouterr().err
        assert "# diverged" in (tmp_path / "train_log.tsv").read_text()


class TestEncode:
    @pytest.fixture
    def ckpt(self, tiny, tmp_path):
        assert run("train", "--data", tiny, "--out", tmp_path / "m", *FAST) == 0
        return tmp_path / "m" / "checkpoint.idcp"

    def test_round_trip(self, tiny, ckpt, tmp_path):
        assert run("encode", "--checkpoint", ckpt, "--data", tiny, "--split", "query", "--out", tmp_path / "q.idcb") == 0
        codes, labels, length = load_codes(tmp_path / "q.idcb")
        ds = load_features(tiny)
        params, _ = load_checkpoint(ckpt)
        ids = ds.indices("query")
        np.testing.assert_array_equal(codes, encode_binary(params, ds.features[ids]))
        np.testing.assert_array_equal(labels, ds.labels[ids])
        assert length == 8

    def test_split_counts(self, tiny, ckpt, tmp_path):
        ds = load_features(tiny)
        for split, flag, expected in (("database", [], 4 * 7), ("database", ["--train-in-database"], 4 * 17),
                                      ("train", [], 40), ("all", [], 80)):
            out = tmp_path / f"{split}{len(flag)}.idcb"
            assert run("encode", "--checkpoint", ckpt, "--data", tiny, "--split", split, *flag, "--out", out) == 0
            assert len(load_codes(out)[0]) == expected
        assert len(ds.indices("database")) == 28

    def test_empty_split(self, ckpt, tmp_path):
        rng = seeded_rng(1)
        ds, _ = synth_gaussian(4, 6, 5, 0.3, 3.0, rng)  # every sample tagged train
        path = tmp_path / "all_train.idcw"
        save_features(ds, path)
        out = tmp_path / "empty.idcb"
        assert run("encode", "--checkpoint", ckpt, "--data", path, "--split", "query", "--out", out) == 0
        codes, labels, length = load_codes(out)
        assert codes.shape == (0, 1) and labels.shape == (0, 4) and length == 8

    def test_dimension_mismatch(self, ckpt, tmp_path):
        ds, _ = synth_gaussian(2, 5, 4, 0.3, 3.0, seeded_rng(0))
        save_features(ds, tmp_path / "d5.idcw")
        assert run("encode", "--checkpoint", ckpt, "--data", tmp_path / "d5.idcw",
                   "--out", tmp_path / "x.idcb") == EXIT_DATA


class TestEval:
    def test_self_retrieval_map_one(self, tmp_path):
        signs = np.repeat(np.array([[1] * 8, [-1] * 8, [1, -1] * 4]), 4, axis=0).astype(np.int8)
        labels = np.repeat(np.eye(3, dtype=np.uint8), 4, axis=0)
        save_codes(tmp_path / "c.idcb", pack_signs(signs).reshape(12, 1), labels, 8)
        assert run("eval", "--query", tmp_path / "c.idcb", "--database", tmp_path / "c.idcb",
                   "--out", tmp_path / "r") == 0
        rep = json.loads((tmp_path / "r" / "metrics.json").read_text())
        assert rep["map"] == 1.0 and rep["dwdb"] == 0.0
        for name in ("metrics.csv", "pr_curve.png", "precision_at_n.png"):
            assert (tmp_path / "r" / name).stat().st_size > 0

    def test_random_codes_give_class_prior(self, tmp_path):
        rng = seeded_rng(2)
        n, c = 1000, 10
        codes = pack_signs(np.where(rng.random((n, 32)) < 0.5, -1, 1).astype(np.int8)).reshape(n, 1)
        labels = np.repeat(np.eye(c, dtype=np.uint8), n // c, axis=0)
        save_codes(tmp_path / "db.idcb", codes, labels, 32)
        save_codes(tmp_path / "q.idcb", codes[:200:2], labels[:200:2], 32)
        assert run("eval", "--query", tmp_path / "q.idcb", "--database", tmp_path / "db.idcb",
                   "--out", tmp_path / "r", "--no-plots") == 0
        rep = json.loads((tmp_path / "r" / "metrics.json").read_text())
        # each query also finds itself at distance 0, a small upward bias
        assert rep["map"] == pytest.approx(1 / c, abs=0.05)

    def test_fixture_matches_module(self, tmp_path):
        rng = seeded_rng(3)
        q = pack_signs(np.where(rng.random((5, 10)) < 0.5, -1, 1).astype(np.int8)).reshape(5, 1)
        db = pack_signs(np.where(rng.random((9, 10)) < 0.5, -1, 1).astype(np.int8)).reshape(9, 1)
        ql = np.eye(3, dtype=np.uint8)[rng.integers(0, 3, 5)]
        dl = np.eye(3, dtype=np.uint8)[rng.integers(0, 3, 9)]
        save_codes(tmp_path / "q.idcb", q, ql, 10)
        save_codes(tmp_path / "db.idcb", db, dl, 10)
        assert run("eval", "--query", tmp_path / "q.idcb", "--database", tmp_path / "db.idcb",
                   "--out", tmp_path / "r", "--n-list", "1,3,9", "--no-plots") == 0
        from idcwh.retrieval import RetrievalIndex, evaluate
        ref = evaluate(q, ql, RetrievalIndex(db, dl, 10), n_list=[1, 3, 9])
        rows = {(r["metric"], r["x"]): float(r["value"]) for r in csv.DictReader(open(tmp_path / "r" / "metrics.csv"))}
        assert rows[("map", "")] == ref.map
        assert rows[("p_at_h2", "")] == ref.p_at_h2
        assert [rows[("p_at_n", str(n))] for n in (1, 3, 9)] == [p for _, p in ref.p_at_n]

    def test_code_length_mismatch(self, tmp_path):
        save_codes(tmp_path / "a.idcb", np.zeros((2, 1), np.uint64), np.eye(2, dtype=np.uint8), 8)
        save_codes(tmp_path / "b.idcb", np.zeros((2, 1), np.uint64), np.eye(2, dtype=np.uint8), 16)
        assert run("eval", "--query", tmp_path / "a.idcb", "--database", tmp_path / "b.idcb",
                   "--out", tmp_path / "r") == EXIT_DATA


class TestSweep:
    def test_grid_parsing(self, tmp_path):
        assert parse_grid("sigma_sq=0.5,1;beta=0.01") == {"sigma_sq": [0.5, 1.0], "beta": [0.01]}
        f = tmp_path / "grid.txt"
        f.write_text("gamma=0,1  # ablation\ncode_length=12,24\n")
        assert parse_grid(str(f)) == {"gamma": [0.0, 1.0], "code_length": [12, 24]}
        for bad in ("", "sigma_sq", "hidden_sizes=1,2", "nope=1", "sigma_sq="):
            with pytest.raises(ConfigError):
                parse_grid(bad)

    def test_fifteen_point_grid(self, tiny, tmp_path):
        grid = "sigma_sq=0.5,1,2,4,8;beta=0.001,0.01,0.1"
        assert run("sweep", "--data", tiny, "--grid", grid, "--out", tmp_path, *FAST, "--epochs", "1") == 0
        rows = list(csv.DictReader(open(tmp_path / "sweep.csv")))
        assert len(rows) == 15
        assert {(float(r["sigma_sq"]), float(r["beta"])) for r in rows} == {
            (s, b) for s in (0.5, 1, 2, 4, 8) for b in (0.001, 0.01, 0.1)}
        assert [int(r["seed"]) for r in rows] == list(range(15))
        assert all(r["status"] == "ok" for r in rows)
        assert (tmp_path / "sweep_sigma_sq.png").exists() and (tmp_path / "sweep_beta.png").exists()

    def test_single_point_equals_train_plus_eval(self, tiny, tmp_path):
        assert run("sweep", "--data", tiny, "--grid", "gamma=1", "--out", tmp_path / "s", *FAST, "--no-plots") == 0
        row = next(csv.DictReader(open(tmp_path / "s" / "sweep.csv")))
        assert run("train", "--data", tiny, "--out", tmp_path / "t", *FAST, "--no-plots") == 0
        for split in ("query", "database"):
            assert run("encode", "--checkpoint", tmp_path / "t" / "checkpoint.idcp", "--data", tiny,
                       "--split", split, "--out", tmp_path / f"{split}.idcb") == 0
        assert run("eval", "--query", tmp_path / "query.idcb", "--database", tmp_path / "database.idcb",
                   "--out", tmp_path / "e", "--no-plots") == 0
        rep = json.loads((tmp_path / "e" / "metrics.json").read_text())
        assert float(row["map"]) == rep["map"]
        assert float(row["p_at_h2"]) == rep["p_at_h2"]
        assert float(row["dwdb"]) == rep["dwdb"]

    def test_ablation_pair_and_parallel(self, tiny, tmp_path, monkeypatch):
        args = ["sweep", "--data", tiny, "--grid", "gamma=0,1;seed=5", *FAST, "--no-plots"]
        assert run(*args, "--out", tmp_path / "serial") == 0
        monkeypatch.setenv("IDCWH_THREADS", "2")
        assert run(*args, "--out", tmp_path / "par", "--jobs", "2") == 0
        serial = (tmp_path / "serial" / "sweep.csv").read_text()
        assert serial == (tmp_path / "par" / "sweep.csv").read_text()
        rows = list(csv.DictReader(open(tmp_path / "serial" / "sweep.csv")))
        assert [r["variant"] for r in rows] == ["IDCWH-Single", "IDCWH"]
        assert {r["seed"] for r in rows} == {"5"}

    def test_failures_recorded(self, tiny, tmp_path):
        assert run("sweep", "--data", tiny, "--grid", "lr_encoder=1e-3,1e6", *FAST,
                   "--lr-centers", "1e6", "--out", tmp_path, "--no-plots") == 0
        rows = list(csv.DictReader(open(tmp_path / "sweep.csv")))
        assert len(rows) == 2
        assert rows[1]["status"] == "failed" and "diverged" in rows[1]["error"]

    def test_bad_grid_exit(self, tiny, tmp_path):
        assert run("sweep", "--data", tiny, "--grid", "bogus=1", "--out", tmp_path) == EXIT_CONFIG


def test_make_data_matches_preset(tmp_path):
    assert run("make-data", "blobs10", tmp_path / "b.idcw") == 0
    from idcwh.presets import get_preset
    assert load_features(tmp_path / "b.idcw") == get_preset("blobs10").dataset()


def test_train_matches_library(tiny, tmp_path):
    assert run("train", "--data", tiny, "--out", tmp_path, *FAST, "--no-plots") == 0
    from idcwh.core import TrainConfig
    cfg = TrainConfig(epochs=3, code_length=8, batch_size=16, hidden_sizes=(12,), lr_encoder=1e-3, lr_centers=1e-3)
    state = train(load_features(tiny), cfg)
    params, mu = load_checkpoint(tmp_path / "checkpoint.idcp")
    np.testing.assert_array_equal(mu, state.centers.mu)
    rep = evaluate_encoder(params, load_features(tiny))
    assert rep.code_length == 8
