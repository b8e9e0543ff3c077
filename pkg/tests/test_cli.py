import json
from pathlib import Path

import pytest

from unitsel.cli import main
from unitsel.corpus import load_corpus, load_library
from unitsel.music import validate_piece

from conftest import FIXTURE_CORPUS

CORPUS = str(FIXTURE_CORPUS)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run the full command chain once; commands under test reuse it."""
    root = tmp_path_factory.mktemp("cli")

    def run(*argv):
        code = main(list(argv))
        assert code == 0, f"command failed: {argv}"

    run("split", "--corpus", CORPUS, "--out", str(root / "split"),
        "--train-fraction", "0.6", "--seed", "7")
    train_cor = str(root / "split" / "train.cor")
    test_cor = str(root / "split" / "test.cor")

    run("build-lib", "--corpus", train_cor, "--out", str(root / "lib"),
        "--unit-length", "1", "--shifts=-2,-1,0,1,2", "--mode", "transpose_only",
        "--seed", "7")
    lib = str(root / "lib" / "library.lib")

    run("train-ae", "--library", lib, "--out", str(root / "ae"),
        "--epochs", "4", "--batch-size", "16", "--hidden", "48",
        "--embedding", "24", "--seed", "7")
    ae = str(root / "ae" / "autoencoder.model")

    run("train-dssm", "--corpus", train_cor, "--out", str(root / "dssm"),
        "--unit-length", "1", "--shifts=-2,-1,0,1,2", "--epochs", "6",
        "--learning-rate", "0.2", "--seed", "7")
    dssm = str(root / "dssm" / "dssm.model")

    run("train-lm", "--corpus", train_cor, "--out", str(root / "lm"),
        "--shifts=-2,-1,0,1,2", "--epochs", "6", "--learning-rate", "1.0",
        "--hidden", "32", "--seed", "7")
    lm = str(root / "lm" / "lstm.model")

    return {
        "root": root,
        "train": train_cor,
        "test": test_cor,
        "lib": lib,
        "ae": ae,
        "dssm": dssm,
        "lm": lm,
    }


class TestArtifacts:
    def test_split_manifest(self, pipeline):
        manifest = json.loads(
            (pipeline["root"] / "split" / "manifest.json").read_text()
        )
        assert manifest["command"] == "split"
        assert manifest["seed"] == 7
        assert "corpus" in manifest["input_hashes"]
        assert len(manifest["config_hash"]) == 64

    def test_library_loads(self, pipeline):
        lib = load_library(pipeline["lib"])
        assert len(lib) > 50
        assert lib.unit_length == 1

    def test_models_exist(self, pipeline):
        for key in ("ae", "dssm", "lm"):
            assert Path(pipeline[key]).exists()


class TestReconstruct:
    def test_outputs_valid_corpus(self, pipeline, tmp_path):
        out = tmp_path / "recon"
        code = main([
            "reconstruct", "--corpus", pipeline["test"], "--library",
            pipeline["lib"], "--model", pipeline["ae"], "--out", str(out),
        ])
        assert code == 0
        corpus = load_corpus(out / "reconstructed.cor")
        source = load_corpus(pipeline["test"])
        assert len(corpus.pieces) == len(source.pieces)
        for p, src in zip(corpus.pieces, source.pieces):
            assert validate_piece(p) == []
            assert len(p.measures) == len(src.measures)


class TestInterpolate:
    def test_blend_endpoints(self, pipeline, tmp_path):
        test_ids = [p.id for p in load_corpus(pipeline["test"]).pieces]
        out = tmp_path / "interp"
        code = main([
            "interpolate", "--corpus", pipeline["test"], "--library",
            pipeline["lib"], "--model", pipeline["ae"], "--piece-a", test_ids[0],
            "--piece-b", test_ids[1], "--alphas", "0,0.5,1", "--out", str(out),
        ])
        assert code == 0
        corpus = load_corpus(out / "interpolated.cor")
        assert [p.id for p in corpus.pieces] == [
            "interp-0.00", "interp-0.50", "interp-1.00",
        ]


class TestGenerate:
    def test_extends_seed_by_units(self, pipeline, tmp_path):
        out = tmp_path / "gen"
        code = main([
            "generate", "--seed-piece", pipeline["test"], "--library",
            pipeline["lib"], "--dssm", pipeline["dssm"], "--lm", pipeline["lm"],
            "--units", "4", "--out", str(out), "--seed", "3",
        ])
        assert code == 0
        corpus = load_corpus(out / "generated.cor")
        source = load_corpus(pipeline["test"])
        for p, src in zip(corpus.pieces, source.pieces):
            assert len(p.measures) == len(src.measures) + 4
            assert validate_piece(p) == []
        audit = json.loads((out / "audit.json").read_text())
        assert audit and all("shortlist" in step for step in audit)

    def test_note_level(self, pipeline, tmp_path):
        out = tmp_path / "gen-notes"
        code = main([
            "generate-notes", "--seed-piece", pipeline["test"], "--lm",
            pipeline["lm"], "--measures", "2", "--out", str(out),
        ])
        assert code == 0
        corpus = load_corpus(out / "generated-notes.cor")
        for p in corpus.pieces:
            assert validate_piece(p) == []


class TestEval:
    def test_rank50_report(self, pipeline, tmp_path):
        out = tmp_path / "rank50"
        code = main([
            "eval-rank50", "--library", pipeline["lib"], "--model", pipeline["ae"],
            "--max-probes", "60", "--out", str(out), "--seed", "5",
        ])
        assert code == 0
        result = json.loads((out / "rank50.json").read_text())
        assert 1.0 <= result["mean_rank_at_50"] <= 50.0
        assert result["probe_count"] == 60

    def test_nextunit_deterministic_across_runs_and_threads(self, pipeline, tmp_path):
        outputs = []
        for name, threads in (("a", "1"), ("b", "1"), ("c", "4")):
            out = tmp_path / name
            code = main([
                "eval-nextunit", "--corpus", pipeline["test"], "--library",
                pipeline["lib"], "--dssm", pipeline["dssm"], "--lm", pipeline["lm"],
                "--out", str(out), "--seed", "9", "--threads", threads,
            ])
            assert code == 0
            outputs.append(
                (
                    (out / "report.txt").read_bytes(),
                    (out / "report.txt.json").read_bytes(),
                )
            )
        assert outputs[0] == outputs[1] == outputs[2]


class TestErrors:
    def test_missing_corpus_is_user_error(self, tmp_path, capsys):
        code = main([
            "train-ae", "--library", str(tmp_path / "nope.lib"),
            "--out", str(tmp_path / "o"),
        ])
        assert code == 1
        err = capsys.readouterr().err
        assert "not found" in err
        assert "Traceback" not in err

    def test_bad_flag_is_user_error(self, capsys):
        assert main(["build-lib", "--nonsense"]) == 1

    def test_wrong_model_kind(self, pipeline, tmp_path, capsys):
        code = main([
            "generate", "--seed-piece", pipeline["test"], "--library",
            pipeline["lib"], "--dssm", pipeline["ae"], "--lm", pipeline["lm"],
            "--out", str(tmp_path / "x"),
        ])
        assert code == 1
        assert "expected dssm" in capsys.readouterr().err

    def test_invalid_corpus_diagnosed(self, tmp_path, capsys):
        bad = tmp_path / "bad.cor"
        bad.write_text('{"id": "p", "meter": [1, 1], "measures": '
                       '[{"notes": [{"pitch": 60, "dur": [1, 4]}]}]}\n')
        code = main(["build-lib", "--corpus", str(bad), "--out", str(tmp_path / "o")])
        assert code == 1
        assert "duration-mismatch" in capsys.readouterr().err


class TestConfigFile:
    def test_config_supplies_defaults_flags_win(self, pipeline, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"train_fraction": 0.8, "seed": 42}))
        out = tmp_path / "split"
        code = main([
            "split", "--corpus", CORPUS, "--out", str(out),
            "--config", str(cfg), "--seed", "7",
        ])
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["train_fraction"] == 0.8  # from config file
        assert manifest["seed"] == 7  # explicit flag beat the config value
