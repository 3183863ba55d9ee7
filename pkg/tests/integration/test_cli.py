"""CLI integration tests using Typer CliRunner."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from typer.testing import CliRunner

from genhoi import __version__
from genhoi.cli import app
from genhoi.config import RunConfig, load_run_config, save_run_config
from genhoi.embeddings.providers import FileEmbeddingProvider
from genhoi.embeddings.store import load_embedding_matrix, save_embedding_matrix

runner = CliRunner()


def _small_config(path: Path) -> Path:
    config = RunConfig.preset("toy").with_updates(
        model={
            "num_queries": 4,
            "hidden_dim": 16,
            "num_heads": 2,
            "num_decoder_layers": 2,
            "num_encoder_layers": 1,
            "ffn_dim": 16,
            "backbone_channels": (8, 16),
            "backbone_strides": (2, 2),
        },
        embedding={"dim": 16},
        data={"n_train": 6, "n_test": 3},
        optim={"batch_size": 3, "epochs": 1, "max_steps": 2},
    )
    save_run_config(config, path)
    return path


@pytest.mark.integration
class TestCLIVersionFlag:
    """Tests for --version."""

    def test_version_flag(self) -> None:
        """Should print the version and exit zero."""
        result = runner.invoke(app, ["--version"])
        assert result.exit_code == 0
        assert __version__ in result.stdout
        assert "genhoi" in result.stdout

    def test_no_args_shows_help(self) -> None:
        """Should list the subcommands when called without arguments."""
        result = runner.invoke(app, [])
        for command in ("gen-data", "make-split", "train", "infer", "eval", "selftest"):
            assert command in result.stdout


@pytest.mark.integration
class TestCLIConfigCommand:
    """Tests for the config command."""

    def test_show(self) -> None:
        """Should print the settings table."""
        result = runner.invoke(app, ["config", "--show"])
        assert result.exit_code == 0
        assert "Data Directory" in result.stdout

    def test_init_writes_preset(self, temp_dir: Path) -> None:
        """Should write a loadable run config."""
        path = temp_dir / "hico.yaml"
        result = runner.invoke(app, ["config", "--init", str(path), "--preset", "hico"])
        assert result.exit_code == 0
        assert load_run_config(path).data.label_space == "hico"

    def test_init_unknown_preset(self, temp_dir: Path) -> None:
        """Should fail with a diagnostic for an unknown preset."""
        result = runner.invoke(app, ["config", "--init", str(temp_dir / "x.json"), "--preset", "coco"])
        assert result.exit_code == 1
        assert "Error" in result.stdout


@pytest.mark.integration
class TestCLIPrompts:
    """Tests for export-prompts and import-embeddings."""

    def test_export_prompts(self, temp_dir: Path) -> None:
        """Should write one prompt per HOI and per object plus the background prompt."""
        result = runner.invoke(app, ["export-prompts", "-o", str(temp_dir)])
        assert result.exit_code == 0
        hoi = (temp_dir / "hoi_prompts.txt").read_text().splitlines()
        objects = (temp_dir / "object_prompts.txt").read_text().splitlines()
        assert len(hoi) == 12 and len(objects) == 4
        assert hoi[3] == "A photo of a person riding a box"
        background = (temp_dir / "background_prompt.txt").read_text().splitlines()
        assert background == ["A photo of an empty scene"]

    def test_import_embeddings(self, temp_dir: Path) -> None:
        """Should store renormalized matrices for training, background row included."""
        rng = np.random.default_rng(0)
        save_embedding_matrix(rng.normal(size=(12, 8)).astype(np.float32), temp_dir / "hoi.emb")
        save_embedding_matrix(rng.normal(size=(4, 8)).astype(np.float32), temp_dir / "obj.emb")
        save_embedding_matrix(rng.normal(size=(1, 8)).astype(np.float32), temp_dir / "bg.emb")
        store = temp_dir / "store"
        result = runner.invoke(
            app,
            [
                "import-embeddings",
                "--hoi", str(temp_dir / "hoi.emb"),
                "--objects", str(temp_dir / "obj.emb"),
                "--background", str(temp_dir / "bg.emb"),
                "--store", str(store),
            ],
        )
        assert result.exit_code == 0
        stored = load_embedding_matrix(store / "hoi_text.emb")
        np.testing.assert_allclose(np.linalg.norm(stored, axis=1), 1.0, atol=1e-5)
        assert len((store / "object_text.txt").read_text().splitlines()) == 4

        provider = FileEmbeddingProvider.from_store(store)
        assert provider.embed_text("A photo of an empty scene").shape == (8,)

    def test_import_wrong_row_count(self, temp_dir: Path) -> None:
        """Should reject a matrix whose rows do not match the label space."""
        save_embedding_matrix(np.ones((5, 8), dtype=np.float32), temp_dir / "hoi.emb")
        save_embedding_matrix(np.ones((4, 8), dtype=np.float32), temp_dir / "obj.emb")
        save_embedding_matrix(np.ones((1, 8), dtype=np.float32), temp_dir / "bg.emb")
        result = runner.invoke(
            app,
            [
                "import-embeddings",
                "--hoi", str(temp_dir / "hoi.emb"),
                "--objects", str(temp_dir / "obj.emb"),
                "--background", str(temp_dir / "bg.emb"),
                "--store", str(temp_dir / "store"),
            ],
        )
        assert result.exit_code == 1
        assert "Error" in result.stdout

    def test_import_background_dimension_mismatch(self, temp_dir: Path) -> None:
        """Should reject a background row whose width differs from the text rows."""
        save_embedding_matrix(np.ones((12, 8), dtype=np.float32), temp_dir / "hoi.emb")
        save_embedding_matrix(np.ones((4, 8), dtype=np.float32), temp_dir / "obj.emb")
        save_embedding_matrix(np.ones((1, 6), dtype=np.float32), temp_dir / "bg.emb")
        result = runner.invoke(
            app,
            [
                "import-embeddings",
                "--hoi", str(temp_dir / "hoi.emb"),
                "--objects", str(temp_dir / "obj.emb"),
                "--background", str(temp_dir / "bg.emb"),
                "--store", str(temp_dir / "store"),
            ],
        )
        assert result.exit_code == 1
        assert not (temp_dir / "store").exists()


@pytest.mark.integration
class TestCLISplits:
    """Tests for make-split without a dataset."""

    def test_uv_with_drawn_verbs(self, temp_dir: Path) -> None:
        """Should write a UV split with the requested number of unseen verbs."""
        path = temp_dir / "uv.json"
        result = runner.invoke(
            app, ["make-split", "UV", "-o", str(path), "--n-unseen-verbs", "1", "--data", str(temp_dir)]
        )
        assert result.exit_code == 0
        data = json.loads(path.read_text())
        assert data["setting"] == "UV"
        assert data["unseen"]

    def test_rf_uc_needs_counts(self, temp_dir: Path) -> None:
        """Should fail when no training counts are available."""
        result = runner.invoke(
            app, ["make-split", "RF-UC", "-o", str(temp_dir / "s.json"), "--data", str(temp_dir)]
        )
        assert result.exit_code == 1

    def test_unknown_setting(self, temp_dir: Path) -> None:
        """Should reject an unknown setting name."""
        result = runner.invoke(app, ["make-split", "XX", "-o", str(temp_dir / "s.json")])
        assert result.exit_code == 1


@pytest.mark.integration
class TestCLISelftest:
    """Tests for the selftest command."""

    def test_hungarian_suite(self) -> None:
        """Should pass the Hungarian oracle suite."""
        result = runner.invoke(app, ["selftest", "--suite", "hungarian"])
        assert result.exit_code == 0
        assert "pass" in result.stdout

    def test_unknown_suite(self) -> None:
        """Should exit non-zero for an unknown suite."""
        result = runner.invoke(app, ["selftest", "--suite", "nope"])
        assert result.exit_code == 1


@pytest.mark.integration
class TestCLIPipeline:
    """End-to-end gen-data, make-split, train, infer and eval."""

    def test_full_pipeline(self, temp_dir: Path) -> None:
        """Should run every stage and write a report with a full mAP."""
        config = _small_config(temp_dir / "run.yaml")
        data = temp_dir / "data"
        run = temp_dir / "run"
        common = ["--config", str(config)]

        result = runner.invoke(app, ["gen-data", *common, "-o", str(data)])
        assert result.exit_code == 0, result.stdout
        assert (data / "train" / "manifest.json").exists()
        assert (data / "test" / "manifest.json").exists()

        split = temp_dir / "rf.json"
        result = runner.invoke(
            app, ["make-split", "RF-UC", *common, "-o", str(split), "--data", str(data)]
        )
        assert result.exit_code == 0, result.stdout

        result = runner.invoke(
            app,
            ["train", *common, "--data", str(data), "--run-dir", str(run), "--split", str(split)],
        )
        assert result.exit_code == 0, result.stdout
        assert (run / "checkpoint.ghck").exists()
        assert (run / "metrics.ndjson").exists()
        assert (run / "train.log").exists()

        renders = temp_dir / "renders"
        result = runner.invoke(
            app,
            [
                "infer", *common, "--data", str(data), "--run-dir", str(run),
                "--render", str(renders), "--render-limit", "1",
            ],
        )
        assert result.exit_code == 0, result.stdout
        assert len(list(renders.glob("*.png"))) == 1

        csv_path = temp_dir / "report.csv"
        result = runner.invoke(
            app,
            ["eval", *common, "--data", str(data), "--run-dir", str(run), "--csv", str(csv_path)],
        )
        assert result.exit_code == 0, result.stdout
        report = json.loads((run / "report.json").read_text())
        assert report["setting"] == "RF-UC"
        assert report["map_full"] is None or 0.0 <= report["map_full"] <= 1.0
        assert report["config_hash"]
        assert csv_path.exists()
