"""Unit tests for prompts, embedding files, providers, classifiers and the mimic loss."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import pytest
import torch

from genhoi.config import EmbeddingConfig, MimicNorm
from genhoi.embeddings.classifier import (
    Classifier,
    cosine_scores,
    init_classifier,
    random_classifier,
    replace_rows,
)
from genhoi.embeddings.mimic import TeacherEmbedding, mimic_loss
from genhoi.embeddings.prompts import (
    hoi_prompt,
    hoi_prompts,
    object_prompt,
    object_prompts,
    read_prompts,
    write_prompts,
)
from genhoi.embeddings.providers import (
    FileEmbeddingProvider,
    SyntheticTextProvider,
    create_provider,
    parse_hoi_prompt,
)
from genhoi.embeddings.store import load_embedding_matrix, save_embedding_matrix
from genhoi.errors import EmbeddingError, EmbeddingFileError, PromptError, ShapeError
from genhoi.label_space import LabelSpace, ObjectRecord, VerbRecord


def _unit_rows(rows: int, cols: int, seed: int = 0) -> np.ndarray:
    m = np.random.default_rng(seed).standard_normal((rows, cols))
    return (m / np.linalg.norm(m, axis=1, keepdims=True)).astype(np.float32)


class TestPrompts:
    """Tests for prompt templates."""

    def test_interaction_prompt(self) -> None:
        """Should use the gerund and article."""
        verb = VerbRecord(0, "ride", "riding")
        assert hoi_prompt(verb, ObjectRecord(0, "horse")) == "A photo of a person riding a horse"

    def test_no_interaction_prompt(self) -> None:
        """Should use the 'person and' form for no-interaction verbs."""
        verb = VerbRecord(0, "no_interaction", None, True)
        obj = ObjectRecord(0, "apple", "an")
        assert hoi_prompt(verb, obj) == "A photo of a person and an apple"

    def test_missing_gerund(self) -> None:
        """Should refuse an interacting verb without a gerund."""
        with pytest.raises(PromptError):
            hoi_prompt(VerbRecord(0, "hold"), ObjectRecord(0, "cup"))

    def test_object_prompt(self) -> None:
        """Should use the article."""
        assert object_prompt(ObjectRecord(0, "umbrella", "an")) == "A photo of an umbrella"

    def test_prompt_lists_follow_ids(self, toy_ls: LabelSpace) -> None:
        """Should produce one prompt per HOI and per object in id order."""
        prompts = hoi_prompts(toy_ls)
        assert len(prompts) == 12
        assert prompts[3] == "A photo of a person riding a box"
        assert object_prompts(toy_ls)[3] == "A photo of an apple"

    def test_write_and_read(self, toy_ls: LabelSpace, temp_dir: Path) -> None:
        """Should write one prompt per line and read them back."""
        path = temp_dir / "prompts.txt"
        write_prompts(hoi_prompts(toy_ls), path)
        assert read_prompts(path) == hoi_prompts(toy_ls)
        assert path.read_text(encoding="utf-8").count("\n") == 12


class TestEmbeddingStore:
    """Tests for EMB1 files."""

    def test_header_layout(self, temp_dir: Path) -> None:
        """Should write magic, little-endian row and column counts, then float32 data."""
        path = temp_dir / "m.emb"
        save_embedding_matrix(np.ones((2, 3), dtype=np.float32), path)
        data = path.read_bytes()
        assert data[:4] == b"EMB1"
        assert struct.unpack_from("<QQ", data, 4) == (2, 3)
        assert len(data) == 20 + 2 * 3 * 4

    def test_load_matches_saved(self, temp_dir: Path) -> None:
        """Should read back the exact float32 values."""
        matrix = _unit_rows(5, 8)
        path = temp_dir / "m.emb"
        save_embedding_matrix(matrix, path)
        np.testing.assert_array_equal(load_embedding_matrix(path), matrix)

    def test_bad_magic(self, temp_dir: Path) -> None:
        """Should reject files with the wrong magic."""
        path = temp_dir / "m.emb"
        path.write_bytes(b"EMB2" + struct.pack("<QQ", 0, 0))
        with pytest.raises(EmbeddingFileError):
            load_embedding_matrix(path)

    def test_truncated(self, temp_dir: Path) -> None:
        """Should reject files shorter than the header implies."""
        path = temp_dir / "m.emb"
        save_embedding_matrix(_unit_rows(3, 4), path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(EmbeddingFileError):
            load_embedding_matrix(path)

    def test_refuses_non_finite(self, temp_dir: Path) -> None:
        """Should refuse to write NaN values."""
        with pytest.raises(EmbeddingFileError):
            save_embedding_matrix(np.array([[np.nan, 1.0]]), temp_dir / "m.emb")

    def test_normalize(self, temp_dir: Path) -> None:
        """Should rescale rows to unit norm on request."""
        path = temp_dir / "m.emb"
        save_embedding_matrix(np.array([[3.0, 4.0], [0.0, 2.0]], dtype=np.float32), path)
        matrix = load_embedding_matrix(path, normalize=True)
        np.testing.assert_allclose(np.linalg.norm(matrix, axis=1), 1.0, atol=1e-6)

    def test_zero_row_cannot_normalize(self, temp_dir: Path) -> None:
        """Should reject zero rows when normalizing."""
        path = temp_dir / "m.emb"
        save_embedding_matrix(np.array([[0.0, 0.0]], dtype=np.float32), path)
        with pytest.raises(EmbeddingFileError):
            load_embedding_matrix(path, normalize=True)


class TestSyntheticProvider:
    """Tests for SyntheticTextProvider."""

    def test_unit_norm_and_deterministic(self) -> None:
        """Should return the same unit vector for the same prompt and seed."""
        a = SyntheticTextProvider(seed=1, dim=32).embed_text("A photo of a person riding a box")
        b = SyntheticTextProvider(seed=1, dim=32).embed_text("A photo of a person riding a box")
        np.testing.assert_array_equal(a, b)
        assert abs(float(np.linalg.norm(a)) - 1.0) < 1e-5

    def test_shared_verb_is_closer(self) -> None:
        """Should make prompts sharing a verb more similar than unrelated prompts."""
        p = SyntheticTextProvider(seed=0, dim=256)
        ride_box = p.embed_text("A photo of a person riding a box")
        ride_ball = p.embed_text("A photo of a person riding a ball")
        hold_apple = p.embed_text("A photo of a person holding an apple")
        assert float(ride_box @ ride_ball) > float(ride_box @ hold_apple)

    def test_parses_no_interaction_prompts(self) -> None:
        """Should read the person-and-object form as the no-interaction verb, not as 'and'."""
        assert parse_hoi_prompt("A photo of a person and an apple") == ("no_interaction", "apple")
        assert parse_hoi_prompt("A photo of a person riding a box") == ("riding", "box")
        assert parse_hoi_prompt("A photo of an apple") is None

    def test_no_interaction_uses_its_verb_token(self) -> None:
        """Should compose the no-interaction prompt from the no_interaction verb token."""
        p = SyntheticTextProvider(seed=0, dim=64)
        v = p.embed_text("A photo of a person and an apple")

        def composed(verb: str) -> np.ndarray:
            raw = (
                p.verb_weight * p._token(f"verb:{verb}")
                + p.object_weight * p._token("object:apple")
                + p.context_weight * p._token("person")
            )
            return raw / np.linalg.norm(raw)

        np.testing.assert_allclose(v, composed("no_interaction"), atol=1e-6)
        assert not np.allclose(v, composed("and"), atol=1e-3)

    def test_no_interaction_prompts_share_a_verb(self) -> None:
        """Should make two no-interaction prompts closer than unrelated ones."""
        p = SyntheticTextProvider(seed=0, dim=256)
        idle_box = p.embed_text("A photo of a person and a box")
        idle_ball = p.embed_text("A photo of a person and a ball")
        hold_apple = p.embed_text("A photo of a person holding an apple")
        assert float(idle_box @ idle_ball) > float(idle_box @ hold_apple)

    def test_image_embedding(self, rng: np.random.Generator) -> None:
        """Should embed an image to a unit vector."""
        v = SyntheticTextProvider(dim=16).embed_image(rng.random((32, 32, 3)))
        assert v.shape == (16,)
        assert abs(float(np.linalg.norm(v)) - 1.0) < 1e-5

    def test_rejects_small_dim(self) -> None:
        """Should refuse dimensions below 8."""
        with pytest.raises(ValueError):
            SyntheticTextProvider(dim=4)


class TestFileProvider:
    """Tests for FileEmbeddingProvider and create_provider()."""

    def _store(self, toy_ls: LabelSpace, root: Path, dim: int = 16) -> Path:
        save_embedding_matrix(_unit_rows(12, dim, seed=1), root / "hoi_text.emb")
        write_prompts(hoi_prompts(toy_ls), root / "hoi_text.txt")
        save_embedding_matrix(_unit_rows(4, dim, seed=2), root / "object_text.emb")
        write_prompts(object_prompts(toy_ls), root / "object_text.txt")
        return root

    def test_lookup_by_prompt(self, toy_ls: LabelSpace, temp_dir: Path) -> None:
        """Should serve the stored row for each prompt."""
        provider = FileEmbeddingProvider.from_store(self._store(toy_ls, temp_dir))
        np.testing.assert_array_equal(
            provider.embed_text(hoi_prompts(toy_ls)[5]), _unit_rows(12, 16, seed=1)[5]
        )
        assert provider.dim == 16

    def test_unknown_prompt(self, toy_ls: LabelSpace, temp_dir: Path) -> None:
        """Should raise EmbeddingError for prompts not in the store."""
        provider = FileEmbeddingProvider.from_store(self._store(toy_ls, temp_dir))
        with pytest.raises(EmbeddingError):
            provider.embed_text("A photo of a person flying a kite")

    def test_missing_prompt_list(self, temp_dir: Path) -> None:
        """Should require a .txt next to every .emb."""
        save_embedding_matrix(_unit_rows(2, 8), temp_dir / "orphan.emb")
        with pytest.raises(EmbeddingError):
            FileEmbeddingProvider.from_store(temp_dir)

    def test_create_from_config(self, toy_ls: LabelSpace, temp_dir: Path) -> None:
        """Should build the file provider and check its dimension."""
        store = self._store(toy_ls, temp_dir)
        config = EmbeddingConfig(provider="file", store_dir=store, dim=16)
        assert isinstance(create_provider(config), FileEmbeddingProvider)
        with pytest.raises(EmbeddingError):
            create_provider(config.model_copy(update={"dim": 32}))

    def test_unknown_provider(self) -> None:
        """Should name the available providers when the name is unknown."""
        with pytest.raises(EmbeddingError) as exc_info:
            create_provider(EmbeddingConfig(provider="clip"))
        assert "synthetic" in str(exc_info.value)


class TestClassifier:
    """Tests for Classifier and cosine_scores()."""

    def test_scores_are_scaled_cosines(self) -> None:
        """Should return theta times the cosine similarity."""
        cls = Classifier(torch.eye(3), theta=10.0)
        scores = cosine_scores(torch.tensor([[2.0, 0.0, 0.0]]), cls)
        torch.testing.assert_close(scores, torch.tensor([[10.0, 0.0, 0.0]]))

    def test_zero_feature(self) -> None:
        """Should reject zero-norm features."""
        with pytest.raises(ShapeError):
            cosine_scores(torch.zeros(1, 3), Classifier(torch.eye(3)))

    def test_frozen_weight_is_buffer(self) -> None:
        """Should expose no parameters when frozen."""
        cls = Classifier(torch.eye(3), trainable=False)
        assert list(cls.parameters()) == []
        assert "weight" in dict(cls.named_buffers())

    def test_active_rows_only_in_training(self) -> None:
        """Should restrict outputs to active rows in training mode only."""
        cls = Classifier(torch.eye(4))
        cls.set_active_rows([2, 0])
        features = torch.ones(1, 4)
        assert cls.train()(features).shape == (1, 2)
        assert cls.eval()(features).shape == (1, 4)

    def test_active_rows_range(self) -> None:
        """Should reject out-of-range active rows."""
        with pytest.raises(ShapeError):
            Classifier(torch.eye(2)).set_active_rows([5])

    def test_init_from_provider(self, toy_ls: LabelSpace) -> None:
        """Should copy the provider embedding into each row."""
        provider = SyntheticTextProvider(dim=16)
        prompts = object_prompts(toy_ls)
        cls = init_classifier(prompts, provider, theta=1.0)
        expected = torch.from_numpy(provider.embed_text(prompts[2]))
        torch.testing.assert_close(cls.weight[2].detach(), expected)

    def test_random_and_replace_rows(self) -> None:
        """Should keep random rows unit-norm and replace only the given rows."""
        generator = torch.Generator().manual_seed(0)
        cls = random_classifier(5, 8, generator)
        before = cls.weight.detach().clone()
        replace_rows(cls, [1, 3], generator)
        after = cls.weight.detach()
        torch.testing.assert_close(after[[0, 2, 4]], before[[0, 2, 4]])
        assert not torch.equal(after[1], before[1])
        torch.testing.assert_close(
            torch.linalg.vector_norm(after, dim=-1), torch.ones(5), atol=1e-6, rtol=0
        )


class TestMimicLoss:
    """Tests for mimic_loss() and TeacherEmbedding."""

    def test_zero_when_mean_matches(self) -> None:
        """Should be zero when the mean query feature equals the teacher."""
        teacher = torch.tensor([0.6, 0.8])
        features = torch.tensor([[0.5, 0.9], [0.7, 0.7]])
        assert float(mimic_loss(teacher, features)) == pytest.approx(0.0, abs=1e-7)

    @pytest.mark.parametrize(
        ("norm", "expected"),
        [(MimicNorm.L1, 0.5), (MimicNorm.L2, 0.5), (MimicNorm.L1_L2, 1.0)],
    )
    def test_norms(self, norm: MimicNorm, expected: float) -> None:
        """Should average L1, L2 or both over dimensions."""
        teacher = torch.tensor([1.0, 0.0])
        features = torch.tensor([[0.0, 0.0]])
        assert float(mimic_loss(teacher, features, norm)) == pytest.approx(expected)

    def test_batched(self) -> None:
        """Should average per-sample distances over the batch."""
        teacher = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
        features = torch.zeros(2, 3, 2)
        assert float(mimic_loss(teacher, features)) == pytest.approx(0.5)

    def test_shape_mismatch(self) -> None:
        """Should raise ShapeError for mismatched dimensions."""
        with pytest.raises(ShapeError):
            mimic_loss(torch.ones(3), torch.ones(4, 2))

    def test_teacher_must_be_unit_norm(self) -> None:
        """Should reject non-unit teacher vectors."""
        with pytest.raises(ShapeError):
            TeacherEmbedding(vector=np.array([1.0, 1.0]))
