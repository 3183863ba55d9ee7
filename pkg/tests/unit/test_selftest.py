"""Unit tests for the oracle suites and the reference implementations."""

from __future__ import annotations

import pytest

from genhoi.label_space import LabelSpace
from genhoi.oracles import (
    composition_error,
    cosine_scale_error,
    expansion_gather_exact,
    frozen_classifier_unchanged,
    mimic_zero_at_match,
    reference_iou,
)
from genhoi.selftest import SUITES, SuiteResult, run_selftest


class TestOracles:
    """Tests for the reference checks."""

    def test_reference_iou(self) -> None:
        """Should compute plain box IoU."""
        assert reference_iou((0, 0, 10, 10), (0, 0, 10, 5)) == pytest.approx(0.5)
        assert reference_iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0

    def test_exact_identities(self, toy_ls: LabelSpace) -> None:
        """Should hold the composition, gather and mimic identities exactly."""
        assert composition_error(toy_ls) == 0.0
        assert expansion_gather_exact(toy_ls)
        assert mimic_zero_at_match() == 0.0

    def test_cosine_scale(self) -> None:
        """Should make cosine scores invariant to feature scale."""
        assert cosine_scale_error() <= 1e-6

    def test_frozen_classifier(self) -> None:
        """Should leave frozen classifier rows untouched by training."""
        assert frozen_classifier_unchanged()


class TestRunSelftest:
    """Tests for run_selftest()."""

    @pytest.mark.parametrize("name", ["hungarian", "evaluator", "splits"])
    def test_fast_suites_pass(self, name: str) -> None:
        """Should pass the fast suites."""
        (result,) = run_selftest([name])
        assert result.passed, result.detail
        assert result.seconds >= 0.0

    def test_invariants_suite(self) -> None:
        """Should hold every structural invariant."""
        (result,) = run_selftest(["invariants"])
        assert result.passed, result.detail

    def test_raising_suite_fails(self, monkeypatch: pytest.MonkeyPatch) -> None:
        """Should report a suite that raises as failed instead of propagating."""

        def boom() -> SuiteResult:
            raise RuntimeError("bad")

        monkeypatch.setitem(SUITES, "hungarian", boom)
        (result,) = run_selftest(["hungarian"])
        assert not result.passed
        assert "RuntimeError" in result.detail

    @pytest.mark.slow
    def test_sampled_gradcheck(self) -> None:
        """Should agree with central differences on sampled entries."""
        (result,) = run_selftest(["gradcheck"])
        assert result.passed, result.detail
