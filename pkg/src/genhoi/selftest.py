"""Oracle suites run by ``genhoi selftest``."""

from __future__ import annotations

import time
from collections.abc import Callable
from dataclasses import dataclass

import torch

from genhoi.config import ZeroShotSetting
from genhoi.data.toy import toy_label_space
from genhoi.embeddings.providers import SyntheticTextProvider
from genhoi.evaluation import evaluate
from genhoi.label_space import load_hico_label_space, make_zero_shot_split, rare_split
from genhoi.model.gen import build_model
from genhoi.oracles import (
    brute_force_assignment,
    composition_error,
    cosine_scale_error,
    expansion_gather_exact,
    frozen_classifier_unchanged,
    gradcheck_total_loss,
    ige_identity_error,
    mimic_zero_at_match,
    permutation_equivariance_error,
    random_cost_matrices,
    random_scenes,
    reference_evaluate,
    tiny_config,
)
from genhoi.training.matcher import hungarian_match
from genhoi.utils.logging import get_logger

logger = get_logger(__name__)

GRADCHECK_TOLERANCE = 1e-4
EQUIVARIANCE_TOLERANCE = 1e-5
COSINE_TOLERANCE = 1e-6
EVALUATOR_TOLERANCE = 1e-9


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def hungarian_suite(trials: int = 200, seed: int = 0) -> SuiteResult:
    failures = 0
    for cost in random_cost_matrices(trials, max_size=7, seed=seed):
        if hungarian_match(cost).total_cost != brute_force_assignment(cost):
            failures += 1
    return SuiteResult(
        "hungarian", failures == 0, f"{trials - failures}/{trials} match the exhaustive minimum"
    )


def evaluator_suite(seed: int = 0) -> SuiteResult:
    ls = toy_label_space()
    manifest, detections = random_scenes(ls, n_images=20, seed=seed)
    report = evaluate(detections, manifest, ls)
    reference = reference_evaluate(detections, manifest, ls.num_triplets)
    worst = 0.0
    for ours, theirs in zip(report.per_hoi_ap, reference, strict=True):
        if (ours is None) != (theirs is None):
            return SuiteResult("evaluator", False, "categories excluded differently")
        if ours is not None and theirs is not None:
            worst = max(worst, abs(ours - theirs))
    return SuiteResult(
        "evaluator", worst <= EVALUATOR_TOLERANCE, f"max |AP - reference| = {worst:.2e}"
    )


def gradient_suite(seed: int = 0, max_entries_per_tensor: int | None = 32) -> SuiteResult:
    result = gradcheck_total_loss(seed=seed, max_entries_per_tensor=max_entries_per_tensor)
    return SuiteResult(
        "gradcheck",
        result.max_relative_error < GRADCHECK_TOLERANCE,
        f"max relative error {result.max_relative_error:.2e} over {result.entries} entries "
        f"(worst: {result.worst_parameter})",
    )


def invariants_suite(seed: int = 0) -> SuiteResult:
    ls = toy_label_space()
    config = tiny_config(seed)
    provider = SyntheticTextProvider.from_config(config.embedding)
    model = build_model(config, ls, provider).eval()
    generator = torch.Generator().manual_seed(seed)
    images = torch.rand(2, 3, 16, 16, generator=generator)
    perm = torch.randperm(config.model.num_queries, generator=generator)

    checks: dict[str, bool] = {
        "i-GE identity": ige_identity_error(model, images) == 0.0,
        "query permutation": permutation_equivariance_error(model, images, perm)
        <= EQUIVARIANCE_TOLERANCE,
        "score composition": composition_error(ls, seed) == 0.0,
        "expansion gather": expansion_gather_exact(ls, seed),
        "frozen classifier": frozen_classifier_unchanged(seed),
        "mimic zero at match": mimic_zero_at_match(seed=seed) == 0.0,
        "cosine scale": cosine_scale_error(seed=seed) <= COSINE_TOLERANCE,
    }
    failed = [name for name, ok in checks.items() if not ok]
    detail = f"{len(checks) - len(failed)}/{len(checks)} hold"
    if failed:
        detail += f"; failed: {', '.join(failed)}"
    return SuiteResult("invariants", not failed, detail)


def split_suite() -> SuiteResult:
    ls = load_hico_label_space()
    expected = {
        ZeroShotSetting.RF_UC: 120,
        ZeroShotSetting.NF_UC: 120,
        ZeroShotSetting.UO: 100,
        ZeroShotSetting.UV: 84,
    }
    wrong = []
    for setting, n_unseen in expected.items():
        split = make_zero_shot_split(ls, setting)
        if len(split.unseen) != n_unseen or len(split.seen) != ls.num_triplets - n_unseen:
            wrong.append(f"{setting}={len(split.unseen)}")
    assert ls.train_counts is not None
    rare, _ = rare_split(ls.train_counts)
    if len(rare) != 138:
        wrong.append(f"rare={len(rare)}")
    detail = "RF-UC/NF-UC 120, UO 100, UV 84, rare 138"
    return SuiteResult("splits", not wrong, detail if not wrong else "; ".join(wrong))


SUITES: dict[str, Callable[[], SuiteResult]] = {
    "hungarian": hungarian_suite,
    "evaluator": evaluator_suite,
    "gradcheck": gradient_suite,
    "invariants": invariants_suite,
    "splits": split_suite,
}


def run_selftest(
    names: list[str] | None = None, *, full_gradcheck: bool = False
) -> list[SuiteResult]:
    """Run the named suites (all by default); a raising suite counts as failed."""
    results = []
    for name in names or list(SUITES):
        start = time.perf_counter()
        try:
            if name == "gradcheck" and full_gradcheck:
                result = gradient_suite(max_entries_per_tensor=None)
            else:
                result = SUITES[name]()
        except Exception as e:
            logger.exception("Suite %s raised", name)
            result = SuiteResult(name, False, f"{type(e).__name__}: {e}")
        result.seconds = time.perf_counter() - start
        logger.info("Suite %s: %s", name, "pass" if result.passed else "FAIL")
        results.append(result)
    return results
