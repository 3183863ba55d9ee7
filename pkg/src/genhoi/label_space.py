"""HOI taxonomy: objects, verbs, triplets, index maps, rarity and zero-shot splits."""

from __future__ import annotations

import json
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Any, TypeVar

import numpy as np
import torch

from genhoi.config import ZeroShotSetting
from genhoi.errors import LabelSpaceError, ShapeError, SplitError
from genhoi.utils.logging import get_logger

logger = get_logger(__name__)

RARE_THRESHOLD = 10

ScoreArray = TypeVar("ScoreArray", np.ndarray, torch.Tensor)


@dataclass(frozen=True)
class ObjectRecord:
    id: int
    name: str
    article: str = "a"


@dataclass(frozen=True)
class VerbRecord:
    id: int
    name: str
    gerund: str | None = None
    is_no_interaction: bool = False


@dataclass(frozen=True)
class TripletRecord:
    id: int
    verb_id: int
    object_id: int


@dataclass(frozen=True)
class LabelSpace:
    """Validated HOI taxonomy. Build it with ``build_label_space``."""

    objects: tuple[ObjectRecord, ...]
    verbs: tuple[VerbRecord, ...]
    triplets: tuple[TripletRecord, ...]
    train_counts: tuple[int, ...] | None = None
    unseen_objects: tuple[int, ...] = ()
    unseen_verbs: tuple[int, ...] = ()
    name: str = "custom"

    @property
    def num_objects(self) -> int:
        return len(self.objects)

    @property
    def num_verbs(self) -> int:
        return len(self.verbs)

    @property
    def num_triplets(self) -> int:
        return len(self.triplets)

    @cached_property
    def expansion_map(self) -> tuple[int, ...]:
        """Object id of every HOI id."""
        return tuple(t.object_id for t in self.triplets)

    @cached_property
    def verb_map(self) -> tuple[int, ...]:
        """Verb id of every HOI id."""
        return tuple(t.verb_id for t in self.triplets)

    @cached_property
    def triplet_index(self) -> dict[tuple[int, int], int]:
        return {(t.verb_id, t.object_id): t.id for t in self.triplets}

    @cached_property
    def triplets_of_object(self) -> dict[int, tuple[int, ...]]:
        out: dict[int, list[int]] = {o.id: [] for o in self.objects}
        for t in self.triplets:
            out[t.object_id].append(t.id)
        return {k: tuple(v) for k, v in out.items()}

    @cached_property
    def triplets_of_verb(self) -> dict[int, tuple[int, ...]]:
        out: dict[int, list[int]] = {v.id: [] for v in self.verbs}
        for t in self.triplets:
            out[t.verb_id].append(t.id)
        return {k: tuple(v) for k, v in out.items()}

    def object_by_name(self, name: str) -> ObjectRecord:
        for o in self.objects:
            if o.name == name:
                return o
        raise LabelSpaceError(f"Unknown object name: {name!r}", offender=name)

    def verb_by_name(self, name: str) -> VerbRecord:
        for v in self.verbs:
            if v.name == name:
                return v
        raise LabelSpaceError(f"Unknown verb name: {name!r}", offender=name)

    def triplet_id(self, verb: str, obj: str) -> int:
        key = (self.verb_by_name(verb).id, self.object_by_name(obj).id)
        if key not in self.triplet_index:
            raise LabelSpaceError(f"No triplet ({verb}, {obj})", offender=key)
        return self.triplet_index[key]

    def describe(self, hoi_id: int) -> str:
        t = self.triplets[hoi_id]
        return f"{self.verbs[t.verb_id].name} {self.objects[t.object_id].name}"

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "name": self.name,
            "objects": [
                {"id": o.id, "name": o.name, "article": o.article} for o in self.objects
            ],
            "verbs": [
                {
                    "id": v.id,
                    "name": v.name,
                    "gerund": v.gerund,
                    "is_no_interaction": v.is_no_interaction,
                }
                for v in self.verbs
            ],
            "triplets": [
                {"id": t.id, "verb_id": t.verb_id, "object_id": t.object_id}
                for t in self.triplets
            ],
        }
        if self.train_counts is not None:
            data["train_counts"] = list(self.train_counts)
        if self.unseen_objects or self.unseen_verbs:
            data["zero_shot"] = {
                "unseen_objects": list(self.unseen_objects),
                "unseen_verbs": list(self.unseen_verbs),
            }
        return data


def _check_ids(kind: str, ids: Sequence[int]) -> None:
    for position, record_id in enumerate(ids):
        if record_id != position:
            raise LabelSpaceError(
                f"{kind} id {record_id} at position {position}: ids must be 0..n-1 in order",
                offender=record_id,
            )


def _check_unique_names(kind: str, names: Iterable[str]) -> None:
    seen: set[str] = set()
    for name in names:
        if name in seen:
            raise LabelSpaceError(f"Duplicate {kind} name: {name!r}", offender=name)
        seen.add(name)


def build_label_space(
    objects: Sequence[ObjectRecord],
    verbs: Sequence[VerbRecord],
    triplets: Sequence[TripletRecord],
    *,
    train_counts: Sequence[int] | None = None,
    unseen_objects: Sequence[int] = (),
    unseen_verbs: Sequence[int] = (),
    name: str = "custom",
) -> LabelSpace:
    """Validate records and assemble a LabelSpace.

    Raises:
        LabelSpaceError: On empty lists, duplicate names or pairs, non-contiguous
            ids, dangling verb/object references or a bad article.
    """
    if not objects or not verbs or not triplets:
        raise LabelSpaceError("objects, verbs and triplets must all be non-empty")

    _check_ids("object", [o.id for o in objects])
    _check_ids("verb", [v.id for v in verbs])
    _check_ids("triplet", [t.id for t in triplets])
    _check_unique_names("object", (o.name for o in objects))
    _check_unique_names("verb", (v.name for v in verbs))

    for o in objects:
        if o.article not in ("a", "an"):
            raise LabelSpaceError(
                f"Object {o.name!r} has article {o.article!r}; expected 'a' or 'an'",
                offender=o.name,
            )

    pairs: set[tuple[int, int]] = set()
    for t in triplets:
        if not 0 <= t.verb_id < len(verbs):
            raise LabelSpaceError(
                f"Triplet {t.id} references unknown verb_id {t.verb_id}", offender=t.verb_id
            )
        if not 0 <= t.object_id < len(objects):
            raise LabelSpaceError(
                f"Triplet {t.id} references unknown object_id {t.object_id}",
                offender=t.object_id,
            )
        pair = (t.verb_id, t.object_id)
        if pair in pairs:
            raise LabelSpaceError(f"Duplicate triplet (verb, object) pair {pair}", offender=pair)
        pairs.add(pair)

    if train_counts is not None and len(train_counts) != len(triplets):
        raise LabelSpaceError(
            f"train_counts has {len(train_counts)} entries for {len(triplets)} triplets"
        )
    for o_id in unseen_objects:
        if not 0 <= o_id < len(objects):
            raise LabelSpaceError(f"Unknown unseen object id {o_id}", offender=o_id)
    for v_id in unseen_verbs:
        if not 0 <= v_id < len(verbs):
            raise LabelSpaceError(f"Unknown unseen verb id {v_id}", offender=v_id)

    return LabelSpace(
        objects=tuple(objects),
        verbs=tuple(verbs),
        triplets=tuple(triplets),
        train_counts=tuple(int(c) for c in train_counts) if train_counts is not None else None,
        unseen_objects=tuple(unseen_objects),
        unseen_verbs=tuple(unseen_verbs),
        name=name,
    )


def label_space_from_dict(data: Mapping[str, Any]) -> LabelSpace:
    try:
        objects = [
            ObjectRecord(id=int(o["id"]), name=str(o["name"]), article=str(o.get("article", "a")))
            for o in data["objects"]
        ]
        verbs = [
            VerbRecord(
                id=int(v["id"]),
                name=str(v["name"]),
                gerund=v.get("gerund"),
                is_no_interaction=bool(v.get("is_no_interaction", False)),
            )
            for v in data["verbs"]
        ]
        triplets = [
            TripletRecord(id=int(t["id"]), verb_id=int(t["verb_id"]), object_id=int(t["object_id"]))
            for t in data["triplets"]
        ]
    except (KeyError, TypeError, ValueError) as e:
        raise LabelSpaceError(f"Malformed label-space data: {e}") from e
    zero_shot = data.get("zero_shot") or {}
    return build_label_space(
        objects,
        verbs,
        triplets,
        train_counts=data.get("train_counts"),
        unseen_objects=zero_shot.get("unseen_objects", ()),
        unseen_verbs=zero_shot.get("unseen_verbs", ()),
        name=str(data.get("name", "custom")),
    )


def load_label_space(path: Path) -> LabelSpace:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise LabelSpaceError(f"Cannot read label space {path}: {e}") from e
    return label_space_from_dict(data)


def save_label_space(ls: LabelSpace, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(ls.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_hico_label_space() -> LabelSpace:
    """The bundled HICO-Det taxonomy fixture (600 triplets, 80 objects, 117 verbs).

    Verb, object and triplet order follow the HICO-Det CLIP prompt table. The
    ``train_counts`` and the pinned unseen object and verb lists are surrogates
    that reproduce the published cardinalities, not the real annotation counts.
    """
    text = resources.files("genhoi.fixtures").joinpath("hico_label_space.json").read_text("utf-8")
    return label_space_from_dict(json.loads(text))


def resolve_label_space(spec: str) -> LabelSpace:
    """Resolve ``toy``, ``hico`` or a path to a label-space JSON file."""
    if spec == "hico":
        return load_hico_label_space()
    if spec == "toy":
        from genhoi.data.toy import toy_label_space

        return toy_label_space()
    return load_label_space(Path(spec))


def expand_object_scores(object_scores: ScoreArray, ls: LabelSpace) -> ScoreArray:
    """Copy each object's score to all of its triplets: ``out[..., h] = s[..., map[h]]``.

    Works on numpy arrays and torch tensors with the object axis last.

    Raises:
        ShapeError: If the last axis is not N_o long.
    """
    if object_scores.shape[-1] != ls.num_objects:
        raise ShapeError(
            f"Expected {ls.num_objects} object scores, got {object_scores.shape[-1]}"
        )
    if isinstance(object_scores, torch.Tensor):
        index = torch.as_tensor(ls.expansion_map, dtype=torch.long, device=object_scores.device)
        return object_scores.index_select(-1, index)
    return np.take(object_scores, np.asarray(ls.expansion_map, dtype=np.int64), axis=-1)


def expand_verb_scores(verb_scores: ScoreArray, ls: LabelSpace) -> ScoreArray:
    """Copy each verb's score to all of its triplets (verb-classifier mode)."""
    if verb_scores.shape[-1] != ls.num_verbs:
        raise ShapeError(f"Expected {ls.num_verbs} verb scores, got {verb_scores.shape[-1]}")
    if isinstance(verb_scores, torch.Tensor):
        index = torch.as_tensor(ls.verb_map, dtype=torch.long, device=verb_scores.device)
        return verb_scores.index_select(-1, index)
    return np.take(verb_scores, np.asarray(ls.verb_map, dtype=np.int64), axis=-1)


def rare_split(
    train_instance_counts: Sequence[int], threshold: int = RARE_THRESHOLD
) -> tuple[frozenset[int], frozenset[int]]:
    """Partition HOI ids into (rare, non_rare) by ``count < threshold``."""
    rare: set[int] = set()
    non_rare: set[int] = set()
    for hoi_id, count in enumerate(train_instance_counts):
        if count < 0:
            raise SplitError(f"Negative training count {count} for HOI {hoi_id}")
        (rare if count < threshold else non_rare).add(hoi_id)
    return frozenset(rare), frozenset(non_rare)


@dataclass(frozen=True)
class SplitSpec:
    """Seen/unseen and rare/non-rare partitions of the HOI ids.

    ``setting`` is one of the zero-shot settings, or ``"regular"`` for a
    rare-only split where every HOI is seen.
    """

    setting: str
    num_triplets: int
    seen: frozenset[int]
    unseen: frozenset[int]
    rare: frozenset[int] = field(default_factory=frozenset)
    non_rare: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        everything = frozenset(range(self.num_triplets))
        if self.seen | self.unseen != everything or self.seen & self.unseen:
            raise SplitError("seen and unseen must partition all HOI ids")
        if (self.rare or self.non_rare) and (
            self.rare | self.non_rare != everything or self.rare & self.non_rare
        ):
            raise SplitError("rare and non_rare must partition all HOI ids")

    @property
    def is_zero_shot(self) -> bool:
        return self.setting in {s.value for s in ZeroShotSetting}

    @property
    def seen_ids(self) -> list[int]:
        return sorted(self.seen)

    def to_dict(self) -> dict[str, Any]:
        return {
            "setting": self.setting,
            "num_triplets": self.num_triplets,
            "seen": sorted(self.seen),
            "unseen": sorted(self.unseen),
            "rare": sorted(self.rare),
            "non_rare": sorted(self.non_rare),
        }


def save_split(split: SplitSpec, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(split.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_split(path: Path, ls: LabelSpace | None = None) -> SplitSpec:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        seen = frozenset(int(h) for h in data["seen"])
        unseen = frozenset(int(h) for h in data["unseen"])
        num = int(data.get("num_triplets", len(seen) + len(unseen)))
        split = SplitSpec(
            setting=str(data["setting"]),
            num_triplets=num,
            seen=seen,
            unseen=unseen,
            rare=frozenset(int(h) for h in data.get("rare", [])),
            non_rare=frozenset(int(h) for h in data.get("non_rare", [])),
        )
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        if isinstance(e, SplitError):
            raise
        raise SplitError(f"Cannot read split {path}: {e}") from e
    if ls is not None and split.num_triplets != ls.num_triplets:
        raise SplitError(
            f"Split covers {split.num_triplets} HOIs but the label space has {ls.num_triplets}"
        )
    return split


def regular_split(ls: LabelSpace, train_counts: Sequence[int] | None = None) -> SplitSpec:
    """All HOIs seen; rare/non-rare from the training counts."""
    counts = train_counts if train_counts is not None else ls.train_counts
    rare, non_rare = rare_split(counts) if counts is not None else (frozenset(), frozenset())
    return SplitSpec(
        setting="regular",
        num_triplets=ls.num_triplets,
        seen=frozenset(range(ls.num_triplets)),
        unseen=frozenset(),
        rare=rare,
        non_rare=non_rare,
    )


def make_zero_shot_split(
    ls: LabelSpace,
    setting: ZeroShotSetting | str,
    *,
    n_unseen: int | None = None,
    unseen_objects: Sequence[int] | None = None,
    unseen_verbs: Sequence[int] | None = None,
    n_unseen_verbs: int | None = None,
    seed: int = 0,
    train_counts: Sequence[int] | None = None,
) -> SplitSpec:
    """Build one of the four zero-shot splits.

    - RF-UC: the ``n_unseen`` lowest-count HOIs are unseen.
    - NF-UC: the ``n_unseen`` highest-count HOIs are unseen.
    - UO: every HOI whose object is in ``unseen_objects`` is unseen.
    - UV: every HOI whose verb is in ``unseen_verbs`` is unseen.

    Count ties break by ascending HOI id. UO and UV fall back to the label space's
    pinned lists; UV with ``n_unseen_verbs`` instead draws that many interacting
    verbs with a generator seeded by ``seed``.

    Raises:
        SplitError: On inconsistent parameters, unknown ids or a too-large count.
    """
    try:
        setting = ZeroShotSetting(setting)
    except ValueError as e:
        raise SplitError(f"Unknown zero-shot setting: {setting!r}") from e

    counts = list(train_counts) if train_counts is not None else ls.train_counts
    if counts is not None and len(counts) != ls.num_triplets:
        raise SplitError(f"Expected {ls.num_triplets} training counts, got {len(counts)}")

    if setting in (ZeroShotSetting.RF_UC, ZeroShotSetting.NF_UC):
        if counts is None:
            raise SplitError(f"{setting.value} needs per-HOI training counts")
        n = 120 if n_unseen is None else n_unseen
        if n < 0 or n > ls.num_triplets:
            raise SplitError(
                f"Requested {n} unseen HOIs but the label space has {ls.num_triplets}"
            )
        if setting is ZeroShotSetting.RF_UC:
            order = sorted(range(ls.num_triplets), key=lambda h: (counts[h], h))
        else:
            order = sorted(range(ls.num_triplets), key=lambda h: (-counts[h], h))
        unseen = frozenset(order[:n])
    elif setting is ZeroShotSetting.UO:
        objects = list(unseen_objects) if unseen_objects is not None else list(ls.unseen_objects)
        if not objects:
            raise SplitError("UO needs a list of unseen objects")
        for o_id in objects:
            if not 0 <= o_id < ls.num_objects:
                raise SplitError(f"Unseen object id {o_id} is not in the label space")
        chosen = set(objects)
        unseen = frozenset(t.id for t in ls.triplets if t.object_id in chosen)
    else:
        if n_unseen_verbs is not None:
            candidates = [v.id for v in ls.verbs if not v.is_no_interaction]
            if n_unseen_verbs > len(candidates):
                raise SplitError(
                    f"Requested {n_unseen_verbs} unseen verbs but only {len(candidates)} exist"
                )
            rng = np.random.default_rng(seed)
            verbs = sorted(int(v) for v in rng.choice(candidates, n_unseen_verbs, replace=False))
        elif unseen_verbs is not None:
            verbs = list(unseen_verbs)
        else:
            verbs = list(ls.unseen_verbs)
        if not verbs:
            raise SplitError("UV needs a list of unseen verbs")
        for v_id in verbs:
            if not 0 <= v_id < ls.num_verbs:
                raise SplitError(f"Unseen verb id {v_id} is not in the label space")
        chosen = set(verbs)
        unseen = frozenset(t.id for t in ls.triplets if t.verb_id in chosen)

    rare, non_rare = rare_split(counts) if counts is not None else (frozenset(), frozenset())
    split = SplitSpec(
        setting=setting.value,
        num_triplets=ls.num_triplets,
        seen=frozenset(range(ls.num_triplets)) - unseen,
        unseen=unseen,
        rare=rare,
        non_rare=non_rare,
    )
    logger.info(
        "Built %s split: %d unseen / %d seen",
        setting.value,
        len(split.unseen),
        len(split.seen),
    )
    return split
