"""Toy taxonomy: 4 objects x 5 verbs with 12 valid triplets, plus glyph styles."""

from __future__ import annotations

import colorsys
from dataclasses import dataclass

from genhoi.label_space import (
    LabelSpace,
    ObjectRecord,
    TripletRecord,
    VerbRecord,
    build_label_space,
)

TOY_OBJECTS: tuple[tuple[str, str], ...] = (
    ("ball", "a"),
    ("box", "a"),
    ("umbrella", "an"),
    ("apple", "an"),
)

TOY_VERBS: tuple[tuple[str, str | None], ...] = (
    ("hold", "holding"),
    ("ride", "riding"),
    ("push", "pushing"),
    ("pull", "pulling"),
    ("no_interaction", None),
)

# (verb, object) in HOI id order; not fully crossed so unseen compositions exist.
TOY_TRIPLETS: tuple[tuple[str, str], ...] = (
    ("hold", "ball"),
    ("push", "ball"),
    ("no_interaction", "ball"),
    ("ride", "box"),
    ("push", "box"),
    ("pull", "box"),
    ("no_interaction", "box"),
    ("hold", "umbrella"),
    ("pull", "umbrella"),
    ("no_interaction", "umbrella"),
    ("hold", "apple"),
    ("no_interaction", "apple"),
)

SHAPES = ("circle", "square", "triangle", "diamond")

TOY_GLYPHS: dict[str, tuple[str, tuple[int, int, int]]] = {
    "ball": ("circle", (40, 90, 220)),
    "box": ("square", (150, 100, 40)),
    "umbrella": ("triangle", (30, 160, 60)),
    "apple": ("diamond", (230, 170, 20)),
}

PERSON_COLOR = (200, 40, 40)


@dataclass(frozen=True)
class Glyph:
    shape: str
    color: tuple[int, int, int]


def toy_label_space() -> LabelSpace:
    objects = [ObjectRecord(i, name, article) for i, (name, article) in enumerate(TOY_OBJECTS)]
    verbs = [
        VerbRecord(i, name, gerund, is_no_interaction=gerund is None)
        for i, (name, gerund) in enumerate(TOY_VERBS)
    ]
    object_ids = {o.name: o.id for o in objects}
    verb_ids = {v.name: v.id for v in verbs}
    triplets = [
        TripletRecord(i, verb_ids[v], object_ids[o]) for i, (v, o) in enumerate(TOY_TRIPLETS)
    ]
    return build_label_space(objects, verbs, triplets, name="toy")


def glyph_for(ls: LabelSpace, object_id: int) -> Glyph:
    """Shape and colour of an object glyph; non-toy objects cycle through shapes and hues."""
    name = ls.objects[object_id].name
    if name in TOY_GLYPHS:
        shape, color = TOY_GLYPHS[name]
        return Glyph(shape, color)
    hue = (object_id * 0.618034) % 1.0
    r, g, b = colorsys.hsv_to_rgb(hue, 0.75, 0.85)
    return Glyph(SHAPES[object_id % len(SHAPES)], (int(r * 255), int(g * 255), int(b * 255)))
