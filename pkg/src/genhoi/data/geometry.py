"""Verb geometry predicates and pair placement for the synthetic generator.

Every predicate is expressed relative to box sizes, so uniform rescaling keeps
labels valid and horizontal flips only swap the two adjacency rules.
"""

from __future__ import annotations

from enum import StrEnum

import numpy as np

from genhoi.config import GeometryRules

Box = tuple[float, float, float, float]


class RuleKind(StrEnum):
    OVERLAP = "overlap"
    ABOVE = "above"
    ADJACENT_LEFT = "adjacent_left"
    ADJACENT_RIGHT = "adjacent_right"
    FAR = "far"


MIRRORED: dict[RuleKind, RuleKind] = {
    RuleKind.OVERLAP: RuleKind.OVERLAP,
    RuleKind.ABOVE: RuleKind.ABOVE,
    RuleKind.ADJACENT_LEFT: RuleKind.ADJACENT_RIGHT,
    RuleKind.ADJACENT_RIGHT: RuleKind.ADJACENT_LEFT,
    RuleKind.FAR: RuleKind.FAR,
}

PERSON_WIDTH = (8, 12)
PERSON_HEIGHT = (16, 24)
OBJECT_SIZE = (8, 14)


class PlacementRejected(Exception):
    """A sampled configuration violated its target rule or the image bounds."""


def _size(box: Box) -> tuple[float, float]:
    return box[2] - box[0], box[3] - box[1]


def _center(box: Box) -> tuple[float, float]:
    return (box[0] + box[2]) / 2, (box[1] + box[3]) / 2


def intersection_area(a: Box, b: Box) -> float:
    w = min(a[2], b[2]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[1], b[1])
    return max(w, 0.0) * max(h, 0.0)


def box_distance(a: Box, b: Box) -> float:
    dx = max(0.0, b[0] - a[2], a[0] - b[2])
    dy = max(0.0, b[1] - a[3], a[1] - b[3])
    return float(np.hypot(dx, dy))


def rule_holds(kind: RuleKind, human: Box, obj: Box, rules: GeometryRules) -> bool:
    hw, hh = _size(human)
    ow, oh = _size(obj)
    hcx, hcy = _center(human)
    ocx, ocy = _center(obj)
    if kind is RuleKind.OVERLAP:
        return intersection_area(human, obj) / (ow * oh) >= rules.hold_overlap
    if kind is RuleKind.ABOVE:
        return (
            hcy < ocy
            and abs(hcx - ocx) <= rules.ride_alignment * ow
            and abs(human[3] - obj[1]) <= rules.ride_contact * oh
        )
    if kind is RuleKind.ADJACENT_LEFT:
        gap = obj[0] - human[2]
        aligned = abs(hcy - ocy) <= rules.vertical_alignment * hh
        return 0 <= gap <= rules.adjacent_gap * ow and aligned
    if kind is RuleKind.ADJACENT_RIGHT:
        gap = human[0] - obj[2]
        aligned = abs(hcy - ocy) <= rules.vertical_alignment * hh
        return 0 <= gap <= rules.adjacent_gap * ow and aligned
    return box_distance(human, obj) > rules.far_factor * max(ow, oh)


def in_bounds(box: Box, width: int, height: int) -> bool:
    return 0 <= box[0] < box[2] <= width and 0 <= box[1] < box[3] <= height


def place_pair(
    kind: RuleKind,
    rng: np.random.Generator,
    image_size: int,
    rules: GeometryRules,
) -> tuple[Box, Box]:
    """Sample integer (human, object) boxes aimed at ``kind``.

    Raises:
        PlacementRejected: If the sample misses the rule or leaves the image.
    """
    hw = int(rng.integers(PERSON_WIDTH[0], PERSON_WIDTH[1] + 1))
    hh = int(rng.integers(PERSON_HEIGHT[0], PERSON_HEIGHT[1] + 1))
    s = int(rng.integers(OBJECT_SIZE[0], OBJECT_SIZE[1] + 1))

    if kind is RuleKind.FAR:
        hx = int(rng.integers(0, image_size - hw + 1))
        hy = int(rng.integers(0, image_size - hh + 1))
        ox = int(rng.integers(0, image_size - s + 1))
        oy = int(rng.integers(0, image_size - s + 1))
        human: Box = (hx, hy, hx + hw, hy + hh)
        obj: Box = (ox, oy, ox + s, oy + s)
    elif kind is RuleKind.OVERLAP:
        hx = int(rng.integers(0, image_size - hw + 1))
        hy = int(rng.integers(0, image_size - hh + 1))
        human = (hx, hy, hx + hw, hy + hh)
        ocx = hx + hw / 2 + rng.uniform(-0.5, 0.5) * hw / 2
        ocy = hy + hh / 2 + rng.uniform(0.0, 0.25) * hh
        ox, oy = round(ocx - s / 2), round(ocy - s / 2)
        obj = (ox, oy, ox + s, oy + s)
    elif kind is RuleKind.ABOVE:
        ox = int(rng.integers(0, image_size - s + 1))
        oy = int(rng.integers(0, image_size - s + 1))
        obj = (ox, oy, ox + s, oy + s)
        hcx = ox + s / 2 + rng.uniform(-0.4, 0.4) * s
        contact = int(rng.integers(-int(0.2 * s), int(0.2 * s) + 1))
        hx = round(hcx - hw / 2)
        y2 = oy + contact
        human = (hx, y2 - hh, hx + hw, y2)
    else:
        max_gap = int(rules.adjacent_gap * s * 0.9)
        gap = int(rng.integers(0, max_gap + 1))
        hx = int(rng.integers(0, image_size - hw + 1))
        hy = int(rng.integers(0, image_size - hh + 1))
        human = (hx, hy, hx + hw, hy + hh)
        ocy = hy + hh / 2 + rng.uniform(-0.2, 0.2) * hh
        oy = round(ocy - s / 2)
        ox = hx + hw + gap if kind is RuleKind.ADJACENT_LEFT else hx - gap - s
        obj = (ox, oy, ox + s, oy + s)

    human = tuple(float(v) for v in human)  # type: ignore[assignment]
    obj = tuple(float(v) for v in obj)  # type: ignore[assignment]
    if not (in_bounds(human, image_size, image_size) and in_bounds(obj, image_size, image_size)):
        raise PlacementRejected(f"{kind.value} pair left the image")
    if not rule_holds(kind, human, obj, rules):
        raise PlacementRejected(f"{kind.value} pair missed its rule")
    return human, obj


def union_box(a: Box, b: Box) -> Box:
    return (min(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), max(a[3], b[3]))
