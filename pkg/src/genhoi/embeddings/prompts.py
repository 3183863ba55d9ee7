"""Prompt templates for the text-embedding classifiers."""

from __future__ import annotations

from pathlib import Path

from genhoi.errors import PromptError
from genhoi.label_space import LabelSpace, ObjectRecord, VerbRecord

BACKGROUND_PROMPT = "A photo of an empty scene"


def hoi_prompt(verb: VerbRecord, obj: ObjectRecord) -> str:
    """``A photo of a person [Verb-ing] a/an [Object]``, or ``... person and a/an [Object]``."""
    if verb.is_no_interaction:
        return f"A photo of a person and {obj.article} {obj.name}"
    if not verb.gerund:
        raise PromptError(f"Verb {verb.name!r} has no gerund form")
    return f"A photo of a person {verb.gerund} {obj.article} {obj.name}"


def object_prompt(obj: ObjectRecord) -> str:
    return f"A photo of {obj.article} {obj.name}"


def hoi_prompts(ls: LabelSpace) -> list[str]:
    return [hoi_prompt(ls.verbs[t.verb_id], ls.objects[t.object_id]) for t in ls.triplets]


def object_prompts(ls: LabelSpace) -> list[str]:
    return [object_prompt(o) for o in ls.objects]


def write_prompts(prompts: list[str], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{p}\n" for p in prompts), encoding="utf-8")


def read_prompts(path: Path) -> list[str]:
    return [line for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
