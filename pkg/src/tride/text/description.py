"""The MLLM prompt and the five-paragraph scene description grammar.

A description is five paragraphs, each introduced by a dash.  The first is
a general overview (including weather); the other four describe the image
bands left, middle-left, middle-right and right.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from ..errors import ParseError

PROMPT = (
    "Describe the frame in five parts, and each part starts with a dash sign (-). "
    "The first part describes the image in general, including the weather conditions.\n"
    "The second to fifth parts describe the objects and estimate their depth "
    "(maximum 80 meters) in the right part, middle right part, middle left part, "
    "and left part of the image, respectively.\n"
)

LEFT_TO_RIGHT = "left_to_right"
RIGHT_TO_LEFT = "right_to_left"

# A dash opens a paragraph at the start of a line, or right after a sentence end.
_MARKER = re.compile(r"(?m)(?:^[ \t]*|(?<=[.!?])[ \t]+)-")
_SENTENCE_END = re.compile(r"[.!?]")


def render_prompt() -> str:
    return PROMPT


@dataclass
class SceneDescription:
    general: list[str]
    regional: list[list[str]]  # L, ML, MR, R

    def paragraphs(self) -> list[list[str]]:
        return [self.general, *self.regional]


def split_sentences(paragraph: str) -> list[str]:
    return [s.strip() for s in _SENTENCE_END.split(paragraph) if s.strip()]


def parse_description(text: str, order: str = LEFT_TO_RIGHT) -> SceneDescription:
    """Parse dash-led paragraphs into a :class:`SceneDescription`.

    ``order`` says how paragraphs 2-5 map onto bands; ``"right_to_left"``
    reads them as R, MR, ML, L.
    """
    if order not in (LEFT_TO_RIGHT, RIGHT_TO_LEFT):
        raise ValueError(f"unknown paragraph order {order!r}")
    starts = [m.end() for m in _MARKER.finditer(text)]
    if len(starts) != 5:
        raise ParseError(f"expected 5 dash paragraphs, got {len(starts)}")
    bounds = starts[1:] + [len(text) + 1]
    paragraphs = []
    for k, (lo, hi) in enumerate(zip(starts, bounds)):
        body = text[lo:hi - 1]
        sentences = split_sentences(body)
        if not sentences:
            raise ParseError(f"paragraph {k + 1} is empty")
        paragraphs.append(sentences)
    regional = paragraphs[1:]
    if order == RIGHT_TO_LEFT:
        regional = regional[::-1]
    return SceneDescription(paragraphs[0], regional)


def format_description(general: list[str], regional: list[list[str]]) -> str:
    """Inverse of :func:`parse_description` for left-to-right order."""
    lines = []
    for sentences in [general, *regional]:
        lines.append("- " + " ".join(s if s[-1] in ".!?" else s + "." for s in sentences))
    return "\n".join(lines) + "\n"
