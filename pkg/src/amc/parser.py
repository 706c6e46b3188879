"""Screenplay parsing: raw script text to typed line elements and scenes.

Movie scripts follow a loose but recognizable layout: scene headings start
with INT. or EXT., speaker cues are short all-caps lines, and the dialogue
lines of a cue run until the next blank line. The rules here are purely
lexical so the whole pipeline stays deterministic and model-free.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum

from .errors import InputTooLarge

MAX_SCRIPT_BYTES = 16 * 1024 * 1024

BACKGROUND = "BACKGROUND"

HEADING_PREFIXES = ("INT.", "EXT.")

# Fixed transitions that do not end in "TO:".
_TRANSITION_WORDS = {
    "FADE IN:",
    "FADE OUT.",
    "FADE OUT:",
    "FADE TO BLACK.",
    "THE END",
}

_TRAILING_PAREN_RE = re.compile(r"\s*\([^()]*\)\s*$")
_WS_RE = re.compile(r"\s+")


class ElementKind(Enum):
    HEADING = "heading"
    ACTION = "action"
    SPEAKER_CUE = "speaker_cue"
    DIALOGUE_LINE = "dialogue_line"
    TRANSITION = "transition"
    BLANK = "blank"


@dataclass(frozen=True)
class ScriptElement:
    kind: ElementKind
    text: str
    line_no: int  # 1-based physical line


@dataclass(frozen=True)
class Utterance:
    speaker: str
    text: str
    is_background: bool = False


@dataclass
class Scene:
    heading: str
    index: int
    utterances: list[Utterance] = field(default_factory=list)


def _caps_ratio_ok(stripped: str) -> bool:
    """At least one letter and >= 80% of the letters uppercase."""
    letters = [c for c in stripped if c.isalpha()]
    if not letters:
        return False
    upper = sum(1 for c in letters if c.isupper())
    return upper / len(letters) >= 0.8


def _is_transition(stripped: str) -> bool:
    if not _caps_ratio_ok(stripped):
        return False
    upper = stripped.upper()
    return upper.endswith("TO:") or upper in _TRANSITION_WORDS


def classify_line(line: str, context: ElementKind | None = None) -> ElementKind:
    """Classify one physical script line given the previous line's kind.

    Total: never raises, every string maps to exactly one kind.
    """
    stripped = line.strip()
    if not stripped:
        return ElementKind.BLANK
    if stripped.upper().startswith(HEADING_PREFIXES):
        return ElementKind.HEADING
    if _is_transition(stripped):
        return ElementKind.TRANSITION
    if len(stripped) <= 40 and _caps_ratio_ok(stripped):
        return ElementKind.SPEAKER_CUE
    if context in (ElementKind.SPEAKER_CUE, ElementKind.DIALOGUE_LINE):
        return ElementKind.DIALOGUE_LINE
    return ElementKind.ACTION


def parse_script(text: str, max_bytes: int = MAX_SCRIPT_BYTES) -> list[ScriptElement]:
    """Turn raw script text into one element per physical line.

    Line endings may be LF or CRLF. Trailing whitespace is dropped from the
    stored text; otherwise concatenating the element texts (blanks included)
    reproduces the input.
    """
    if len(text.encode("utf-8", errors="replace")) > max_bytes:
        raise InputTooLarge(f"script exceeds {max_bytes} bytes")
    if not text:
        return []
    normalized = text.replace("\r\n", "\n").replace("\r", "\n")
    lines = normalized.split("\n")
    if normalized.endswith("\n"):
        lines = lines[:-1]

    elements: list[ScriptElement] = []
    context: ElementKind | None = None
    for i, line in enumerate(lines, start=1):
        kind = classify_line(line, context)
        elements.append(ScriptElement(kind, line.rstrip(), i))
        context = kind
    return elements


def canonical_speaker(cue_text: str) -> str:
    """Normalize a speaker cue to one canonical label.

    Uppercases, collapses internal whitespace, and strips trailing
    parenthetical annotations such as (V.O.), (O.S.) and (CONT'D) so the
    same character always maps to the same name.
    """
    name = cue_text.strip().upper()
    while True:
        shorter = _TRAILING_PAREN_RE.sub("", name)
        if shorter == name:
            break
        name = shorter
    name = _WS_RE.sub(" ", name).strip()
    return name if name else _WS_RE.sub(" ", cue_text.strip().upper())


def _normalize_text(text: str) -> str:
    return _WS_RE.sub(" ", text).strip()


def _collapse(elements: list[ScriptElement]) -> list[Utterance]:
    """Collapse a scene's elements into utterances.

    A SpeakerCue opens a dialogue utterance fed by the DialogueLines that
    follow it; each Action line becomes its own background utterance.
    Parenthetical lines inside a dialogue block stay in the dialogue text.
    """
    utterances: list[Utterance] = []
    speaker: str | None = None
    pending: list[str] = []

    def flush() -> None:
        nonlocal speaker, pending
        if speaker is not None and pending:
            text = _normalize_text(" ".join(pending))
            if text:
                utterances.append(Utterance(speaker, text, False))
        speaker = None
        pending = []

    for el in elements:
        if el.kind is ElementKind.SPEAKER_CUE:
            flush()
            speaker = canonical_speaker(el.text)
        elif el.kind is ElementKind.DIALOGUE_LINE:
            if speaker is None:
                # Orphan dialogue cannot come out of parse_script; keep the
                # text around as background rather than dropping it.
                text = _normalize_text(el.text)
                if text:
                    utterances.append(Utterance(BACKGROUND, text, True))
            else:
                pending.append(el.text)
        elif el.kind is ElementKind.ACTION:
            flush()
            text = _normalize_text(el.text)
            if text:
                utterances.append(Utterance(BACKGROUND, text, True))
        else:
            # Blank, Transition and Heading all end any open dialogue block.
            flush()
    flush()
    return utterances


def split_scenes(elements: list[ScriptElement]) -> list[Scene]:
    """Segment parsed elements into scenes at heading boundaries.

    Elements before the first heading become a front-matter scene with an
    empty heading when they contain at least one dialogue or action line.
    Scenes that collapse to zero utterances are dropped, and the surviving
    scenes are re-indexed 0..K-1.
    """
    buckets: list[tuple[str, list[ScriptElement]]] = []
    front: list[ScriptElement] = []
    current: list[ScriptElement] | None = None
    for el in elements:
        if el.kind is ElementKind.HEADING:
            current = []
            buckets.append((el.text.strip(), current))
        elif current is None:
            front.append(el)
        else:
            current.append(el)

    scenes: list[Scene] = []
    keep_front = any(
        el.kind in (ElementKind.DIALOGUE_LINE, ElementKind.ACTION) for el in front
    )
    if keep_front:
        utterances = _collapse(front)
        if utterances:
            scenes.append(Scene("", 0, utterances))
    for heading, body in buckets:
        utterances = _collapse(body)
        if utterances:
            scenes.append(Scene(heading, 0, utterances))

    for i, scene in enumerate(scenes):
        scene.index = i
    return scenes


def parse_movie(text: str, max_bytes: int = MAX_SCRIPT_BYTES) -> list[Scene]:
    """Convenience wrapper: raw text straight to scenes."""
    return split_scenes(parse_script(text, max_bytes=max_bytes))


def render_scenes(scenes: list[Scene]) -> str:
    """Canonical re-serialization of scenes back to script text.

    Parsing the rendered text again reproduces the scene count and the
    per-scene utterance counts.
    """
    lines: list[str] = []
    for scene in scenes:
        if scene.heading:
            lines.append(scene.heading)
            lines.append("")
        for ut in scene.utterances:
            if ut.is_background:
                lines.append(ut.text)
            else:
                lines.append(ut.speaker)
                lines.append(ut.text)
            lines.append("")
    return "\n".join(lines)


def movie_to_json(title: str, elements: list[ScriptElement], scenes: list[Scene]) -> dict:
    """JSON-ready form of one parsed movie (for the parse command's JSONL)."""
    return {
        "title": title,
        "elements": [
            {"kind": el.kind.value, "text": el.text, "line_no": el.line_no}
            for el in elements
        ],
        "scenes": [
            {
                "heading": sc.heading,
                "index": sc.index,
                "utterances": [
                    {"speaker": ut.speaker, "text": ut.text, "is_background": ut.is_background}
                    for ut in sc.utterances
                ],
            }
            for sc in scenes
        ],
    }


def scenes_from_json(obj: dict) -> list[Scene]:
    return [
        Scene(
            heading=sc["heading"],
            index=sc["index"],
            utterances=[
                Utterance(ut["speaker"], ut["text"], ut["is_background"])
                for ut in sc["utterances"]
            ],
        )
        for sc in obj["scenes"]
    ]
