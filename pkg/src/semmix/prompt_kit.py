"""Aspect prompt templates, caption validation, and prompt statistics.

Six aspects x two families. Templates ship as editable text assets under
``semmix/templates/<aspect>.<family>.txt`` so wording experiments don't
require code changes. Focused templates constrain the model to on-screen
evidence (and, for SoundSources, permit abstention with the literal token
``none``); Minimal templates are maximally terse.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from enum import Enum
from importlib import resources

from .errors import DataError, ValidationError

log = logging.getLogger("semmix.prompt_kit")

ABSTAIN_TOKEN = "none"
DEFAULT_MAX_WORDS = 64


class AspectId(str, Enum):
    Emotion = "Emotion"
    Objects = "Objects"
    Scene = "Scene"
    Tone = "Tone"
    SoundSources = "SoundSources"
    CameraFocus = "CameraFocus"


class PromptFamily(str, Enum):
    Focused = "Focused"
    Minimal = "Minimal"


ALL_ASPECTS = tuple(AspectId)
ALL_FAMILIES = tuple(PromptFamily)


def template_name(aspect: AspectId, family: PromptFamily) -> str:
    return f"{AspectId(aspect).value}.{PromptFamily(family).value}.txt"


def render_prompt(aspect: AspectId, family: PromptFamily) -> str:
    """Load the template text verbatim; same inputs give identical bytes."""
    ref = resources.files("semmix").joinpath("templates", template_name(aspect, family))
    return ref.read_text(encoding="utf-8")


def abstention_allowed(aspect: AspectId, family: PromptFamily) -> bool:
    """Only (SoundSources, Focused) prescribes the abstention token."""
    return aspect == AspectId.SoundSources and family == PromptFamily.Focused


@dataclass(frozen=True)
class CaptionLimits:
    max_words: int = DEFAULT_MAX_WORDS


@dataclass(frozen=True)
class Caption:
    """One validated model output for a (clip, aspect, family) cell.

    ``truncated`` is validation metadata and is not serialized.
    """

    clip_id: str
    aspect: AspectId
    family: PromptFamily
    text: str
    abstained: bool = False
    truncated: bool = False

    def __post_init__(self):
        if self.abstained and self.text != ABSTAIN_TOKEN:
            raise ValidationError(
                f"abstained caption must carry the literal token "
                f"{ABSTAIN_TOKEN!r}, got {self.text!r}"
            )
        if not self.abstained and not self.text:
            raise ValidationError("non-abstained caption text must be nonempty")

    def to_dict(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "aspect": AspectId(self.aspect).value,
            "family": PromptFamily(self.family).value,
            "text": self.text,
            "abstained": self.abstained,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Caption":
        try:
            return cls(d["clip_id"], AspectId(d["aspect"]),
                       PromptFamily(d["family"]), d["text"], d["abstained"])
        except (KeyError, ValueError) as e:
            raise ValidationError(f"bad caption record {d!r}: {e}")


def validate_caption(raw: str, aspect: AspectId, family: PromptFamily,
                     limits: CaptionLimits | None = None,
                     clip_id: str = "") -> Caption:
    """Normalize a raw model output into a Caption.

    Trims whitespace, caps the word count (truncating at a word boundary and
    flagging it), detects abstention for (SoundSources, Focused), and reduces
    Objects output to a comma-separated noun list. Idempotent: validating an
    already-validated text changes nothing.
    """
    limits = limits or CaptionLimits()
    text = raw.strip()
    if not text:
        raise ValidationError(f"empty caption for ({aspect}, {family})")

    if text.lower() == ABSTAIN_TOKEN:
        if abstention_allowed(aspect, family):
            return Caption(clip_id, aspect, family, ABSTAIN_TOKEN, abstained=True)
        # abstention token where the family does not prescribe it: flagged,
        # kept as ordinary text
        log.warning("abstention token under (%s, %s) where it is not "
                    "prescribed; keeping as text",
                    AspectId(aspect).value, PromptFamily(family).value)

    if aspect == AspectId.Objects:
        parts = [p.strip() for p in text.replace("\n", ",").split(",")]
        text = ", ".join(p for p in parts if p)
        if not text:
            raise ValidationError("objects caption reduced to an empty list")

    truncated = False
    words = text.split()
    if len(words) > limits.max_words:
        text = " ".join(words[: limits.max_words])
        truncated = True

    return Caption(clip_id, aspect, family, text, abstained=False,
                   truncated=truncated)


# ---------------------------------------------------------------------------
# caption files (JSON lines, one object per clip/aspect/family)
# ---------------------------------------------------------------------------

def save_captions(path, captions: list[Caption]) -> None:
    with open(path, "w") as fh:
        for c in captions:
            fh.write(json.dumps(c.to_dict()) + "\n")


def load_captions(path) -> list[Caption]:
    out = []
    with open(path) as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{path}:{i + 1}: bad JSON: {e}")
            out.append(Caption.from_dict(d))
    return out


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PromptStats:
    count: int
    mean_words: float
    max_words: int
    abstention_rate: float


def prompt_stats(captions: list[Caption]) -> dict[tuple[AspectId, PromptFamily], PromptStats]:
    """Per (aspect, family): count, mean/max word length, abstention rate."""
    if not captions:
        raise DataError("cannot compute statistics of an empty caption set")
    groups: dict[tuple[AspectId, PromptFamily], list[Caption]] = {}
    for c in captions:
        groups.setdefault((AspectId(c.aspect), PromptFamily(c.family)), []).append(c)
    out = {}
    for key, members in groups.items():
        lengths = [len(c.text.split()) for c in members]
        abstained = sum(1 for c in members if c.abstained)
        out[key] = PromptStats(
            count=len(members),
            mean_words=sum(lengths) / len(lengths),
            max_words=max(lengths),
            abstention_rate=abstained / len(members),
        )
    return out


def render_stats_table(stats: dict[tuple[AspectId, PromptFamily], PromptStats]) -> str:
    """Per-cell statistics plus a Focused-vs-Minimal mean-length comparison."""
    lines = [f"{'Aspect':<14}{'Family':<10}{'Count':>6}{'MeanWords':>11}"
             f"{'MaxWords':>10}{'Abstain':>9}"]
    for (aspect, family), s in sorted(
            stats.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)):
        lines.append(f"{aspect.value:<14}{family.value:<10}{s.count:>6}"
                     f"{s.mean_words:>11.2f}{s.max_words:>10}"
                     f"{s.abstention_rate:>9.2f}")
    for family in ALL_FAMILIES:
        cells = [s for (a, f), s in stats.items() if f == family]
        if cells:
            total = sum(s.count for s in cells)
            mean = sum(s.mean_words * s.count for s in cells) / total
            lines.append(f"{family.value} family mean words: {mean:.2f}")
    return "\n".join(lines)
