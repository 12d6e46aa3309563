"""Question construction for the group-level and per-person prompt modes."""
from __future__ import annotations

import enum
import hashlib
import json
import warnings
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple

import yaml

from .annotator import SovImage
from .emotions import VOCABULARY
from .errors import ConfigError, UnknownFaceId


class PromptMode(str, enum.Enum):
    PLAIN = "plain"
    PER_PERSON = "per-person"


DEFAULT_TEMPLATES: Dict[str, str] = {
    "plain": ("How many visible faces are in this image? For each visible face, "
              "state its emotion, choosing one of: {vocab}."),
    "person": "What is Person {k}'s emotion? Answer as 'Person {k}: <label>'.",
    "vocab": "Use only these labels: {vocab}.",
}


@dataclass(frozen=True)
class PromptRequest:
    image: SovImage
    mode: PromptMode
    question: str
    target_ids: Optional[Tuple[int, ...]] = None
    emotion_vocabulary: Tuple[str, ...] = VOCABULARY

    def __post_init__(self):
        if self.mode is PromptMode.PER_PERSON:
            if not self.target_ids:
                raise ConfigError("per-person prompts need at least one target id")
            known = set(self.image.face_ids)
            unknown = [k for k in self.target_ids if k not in known]
            if unknown:
                raise UnknownFaceId(f"face ids {unknown} not rendered in image (have {sorted(known)})")

    def digest(self) -> str:
        payload = {
            "mode": self.mode.value,
            "question": self.question,
            "target_ids": list(self.target_ids) if self.target_ids else None,
            "vocabulary": list(self.emotion_vocabulary),
            "image": self.image.digest(),
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def load_templates(path) -> Dict[str, str]:
    """Read template overrides (YAML or JSON mapping) on top of the defaults."""
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path}: template file must hold a mapping")
    unknown = set(data) - set(DEFAULT_TEMPLATES)
    if unknown:
        raise ConfigError(f"{path}: unknown template keys {sorted(unknown)}")
    return {**DEFAULT_TEMPLATES, **{k: str(v) for k, v in data.items()}}


def _vocab(vocabulary: Sequence[str]) -> str:
    return ", ".join(vocabulary)


def build_plain(image: SovImage, question_override: Optional[str] = None, *,
                vocabulary: Sequence[str] = VOCABULARY,
                templates: Mapping[str, str] = DEFAULT_TEMPLATES) -> PromptRequest:
    if question_override is not None and not question_override.strip():
        warnings.warn("empty question override ignored; using the default template")
        question_override = None
    if question_override is not None:
        question = question_override
    else:
        question = templates["plain"].format(vocab=_vocab(vocabulary))
    return PromptRequest(image, PromptMode.PLAIN, question, None, tuple(vocabulary))


def build_per_person(image: SovImage, ids: Sequence[int], *,
                     vocabulary: Sequence[str] = VOCABULARY,
                     templates: Mapping[str, str] = DEFAULT_TEMPLATES) -> PromptRequest:
    """One question line per face id, followed by a single label-vocabulary line."""
    ids = tuple(sorted(int(k) for k in ids))
    known = set(image.face_ids)
    unknown = [k for k in ids if k not in known]
    if unknown:
        raise UnknownFaceId(f"face ids {unknown} not rendered in image (have {sorted(known)})")
    lines = [templates["person"].format(k=k, vocab=_vocab(vocabulary)) for k in ids]
    lines.append(templates["vocab"].format(vocab=_vocab(vocabulary)))
    return PromptRequest(image, PromptMode.PER_PERSON, "\n".join(lines), ids, tuple(vocabulary))


def build(image: SovImage, mode: PromptMode, *, question_override: Optional[str] = None,
          templates: Mapping[str, str] = DEFAULT_TEMPLATES) -> PromptRequest:
    """Dispatch on ``mode``; per-person mode asks about every rendered face."""
    mode = PromptMode(mode)
    if mode is PromptMode.PLAIN:
        return build_plain(image, question_override, templates=templates)
    if not image.faces:
        # nothing to ask about individually
        return build_plain(image, question_override, templates=templates)
    return build_per_person(image, image.face_ids, templates=templates)
