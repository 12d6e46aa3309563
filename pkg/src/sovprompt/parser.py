"""Turn free-text model answers into per-person emotion predictions.

Parsing is total: anything that cannot be read ends up in
``ParsedPrediction.unparsed_spans`` instead of raising.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .emotions import Emotion
from .errors import SchemaError

__all__ = ["Emotion", "ParsedPrediction", "SynonymTable", "parse", "parse_text",
           "align_plain", "default_synonyms"]


class SynonymTable:
    """Surface form -> :class:`Emotion`, each form mapping to exactly one label."""

    def __init__(self, mapping: Dict[str, Emotion]):
        self.mapping = dict(mapping)
        forms = sorted(self.mapping, key=lambda s: (-len(s), s))
        alternation = "|".join(re.escape(f).replace(r"\ ", r"\s+") for f in forms)
        self._pattern = re.compile(rf"(?<![\w-])({alternation})(?![\w-])", re.IGNORECASE)

    @classmethod
    def parse_lines(cls, lines: Iterable[str], source: str = "<synonyms>") -> "SynonymTable":
        mapping: Dict[str, Emotion] = {}
        for lineno, raw in enumerate(lines, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "->" not in line:
                raise SchemaError(f"{source}:{lineno}: expected 'surface_form -> Label'")
            form, label = (s.strip() for s in line.split("->", 1))
            form = " ".join(form.lower().split())
            if not form:
                raise SchemaError(f"{source}:{lineno}: empty surface form")
            try:
                emotion = Emotion(label)
            except ValueError:
                raise SchemaError(f"{source}:{lineno}: {label!r} is not a canonical label") from None
            if mapping.get(form, emotion) is not emotion:
                raise SchemaError(
                    f"{source}:{lineno}: {form!r} maps to both {mapping[form].value} and {emotion.value}")
            mapping[form] = emotion
        for e in Emotion:
            mapping.setdefault(e.value.lower(), e)
        return cls(mapping)

    @classmethod
    def load(cls, path) -> "SynonymTable":
        with open(path, encoding="utf-8") as fh:
            return cls.parse_lines(fh, str(path))

    def find(self, text: str) -> List[Tuple[str, Emotion]]:
        """All non-negated label mentions in ``text``, in order."""
        hits = []
        for m in self._pattern.finditer(text):
            before = text[max(0, m.start() - 12):m.start()].lower()
            if re.search(r"(?:\bnot|n't|\bnever)\s+(?:\w+\s+)?$", before):
                continue
            form = " ".join(m.group(1).lower().split())
            hits.append((m.group(1), self.mapping[form]))
        return hits


@lru_cache(maxsize=1)
def default_synonyms() -> SynonymTable:
    text = resources.files("sovprompt").joinpath("data/synonyms.txt").read_text(encoding="utf-8")
    return SynonymTable.parse_lines(text.splitlines(), "synonyms.txt")


@dataclass
class ParsedPrediction:
    per_person: Dict[int, Emotion] = field(default_factory=dict)
    face_count_claim: Optional[int] = None
    unparsed_spans: List[str] = field(default_factory=list)
    synonym_hits: List[Tuple[str, Emotion]] = field(default_factory=list)
    unexpected_ids: List[int] = field(default_factory=list)
    ambiguous_ids: List[int] = field(default_factory=list)
    labels_in_order: List[Emotion] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_person": {str(k): v.value for k, v in sorted(self.per_person.items())},
            "face_count_claim": self.face_count_claim,
            "unparsed_spans": list(self.unparsed_spans),
            "synonym_hits": [[s, e.value] for s, e in self.synonym_hits],
            "unexpected_ids": list(self.unexpected_ids),
            "ambiguous_ids": list(self.ambiguous_ids),
            "labels_in_order": [e.value for e in self.labels_in_order],
        }

    @classmethod
    def from_dict(cls, d) -> "ParsedPrediction":
        return cls(
            per_person={int(k): Emotion(v) for k, v in d.get("per_person", {}).items()},
            face_count_claim=d.get("face_count_claim"),
            unparsed_spans=list(d.get("unparsed_spans", [])),
            synonym_hits=[(s, Emotion(e)) for s, e in d.get("synonym_hits", [])],
            unexpected_ids=list(d.get("unexpected_ids", [])),
            ambiguous_ids=list(d.get("ambiguous_ids", [])),
            labels_in_order=[Emotion(e) for e in d.get("labels_in_order", [])],
        )


_NUMBER_WORDS = {w: i for i, w in enumerate(
    "zero one two three four five six seven eight nine ten eleven twelve thirteen "
    "fourteen fifteen sixteen seventeen eighteen nineteen twenty".split())}
_NUM = r"(\d+|" + "|".join(_NUMBER_WORDS) + r")"
_COUNT_BEFORE = re.compile(
    rf"\b{_NUM}\s+(?:visible\s+|distinct\s+|different\s+|clearly\s+visible\s+)?"
    r"(?:faces|people|persons|individuals)\b", re.IGNORECASE)
_COUNT_AFTER = re.compile(
    r"\b(?:visible\s+faces|faces\s+visible|number\s+of\s+(?:visible\s+)?faces|face\s+count)"
    rf"\D{{0,20}}?\b{_NUM}\b", re.IGNORECASE)
_MENTION = re.compile(r"\b(?:person|face|individual)\s*(?:#|no\.?\s*|number\s+)?(\d+)\b",
                      re.IGNORECASE)
_LIST_ITEM = re.compile(r"^\s*(\d+)\s*[.)]\s+(.*\S)")
_SENTENCE_END = re.compile(r"[.!?](?:\s|$)")
_DASHES = str.maketrans({"—": "-", "–": "-", "’": "'", "‘": "'"})


def _count_value(tok: str) -> int:
    return int(tok) if tok.isdigit() else _NUMBER_WORDS[tok.lower()]


def _face_count(text: str) -> Optional[int]:
    found = [m for m in (_COUNT_BEFORE.search(text), _COUNT_AFTER.search(text)) if m]
    if not found:
        return None
    first = min(found, key=lambda m: m.start())
    return _count_value(first.group(1))


def _segment(text: str) -> str:
    m = _SENTENCE_END.search(text)
    return text[:m.start()] if m else text


def parse_text(text: str, expected_ids: Sequence[int] = (),
               synonyms: Optional[SynonymTable] = None) -> ParsedPrediction:
    synonyms = synonyms or default_synonyms()
    expected = set(expected_ids)
    out = ParsedPrediction(face_count_claim=_face_count(text.translate(_DASHES)))

    def assign(k: int, seg: str, line: str) -> bool:
        hits = synonyms.find(seg)
        if not hits:
            return False
        out.synonym_hits.extend(hits)
        out.labels_in_order.extend(e for _, e in hits[:1])
        label = hits[0][1]
        if len({e for _, e in hits}) > 1 and k not in out.ambiguous_ids:
            out.ambiguous_ids.append(k)
        if k in out.per_person:
            out.unparsed_spans.append(
                f"override Person {k}: {out.per_person[k].value} -> {label.value} ({line})")
        out.per_person[k] = label
        if expected and k not in expected and k not in out.unexpected_ids:
            out.unexpected_ids.append(k)
        return True

    for raw in text.translate(_DASHES).splitlines():
        line = raw.strip()
        if not line:
            continue
        used = False
        mentions = list(_MENTION.finditer(line))
        if mentions:
            unlabeled = []
            for i, m in enumerate(mentions):
                end = mentions[i + 1].start() if i + 1 < len(mentions) else len(line)
                if assign(int(m.group(1)), _segment(line[m.end():end]), line):
                    used = True
                else:
                    unlabeled.append(line[m.start():end].strip(" ,;"))
            if used:
                out.unparsed_spans.extend(unlabeled)
        else:
            item = _LIST_ITEM.match(line)
            if item and assign(int(item.group(1)), _segment(item.group(2)), line):
                used = True
            elif not item:
                hits = synonyms.find(line)
                if hits:
                    # group-level answer: keep labels for optional positional alignment
                    out.synonym_hits.extend(hits)
                    out.labels_in_order.extend(e for _, e in hits)
                    used = True
        if not used and not (_COUNT_BEFORE.search(line) or _COUNT_AFTER.search(line)):
            out.unparsed_spans.append(line)
    return out


def parse(answer, expected_ids: Sequence[int] = (),
          synonyms: Optional[SynonymTable] = None) -> ParsedPrediction:
    """Parse a :class:`~sovprompt.vlm_client.ModelAnswer` (or plain string)."""
    text = answer if isinstance(answer, str) else answer.raw_text
    return parse_text(text or "", expected_ids, synonyms)


def align_plain(pred: ParsedPrediction, ids: Sequence[int]) -> ParsedPrediction:
    """Assign labels from a group-level answer to face ids by position.

    A heuristic for plain-text prompts, which carry no person ids: the i-th
    label mentioned is credited to the i-th rendered id. Existing per-person
    entries are kept.
    """
    if pred.per_person:
        return pred
    per_person = {k: e for k, e in zip(sorted(ids), pred.labels_in_order)}
    return ParsedPrediction(per_person, pred.face_count_claim, list(pred.unparsed_spans),
                            list(pred.synonym_hits), [], list(pred.ambiguous_ids),
                            list(pred.labels_in_order))
