"""Ground-truth matching, Acc / R@1 scoring and report files.

Acc is face-level micro accuracy: correct faces over all ground-truth faces,
with undetected or unanswered faces counted wrong. R@1 is the macro average of
per-emotion recall over the emotions present in the ground truth.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .annotator import atomic_write_bytes
from .dataset import BUCKETS, DatasetManifest, bucket
from .emotions import Emotion, VOCABULARY
from .errors import InconsistentInputs
from .geometry import AnnotatedFace, BoundingBox, iou
from .parser import ParsedPrediction

DEFAULT_IOU_THRESHOLD = 0.5
NO_ANSWER = "None"

METRIC_DEFINITIONS = {
    "acc": "micro accuracy: ground-truth faces whose matched, answered label equals the "
           "ground truth, divided by all ground-truth faces (unmatched faces count as wrong)",
    "r_at_1": "macro recall: mean over emotions with non-zero support of per-emotion recall",
}

CSV_HEADER = ["bucket", "acc", "r_at_1", "n_faces"]
TABLE_ROWS = ("Easy", "Medium", "Hard", "Total")


@dataclass
class MatchResult:
    pairs: List[Tuple[int, int, float]] = field(default_factory=list)
    unmatched_gt: List[int] = field(default_factory=list)
    unmatched_pred: List[int] = field(default_factory=list)

    def pred_for_gt(self) -> Dict[int, int]:
        return {g: p for g, p, _ in self.pairs}

    def to_dict(self) -> dict:
        return asdict(self)


def greedy_pairs(candidates: Iterable[Tuple[int, int, float]], threshold: float):
    """Pick one-to-one pairs by descending IoU; ties go to lower (gt index, pred id)."""
    chosen = []
    used_g, used_p = set(), set()
    for g, p, v in sorted(candidates, key=lambda c: (-c[2], c[0], c[1])):
        if v < threshold or g in used_g or p in used_p:
            continue
        chosen.append((g, p, v))
        used_g.add(g)
        used_p.add(p)
    return sorted(chosen)


def optimal_pairs(candidates: Iterable[Tuple[int, int, float]], threshold: float):
    """Exhaustive matching maximizing (pair count, total IoU); small inputs only."""
    cands = [c for c in candidates if c[2] >= threshold]
    gts = sorted({c[0] for c in cands})
    by_g = {g: [c for c in cands if c[0] == g] for g in gts}
    best: Tuple[Tuple[int, float], list] = ((0, 0.0), [])

    def walk(i, used, acc):
        nonlocal best
        if i == len(gts):
            key = (len(acc), sum(c[2] for c in acc))
            if key > best[0]:
                best = (key, list(acc))
            return
        walk(i + 1, used, acc)
        for c in by_g[gts[i]]:
            if c[1] not in used:
                acc.append(c)
                walk(i + 1, used | {c[1]}, acc)
                acc.pop()

    walk(0, frozenset(), [])
    return sorted(best[1])


def match_faces(gt_boxes: Sequence, faces: Sequence[AnnotatedFace],
                iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> MatchResult:
    """Pair ground-truth boxes (or records with ``.box``) with rendered faces."""
    boxes = [b if isinstance(b, BoundingBox) else b.box for b in gt_boxes]
    cands = [(g, f.id, iou(b, f.box)) for g, b in enumerate(boxes) for f in faces]
    pairs = greedy_pairs([c for c in cands if c[2] > 0], iou_threshold)
    got_g = {g for g, _, _ in pairs}
    got_p = {p for _, p, _ in pairs}
    return MatchResult(
        pairs,
        [g for g in range(len(boxes)) if g not in got_g],
        sorted(f.id for f in faces if f.id not in got_p),
    )


@dataclass
class _Counts:
    """Mergeable per-group tallies."""

    n_images: int = 0
    confusion: Dict[str, Dict[str, int]] = field(default_factory=lambda: {
        g: {p: 0 for p in (*VOCABULARY, NO_ANSWER)} for g in VOCABULARY})

    def add(self, gt: Emotion, pred: Optional[Emotion]) -> None:
        self.confusion[gt.value][pred.value if pred else NO_ANSWER] += 1

    def merge(self, other: "_Counts") -> "_Counts":
        out = _Counts(self.n_images + other.n_images)
        for g in VOCABULARY:
            for p in self.confusion[g]:
                out.confusion[g][p] = self.confusion[g][p] + other.confusion[g][p]
        return out

    def support(self, e: str) -> int:
        return sum(self.confusion[e].values())

    @property
    def n_faces(self) -> int:
        return sum(self.support(e) for e in VOCABULARY)

    @property
    def n_correct(self) -> int:
        return sum(self.confusion[e][e] for e in VOCABULARY)

    def summary(self) -> dict:
        n = self.n_faces
        recalls = [self.confusion[e][e] / self.support(e) for e in VOCABULARY if self.support(e)]
        return {
            "accuracy": self.n_correct / n if n else None,
            "recall_at_1": sum(recalls) / len(recalls) if recalls else None,
            "n_faces": n,
            "n_images": self.n_images,
            "n_correct": self.n_correct,
            "recall_classes": [e for e in VOCABULARY if self.support(e)],
        }


@dataclass
class EvalReport:
    per_bucket: Dict[str, dict]
    overall: dict
    per_emotion: Dict[str, dict]
    confusion: Dict[str, Dict[str, int]]
    face_count_mae: Optional[float]
    run_metadata: dict = field(default_factory=dict)
    metric_definitions: dict = field(default_factory=lambda: dict(METRIC_DEFINITIONS))

    def table_rows(self):
        """``(bucket, acc, r_at_1, n_faces)`` rows in Easy/Medium/Hard/Total order."""
        for name in TABLE_ROWS:
            row = self.overall if name == "Total" else self.per_bucket[name]
            yield name, row["accuracy"], row["recall_at_1"], row["n_faces"]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "EvalReport":
        return cls(**d)

    def format_table(self) -> str:
        lines = [f"Acc  = {self.metric_definitions['acc']}",
                 f"R@1  = {self.metric_definitions['r_at_1']}",
                 f"{'bucket':<8} {'Acc (%)':>8} {'R@1 (%)':>8} {'faces':>6}"]
        for name, acc, r1, n in self.table_rows():
            fmt = lambda v: "   -" if v is None else f"{100 * v:8.2f}"
            lines.append(f"{name:<8} {fmt(acc):>8} {fmt(r1):>8} {n:>6}")
        return "\n".join(lines)


def score(manifest: DatasetManifest, predictions: Mapping[str, ParsedPrediction],
          matches: Mapping[str, MatchResult], *, run_metadata: Optional[dict] = None) -> EvalReport:
    """Score predictions against the manifest's ground truth.

    Images without a prediction or match score every face as unanswered.
    """
    known = {e.image_path for e in manifest.entries}
    for name, mapping in (("predictions", predictions), ("matches", matches)):
        stray = sorted(set(mapping) - known)
        if stray:
            raise InconsistentInputs(f"{name} reference images not in the manifest: {stray}")

    groups = {b.value: _Counts() for b in BUCKETS}
    count_errors = []
    for entry in manifest.entries:
        pred = predictions.get(entry.image_path)
        match = matches.get(entry.image_path, MatchResult(unmatched_gt=list(range(len(entry.faces)))))
        g2p = match.pred_for_gt()
        counts = groups[bucket(entry).value]
        counts.n_images += 1
        for i, face in enumerate(entry.faces):
            if face.gt_emotion is None:
                raise InconsistentInputs(f"{entry.image_path}: face {i} has no ground-truth emotion")
            pid = g2p.get(i)
            label = pred.per_person.get(pid) if (pred is not None and pid is not None) else None
            counts.add(face.gt_emotion, label)
        if pred is not None and pred.face_count_claim is not None:
            count_errors.append(abs(pred.face_count_claim - len(entry.faces)))

    total = _Counts()
    for c in groups.values():
        total = total.merge(c)

    per_emotion = {}
    for e in VOCABULARY:
        support = total.support(e)
        predicted = sum(total.confusion[g][e] for g in VOCABULARY)
        hit = total.confusion[e][e]
        per_emotion[e] = {
            "recall": hit / support if support else None,
            "precision": hit / predicted if predicted else None,
            "support": support,
        }

    return EvalReport(
        per_bucket={k: v.summary() for k, v in groups.items()},
        overall=total.summary(),
        per_emotion=per_emotion,
        confusion=total.confusion,
        face_count_mae=sum(count_errors) / len(count_errors) if count_errors else None,
        run_metadata=dict(run_metadata or {}),
    )


def _cell(v) -> str:
    return "" if v is None else repr(float(v))


def report_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for name, acc, r1, n in report.table_rows():
        w.writerow([name, _cell(acc), _cell(r1), n])
    return buf.getvalue()


def plotdata_csv(report: EvalReport, metric: str = "recall") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "value"])
    for e in VOCABULARY:
        v = report.per_emotion[e][metric]
        w.writerow([e, _cell(v if v is not None else 0.0)])
    return buf.getvalue()


def emit_report(report: EvalReport, out_dir, formats: Sequence[str] = ("json", "csv", "plotdata")) -> List[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    writers = {
        "json": ("report.json", lambda: json.dumps(report.to_dict(), indent=2) + "\n"),
        "csv": ("report.csv", lambda: report_csv(report)),
        "plotdata": ("per_emotion.csv", lambda: plotdata_csv(report)),
    }
    written = []
    for fmt in formats:
        if fmt not in writers:
            raise ValueError(f"unknown report format {fmt!r}")
        name, make = writers[fmt]
        atomic_write_bytes(out_dir / name, make().encode("utf-8"))
        written.append(out_dir / name)
    return written


def load_report(path) -> EvalReport:
    with open(path, encoding="utf-8") as fh:
        return EvalReport.from_dict(json.load(fh))


def diff_reports(a: EvalReport, b: EvalReport) -> List[dict]:
    """Row-by-row change from run ``a`` to run ``b`` (e.g. Box arm vs full marks)."""
    rows = []
    for (name, acc_a, r_a, n_a), (_, acc_b, r_b, n_b) in zip(a.table_rows(), b.table_rows()):
        delta = lambda x, y: None if x is None or y is None else y - x
        rows.append({"bucket": name, "acc_a": acc_a, "acc_b": acc_b, "d_acc": delta(acc_a, acc_b),
                     "r_at_1_a": r_a, "r_at_1_b": r_b, "d_r_at_1": delta(r_a, r_b),
                     "n_faces": n_b})
    return rows
