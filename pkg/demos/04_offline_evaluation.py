"""
Scoring a run end to end without network access
================================================

The bundled synthetic crowd manifest spans all three difficulty buckets.
Running it against a mock that always knows the answer must score 100%,
and against one that is always wrong must score 0%: a quick check that
matching, parsing and scoring are wired together correctly.
"""

import sys
import tempfile
from pathlib import Path

from sovprompt.dataset import load_manifest, stats, synthetic_manifest_path
from sovprompt.pipeline import evaluate, resolve_config

manifest = load_manifest(synthetic_manifest_path())
for name, row in stats(manifest).items():
    print(f"{name:<7} {row['images']:3d} images {row['faces']:4d} faces")

base = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="sov_runs_"))

for mock in ("oracle", "adversarial"):
    cfg = resolve_config({"mock": mock}, env={})
    report = evaluate(manifest, cfg, base / mock, manifest_path=synthetic_manifest_path())
    print(f"\n--mock {mock}")
    print(report.format_table())

# The Box arm draws no numbers, so questions fall back to plain text and the
# answer cannot name anyone. Positional alignment credits labels in id order.
for align in (False, True):
    cfg = resolve_config({"mock": "oracle", "arm": "box", "align_plain": align}, env={})
    report = evaluate(manifest, cfg, base / f"box_align_{align}")
    print(f"\nbox arm, align_plain={align}: Acc {report.overall['accuracy']:.2f}")

print("\nrun directories under", base)
