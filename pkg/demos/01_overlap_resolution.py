"""
Resolving overlapping face boxes
================================

Detectors in crowd photos often return a small box for a face that is
mostly hidden behind a bigger, closer one. Before numbering faces we keep
the larger box and drop any smaller box that overlaps a kept one too much.
"""

from sovprompt.geometry import (BoundingBox, FaceDetection, brute_force_resolve, iou,
                                overlap_ratio, resolve_overlaps)

# The overlap ratio divides the shared area by the *smaller* box's area, so a
# box fully inside another scores 1.0 even when IoU is low.
outer = BoundingBox(0, 0, 10, 10)
inner = BoundingBox(2, 2, 8, 8)
print("IoU           ", iou(outer, inner))
print("overlap ratio ", overlap_ratio(outer, inner))

# Three faces: A and B touch slightly, C sits almost entirely inside B.
faces = [
    FaceDetection(BoundingBox(11, 1, 21, 11), 0.80),   # C
    FaceDetection(BoundingBox(10, 0, 22, 12), 0.95),   # B
    FaceDetection(BoundingBox(0, 0, 12, 12), 0.90),    # A
]

# Larger faces are considered first. With epsilon = 0.3, C collides with B
# (ratio 1.0) and is dropped; A and B share only 24 of 144 pixels.
kept = resolve_overlaps(faces, epsilon=0.3)
for f in kept:
    print(f"face {f.id}: box={f.box.as_list()} area={f.area:g}")

# Ids follow retention order, so the input order does not matter ...
assert [f.box for f in resolve_overlaps(faces[::-1], 0.3)] == [f.box for f in kept]

# ... and a slow reference implementation agrees.
assert [(f.id, f.box) for f in brute_force_resolve(faces, 0.3)] == [(f.id, f.box) for f in kept]

# Two faces side by side with an overlap ratio of 4/9: the threshold decides
# whether the smaller one survives.
pair = [FaceDetection(BoundingBox(0, 0, 10, 10)), FaceDetection(BoundingBox(6, 1, 15, 10))]
print("pair ratio", overlap_ratio(pair[0].box, pair[1].box))
for eps in (0.1, 0.3, 0.5, 0.9):
    print(f"epsilon={eps:<4} -> {len(resolve_overlaps(pair, eps))} faces kept")
