"""
Asking about numbered people and reading the answer
===================================================

Once faces carry visible numbers, the question can name them directly
("What is Person 2's emotion?"). Answers come back as free text, which we
map onto the seven labels with a synonym table. An in-process mock stands
in for the model endpoint.
"""

import numpy as np

from sovprompt.annotator import render
from sovprompt.geometry import BoundingBox, FaceDetection, resolve_overlaps
from sovprompt.parser import parse
from sovprompt.prompts import build_per_person, build_plain
from sovprompt.vlm_client import EndpointConfig, MockModel, VLMClient

canvas = np.full((120, 240, 3), 200, dtype=np.uint8)
faces = resolve_overlaps([FaceDetection(BoundingBox(10 + 75 * i, 20, 70 + 75 * i, 90))
                          for i in range(3)])
image = render(canvas, faces)

# Two question styles: one for the whole group, one line per person.
print(build_plain(image).question, "\n")
request = build_per_person(image, image.face_ids)
print(request.question, "\n")

# The mock replies the way chat models often do: loosely formatted.
reply = ("There are three people in the picture.\n"
         "Person 1: Smiling or Positive Emotion\n"
         "Person 2 looks rather worried.\n"
         "Person 3: no visible emotion")
mock = MockModel({r"Person 1's emotion": reply})

with VLMClient(EndpointConfig("http://mock.local/v1", "demo"), transport=mock.transport) as client:
    answer = client.query(request)

parsed = parse(answer, image.face_ids)
print("face count claim:", parsed.face_count_claim)
for k, label in sorted(parsed.per_person.items()):
    print(f"Person {k} -> {label.value}")
print("synonyms used:", [(text, e.value) for text, e in parsed.synonym_hits])
print("unparsed:", parsed.unparsed_spans)
