import json
import logging

import pytest
from hypothesis import given, settings, strategies as st

from sovprompt.dataset import (BUCKETS, PUBLISHED_STATS, DifficultyBucket, bucket,
                               bucket_for_count, four_face_fixture_path, from_retinaface,
                               load_detections, load_manifest, parse_manifest, stats,
                               synthetic_manifest_path)
from sovprompt.emotions import Emotion
from sovprompt.errors import SchemaError


def face(i=0, label="Happy"):
    d = {"box": [10.0 * i, 0.0, 10.0 * i + 8, 8.0]}
    if label is not None:
        d["gt_emotion"] = label
    return d


def manifest(counts):
    return {"schema_version": 1, "entries": [
        {"image_path": f"img{k}.png", "faces": [face(i) for i in range(n)]}
        for k, n in enumerate(counts)]}


def write(tmp_path, data, name="m.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data) if not isinstance(data, str) else data)
    return p


def test_minimal_loads(tmp_path):
    (tmp_path / "a.png").write_bytes(b"")
    m = load_manifest(write(tmp_path, {"schema_version": 1, "entries": [
        {"image_path": "a.png", "faces": [face()]}]}))
    assert len(m.entries) == 1
    assert m.entries[0].faces[0].gt_emotion is Emotion.HAPPY
    assert m.resolve("a.png") == tmp_path / "a.png"


def test_noncanonical_emotion(tmp_path):
    with pytest.raises(SchemaError, match=r"entries\[0\]\.faces\[0\]\.gt_emotion"):
        parse_manifest({"schema_version": 1, "entries": [
            {"image_path": "a.png", "faces": [face(label="Joyful")]}]})


def test_label_case_folded():
    m = parse_manifest({"schema_version": 1, "entries": [
        {"image_path": "a.png", "faces": [face(label="surprise")]}]})
    assert m.entries[0].faces[0].gt_emotion is Emotion.SURPRISE


def test_duplicate_path():
    data = manifest([1, 1])
    data["entries"][1]["image_path"] = "img0.png"
    with pytest.raises(SchemaError, match="duplicate"):
        parse_manifest(data)


@pytest.mark.parametrize("mutate,where", [
    (lambda d: d.update(schema_version=2), "schema_version"),
    (lambda d: d["entries"][0]["faces"][0].update(box=[0, 0, 1]), "box"),
    (lambda d: d["entries"][0]["faces"][0].update(box=[5, 0, 1, 3]), "faces[0]"),
    (lambda d: d["entries"][0].pop("faces"), "faces"),
])
def test_schema_errors_name_the_field(mutate, where):
    data = manifest([1])
    mutate(data)
    with pytest.raises(SchemaError) as err:
        parse_manifest(data)
    assert where in str(err.value)


def test_missing_gt_only_allowed_for_detections(tmp_path):
    data = {"schema_version": 1, "entries": [{"image_path": "a.png", "faces": [face(label=None)]}]}
    p = write(tmp_path, data)
    with pytest.raises(SchemaError, match="gt_emotion"):
        load_manifest(p, check_images=False)
    with pytest.warns(UserWarning, match="not found"):
        m = load_detections(p)
    assert m.entries[0].faces[0].gt_emotion is None


def test_bad_json_reports_position(tmp_path):
    with pytest.raises(SchemaError, match="line 2 column"):
        load_manifest(write(tmp_path, '{"schema_version": 1,\n "entries": [,]}'))


@pytest.mark.parametrize("n,expected", [
    (0, "Easy"), (1, "Easy"), (3, "Easy"),
    (4, "Medium"), (7, "Medium"),
    (8, "Hard"), (30, "Hard"),
])
def test_bucket_boundaries(n, expected):
    assert bucket_for_count(n) is DifficultyBucket(expected)
    assert bucket(n) is DifficultyBucket(expected)


def test_bucket_of_entry():
    m = parse_manifest(manifest([3, 4, 8]))
    assert [bucket(e).value for e in m.entries] == ["Easy", "Medium", "Hard"]


def test_stats_example():
    s = stats(parse_manifest(manifest([1, 3, 4, 7, 8])))
    assert s["Easy"] == {"images": 2, "faces": 4}
    assert s["Medium"] == {"images": 2, "faces": 11}
    assert s["Hard"] == {"images": 1, "faces": 8}
    assert s["Total"] == {"images": 5, "faces": 23}


def test_stats_empty():
    s = stats(parse_manifest({"schema_version": 1, "entries": []}))
    assert all(v == {"images": 0, "faces": 0} for v in s.values())


def test_published_totals_consistent():
    for key in ("images", "faces"):
        i = 0 if key == "images" else 1
        assert sum(PUBLISHED_STATS[b.value][i] for b in BUCKETS) == PUBLISHED_STATS["Total"][i]
    assert PUBLISHED_STATS["Total"] == (119, 459)


@given(st.lists(st.integers(0, 15), max_size=25), st.lists(st.integers(0, 15), max_size=25))
@settings(max_examples=200)
def test_stats_additive(a, b):
    sa, sb = stats(parse_manifest(manifest(a))), stats(parse_manifest(manifest(b)))
    sab = stats(parse_manifest(manifest(a + b)))
    for row in sab:
        for key in ("images", "faces"):
            assert sab[row][key] == sa[row][key] + sb[row][key]
    assert sab["Total"]["faces"] == sum(a + b)


@given(st.lists(st.integers(0, 15), max_size=25), st.randoms())
@settings(max_examples=100)
def test_stats_permutation_invariant(counts, rnd):
    shuffled = list(counts)
    rnd.shuffle(shuffled)
    assert stats(parse_manifest(manifest(counts))) == stats(parse_manifest(manifest(shuffled)))


def test_roundtrip_to_dict():
    m = parse_manifest(manifest([2, 5]))
    assert parse_manifest(m.to_dict()).entries == m.entries


def test_retinaface_conversion(caplog):
    raw = {
        "face_1": {"score": 0.99, "facial_area": [10, 20, 60, 80], "landmarks": {
            # image-relative naming: "right_eye" is on the left of the picture
            "right_eye": [22.0, 40.0], "left_eye": [48.0, 41.0], "nose": [35.0, 55.0],
            "mouth_right": [25.0, 68.0], "mouth_left": [45.0, 68.0]}},
        "face_2": {"score": 0.9, "facial_area": [-3, 5, 30, 40]},
    }
    with caplog.at_level(logging.WARNING):
        entry = from_retinaface(raw, "x.jpg")
    assert "clipped" in caplog.text
    f1, f2 = entry["faces"]
    assert f1["landmarks"]["left_eye"] == [22.0, 40.0]
    assert f1["landmarks"]["mouth_right"] == [45.0, 68.0]
    assert f2["box"] == [0.0, 5.0, 30.0, 40.0] and "landmarks" not in f2
    m = parse_manifest({"schema_version": 1, "entries": [entry]}, require_gt=False)
    assert not m.entries[0].faces[0].landmarks.mirrored


def test_bundled_synthetic_spans_buckets():
    m = load_manifest(synthetic_manifest_path())
    assert len(m.entries) >= 10
    s = stats(m)
    assert all(s[b.value]["images"] > 0 for b in BUCKETS)
    for e in m.entries:
        assert m.resolve(e.image_path).exists()


def test_bundled_four_face_fixture():
    m = load_manifest(four_face_fixture_path())
    (entry,) = m.entries
    assert [f.gt_emotion.value for f in entry.faces] == ["Happy", "Happy", "Happy", "Sad"]
