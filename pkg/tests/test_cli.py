import json
import random
import shutil

import numpy as np
import pytest
from click.testing import CliRunner

from sovprompt.annotator import SovImage, decode_png, encode_png
from sovprompt.cli import exit_code_for, main
from sovprompt.dataset import four_face_fixture_path, synthetic_manifest_path
from sovprompt.errors import AuthError, ConfigError, SovError
from sovprompt.pipeline import RunConfig, StageError, resolve_config


def run(*args, **kw):
    return CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False, **kw)


@pytest.fixture
def scene(tmp_path):
    rng = np.random.default_rng(3)
    encode_png(SovImage(rng.integers(0, 256, size=(120, 200, 3), dtype=np.uint8), []),
               tmp_path / "crowd.png")

    def write(boxes, name="dets.json"):
        p = tmp_path / name
        p.write_text(json.dumps({"schema_version": 1, "entries": [
            {"image_path": "crowd.png", "faces": [{"box": b} for b in boxes]}]}))
        return p
    return tmp_path, write


def faces_json(tmp_path):
    return json.loads((tmp_path / "crowd.faces.json").read_text())


def test_annotate_two_disjoint(scene):
    d, write = scene
    r = run("annotate", write([[10, 20, 60, 80], [100, 10, 180, 100]]))
    assert r.exit_code == 0, r.output
    faces = faces_json(d)
    assert [f["id"] for f in faces] == [1, 2]
    assert faces[0]["box"] == [100, 10, 180, 100]
    assert (d / "crowd.sov.png").exists()


def test_annotate_nested_keeps_one(scene):
    d, write = scene
    r = run("annotate", write([[10, 10, 110, 110], [30, 30, 70, 70]]), "--epsilon", 0.5)
    assert r.exit_code == 0
    assert len(faces_json(d)) == 1


def test_annotate_box_only_arm(scene):
    d, write = scene
    dets = write([[40, 30, 120, 100]])
    run("annotate", dets, "--no-landmarks", "--no-numbers", "--out", d / "a")
    run("annotate", dets, "--arm", "box", "--out", d / "b")
    src = decode_png(d / "crowd.png")
    a, b = decode_png(d / "a" / "crowd.sov.png"), decode_png(d / "b" / "crowd.sov.png")
    assert np.array_equal(a, b)
    # 80x70 box, stroke 2
    assert int(np.any(a != src, axis=2).sum()) == 80 * 70 - 76 * 66


@pytest.mark.filterwarnings("ignore:.*not found")
def test_annotate_missing_image_exits_nonzero(scene):
    d, write = scene
    p = write([[1, 1, 5, 5]])
    data = json.loads(p.read_text())
    data["entries"][0]["image_path"] = "gone.png"
    p.write_text(json.dumps(data))
    r = CliRunner().invoke(main, ["annotate", str(p)])
    assert r.exit_code == 1


def test_annotate_schema_error_exit_2(scene):
    d, _ = scene
    bad = d / "bad.json"
    bad.write_text('{"schema_version": 1, "entries": [{"image_path": "x", "faces": [{"box": [1, 2]}]}]}')
    r = CliRunner().invoke(main, ["annotate", str(bad)])
    assert r.exit_code == 2


TRACES = [
    ([[0, 0, 10, 10], [20, 0, 30, 10]], 0.5),
    ([[0, 0, 10, 10], [2, 2, 8, 8]], 0.5),
    ([[0, 0, 12, 12], [10, 0, 22, 12], [11, 1, 21, 11]], 0.3),
]


@pytest.mark.parametrize("boxes,eps", TRACES)
def test_oracle_equals_annotate(scene, boxes, eps):
    d, write = scene
    dets = write(boxes)
    assert run("annotate", dets, "--epsilon", eps).exit_code == 0
    r = run("oracle", dets, "--epsilon", eps)
    assert json.loads(r.output) == {"crowd.png": faces_json(d)}


def test_oracle_empty_list(tmp_path):
    p = tmp_path / "none.json"
    p.write_text("[]")
    r = run("oracle", p)
    assert r.exit_code == 0 and json.loads(r.output) == []


def test_oracle_random_50(tmp_path, scene):
    d, write = scene
    rnd = random.Random(50)
    boxes = []
    for _ in range(50):
        x, y = rnd.uniform(0, 150), rnd.uniform(0, 80)
        boxes.append([x, y, x + rnd.uniform(4, 45), y + rnd.uniform(4, 38)])
    dets = write(boxes)
    run("annotate", dets, "--epsilon", 0.3)
    assert json.loads(run("oracle", dets, "--epsilon", 0.3).output)["crowd.png"] == faces_json(d)


def test_oracle_bad_input(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("[{\"nobox\": 1}]")
    assert CliRunner().invoke(main, ["oracle", str(p)]).exit_code == 2
    p.write_text("{oops")
    assert CliRunner().invoke(main, ["oracle", str(p)]).exit_code == 2


def test_ask_with_mock(scene):
    d, write = scene
    run("annotate", write([[10, 20, 60, 80], [100, 10, 180, 100]]))
    script = d / "reply.json"
    script.write_text(json.dumps({"Person 2": "Person 1: Happy\nPerson 2: Sad"}))
    r = run("ask", d / "crowd.sov.png", "--mock", script)
    assert r.exit_code == 0, r.output
    out = json.loads(r.output)
    assert out["parsed"]["per_person"] == {"1": "Happy", "2": "Sad"}
    answer = json.loads((d / "crowd.answer.json").read_text())
    assert answer["raw_text"] == "Person 1: Happy\nPerson 2: Sad"
    assert (d / "crowd.parsed.json").exists()


def test_ask_unscripted_is_transport_error(scene):
    d, write = scene
    run("annotate", write([[10, 20, 60, 80]]))
    script = d / "reply.json"
    script.write_text(json.dumps({"never": "x"}))
    r = CliRunner().invoke(main, ["ask", str(d / "crowd.sov.png"), "--mock", str(script)])
    assert r.exit_code == 3


def test_ask_unknown_id_is_config_error(scene):
    d, write = scene
    run("annotate", write([[10, 20, 60, 80]]))
    script = d / "reply.json"
    script.write_text(json.dumps({".*": "x"}))
    r = CliRunner().invoke(main, ["ask", str(d / "crowd.sov.png"), "--mock", str(script), "--ids", "9"])
    assert r.exit_code == 2


def test_ask_without_endpoint(scene):
    d, write = scene
    run("annotate", write([[10, 20, 60, 80]]))
    r = CliRunner().invoke(main, ["ask", str(d / "crowd.sov.png")])
    assert r.exit_code == 2 and "endpoint" in r.output


def test_exit_code_mapping():
    assert exit_code_for(AuthError("x")) == 3
    assert exit_code_for(ConfigError("x")) == 2
    assert exit_code_for(SovError("x")) == 1
    assert exit_code_for(StageError("ask", "a.png", AuthError("x"))) == 3
    assert exit_code_for(StageError("annotate", "a.png", OSError("x"))) == 1


class TestConfig:
    def test_defaults(self):
        cfg = resolve_config(env={})
        assert cfg.epsilon == 0.5 and cfg.arm == "sov" and cfg.prompt_mode.value == "per-person"
        assert RunConfig(arm="box").prompt_mode.value == "plain"

    def test_precedence(self, tmp_path):
        f = tmp_path / "c.yaml"
        f.write_text("epsilon: 0.2\niou_threshold: 0.6\nmodel: from-file\n")
        env = {"SOV_EPSILON": "0.3", "SOV_MODEL": "from-env"}
        cfg = resolve_config({"epsilon": 0.4}, env=env, config_file=f)
        assert cfg.epsilon == 0.4
        assert cfg.model == "from-env"
        assert cfg.iou_threshold == 0.6
        assert resolve_config(env={"SOV_CONFIG": str(f)}).epsilon == 0.2

    @pytest.mark.parametrize("bad", [{"epsilon": 1.0}, {"arm": "circle"}, {"mode": "chat"},
                                     {"colour": "red"}, {"epsilon": "abc"}])
    def test_rejected(self, bad):
        with pytest.raises(ConfigError):
            resolve_config(bad, env={})

    def test_cli_config_flag(self, scene):
        d, write = scene
        f = d / "c.yaml"
        f.write_text("epsilon: 0.9\n")
        dets = write([[0, 0, 100, 100], [50, 0, 150, 100]])
        run("--config", f, "annotate", dets)
        assert len(faces_json(d)) == 2
        run("--config", f, "annotate", dets, "--epsilon", 0.4)
        assert len(faces_json(d)) == 1


def copy_fixture(src_manifest, dest):
    shutil.copytree(src_manifest.parent, dest)
    return dest / "manifest.json"


def test_evaluate_oracle_run_dir(tmp_path):
    out = tmp_path / "run"
    r = run("evaluate", synthetic_manifest_path(), "--mock", "oracle", "--out", out)
    assert r.exit_code == 0, r.output
    names = {p.name for p in out.iterdir()}
    assert {"config.json", "provenance.json", "answers.jsonl", "report.json", "report.csv",
            "per_emotion.csv", "transport.jsonl", "annotations"} <= names
    rows = (out / "report.csv").read_text().splitlines()
    assert rows[0] == "bucket,acc,r_at_1,n_faces"
    assert all(row.split(",")[1] == "1.0" for row in rows[1:])
    prov = json.loads((out / "provenance.json").read_text())
    assert prov["config_digest"] == RunConfig(**json.loads((out / "config.json").read_text())).digest()
    assert "crowd_00.png" in prov["inputs"]


def test_evaluate_adversarial(tmp_path):
    r = run("evaluate", synthetic_manifest_path(), "--mock", "adversarial", "--out", tmp_path / "r")
    assert r.exit_code == 0
    report = json.loads((tmp_path / "r" / "report.json").read_text())
    assert report["overall"]["accuracy"] == 0.0


def test_evaluate_four_face(tmp_path):
    m = copy_fixture(four_face_fixture_path(), tmp_path / "ff")
    r = run("evaluate", m, "--mock", m.parent / "reply.json", "--out", tmp_path / "r")
    assert r.exit_code == 0, r.output
    report = json.loads((tmp_path / "r" / "report.json").read_text())
    assert report["overall"]["accuracy"] == 0.75
    assert report["overall"]["recall_at_1"] == 0.5


def test_evaluate_reproducible_from_saved_config(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run("evaluate", synthetic_manifest_path(), "--mock", "oracle", "--epsilon", 0.4, "--out", a)
    r = run("--config", a / "config.json", "evaluate", synthetic_manifest_path(), "--out", b)
    assert r.exit_code == 0
    assert (a / "report.csv").read_bytes() == (b / "report.csv").read_bytes()
    assert (a / "config.json").read_bytes() == (b / "config.json").read_bytes()
    for png in (a / "annotations").iterdir():
        assert png.read_bytes() == (b / "annotations" / png.name).read_bytes()


def test_evaluate_transport_failure_exit_3(tmp_path):
    m = copy_fixture(four_face_fixture_path(), tmp_path / "ff")
    script = tmp_path / "s.json"
    script.write_text(json.dumps({"nothing matches": "x"}))
    r = CliRunner().invoke(main, ["evaluate", str(m), "--mock", str(script), "--out", str(tmp_path / "r")])
    assert r.exit_code == 3
    assert "[ask]" in r.output


def test_evaluate_box_arm_plain_mode(tmp_path):
    out = tmp_path / "r"
    r = run("evaluate", synthetic_manifest_path(), "--mock", "oracle", "--arm", "box", "--out", out)
    assert r.exit_code == 0
    assert json.loads((out / "report.json").read_text())["run_metadata"]["mode"] == "plain"
    # plain answers carry no ids, so nothing is credited without --align-plain
    assert json.loads((out / "report.json").read_text())["overall"]["accuracy"] == 0.0


def test_secret_not_in_run_dir(tmp_path, monkeypatch):
    secret = "sk-live-should-never-leak"
    monkeypatch.setenv("SOV_API_KEY", secret)
    out = tmp_path / "r"
    run("-vv", "evaluate", synthetic_manifest_path(), "--mock", "oracle", "--out", out)
    for p in out.rglob("*"):
        if p.is_file():
            assert secret.encode() not in p.read_bytes(), p


def test_evaluate_box_arm_with_alignment(tmp_path):
    out = tmp_path / "r"
    r = run("evaluate", synthetic_manifest_path(), "--mock", "oracle", "--arm", "box",
            "--align-plain", "--out", out)
    assert r.exit_code == 0
    assert json.loads((out / "report.json").read_text())["overall"]["accuracy"] == 1.0
