import json
import logging
import threading

import httpx
import numpy as np
import pytest

from sovprompt.annotator import SovImage
from sovprompt.errors import (AuthError, ConfigError, MalformedResponse, RateLimited, Timeout,
                              UnscriptedRequest)
from sovprompt.geometry import AnnotatedFace, BoundingBox
from sovprompt.prompts import build_per_person, build_plain
from sovprompt.vlm_client import (DIGEST_HEADER, EndpointConfig, MockModel, ModelAnswer,
                                  VLMClient, build_payload, redact)

SECRET = "sk-test-0123456789abcdef"


def image(n=3, size=(40, 60)):
    faces = [AnnotatedFace(k, BoundingBox(2 + 12 * (k - 1), 2, 12 + 12 * (k - 1), 12))
             for k in range(1, n + 1)]
    rng = np.random.default_rng(n)
    return SovImage(rng.integers(0, 256, size=(*size, 3), dtype=np.uint8), faces)


def cfg(**kw):
    kw.setdefault("api_key", SECRET)
    return EndpointConfig("http://mock.local/v1", "mock-vlm", **kw)


def client(mock, sleeps=None, **kw):
    sleep = sleeps.append if sleeps is not None else (lambda s: None)
    return VLMClient(cfg(**kw), transport=mock.transport, sleep=sleep)


def test_echo():
    mock = MockModel({".*": "Person 1: Happy"})
    with client(mock) as c:
        ans = c.query(build_plain(image()))
    assert ans.raw_text == "Person 1: Happy"
    assert ans.transport_meta["retries"] == 0


def test_wire_format():
    mock = MockModel({".*": "ok"})
    req = build_per_person(image(), [1, 2])
    with client(mock) as c:
        c.query(req)
    sent = mock.requests[0]
    assert str(sent.url) == "http://mock.local/v1/chat/completions"
    assert sent.headers["authorization"] == f"Bearer {SECRET}"
    body = json.loads(sent.content)
    assert body["temperature"] == 0 and body["model"] == "mock-vlm"
    text, img = body["messages"][0]["content"]
    assert text == {"type": "text", "text": req.question}
    assert img["image_url"]["url"].startswith("data:image/png;base64,")


def test_retry_429_twice_then_ok():
    sleeps = []
    mock = MockModel({".*": "fine"}, statuses=[429, 429])
    with client(mock, sleeps, max_retries=2) as c:
        ans = c.query(build_plain(image()))
    assert ans.raw_text == "fine"
    assert ans.transport_meta["retries"] == 2
    assert ans.transport_meta["trail"] == [429, 429, 200]
    assert sleeps == [1.0, 2.0]


def test_retries_exhausted():
    sleeps = []
    mock = MockModel({".*": "x"}, statuses=[429] * 5)
    with client(mock, sleeps, max_retries=3) as c, pytest.raises(RateLimited):
        c.query(build_plain(image()))
    assert sleeps == [1.0, 2.0, 4.0]
    assert len(mock.requests) == 4


def test_server_error_retried():
    mock = MockModel({".*": "x"}, statuses=[503])
    with client(mock) as c:
        assert c.query(build_plain(image())).transport_meta["trail"] == [503, 200]


@pytest.mark.parametrize("status", [401, 403])
def test_auth_error_no_retry(status):
    sleeps = []
    mock = MockModel({".*": "x"}, statuses=[status])
    with client(mock, sleeps) as c, pytest.raises(AuthError):
        c.query(build_plain(image()))
    assert len(mock.requests) == 1 and sleeps == []


def test_retried_requests_byte_identical():
    mock = MockModel({".*": "x"}, statuses=[429, 500])
    with client(mock) as c:
        c.query(build_plain(image()))
    bodies = {r.content for r in mock.requests}
    digests = {r.headers[DIGEST_HEADER] for r in mock.requests}
    assert len(mock.requests) == 3 and len(bodies) == 1 and len(digests) == 1


def test_bounded_concurrency():
    mock = MockModel({".*": "x"}, delay=0.05)
    reqs = [build_plain(image(), f"question {i}") for i in range(12)]
    with client(mock, max_concurrent=3) as c:
        answers = c.query_many(reqs, workers=8)
    assert len(answers) == 12
    assert mock.max_in_flight <= 3
    assert mock.max_in_flight >= 2


def test_concurrency_gate_shared_across_threads():
    mock = MockModel({".*": "x"}, delay=0.03)
    c = client(mock, max_concurrent=2)
    threads = [threading.Thread(target=c.query, args=(build_plain(image(), str(i)),))
               for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    c.close()
    assert mock.max_in_flight <= 2 and len(mock.requests) == 8


def test_query_many_keeps_order():
    mock = MockModel({"alpha": "A", "beta": "B", "gamma": "C"})
    qs = ["alpha", "beta", "gamma"]
    with client(mock) as c:
        out = c.query_many([build_plain(image(), q) for q in qs])
    assert [a.raw_text for a in out] == ["A", "B", "C"]


def test_digest_script_beats_pattern():
    req = build_plain(image())
    mock = MockModel({req.digest(): "by digest", ".*": "by pattern"})
    with client(mock) as c:
        assert c.query(req).raw_text == "by digest"
        assert c.query(build_plain(image(), "other")).raw_text == "by pattern"


def test_garbage_delivered_verbatim():
    junk = "¯\\_(ツ)_/¯ 42 %% }{"
    with client(MockModel({".*": junk})) as c:
        assert c.query(build_plain(image())).raw_text == junk


def test_unscripted():
    with client(MockModel({"never matches": "x"})) as c, pytest.raises(UnscriptedRequest):
        c.query(build_plain(image()))


def test_malformed_response():
    def handler(request):
        return httpx.Response(200, json={"choices": []})
    c = VLMClient(cfg(), transport=httpx.MockTransport(handler))
    with pytest.raises(MalformedResponse):
        c.query(build_plain(image()))
    c2 = VLMClient(cfg(), transport=httpx.MockTransport(lambda r: httpx.Response(200, text="<html>")))
    with pytest.raises(MalformedResponse):
        c2.query(build_plain(image()))


def test_list_content_joined():
    def handler(request):
        return httpx.Response(200, json={"choices": [{"message": {"content": [
            {"type": "text", "text": "Person 1: "}, {"type": "text", "text": "Sad"}]}}]})
    c = VLMClient(cfg(), transport=httpx.MockTransport(handler))
    assert c.query(build_plain(image())).raw_text == "Person 1: Sad"


def test_timeout_retried_then_raised():
    sleeps = []

    def handler(request):
        raise httpx.ReadTimeout("slow", request=request)
    c = VLMClient(cfg(max_retries=1), transport=httpx.MockTransport(handler), sleep=sleeps.append)
    with pytest.raises(Timeout):
        c.query(build_plain(image()))
    assert sleeps == [1.0]


def test_downscale_recorded():
    big = SovImage(np.zeros((30, 3000, 3), dtype=np.uint8), [])
    mock = MockModel({".*": "x"})
    with client(mock) as c:
        ans = c.query(build_plain(big))
    assert ans.transport_meta["downscaled"] == {"from": [3000, 30], "to": [2048, 20]}
    small_payload, info = build_payload(cfg(), build_plain(image()))
    assert info is None


def test_config_validation():
    with pytest.raises(ConfigError):
        cfg(timeout=0)
    with pytest.raises(ConfigError):
        cfg(max_concurrent=0)


def test_api_key_from_env(monkeypatch):
    monkeypatch.setenv("SOV_API_KEY", SECRET)
    c = EndpointConfig.from_env("http://x", "m")
    assert c.api_key == SECRET
    assert SECRET not in repr(c)
    assert "api_key" not in c.to_dict()


def test_redact():
    s = f"key={SECRET} img=data:image/png;base64,AAAABBBB=="
    out = redact(s, [SECRET])
    assert SECRET not in out and "AAAABBBB" not in out


def test_secret_scan(tmp_path, caplog):
    mock = MockModel({".*": f"echo {SECRET}"}, statuses=[429])
    with caplog.at_level(logging.DEBUG, logger="sovprompt"):
        with VLMClient(cfg(), transport=mock.transport, sleep=lambda s: None, log_dir=tmp_path) as c:
            ans = c.query(build_plain(image()))
        with VLMClient(cfg(), transport=MockModel(statuses=[401]).transport,
                       log_dir=tmp_path) as c, pytest.raises(AuthError) as err:
            c.query(build_plain(image()))
    assert SECRET not in caplog.text
    assert SECRET not in str(err.value)
    for f in tmp_path.iterdir():
        assert SECRET not in f.read_text()
    assert "base64," not in (tmp_path / "transport.jsonl").read_text()
    # the reply itself is model output and passes through untouched
    assert ans.raw_text == f"echo {SECRET}"
    assert SECRET not in json.dumps(ans.transport_meta)


def test_answer_roundtrip():
    a = ModelAnswer("t", "d", 0.5, {"total_tokens": 3}, {"retries": 1})
    assert ModelAnswer.from_dict(json.loads(json.dumps(a.to_dict()))) == a


def test_ground_truth_mock_answers_per_person():
    img = image(3)
    table = {img.digest(): {1: "Happy", 2: "Neutral", 3: "Sad"}}
    with client(MockModel.ground_truth(table)) as c:
        ans = c.query(build_per_person(img, [1, 2, 3]))
    assert ans.raw_text == "Person 1: Happy\nPerson 2: Neutral\nPerson 3: Sad"
    with client(MockModel.ground_truth(table, wrong=True)) as c:
        ans = c.query(build_per_person(img, [1, 2, 3]))
    assert ans.raw_text == "Person 1: Sad\nPerson 2: Angry\nPerson 3: Surprise"
