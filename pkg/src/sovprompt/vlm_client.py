"""Client for OpenAI-compatible ``/chat/completions`` endpoints, plus a mock.

The client sends one user message holding the question as a text part and the
rendered image as a base64 PNG ``image_url`` part. :class:`MockModel` plugs in
as an ``httpx`` transport so tests exercise the real wire format offline.
"""
from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import httpx
import numpy as np
from PIL import Image

from .annotator import png_bytes
from .emotions import VOCABULARY
from .errors import (AuthError, ConfigError, MalformedResponse, RateLimited,
                     Timeout, TransportError, UnscriptedRequest)
from .prompts import PromptRequest

log = logging.getLogger(__name__)

API_KEY_ENV = "SOV_API_KEY"
MAX_IMAGE_SIDE = 2048
DIGEST_HEADER = "X-SoV-Request-Digest"
IMAGE_HEADER = "X-SoV-Image-Digest"

_RETRY_STATUSES = {429, 500, 502, 503, 504}


@dataclass
class EndpointConfig:
    base_url: str
    model_name: str
    api_key: str = field(default="", repr=False)
    timeout: float = 120.0
    max_retries: int = 3
    max_concurrent: int = 4
    temperature: float = 0.0
    max_tokens: Optional[int] = None
    image_detail: Optional[str] = None

    def __post_init__(self):
        if not self.timeout > 0:
            raise ConfigError("timeout must be positive")
        if self.max_concurrent < 1:
            raise ConfigError("max_concurrent must be at least 1")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be non-negative")

    @classmethod
    def from_env(cls, base_url: str, model_name: str, **kw) -> "EndpointConfig":
        return cls(base_url, model_name, api_key=os.environ.get(API_KEY_ENV, ""), **kw)

    def to_dict(self) -> dict:
        """Serializable view; the API key is never included."""
        d = asdict(self)
        d.pop("api_key")
        return d


@dataclass
class ModelAnswer:
    raw_text: str
    request_digest: str
    latency: float = 0.0
    token_usage: Optional[Dict[str, int]] = None
    transport_meta: Dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelAnswer":
        return cls(d["raw_text"], d.get("request_digest", ""), d.get("latency", 0.0),
                   d.get("token_usage"), d.get("transport_meta", {}))


def _prepare_image(pixels: np.ndarray):
    h, w = pixels.shape[:2]
    scale = MAX_IMAGE_SIDE / max(h, w)
    if scale >= 1:
        return png_bytes(pixels), None
    size = (max(1, round(w * scale)), max(1, round(h * scale)))
    small = Image.fromarray(pixels, "RGB").resize(size, Image.Resampling.LANCZOS)
    return png_bytes(np.asarray(small)), {"from": [w, h], "to": list(size)}


def build_payload(cfg: EndpointConfig, req: PromptRequest):
    """Return ``(payload, downscale_info)`` for one chat completion request."""
    data, downscaled = _prepare_image(req.image.pixels)
    image_part = {"url": "data:image/png;base64," + base64.b64encode(data).decode("ascii")}
    if cfg.image_detail:
        image_part["detail"] = cfg.image_detail
    payload = {
        "model": cfg.model_name,
        "temperature": cfg.temperature,
        "messages": [{
            "role": "user",
            "content": [
                {"type": "text", "text": req.question},
                {"type": "image_url", "image_url": image_part},
            ],
        }],
    }
    if cfg.max_tokens is not None:
        payload["max_tokens"] = cfg.max_tokens
    return payload, downscaled


_DATA_URL = re.compile(r"data:image/[a-z]+;base64,[A-Za-z0-9+/=]+")


def redact(text: str, secrets: Sequence[str] = ()) -> str:
    """Strip secrets and inline image data from a loggable string."""
    for s in secrets:
        if s:
            text = text.replace(s, "<redacted>")
    return _DATA_URL.sub(lambda m: f"<image {len(m.group(0))} chars>", text)


def _extract_text(data) -> str:
    try:
        content = data["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise MalformedResponse("response has no choices[0].message.content") from None
    if isinstance(content, str):
        return content
    if isinstance(content, list):
        parts = [p.get("text", "") for p in content if isinstance(p, dict) and p.get("type") == "text"]
        if parts:
            return "".join(parts)
    raise MalformedResponse(f"unsupported content type {type(content).__name__}")


class VLMClient:
    """Thread-safe client; at most ``cfg.max_concurrent`` requests are in flight."""

    def __init__(self, cfg: EndpointConfig, *, transport: Optional[httpx.BaseTransport] = None,
                 sleep: Callable[[float], None] = time.sleep, log_dir=None):
        self.cfg = cfg
        self._http = httpx.Client(transport=transport, timeout=cfg.timeout)
        self._gate = threading.BoundedSemaphore(cfg.max_concurrent)
        self._sleep = sleep
        self._log_dir = Path(log_dir) if log_dir is not None else None
        self._log_lock = threading.Lock()

    def close(self):
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def url(self) -> str:
        return self.cfg.base_url.rstrip("/") + "/chat/completions"

    def _headers(self, req: PromptRequest) -> Dict[str, str]:
        headers = {
            "Content-Type": "application/json",
            DIGEST_HEADER: req.digest(),
            IMAGE_HEADER: req.image.source_digest or req.image.digest(),
        }
        if self.cfg.api_key:
            headers["Authorization"] = f"Bearer {self.cfg.api_key}"
        return headers

    def _log(self, kind: str, digest: str, body: str) -> None:
        text = redact(body, [self.cfg.api_key])
        log.debug("%s %s %s", kind, digest[:12], text)
        if self._log_dir is None:
            return
        line = json.dumps({"kind": kind, "digest": digest, "body": text})
        with self._log_lock:
            self._log_dir.mkdir(parents=True, exist_ok=True)
            with open(self._log_dir / "transport.jsonl", "a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    def query(self, req: PromptRequest) -> ModelAnswer:
        payload, downscaled = build_payload(self.cfg, req)
        body = json.dumps(payload).encode("utf-8")
        headers = self._headers(req)
        digest = headers[DIGEST_HEADER]
        trail: List = []
        self._log("request", digest, body.decode("utf-8"))

        with self._gate:
            start = time.monotonic()
            attempt = 0
            while True:
                err: TransportError
                try:
                    resp = self._http.post(self.url, content=body, headers=headers)
                except httpx.TimeoutException as e:
                    trail.append("timeout")
                    err = Timeout(f"request to {self.url} timed out: {e}")
                except httpx.TransportError as e:
                    trail.append(type(e).__name__)
                    err = TransportError(f"request to {self.url} failed: {e}")
                else:
                    status = resp.status_code
                    trail.append(status)
                    if status in (401, 403):
                        raise AuthError(f"endpoint rejected credentials (HTTP {status})")
                    if status in _RETRY_STATUSES:
                        cls = RateLimited if status == 429 else TransportError
                        err = cls(f"HTTP {status} from {self.url} after {attempt} retries")
                    elif status >= 400:
                        raise TransportError(f"HTTP {status} from {self.url}: {redact(resp.text[:200], [self.cfg.api_key])}")
                    else:
                        break
                if attempt >= self.cfg.max_retries:
                    raise err
                self._sleep(2.0 ** attempt)
                attempt += 1
            latency = time.monotonic() - start

        self._log("response", digest, resp.text)
        try:
            data = resp.json()
        except ValueError:
            raise MalformedResponse("response body is not JSON") from None
        meta = {"status": resp.status_code, "retries": attempt, "trail": trail}
        if downscaled:
            meta["downscaled"] = downscaled
        return ModelAnswer(_extract_text(data), digest, latency, data.get("usage"), meta)

    def query_many(self, reqs: Sequence[PromptRequest], workers: Optional[int] = None) -> List[ModelAnswer]:
        """Query in parallel, preserving input order; the first failure is re-raised."""
        workers = workers or self.cfg.max_concurrent
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(self.query, reqs))


_HEX64 = re.compile(r"^[0-9a-f]{64}$")
_PERSON_Q = re.compile(r"Person (\d+)'s emotion")


def _question_of(payload) -> str:
    try:
        for part in payload["messages"][-1]["content"]:
            if part.get("type") == "text":
                return part["text"]
    except (KeyError, IndexError, TypeError, AttributeError):
        pass
    return ""


class MockModel:
    """In-process chat endpoint returning canned text.

    ``script`` maps either a request digest (64 hex chars) or a regular
    expression searched in the question text to the reply. ``responder`` is
    consulted when nothing in the script matches. ``statuses`` is a queue of
    HTTP status codes served before normal replies, for retry tests.
    """

    def __init__(self, script: Optional[Mapping[str, str]] = None, *,
                 responder: Optional[Callable[[str, Mapping[str, str]], Optional[str]]] = None,
                 statuses: Sequence[int] = (), delay: float = 0.0):
        script = dict(script or {})
        self._digests = {k: v for k, v in script.items() if _HEX64.match(k)}
        self._patterns = [(re.compile(k), v) for k, v in script.items() if not _HEX64.match(k)]
        self._responder = responder
        self._statuses = list(statuses)
        self._delay = delay
        self._lock = threading.Lock()
        self.requests: List[httpx.Request] = []
        self.in_flight = 0
        self.max_in_flight = 0

    @property
    def transport(self) -> httpx.MockTransport:
        return httpx.MockTransport(self.handle)

    def reply_for(self, question: str, headers: Mapping[str, str]) -> str:
        digest = headers.get(DIGEST_HEADER, "")
        if digest in self._digests:
            return self._digests[digest]
        for pat, text in self._patterns:
            if pat.search(question):
                return text
        if self._responder is not None:
            text = self._responder(question, headers)
            if text is not None:
                return text
        raise UnscriptedRequest(f"no scripted reply for request {digest[:12] or '<no digest>'}")

    def handle(self, request: httpx.Request) -> httpx.Response:
        with self._lock:
            self.requests.append(request)
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
            status = self._statuses.pop(0) if self._statuses else 200
        try:
            if self._delay:
                time.sleep(self._delay)
            if status != 200:
                return httpx.Response(status, json={"error": {"code": status}})
            payload = json.loads(request.content)
            text = self.reply_for(_question_of(payload), request.headers)
            return httpx.Response(200, json={
                "id": "mock-" + hashlib.sha256(request.content).hexdigest()[:16],
                "object": "chat.completion",
                "model": payload.get("model", "mock"),
                "choices": [{"index": 0, "finish_reason": "stop",
                             "message": {"role": "assistant", "content": text}}],
                "usage": {"prompt_tokens": 0, "completion_tokens": len(text.split()),
                          "total_tokens": len(text.split())},
            })
        finally:
            with self._lock:
                self.in_flight -= 1

    @classmethod
    def from_file(cls, path) -> "MockModel":
        with open(path, encoding="utf-8") as fh:
            script = json.load(fh)
        if not isinstance(script, dict) or not all(isinstance(v, str) for v in script.values()):
            raise ConfigError(f"{path}: mock script must map keys to reply strings")
        return cls(script)

    @classmethod
    def ground_truth(cls, answers: Mapping[str, Mapping[int, str]], *, wrong: bool = False) -> "MockModel":
        """Answer per-person questions from a known ``image digest -> {id: label}`` table.

        With ``wrong=True`` every label is replaced by the next vocabulary entry,
        so each answer is guaranteed incorrect.
        """
        def label(gt: str) -> str:
            if not wrong:
                return gt
            return VOCABULARY[(VOCABULARY.index(gt) + 1) % len(VOCABULARY)]

        def respond(question, headers):
            table = answers.get(headers.get(IMAGE_HEADER, ""))
            if table is None:
                return None
            ids = [int(k) for k in _PERSON_Q.findall(question)]
            if not ids:
                # a plain question has no ids to refer to: labels only, in id order
                labels = ", ".join(label(table[k]) for k in sorted(table))
                return f"There are {len(table)} visible faces.\nTheir emotions: {labels}."
            return "\n".join(f"Person {k}: {label(table[k])}" for k in ids if k in table)

        return cls(responder=respond)


def oracle_answers(manifest, epsilon: float, *, loader=None) -> Dict[str, Dict[int, str]]:
    """Ground-truth id->label tables keyed by source image digest.

    Ids are those :func:`~sovprompt.geometry.resolve_overlaps` assigns when the
    ground-truth boxes themselves serve as detections.
    """
    from .annotator import load_image, raster_digest
    from .geometry import resolve_overlaps

    loader = loader or load_image
    tables: Dict[str, Dict[int, str]] = {}
    for entry in manifest.entries:
        digest = raster_digest(loader(manifest.resolve(entry.image_path)))
        if digest in tables:
            raise ConfigError(f"two manifest images share pixel content ({entry.image_path})")
        by_box = {}
        for f in entry.faces:
            by_box.setdefault(f.box, f.gt_emotion)
        kept = resolve_overlaps(entry.detections(), epsilon)
        tables[digest] = {f.id: by_box[f.box].value for f in kept if by_box.get(f.box) is not None}
    return tables
