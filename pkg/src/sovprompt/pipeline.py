"""End-to-end orchestration: annotate -> ask -> parse -> match -> score.

Run settings are merged from defaults, a YAML config file, ``SOV_*``
environment variables and explicit overrides, in increasing priority.
"""
from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import yaml

from . import __version__
from .annotator import RenderStyle, SovImage, atomic_write_bytes, encode_png, load_image, render
from .dataset import DatasetManifest
from .errors import ConfigError, SovError
from .evaluation import EvalReport, MatchResult, emit_report, match_faces, score
from .geometry import AnnotatedFace, DEFAULT_EPSILON, FaceDetection, resolve_overlaps
from .landmarks import extract_features
from .parser import ParsedPrediction, align_plain, parse
from .prompts import DEFAULT_TEMPLATES, PromptMode, build, load_templates
from .vlm_client import EndpointConfig, MockModel, ModelAnswer, VLMClient, oracle_answers

log = logging.getLogger(__name__)

ARMS = ("baseline", "box", "box+number", "sov")
ENV_PREFIX = "SOV_"
MOCK_BASE_URL = "http://mock.invalid/v1"


class StageError(SovError):
    """A pipeline stage failed; ``cause`` keeps the original exception."""

    def __init__(self, stage: str, where: str, cause: BaseException):
        super().__init__(f"[{stage}] {where}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class RunConfig:
    epsilon: float = DEFAULT_EPSILON
    iou_threshold: float = 0.5
    arm: str = "sov"
    mode: Optional[str] = None
    align_plain: bool = False
    endpoint: Optional[str] = None
    model: str = "gpt-4o"
    timeout: float = 120.0
    max_retries: int = 3
    max_concurrent: int = 4
    temperature: float = 0.0
    max_tokens: Optional[int] = None
    mock: Optional[str] = None
    templates: Optional[str] = None
    line_thickness_frac: float = 0.01
    label_scale_frac: float = 0.25
    landmark_radius_frac: float = 0.02

    def __post_init__(self):
        if self.arm not in ARMS:
            raise ConfigError(f"arm must be one of {ARMS}, got {self.arm!r}")
        if self.mode is not None:
            try:
                PromptMode(self.mode)
            except ValueError:
                raise ConfigError(f"mode must be 'plain' or 'per-person', got {self.mode!r}") from None
        if not 0 < self.epsilon < 1:
            raise ConfigError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not 0 < self.iou_threshold <= 1:
            raise ConfigError(f"iou_threshold must lie in (0, 1], got {self.iou_threshold}")

    @property
    def prompt_mode(self) -> PromptMode:
        if self.mode is not None:
            return PromptMode(self.mode)
        # without drawn numbers there is nothing for per-person questions to point at
        return PromptMode.PER_PERSON if self.arm in ("box+number", "sov") else PromptMode.PLAIN

    def style(self) -> RenderStyle:
        return RenderStyle.for_arm(self.arm, line_thickness_frac=self.line_thickness_frac,
                                   label_scale_frac=self.label_scale_frac,
                                   landmark_radius_frac=self.landmark_radius_frac)

    def endpoint_config(self) -> EndpointConfig:
        base = self.endpoint or (MOCK_BASE_URL if self.mock else None)
        if base is None:
            raise ConfigError("no endpoint configured: pass --endpoint or --mock")
        return EndpointConfig(base, self.model, api_key=os.environ.get("SOV_API_KEY", ""),
                              timeout=self.timeout, max_retries=self.max_retries,
                              max_concurrent=self.max_concurrent, temperature=self.temperature,
                              max_tokens=self.max_tokens)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _coerce(name: str, value):
    types = {f.name: f.type for f in fields(RunConfig)}
    if name not in types:
        raise ConfigError(f"unknown config key {name!r}")
    if value is None or not isinstance(value, str):
        return value
    t = str(types[name])
    try:
        if "float" in t:
            return float(value)
        if "int" in t:
            return int(value)
        if "bool" in t:
            return value.strip().lower() in ("1", "true", "yes", "on")
    except ValueError:
        raise ConfigError(f"bad value for {name}: {value!r}") from None
    return value


def resolve_config(overrides: Optional[Mapping] = None, *, env: Optional[Mapping[str, str]] = None,
                   config_file=None) -> RunConfig:
    """Merge settings: explicit overrides > ``SOV_*`` env > config file > defaults."""
    env = os.environ if env is None else env
    merged: Dict = {}
    config_file = config_file or env.get("SOV_CONFIG")
    if config_file:
        try:
            with open(config_file, encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"cannot read config file {config_file}: {e}") from e
        if not isinstance(data, Mapping):
            raise ConfigError(f"{config_file}: expected a key/value mapping")
        merged.update({k.replace("-", "_"): _coerce(k.replace("-", "_"), v) for k, v in data.items()})
    names = {f.name for f in fields(RunConfig)}
    for key, value in env.items():
        if key.startswith(ENV_PREFIX):
            name = key[len(ENV_PREFIX):].lower()
            if name in names:
                merged[name] = _coerce(name, value)
    for k, v in (overrides or {}).items():
        if v is not None:
            merged[k] = _coerce(k, v)
    return RunConfig(**merged)


def faces_to_json(faces: Sequence[AnnotatedFace]) -> List[dict]:
    out = []
    for f in faces:
        d = f.to_dict()
        if f.landmarks is not None:
            d["features"] = extract_features(f.landmarks).to_dict()
        out.append(d)
    return out


def annotate_image(pixels: np.ndarray, detections: Sequence[FaceDetection], cfg: RunConfig) -> SovImage:
    faces = resolve_overlaps(detections, cfg.epsilon)
    return render(pixels, faces, cfg.style())


def make_client(cfg: RunConfig, manifest: Optional[DatasetManifest] = None, *,
                log_dir=None, sleep=None) -> VLMClient:
    """Build a client for the configured endpoint or mock.

    ``cfg.mock`` is ``oracle`` (always right), ``adversarial`` (always wrong),
    or a path to a JSON script of canned replies.
    """
    kw = {} if sleep is None else {"sleep": sleep}
    ep = cfg.endpoint_config()
    if not cfg.mock:
        return VLMClient(ep, log_dir=log_dir, **kw)
    if cfg.mock in ("oracle", "adversarial"):
        if manifest is None:
            raise ConfigError(f"--mock {cfg.mock} needs a ground-truth manifest")
        mock = MockModel.ground_truth(oracle_answers(manifest, cfg.epsilon),
                                      wrong=cfg.mock == "adversarial")
    else:
        mock = MockModel.from_file(cfg.mock)
    return VLMClient(ep, transport=mock.transport, log_dir=log_dir, **kw)


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, obj) -> None:
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def default_run_dir(cfg: RunConfig, base="runs") -> Path:
    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    return Path(base) / f"{stamp}-{cfg.arm.replace('+', '_')}"


@dataclass
class ImageResult:
    image_path: str
    sov: SovImage
    answer: ModelAnswer
    parsed: ParsedPrediction
    match: MatchResult


def evaluate(manifest: DatasetManifest, cfg: RunConfig, run_dir, *,
             client: Optional[VLMClient] = None,
             detections: Optional[DatasetManifest] = None,
             manifest_path=None) -> EvalReport:
    """Drive the full pipeline over ``manifest`` and write a run directory.

    Faces come from ``detections`` when given (matched by ``image_path``),
    otherwise the ground-truth boxes stand in for detector output.
    """
    run_dir = Path(run_dir)
    (run_dir / "annotations").mkdir(parents=True, exist_ok=True)
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    templates = load_templates(cfg.templates) if cfg.templates else DEFAULT_TEMPLATES
    own_client = client is None
    if own_client:
        client = make_client(cfg, manifest, log_dir=run_dir)
    _write_json(run_dir / "config.json", cfg.to_dict())

    def detections_for(entry):
        if detections is None:
            return entry.detections()
        try:
            return detections.entry(entry.image_path).detections()
        except KeyError:
            raise SovError(f"no detections for {entry.image_path}") from None

    def run_one(entry) -> ImageResult:
        where = entry.image_path
        try:
            pixels = load_image(manifest.resolve(entry.image_path))
            sov = annotate_image(pixels, detections_for(entry), cfg)
        except Exception as e:
            raise StageError("annotate", where, e) from e
        stem = Path(entry.image_path).stem
        encode_png(sov, run_dir / "annotations" / f"{stem}.sov.png")
        _write_json(run_dir / "annotations" / f"{stem}.faces.json", faces_to_json(sov.faces))
        try:
            req = build(sov, cfg.prompt_mode, templates=templates)
        except Exception as e:
            raise StageError("prompt", where, e) from e
        try:
            answer = client.query(req)
        except Exception as e:
            raise StageError("ask", where, e) from e
        parsed = parse(answer, sov.face_ids)
        if cfg.align_plain and req.mode is PromptMode.PLAIN:
            parsed = align_plain(parsed, sov.face_ids)
        match = match_faces(entry.faces, sov.faces, cfg.iou_threshold)
        return ImageResult(entry.image_path, sov, answer, parsed, match)

    try:
        with ThreadPoolExecutor(max_workers=cfg.max_concurrent) as pool:
            results = list(pool.map(run_one, manifest.entries))
    finally:
        if own_client:
            client.close()

    lines = [json.dumps({"image_path": r.image_path, "answer": r.answer.to_dict(),
                         "parsed": r.parsed.to_dict(), "match": r.match.to_dict()}, sort_keys=True)
             for r in results]
    atomic_write_bytes(run_dir / "answers.jsonl", ("\n".join(lines) + "\n").encode("utf-8"))

    inputs = {}
    if manifest_path is not None:
        inputs["manifest"] = _sha256_file(manifest_path)
    for e in manifest.entries:
        p = manifest.resolve(e.image_path)
        inputs[e.image_path] = _sha256_file(p)
    provenance = {
        "config_digest": cfg.digest(),
        "package_version": __version__,
        "started": started,
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "inputs": inputs,
    }
    _write_json(run_dir / "provenance.json", provenance)

    report = score(manifest,
                   {r.image_path: r.parsed for r in results},
                   {r.image_path: r.match for r in results},
                   run_metadata={"config_digest": cfg.digest(), "arm": cfg.arm,
                                 "mode": cfg.prompt_mode.value, "started": started,
                                 "finished": provenance["finished"]})
    emit_report(report, run_dir)
    return report
