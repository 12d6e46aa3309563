"""``sov`` command line: annotate | ask | evaluate | oracle.

Exit codes: 0 success, 1 pipeline error, 2 config/schema error, 3 transport error.
"""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .annotator import RenderStyle, SovImage, default_output_path, encode_png, load_image, render
from .dataset import load_detections, load_manifest, parse_manifest
from .errors import ConfigError, SchemaError, SovError, TransportError
from .geometry import AnnotatedFace, BoundingBox, FaceDetection, brute_force_resolve, resolve_overlaps
from .landmarks import LandmarkSet
from .parser import parse
from .pipeline import (ARMS, StageError, _write_json, default_run_dir, evaluate, faces_to_json,
                       make_client, resolve_config)
from .prompts import DEFAULT_TEMPLATES, build_per_person, build_plain, load_templates

EXIT_OK, EXIT_PIPELINE, EXIT_CONFIG, EXIT_TRANSPORT = 0, 1, 2, 3

log = logging.getLogger("sovprompt")


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, (ConfigError, SchemaError)):
        return EXIT_CONFIG
    if isinstance(exc, TransportError):
        return EXIT_TRANSPORT
    return EXIT_PIPELINE


def _fail(exc: BaseException):
    click.echo(f"error: {exc}", err=True)
    sys.exit(exit_code_for(exc))


def _given(**kw):
    return {k: v for k, v in kw.items() if v is not None}


@click.group()
@click.option("--config", "config_file", type=click.Path(dir_okay=False),
              help="YAML file of run settings (lowest priority after defaults).")
@click.option("-v", "--verbose", count=True)
@click.pass_context
def main(ctx, config_file, verbose):
    """Set-of-Vision face marking and zero-shot emotion evaluation."""
    logging.basicConfig(level=logging.DEBUG if verbose > 1 else logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = {"config_file": config_file}


def _style_flags(f):
    f = click.option("--no-boxes", is_flag=True)(f)
    f = click.option("--no-numbers", is_flag=True)(f)
    f = click.option("--no-landmarks", is_flag=True)(f)
    return f


@main.command()
@click.argument("detections", type=click.Path(exists=True, dir_okay=False))
@click.option("--epsilon", type=float)
@click.option("--arm", type=click.Choice(ARMS))
@click.option("--out", type=click.Path(file_okay=False), help="Output folder (default: beside each image).")
@_style_flags
@click.pass_obj
def annotate(obj, detections, epsilon, arm, out, no_boxes, no_numbers, no_landmarks):
    """Resolve overlaps and draw numbered marks for every image in DETECTIONS."""
    try:
        cfg = resolve_config(_given(epsilon=epsilon, arm=arm), config_file=obj["config_file"])
        manifest = load_detections(detections)
    except SovError as e:
        _fail(e)
    base = cfg.style()
    style = RenderStyle(base.palette, base.line_thickness_frac, base.label_scale_frac,
                        base.landmark_radius_frac,
                        draw_landmarks=base.draw_landmarks and not no_landmarks,
                        draw_numbers=base.draw_numbers and not no_numbers,
                        draw_boxes=base.draw_boxes and not no_boxes)
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
    failures = 0
    for entry in manifest.entries:
        src = manifest.resolve(entry.image_path)
        try:
            faces = resolve_overlaps(entry.detections(), cfg.epsilon)
            sov = render(load_image(src), faces, style)
            png = encode_png(sov, default_output_path(src, ".sov.png", out))
            _write_json(default_output_path(src, ".faces.json", out), faces_to_json(faces))
            click.echo(f"{png}\t{len(faces)} faces")
        except SovError as e:
            failures += 1
            log.error("%s: %s", entry.image_path, e)
    sys.exit(EXIT_PIPELINE if failures else EXIT_OK)


def _faces_from_json(items):
    faces = []
    for d in items:
        lm = d.get("landmarks")
        faces.append(AnnotatedFace(int(d["id"]), BoundingBox.from_seq(d["box"]),
                                   LandmarkSet.from_json(lm) if lm is not None else None,
                                   float(d.get("confidence", 1.0))))
    return faces


@main.command()
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.option("--faces", "faces_path", type=click.Path(exists=True, dir_okay=False),
              help="Retained-face JSON written by 'annotate' (default: <stem>.faces.json beside IMAGE).")
@click.option("--mode", type=click.Choice(["plain", "per-person"]), default="per-person", show_default=True)
@click.option("--ids", help="Comma-separated face ids (per-person mode; default all).")
@click.option("--question", help="Free-form question (plain mode).")
@click.option("--endpoint", help="Base URL of an OpenAI-compatible API.")
@click.option("--model")
@click.option("--mock", type=click.Path(exists=True, dir_okay=False), help="JSON script of canned replies.")
@click.option("--out", type=click.Path(file_okay=False))
@click.pass_obj
def ask(obj, image, faces_path, mode, ids, question, endpoint, model, mock, out):
    """Send a rendered IMAGE with a question and parse the reply."""
    img = Path(image)
    stem = img.name[:-len(".sov.png")] if img.name.endswith(".sov.png") else img.stem
    faces_path = Path(faces_path) if faces_path else img.with_name(f"{stem}.faces.json")
    out_dir = Path(out) if out else img.parent
    try:
        cfg = resolve_config(_given(endpoint=endpoint, model=model, mock=mock, mode=mode),
                             config_file=obj["config_file"])
        faces = _faces_from_json(json.loads(faces_path.read_text())) if faces_path.exists() else []
        sov = SovImage(load_image(img), faces)
        templates = load_templates(cfg.templates) if cfg.templates else DEFAULT_TEMPLATES
        if mode == "plain":
            req = build_plain(sov, question, templates=templates)
        else:
            wanted = [int(k) for k in ids.split(",")] if ids else sov.face_ids
            req = build_per_person(sov, wanted, templates=templates)
        with make_client(cfg) as client:
            answer = client.query(req)
    except (SovError, OSError, ValueError) as e:
        _fail(e)
    parsed = parse(answer, sov.face_ids)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / f"{stem}.answer.json", answer.to_dict())
    _write_json(out_dir / f"{stem}.parsed.json", parsed.to_dict())
    click.echo(json.dumps({"raw_text": answer.raw_text, "parsed": parsed.to_dict()}, indent=2))


@main.command(name="evaluate")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--detections", type=click.Path(exists=True, dir_okay=False),
              help="Detector output in manifest format (default: ground-truth boxes).")
@click.option("--epsilon", type=float)
@click.option("--iou", "iou_threshold", type=float)
@click.option("--arm", type=click.Choice(ARMS))
@click.option("--mode", type=click.Choice(["plain", "per-person"]))
@click.option("--align-plain", is_flag=True, default=None,
              help="Credit labels from plain-text answers to faces by position.")
@click.option("--endpoint")
@click.option("--model")
@click.option("--mock", help="'oracle', 'adversarial' or a JSON reply script.")
@click.option("--out", type=click.Path(file_okay=False), help="Run directory (default runs/<timestamp>-<arm>).")
@click.pass_obj
def evaluate_cmd(obj, manifest, detections, epsilon, iou_threshold, arm, mode, align_plain,
                 endpoint, model, mock, out):
    """Run annotate -> ask -> parse -> score over MANIFEST and write a report."""
    try:
        cfg = resolve_config(_given(epsilon=epsilon, iou_threshold=iou_threshold, arm=arm,
                                        mode=mode, align_plain=align_plain, endpoint=endpoint,
                                        model=model, mock=mock),
                             config_file=obj["config_file"])
        m = load_manifest(manifest)
        dets = load_detections(detections) if detections else None
        run_dir = Path(out) if out else default_run_dir(cfg)
        report = evaluate(m, cfg, run_dir, detections=dets, manifest_path=manifest)
    except SovError as e:
        _fail(e)
    click.echo(report.format_table())
    click.echo(f"run directory: {run_dir}")


@main.command()
@click.argument("detections", type=click.Path(exists=True, dir_okay=False))
@click.option("--epsilon", type=float)
@click.pass_obj
def oracle(obj, detections, epsilon):
    """Print the brute-force retained face set for DETECTIONS.

    DETECTIONS is either a manifest-format file (output keyed by image) or a
    bare JSON list of faces with "box" and optional "landmarks"/"confidence".
    """
    try:
        cfg = resolve_config(_given(epsilon=epsilon), config_file=obj["config_file"])
        data = json.loads(Path(detections).read_text())
        if isinstance(data, list):
            dets = [FaceDetection(BoundingBox.from_seq(d["box"]), float(d.get("confidence", 1.0)),
                                  LandmarkSet.from_json(d["landmarks"]) if d.get("landmarks") is not None else None)
                    for d in data]
            result = faces_to_json(brute_force_resolve(dets, cfg.epsilon))
        else:
            m = parse_manifest(data, source=detections, require_gt=False)
            result = {e.image_path: faces_to_json(brute_force_resolve(e.detections(), cfg.epsilon))
                      for e in m.entries}
    except json.JSONDecodeError as e:
        _fail(SchemaError(f"{detections}: {e}"))
    except (KeyError, TypeError) as e:
        _fail(SchemaError(f"{detections}: malformed face entry ({e})"))
    except SovError as e:
        _fail(e)
    click.echo(json.dumps(result, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
