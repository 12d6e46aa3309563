"""Set-of-Vision visual prompting for zero-shot facial emotion recognition."""

__version__ = "0.1.0"

from .annotator import RenderStyle, SovImage, decode_png, encode_png, render
from .dataset import DatasetManifest, DifficultyBucket, bucket, load_manifest, stats
from .emotions import Emotion, VOCABULARY
from .evaluation import EvalReport, emit_report, match_faces, score
from .geometry import (AnnotatedFace, BoundingBox, FaceDetection, area, brute_force_resolve,
                       intersection_area, overlap_ratio, resolve_overlaps)
from .landmarks import ExpressionFeatures, LandmarkSet, extract_features
from .parser import ParsedPrediction, parse
from .prompts import PromptMode, PromptRequest, build_per_person, build_plain
from .vlm_client import EndpointConfig, MockModel, ModelAnswer, VLMClient
