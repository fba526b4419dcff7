"""Expression dataset construction for comic-style faces.

Each source image contributes three inference fixtures (expression tags with
confidences, 28 facial landmarks, multiple-choice answers). fuse_sources
turns them into blendshape weights with a strict three-pass precedence:
landmark geometry first, tag rules second, answers override whole channel
categories last. annotate_emotion attaches an emotion vector from a
provider, and build_dataset runs the whole batch into a sorted JSONL file
plus a summary report.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    EmptyEmotionResponse,
    InvalidLandmarks,
    MalformedEntry,
    UnknownOption,
)
from .jsonutil import atomic_write_text, canonical_json
from .providers import load_emotion_categories

log = logging.getLogger(__name__)

FACE_CHANNELS = (
    "browDownL",
    "browDownR",
    "browUpL",
    "browUpR",
    "eyeBlinkL",
    "eyeBlinkR",
    "eyeWideL",
    "eyeWideR",
    "squintL",
    "squintR",
    "lidTightL",
    "lidTightR",
    "cheekPuff",
    "noseSneerL",
    "noseSneerR",
    "jawOpen",
    "mouthSmileL",
    "mouthSmileR",
    "mouthFrownL",
    "mouthFrownR",
    "mouthPucker",
    "mouthStretchL",
    "mouthStretchR",
    "mouthPressL",
    "mouthPressR",
)

EXAGGERATION_CHANNELS = ("shockLines", "sweatDrop", "blush", "circleEyes", "angleEyes")

CHANNEL_REGISTRY = FACE_CHANNELS + EXAGGERATION_CHANNELS

# Channels zeroed whenever a circle/angle eye overlay is active.
EYELID_CHANNELS = ("eyeBlinkL", "eyeBlinkR", "eyeWideL", "eyeWideR",
                   "lidTightL", "lidTightR")

EYE_STATE_CHANNELS = EYELID_CHANNELS + ("squintL", "squintR", "circleEyes", "angleEyes")
MOUTH_CHANNELS = (
    "jawOpen",
    "mouthSmileL",
    "mouthSmileR",
    "mouthFrownL",
    "mouthFrownR",
    "mouthPucker",
    "mouthStretchL",
    "mouthStretchR",
    "mouthPressL",
    "mouthPressR",
)
BROW_CHANNELS = ("browUpL", "browUpR", "browDownL", "browDownR")
OVERLAY_CHANNELS = ("sweatDrop", "blush", "shockLines")

EYE_STATE_OPTIONS = ("open", "half", "closed", "circle", "angle")
MOUTH_OPTIONS = ("open", "closed", "smile", "frown", "pucker")
BROW_OPTIONS = ("neutral", "raised", "furrowed")
OVERLAY_OPTIONS = ("none", "sweat", "blush", "shock")

MAX_EMOTIONS_PER_ENTRY = 8

# 28-point landmark layout (image coordinates, y grows downward):
#   0-4   face contour
#   5-7   left brow          8-10  right brow
#   11-14 left eye (outer, top, inner, bottom)
#   15-18 right eye (outer, top, inner, bottom)
#   19-23 nose
#   24-27 mouth (left corner, top, right corner, bottom)
LANDMARK_COUNT = 28

_LEFT_BROW = slice(5, 8)
_RIGHT_BROW = slice(8, 11)
_LEFT_EYE = slice(11, 15)
_RIGHT_EYE = slice(15, 19)
_MOUTH_LEFT, _MOUTH_TOP, _MOUTH_RIGHT, _MOUTH_BOTTOM = 24, 25, 26, 27

BBOX_SLACK = 0.2


@dataclass(frozen=True)
class Tag:
    tag: str
    confidence: float


@dataclass
class LandmarkSet:
    points: np.ndarray
    bbox: tuple[float, float, float, float]

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.shape != (LANDMARK_COUNT, 2):
            raise InvalidLandmarks(
                f"expected {LANDMARK_COUNT} 2D points, got shape {self.points.shape}"
            )
        x0, y0, x1, y1 = self.bbox
        if not (x1 > x0 and y1 > y0):
            raise InvalidLandmarks(f"degenerate bounding box {self.bbox}")
        sx = (x1 - x0) * BBOX_SLACK
        sy = (y1 - y0) * BBOX_SLACK
        inside = (
            (self.points[:, 0] >= x0 - sx)
            & (self.points[:, 0] <= x1 + sx)
            & (self.points[:, 1] >= y0 - sy)
            & (self.points[:, 1] <= y1 + sy)
        )
        if not np.all(inside):
            bad = int(np.flatnonzero(~inside)[0])
            raise InvalidLandmarks(f"landmark {bad} outside expanded bounding box")
        for name, sl in (("left", _LEFT_EYE), ("right", _RIGHT_EYE)):
            if self._span_width(sl) <= 0:
                raise InvalidLandmarks(f"degenerate {name} eye width")
        if self.mouth_width() <= 0:
            raise InvalidLandmarks("degenerate mouth width")

    def _span_width(self, eye: slice) -> float:
        pts = self.points[eye]
        return float(np.linalg.norm(pts[0] - pts[2]))

    def eye_width(self, side: str) -> float:
        return self._span_width(_LEFT_EYE if side == "L" else _RIGHT_EYE)

    def eye_gap(self, side: str) -> float:
        pts = self.points[_LEFT_EYE if side == "L" else _RIGHT_EYE]
        return abs(float(pts[3][1] - pts[1][1]))

    def eye_center_y(self, side: str) -> float:
        pts = self.points[_LEFT_EYE if side == "L" else _RIGHT_EYE]
        return float(np.mean(pts[:, 1]))

    def brow_y(self, side: str) -> float:
        pts = self.points[_LEFT_BROW if side == "L" else _RIGHT_BROW]
        return float(np.mean(pts[:, 1]))

    def mouth_width(self) -> float:
        return float(
            np.linalg.norm(self.points[_MOUTH_LEFT] - self.points[_MOUTH_RIGHT])
        )

    def mouth_gap(self) -> float:
        return abs(float(self.points[_MOUTH_BOTTOM][1] - self.points[_MOUTH_TOP][1]))


@dataclass
class ChoiceAnswers:
    eye_state: str | None = None
    mouth: str | None = None
    brow: str | None = None
    overlays: list[str] | None = None

    def __post_init__(self):
        if self.eye_state is not None and self.eye_state not in EYE_STATE_OPTIONS:
            raise UnknownOption(f"eye_state option {self.eye_state!r}")
        if self.mouth is not None and self.mouth not in MOUTH_OPTIONS:
            raise UnknownOption(f"mouth option {self.mouth!r}")
        if self.brow is not None and self.brow not in BROW_OPTIONS:
            raise UnknownOption(f"brow option {self.brow!r}")
        if self.overlays is not None:
            for opt in self.overlays:
                if opt not in OVERLAY_OPTIONS:
                    raise UnknownOption(f"overlays option {opt!r}")
            if "none" in self.overlays and len(self.overlays) > 1:
                raise UnknownOption("'none' cannot combine with other overlays")


@dataclass
class ExpressionEntry:
    id: str
    blendshapes: dict[str, float]
    emotions: dict[str, float]
    source: dict

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "blendshapes": self.blendshapes,
            "emotions": self.emotions,
            "source": self.source,
        }


@dataclass(frozen=True)
class FusionCalibration:
    """Normalization constants for the landmark geometry pass."""

    eye_gap_scale: float = 0.4
    mouth_gap_scale: float = 0.8
    corner_slope_gain: float = 3.0
    brow_gain: float = 2.0
    brow_neutral_ratio: float = 0.5
    tag_confidence_floor: float = 0.35


_TAG_EXAGGERATIONS = {
    "blush": "blush",
    "sweat": "sweatDrop",
    "sweat_drop": "sweatDrop",
    "sweatdrop": "sweatDrop",
    "shock": "shockLines",
    "shock_lines": "shockLines",
}

_EYE_STATE_POSES = {
    "open": {},
    "half": {"eyeBlinkL": 0.5, "eyeBlinkR": 0.5},
    "closed": {"eyeBlinkL": 1.0, "eyeBlinkR": 1.0},
    "circle": {"circleEyes": 1.0},
    "angle": {"angleEyes": 1.0},
}

_MOUTH_POSES = {
    "open": {"jawOpen": 0.7},
    "closed": {},
    "smile": {"mouthSmileL": 0.8, "mouthSmileR": 0.8},
    "frown": {"mouthFrownL": 0.8, "mouthFrownR": 0.8},
    "pucker": {"mouthPucker": 0.8},
}

_BROW_POSES = {
    "neutral": {},
    "raised": {"browUpL": 0.7, "browUpR": 0.7},
    "furrowed": {"browDownL": 0.7, "browDownR": 0.7},
}

_OVERLAY_TARGETS = {"sweat": "sweatDrop", "blush": "blush", "shock": "shockLines"}


def _clamp01(v: float) -> float:
    return min(max(v, 0.0), 1.0)


def empty_blendshapes() -> dict[str, float]:
    return {name: 0.0 for name in CHANNEL_REGISTRY}


def _override_category(shapes: dict[str, float], channels: tuple[str, ...],
                       pose: dict[str, float]):
    for name in channels:
        shapes[name] = 0.0
    shapes.update(pose)


def fuse_sources(
    tags: list[Tag],
    landmarks: LandmarkSet,
    answers: ChoiceAnswers,
    calibration: FusionCalibration = FusionCalibration(),
) -> dict[str, float]:
    """Fuse the three inference sources into one blendshape map.

    Pass 1 reads geometry off the landmarks, pass 2 applies tag rules above
    the confidence floor, pass 3 lets answers override entire channel
    categories. Precedence is absolute within each overridden category.
    """
    shapes = empty_blendshapes()

    for side in ("L", "R"):
        width = landmarks.eye_width(side)
        gap = landmarks.eye_gap(side)
        shapes[f"eyeBlink{side}"] = _clamp01(
            1.0 - gap / (calibration.eye_gap_scale * width)
        )

    mouth_width = landmarks.mouth_width()
    shapes["jawOpen"] = _clamp01(
        landmarks.mouth_gap() / (calibration.mouth_gap_scale * mouth_width)
    )

    center_y = (
        float(landmarks.points[_MOUTH_TOP][1]) + float(landmarks.points[_MOUTH_BOTTOM][1])
    ) / 2.0
    for side, corner in (("L", _MOUTH_LEFT), ("R", _MOUTH_RIGHT)):
        # Image y grows downward, so a corner above center means a smile.
        lift = (center_y - float(landmarks.points[corner][1])) / mouth_width
        if lift >= 0:
            shapes[f"mouthSmile{side}"] = _clamp01(calibration.corner_slope_gain * lift)
        else:
            shapes[f"mouthFrown{side}"] = _clamp01(-calibration.corner_slope_gain * lift)

    for side in ("L", "R"):
        width = landmarks.eye_width(side)
        ratio = (landmarks.eye_center_y(side) - landmarks.brow_y(side)) / width
        delta = ratio - calibration.brow_neutral_ratio
        if delta >= 0:
            shapes[f"browUp{side}"] = _clamp01(calibration.brow_gain * delta)
        else:
            shapes[f"browDown{side}"] = _clamp01(-calibration.brow_gain * delta)

    for tag in tags:
        if tag.confidence < calibration.tag_confidence_floor:
            continue
        name = tag.tag
        if name in _TAG_EXAGGERATIONS:
            shapes[_TAG_EXAGGERATIONS[name]] = _clamp01(tag.confidence)
        elif name == "smile":
            shapes["mouthSmileL"] = max(shapes["mouthSmileL"], _clamp01(tag.confidence))
            shapes["mouthSmileR"] = max(shapes["mouthSmileR"], _clamp01(tag.confidence))
        elif name == "frown":
            shapes["mouthFrownL"] = max(shapes["mouthFrownL"], _clamp01(tag.confidence))
            shapes["mouthFrownR"] = max(shapes["mouthFrownR"], _clamp01(tag.confidence))
        else:
            log.info("ignoring unknown expression tag %r", name)

    if answers.eye_state is not None:
        _override_category(shapes, EYE_STATE_CHANNELS, _EYE_STATE_POSES[answers.eye_state])
    if answers.mouth is not None:
        _override_category(shapes, MOUTH_CHANNELS, _MOUTH_POSES[answers.mouth])
    if answers.brow is not None:
        _override_category(shapes, BROW_CHANNELS, _BROW_POSES[answers.brow])
    if answers.overlays is not None:
        pose = {}
        for opt in answers.overlays:
            if opt != "none":
                pose[_OVERLAY_TARGETS[opt]] = 1.0
        _override_category(shapes, OVERLAY_CHANNELS, pose)

    for name in shapes:
        shapes[name] = _clamp01(shapes[name])
    repair_exclusivity(shapes)
    return shapes


def repair_exclusivity(shapes: dict[str, float]):
    """Circle/angle eye overlays replace the regular eyelid channels."""
    if shapes.get("circleEyes", 0.0) > 0.0 or shapes.get("angleEyes", 0.0) > 0.0:
        for name in EYELID_CHANNELS:
            shapes[name] = 0.0


def restrict_emotion_response(
    response: dict[str, float],
    known: set[str],
    context: str = "",
) -> dict[str, float]:
    """Keep only known categories with clamped (0,1] intensities, top 8.

    Ranking is by intensity descending with name as tiebreak. Raises
    EmptyEmotionResponse when nothing usable remains.
    """
    kept = {}
    for name, value in response.items():
        if name not in known:
            continue
        value = float(value)
        if value <= 0.0:
            continue
        kept[name] = min(value, 1.0)
    if not kept:
        raise EmptyEmotionResponse(f"no usable emotion categories{context}")
    top = sorted(kept.items(), key=lambda kv: (-kv[1], kv[0]))[:MAX_EMOTIONS_PER_ENTRY]
    return dict(top)


def annotate_emotion(
    entry: ExpressionEntry,
    provider,
    categories: list[str] | None = None,
) -> ExpressionEntry:
    """Attach a provider emotion vector, restricted to the category list."""
    known = set(load_emotion_categories() if categories is None else categories)
    dialogue = entry.source.get("dialogue") or ""
    response = provider.infer(dialogue, image_ref=entry.source.get("image_id"))
    entry.emotions = restrict_emotion_response(
        response, known, context=f" for entry {entry.id!r}"
    )
    return entry


def parse_source_fixture(raw: dict) -> tuple[str, str | None, list[Tag], LandmarkSet, ChoiceAnswers]:
    """Validate one per-image source JSON document."""
    if not isinstance(raw, dict):
        raise MalformedEntry("source fixture must be a JSON object")
    image_id = raw.get("image_id")
    if not isinstance(image_id, str) or not image_id:
        raise MalformedEntry("missing image_id", field="image_id")
    dialogue = raw.get("dialogue")
    if dialogue is not None and not isinstance(dialogue, str):
        raise MalformedEntry("dialogue must be a string or null", field="dialogue")

    tags_raw = raw.get("tags", [])
    if not isinstance(tags_raw, list):
        raise MalformedEntry("tags must be a list", field="tags")
    tags = []
    for item in tags_raw:
        if not isinstance(item, dict) or "tag" not in item or "confidence" not in item:
            raise MalformedEntry("tag items need 'tag' and 'confidence'", field="tags")
        conf = float(item["confidence"])
        if not np.isfinite(conf) or not 0.0 <= conf <= 1.0:
            raise MalformedEntry(f"tag confidence {conf} out of range", field="tags")
        tags.append(Tag(tag=str(item["tag"]).lower(), confidence=conf))

    lm_raw = raw.get("landmarks")
    if not isinstance(lm_raw, dict) or "points" not in lm_raw or "bbox" not in lm_raw:
        raise MalformedEntry("landmarks need 'points' and 'bbox'", field="landmarks")
    landmarks = LandmarkSet(points=lm_raw["points"], bbox=tuple(lm_raw["bbox"]))

    ans_raw = raw.get("answers", {})
    if not isinstance(ans_raw, dict):
        raise MalformedEntry("answers must be an object", field="answers")
    known_questions = {"eye_state", "mouth", "brow", "overlays"}
    unknown = set(ans_raw) - known_questions
    if unknown:
        raise UnknownOption(f"unknown question id {sorted(unknown)[0]!r}")
    answers = ChoiceAnswers(
        eye_state=ans_raw.get("eye_state"),
        mouth=ans_raw.get("mouth"),
        brow=ans_raw.get("brow"),
        overlays=list(ans_raw["overlays"]) if "overlays" in ans_raw else None,
    )
    return image_id, dialogue, tags, landmarks, answers


@dataclass
class BuildReport:
    total: int = 0
    rejects: list[dict] = field(default_factory=list)
    exaggeration_counts: dict[str, int] = field(default_factory=dict)
    exaggeration_share: float = 0.0

    def to_json_dict(self) -> dict:
        return {
            "total": self.total,
            "rejects": self.rejects,
            "exaggeration_counts": self.exaggeration_counts,
            "exaggeration_share": self.exaggeration_share,
        }


def build_dataset(
    sources_dir: str | Path,
    provider,
    out_path: str | Path | None = None,
    categories: list[str] | None = None,
    calibration: FusionCalibration = FusionCalibration(),
) -> tuple[list[ExpressionEntry], BuildReport]:
    """Fuse and annotate every source fixture in a directory.

    Per-image failures are collected into the report instead of aborting.
    Output is sorted by entry id, so the result is independent of directory
    iteration order; with the offline provider it is byte-stable.
    """
    sources_dir = Path(sources_dir)
    report = BuildReport()
    entries: list[ExpressionEntry] = []

    for fixture in sorted(sources_dir.glob("*.json")):
        try:
            with open(fixture, encoding="utf-8") as fh:
                raw = json.load(fh)
            image_id, dialogue, tags, landmarks, answers = parse_source_fixture(raw)
            shapes = fuse_sources(tags, landmarks, answers, calibration)
            entry = ExpressionEntry(
                id=image_id,
                blendshapes=shapes,
                emotions={},
                source={"image_id": image_id, "dialogue": dialogue},
            )
            annotate_emotion(entry, provider, categories)
        except Exception as exc:
            report.rejects.append({"file": fixture.name, "error": str(exc)})
            continue
        entries.append(entry)

    entries.sort(key=lambda e: e.id)
    ids = [e.id for e in entries]
    if len(set(ids)) != len(ids):
        dupe = sorted({i for i in ids if ids.count(i) > 1})[0]
        raise MalformedEntry(f"duplicate entry id {dupe!r} across fixtures", field="id")

    report.total = len(entries)
    report.exaggeration_counts = {
        name: sum(1 for e in entries if e.blendshapes[name] > 0.0)
        for name in EXAGGERATION_CHANNELS
    }
    with_any = sum(
        1
        for e in entries
        if any(e.blendshapes[name] > 0.0 for name in EXAGGERATION_CHANNELS)
    )
    report.exaggeration_share = with_any / report.total if report.total else 0.0

    if out_path is not None:
        lines = [canonical_json(e.to_json_dict()) for e in entries]
        text = "".join(line + "\n" for line in lines)
        atomic_write_text(Path(out_path), text)
    return entries, report


def validate_entry(entry: ExpressionEntry,
                   categories: list[str] | None = None) -> list[str]:
    """Every invariant violation in one list; empty means valid."""
    violations: list[str] = []
    shapes = entry.blendshapes
    for name in shapes:
        if name not in CHANNEL_REGISTRY:
            violations.append(f"unknown channel {name!r}")
    for name in CHANNEL_REGISTRY:
        if name not in shapes:
            violations.append(f"missing channel {name!r}")
            continue
        value = shapes[name]
        if not np.isfinite(value) or not 0.0 <= value <= 1.0:
            violations.append(f"range violation on {name!r}: {value}")
    if shapes.get("circleEyes", 0.0) > 0.0 or shapes.get("angleEyes", 0.0) > 0.0:
        for name in EYELID_CHANNELS:
            if shapes.get(name, 0.0) != 0.0:
                violations.append(f"exclusivity violation: {name!r} with overlay eyes")
    if not entry.emotions:
        violations.append("empty emotion vector")
    for name, value in entry.emotions.items():
        if not np.isfinite(value) or not 0.0 < value <= 1.0:
            violations.append(f"emotion intensity out of (0,1] for {name!r}: {value}")
        if categories is not None and name not in categories:
            violations.append(f"emotion category {name!r} not in configured list")
    if len(entry.emotions) > MAX_EMOTIONS_PER_ENTRY:
        violations.append("more than 8 emotion categories")
    return violations


def load_expression_dataset(path: str | Path) -> list[ExpressionEntry]:
    """Read an expression JSONL file, validating every entry."""
    path = Path(path)
    entries: list[ExpressionEntry] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedEntry(f"invalid JSON: {exc}", line=line_no) from exc
            for key in ("id", "blendshapes", "emotions", "source"):
                if key not in raw:
                    raise MalformedEntry(f"missing field {key!r}", line=line_no, field=key)
            entry = ExpressionEntry(
                id=str(raw["id"]),
                blendshapes={k: float(v) for k, v in raw["blendshapes"].items()},
                emotions={k: float(v) for k, v in raw["emotions"].items()},
                source=raw["source"],
            )
            if entry.id in seen:
                raise MalformedEntry(
                    f"duplicate id {entry.id!r}", line=line_no, field="id"
                )
            seen.add(entry.id)
            violations = validate_entry(entry)
            if violations:
                raise MalformedEntry(
                    f"invalid entry {entry.id!r}: {violations[0]}", line=line_no
                )
            entries.append(entry)
    return entries
