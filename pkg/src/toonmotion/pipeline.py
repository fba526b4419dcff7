"""End-to-end synthesis: dialogue text + duration to an animation bundle.

The bundle is a BVH body track, a face track JSON, and a manifest recording
every retrieved asset plus a config hash, so offline runs are byte-for-byte
reproducible given (request, config, datasets).
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import tempfile
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .bvh import serialize_bvh
from .errors import ConfigError, DurationMismatch, ValidationError
from .expression_dataset import load_expression_dataset
from .face_engine import (
    compose_face_track,
    fallback_phonemes,
    infer_dialogue_emotion,
    lipsync_track,
    load_phoneme_file,
    load_viseme_table,
    plan_transition,
    retrieve_expression,
    schedule_blinks,
)
from .gesture_retrieval import load_gesture_dataset, retrieve_sequence
from .jsonutil import canonical_json
from .motion_compose import retime_to_speech, stitch_clips
from .providers import (
    FallbackEmotionProvider,
    HttpEmbeddingProvider,
    HttpEmotionProvider,
    LexiconEmotionProvider,
    ReferenceEmbedder,
    load_emotion_categories,
)
from .text_semantics import PhraseSpan, segment_phrases

EMBED_ENDPOINT_ENV = "TOONMOTION_EMBED_ENDPOINT"
EMOTION_ENDPOINT_ENV = "TOONMOTION_EMOTION_ENDPOINT"


@dataclass
class Config:
    gesture_dataset: Path
    expression_dataset: Path
    provider_mode: str = "offline"
    embed_endpoint: str | None = None
    emotion_endpoint: str | None = None
    emotion_fallback_lexicon: bool = False
    similarity_threshold: float = 0.55
    blend_s: float = 0.3
    transition_s: float = 0.4
    blink_mean_gap_s: float = 4.0
    blink_min_gap_s: float = 1.0
    viseme_table: Path | None = None
    emotion_categories: Path | None = None
    fps: float = 30.0
    timeout_s: float = 10.0
    retries: int = 2

    _raw: dict | None = None

    def config_hash(self) -> str:
        """Stable hash of the normalized configuration values."""
        raw = self._raw if self._raw is not None else _normalize_config_dict(self)
        return hashlib.sha256(canonical_json(raw).encode("utf-8")).hexdigest()

    def validate(self):
        if self.provider_mode not in ("offline", "remote"):
            raise ConfigError(f"provider_mode must be offline|remote, got {self.provider_mode!r}")
        if self.provider_mode == "remote":
            if not self.embed_endpoint or not self.emotion_endpoint:
                raise ConfigError("remote mode requires embed and emotion endpoints")
        if not 0.0 <= self.similarity_threshold <= 1.0:
            raise ConfigError("similarity_threshold must be within [0, 1]")
        for name in ("blend_s",):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("transition_s", "blink_mean_gap_s", "blink_min_gap_s",
                     "fps", "timeout_s"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.retries < 0:
            raise ConfigError("retries must be >= 0")
        for label, path in (
            ("gesture_dataset", self.gesture_dataset),
            ("expression_dataset", self.expression_dataset),
            ("viseme_table", self.viseme_table),
            ("emotion_categories", self.emotion_categories),
        ):
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"{label} file not found: {path}")


_CONFIG_DEFAULTS = {
    "provider_mode": "offline",
    "embed_endpoint": None,
    "emotion_endpoint": None,
    "emotion_fallback_lexicon": False,
    "similarity_threshold": 0.55,
    "blend_s": 0.3,
    "transition_s": 0.4,
    "blink_mean_gap_s": 4.0,
    "blink_min_gap_s": 1.0,
    "viseme_table": None,
    "emotion_categories": None,
    "fps": 30.0,
    "timeout_s": 10.0,
    "retries": 2,
}


def _normalize_config_dict(config: "Config") -> dict:
    return {
        "gesture_dataset": str(config.gesture_dataset),
        "expression_dataset": str(config.expression_dataset),
        **{k: getattr(config, k) if not isinstance(getattr(config, k), Path)
           else str(getattr(config, k))
           for k in _CONFIG_DEFAULTS},
    }


def load_config(path: str | Path) -> Config:
    """Read a JSON config; relative paths resolve against the config file.

    Provider endpoints may be overridden through the environment
    (TOONMOTION_EMBED_ENDPOINT / TOONMOTION_EMOTION_ENDPOINT).
    """
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")

    known = set(_CONFIG_DEFAULTS) | {"gesture_dataset", "expression_dataset"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]!r}")
    for key in ("gesture_dataset", "expression_dataset"):
        if key not in raw:
            raise ConfigError(f"config is missing {key!r}")

    merged = {**_CONFIG_DEFAULTS, **raw}
    merged["embed_endpoint"] = os.environ.get(
        EMBED_ENDPOINT_ENV, merged["embed_endpoint"]
    )
    merged["emotion_endpoint"] = os.environ.get(
        EMOTION_ENDPOINT_ENV, merged["emotion_endpoint"]
    )

    base = path.parent

    def respath(value):
        return None if value is None else (base / value)

    config = Config(
        gesture_dataset=base / merged["gesture_dataset"],
        expression_dataset=base / merged["expression_dataset"],
        provider_mode=str(merged["provider_mode"]),
        embed_endpoint=merged["embed_endpoint"],
        emotion_endpoint=merged["emotion_endpoint"],
        emotion_fallback_lexicon=bool(merged["emotion_fallback_lexicon"]),
        similarity_threshold=float(merged["similarity_threshold"]),
        blend_s=float(merged["blend_s"]),
        transition_s=float(merged["transition_s"]),
        blink_mean_gap_s=float(merged["blink_mean_gap_s"]),
        blink_min_gap_s=float(merged["blink_min_gap_s"]),
        viseme_table=respath(merged["viseme_table"]),
        emotion_categories=respath(merged["emotion_categories"]),
        fps=float(merged["fps"]),
        timeout_s=float(merged["timeout_s"]),
        retries=int(merged["retries"]),
    )
    # Hash the pre-resolution values so the hash does not depend on where
    # the config file happens to live.
    config._raw = {**merged, "gesture_dataset": raw["gesture_dataset"],
                   "expression_dataset": raw["expression_dataset"]}
    config.validate()
    return config


@dataclass
class DialogueRequest:
    text: str
    speech_duration_s: float
    phoneme_file: Path | None = None
    seed: int = 0
    character_profile: str | None = None

    def validate(self):
        if not self.text.strip():
            raise ValidationError("request text is empty")
        if self.speech_duration_s <= 0:
            raise ValidationError("speech duration must be positive")
        if self.seed < 0:
            raise ValidationError("seed must be a non-negative integer")


@dataclass
class OutputBundle:
    body: bytes
    face_json: str
    manifest_json: str

    def write(self, out_dir: str | Path):
        """Write body.bvh, face.json and manifest.json atomically.

        All three files are staged as temporaries first and renamed last, so
        a failure never leaves a partially written bundle member behind.
        """
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        staged = []
        try:
            for name, data in (
                ("body.bvh", self.body),
                ("face.json", self.face_json.encode("utf-8")),
                ("manifest.json", self.manifest_json.encode("utf-8")),
            ):
                fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=f".{name}.")
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
                staged.append((tmp, out_dir / name))
            for tmp, final in staged:
                os.replace(tmp, final)
        except BaseException:
            for tmp, _ in staged:
                try:
                    os.unlink(tmp)
                except OSError:
                    pass
            raise


def provider_clients(config: Config):
    """Embedding and emotion providers for the configured mode."""
    if config.provider_mode == "offline":
        return ReferenceEmbedder(), LexiconEmotionProvider()
    embedder = HttpEmbeddingProvider(
        config.embed_endpoint, timeout_s=config.timeout_s, retries=config.retries
    )
    emotion = HttpEmotionProvider(
        config.emotion_endpoint, timeout_s=config.timeout_s, retries=config.retries
    )
    if config.emotion_fallback_lexicon:
        emotion = FallbackEmotionProvider(emotion, LexiconEmotionProvider())
    return embedder, emotion


def synthesize(
    request: DialogueRequest,
    config: Config,
    out_dir: str | Path | None = None,
    embedder=None,
    emotion_provider=None,
) -> OutputBundle:
    """Run the full pipeline and optionally write the bundle.

    A single seeded generator drives all randomness, consumed in a fixed
    documented order: gesture fallback draws (phrase order) first, blink
    scheduling second. Offline runs are therefore byte-deterministic.
    """
    request.validate()
    config.validate()
    if embedder is None or emotion_provider is None:
        default_embedder, default_emotion = provider_clients(config)
        embedder = embedder or default_embedder
        emotion_provider = emotion_provider or default_emotion

    categories = load_emotion_categories(config.emotion_categories)
    gestures = load_gesture_dataset(config.gesture_dataset, embedder)
    expressions = load_expression_dataset(config.expression_dataset)
    viseme_table = load_viseme_table(config.viseme_table)

    rng = random.Random(request.seed)

    phrases = segment_phrases(request.text)
    if not phrases:
        # Delimiter-only text still gets a gesture: treat the trimmed text
        # as one phrase and let retrieval fall back to neutral.
        phrases = [PhraseSpan(request.text.strip(), 0, len(request.text), 0)]
    matches = retrieve_sequence(
        phrases, gestures, config.similarity_threshold, rng
    )

    clips = [gestures.clip_for(m.entry.id) for m in matches]
    stitched = stitch_clips([m.entry.id for m in matches], clips, config.blend_s)
    body_track = retime_to_speech(stitched, request.speech_duration_s)

    emotions = infer_dialogue_emotion(request.text, emotion_provider, categories)
    expression, expr_similarity = retrieve_expression(emotions, expressions)

    if request.phoneme_file is not None:
        phonemes = load_phoneme_file(request.phoneme_file)
        last_end = max((ev.end_s for ev in phonemes), default=0.0)
        if last_end > request.speech_duration_s + 1e-6:
            raise DurationMismatch(
                f"phoneme timeline ends at {last_end}s, speech is "
                f"{request.speech_duration_s}s"
            )
        lipsync_source = f"file:{Path(request.phoneme_file).name}"
    else:
        phonemes = fallback_phonemes(request.text, request.speech_duration_s)
        lipsync_source = "fallback"

    transition = plan_transition(
        {}, expression.blendshapes, t0=0.0, dur=config.transition_s
    )
    suppressed = []
    if (
        expression.blendshapes.get("circleEyes", 0.0) > 0.0
        or expression.blendshapes.get("angleEyes", 0.0) > 0.0
    ):
        # Overlay eyes snap on at the transition midpoint and stay active.
        suppressed.append((config.transition_s / 2.0, request.speech_duration_s))
    blinks = schedule_blinks(
        request.speech_duration_s,
        rng,
        suppressed,
        mean_gap_s=config.blink_mean_gap_s,
        min_gap_s=config.blink_min_gap_s,
    )
    lipsync = lipsync_track(
        phonemes,
        config.fps,
        duration_s=request.speech_duration_s,
        viseme_table=viseme_table,
        source=lipsync_source,
    )
    face = compose_face_track(
        expression,
        transition,
        blinks,
        lipsync,
        request.speech_duration_s,
        config.fps,
    )

    manifest = {
        "tool_version": __version__,
        "config_hash": config.config_hash(),
        "provider_mode": config.provider_mode,
        "embedding_model": embedder.model,
        "fps": config.fps,
        "inputs": {
            "text": request.text,
            "speech_duration_s": request.speech_duration_s,
            "seed": request.seed,
            "phoneme_file": (
                Path(request.phoneme_file).name if request.phoneme_file else None
            ),
            "character_profile": request.character_profile,
        },
        "gestures": [
            {
                "query_phrase": phrase.text,
                "ordinal": match.phrase_ordinal,
                "entry_id": match.entry.id,
                "similarity": match.similarity,
                "fallback": match.fallback,
            }
            for phrase, match in zip(phrases, matches)
        ],
        "expression": {"entry_id": expression.id, "similarity": expr_similarity},
        "dialogue_emotions": emotions,
        "blink_onsets": face.provenance["blink_onsets"],
        "lipsync_source": lipsync_source,
        "body_frames": body_track.frame_count,
        "face_frames": face.frame_count,
    }

    bundle = OutputBundle(
        body=serialize_bvh(body_track.to_clip()),
        face_json=canonical_json(face.to_json_dict()) + "\n",
        manifest_json=canonical_json(manifest) + "\n",
    )
    if out_dir is not None:
        bundle.write(out_dir)
    return bundle
