"""Gesture dataset loading and per-phrase retrieval.

The dataset is a JSONL file, one gesture entry per line:

    {"id": str, "phrase": str, "category": str, "neutral": bool,
     "clip": relative path to a BVH file, "duration_s": number}

Phrases are embedded at load time and queries are answered by an exact
linear cosine scan (the dataset scale is hundreds of entries). Queries whose
best non-neutral similarity falls below the threshold get a uniformly random
neutral gesture drawn from the caller's seeded generator.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .bvh import GestureClip, parse_bvh
from .errors import MalformedEntry, MissingClip, NoNeutralGesture
from .text_semantics import PhraseSpan, embed

DEFAULT_SIMILARITY_THRESHOLD = 0.55


class GestureCategory(str, Enum):
    GREETING = "greeting"
    EMOTION = "emotion"
    EMPHASIS = "emphasis"
    ICONIC = "iconic"
    ACTIVE_LISTENING = "active_listening"
    GAZE_GUIDANCE = "gaze_guidance"
    NEUTRAL = "neutral"


@dataclass
class GestureEntry:
    id: str
    phrase: str
    embedding: np.ndarray
    category: GestureCategory
    neutral: bool
    clip_path: Path
    duration_s: float


@dataclass(frozen=True)
class GestureMatch:
    entry: GestureEntry
    similarity: float
    fallback: bool
    phrase_ordinal: int


class GestureDataset:
    def __init__(self, entries: list[GestureEntry], embedder, clips: dict[str, GestureClip]):
        self.entries = entries
        self.embedder = embedder
        self._clips = clips
        self.neutral_entries = sorted(
            (e for e in entries if e.neutral), key=lambda e: e.id
        )
        self._scored = [e for e in entries if not e.neutral]
        if self._scored:
            self._matrix = np.stack([e.embedding for e in self._scored])
        else:
            self._matrix = np.zeros((0, embedder.dim), dtype=np.float64)

    def __len__(self) -> int:
        return len(self.entries)

    def clip_for(self, entry_id: str) -> GestureClip:
        return self._clips[entry_id]

    def best_non_neutral(self, query: np.ndarray) -> tuple[GestureEntry | None, float]:
        """Highest-cosine non-neutral entry; ties broken by ascending id."""
        if not self._scored:
            return None, 0.0
        sims = self._matrix @ query
        best = float(np.max(sims))
        tied = np.flatnonzero(sims >= best - 0.0)
        winner = min((self._scored[i] for i in tied), key=lambda e: e.id)
        return winner, min(max(best, -1.0), 1.0)


def _require(raw: dict, key: str, kind, line: int):
    if key not in raw:
        raise MalformedEntry(f"missing field {key!r}", line=line, field=key)
    value = raw[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise MalformedEntry(f"field {key!r} must be a number", line=line, field=key)
        return float(value)
    if not isinstance(value, kind):
        raise MalformedEntry(
            f"field {key!r} must be {kind.__name__}", line=line, field=key
        )
    return value


def load_gesture_dataset(path: str | Path, embedder) -> GestureDataset:
    """Load and validate a gesture JSONL file, embedding every phrase."""
    path = Path(path)
    base = path.parent
    entries: list[tuple[dict, int]] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedEntry(f"invalid JSON: {exc}", line=line_no) from exc
            if not isinstance(raw, dict):
                raise MalformedEntry("entry must be a JSON object", line=line_no)
            entries.append((raw, line_no))

    seen_ids: set[str] = set()
    parsed: list[GestureEntry] = []
    clips: dict[str, GestureClip] = {}
    for raw, line_no in entries:
        entry_id = _require(raw, "id", str, line_no)
        if not entry_id:
            raise MalformedEntry("empty id", line=line_no, field="id")
        if entry_id in seen_ids:
            raise MalformedEntry(f"duplicate id {entry_id!r}", line=line_no, field="id")
        seen_ids.add(entry_id)

        phrase = _require(raw, "phrase", str, line_no)
        if not phrase:
            raise MalformedEntry("empty phrase", line=line_no, field="phrase")

        category_raw = _require(raw, "category", str, line_no)
        try:
            category = GestureCategory(category_raw)
        except ValueError:
            raise MalformedEntry(
                f"unknown category {category_raw!r}", line=line_no, field="category"
            ) from None

        neutral = _require(raw, "neutral", bool, line_no)
        if neutral != (category is GestureCategory.NEUTRAL):
            raise MalformedEntry(
                "neutral flag must match the neutral category",
                line=line_no,
                field="neutral",
            )

        clip_rel = _require(raw, "clip", str, line_no)
        duration_s = _require(raw, "duration_s", float, line_no)
        if duration_s <= 0:
            raise MalformedEntry(
                "duration_s must be positive", line=line_no, field="duration_s"
            )

        clip_path = base / clip_rel
        if not clip_path.is_file():
            raise MissingClip(f"clip file not found for {entry_id!r}: {clip_path}")
        clips[entry_id] = parse_bvh(clip_path.read_bytes(), source_id=entry_id)

        parsed.append(
            GestureEntry(
                id=entry_id,
                phrase=phrase,
                embedding=np.zeros(0),
                category=category,
                neutral=neutral,
                clip_path=clip_path,
                duration_s=duration_s,
            )
        )

    if not any(e.neutral for e in parsed):
        raise NoNeutralGesture(f"dataset {path} has no neutral gesture entry")

    vectors = embed([e.phrase for e in parsed], embedder)
    for entry, vec in zip(parsed, vectors):
        entry.embedding = vec

    return GestureDataset(parsed, embedder, clips)


def retrieve_gesture(
    phrase: PhraseSpan,
    dataset: GestureDataset,
    threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
    rng: random.Random | None = None,
    query_embedding: np.ndarray | None = None,
) -> GestureMatch:
    """Best-similarity gesture for one phrase, neutral fallback below threshold.

    The generator is consumed only when the fallback triggers, so a fixed
    seed yields a reproducible gesture sequence. A fallback match reports the
    best non-neutral similarity that was rejected (0 when none exists).
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be within [0, 1]")
    if query_embedding is None:
        query_embedding = embed([phrase.text], dataset.embedder)[0]
    winner, best = dataset.best_non_neutral(query_embedding)

    if winner is not None and best >= threshold:
        return GestureMatch(
            entry=winner,
            similarity=best,
            fallback=False,
            phrase_ordinal=phrase.ordinal,
        )

    if not dataset.neutral_entries:
        raise NoNeutralGesture("no neutral entries available for fallback")
    rng = rng if rng is not None else random.Random()
    choice = dataset.neutral_entries[rng.randrange(len(dataset.neutral_entries))]
    return GestureMatch(
        entry=choice,
        similarity=best if winner is not None else 0.0,
        fallback=True,
        phrase_ordinal=phrase.ordinal,
    )


def retrieve_sequence(
    phrases: list[PhraseSpan],
    dataset: GestureDataset,
    threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
    rng: random.Random | None = None,
) -> list[GestureMatch]:
    """One match per phrase, generator consumed strictly in phrase order."""
    if not phrases:
        return []
    embeddings = embed([p.text for p in phrases], dataset.embedder)
    return [
        retrieve_gesture(p, dataset, threshold, rng, query_embedding=vec)
        for p, vec in zip(phrases, embeddings)
    ]
