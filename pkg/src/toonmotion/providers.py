"""Embedding and emotion providers.

Two provider kinds feed the pipeline: a sentence-embedding service and an
emotion estimator. Each has an offline implementation (deterministic, no
network) and an HTTP client speaking a small JSON protocol:

    POST /v1/embed    {"texts": [...]}            -> {"vectors": [[...]], "dim": int, "model": str}
    POST /v1/emotion  {"text": str, "image_ref": str|null} -> {"emotions": {name: num}}

HTTP clients retry transient failures with exponential backoff and raise
ProviderUnavailable once retries are exhausted.
"""

from __future__ import annotations

import json
import logging
import re
import time
from importlib import resources
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errors import DimensionMismatch, ProviderUnavailable
from .text_semantics import REFERENCE_DIM, reference_embed

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT_S = 10.0
DEFAULT_RETRIES = 2
DEFAULT_BACKOFF_S = 0.5

_WORD_RE = re.compile(r"[a-z']+")


class EmbeddingProvider(Protocol):
    dim: int
    model: str

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]: ...


class EmotionProvider(Protocol):
    def infer(self, text: str, image_ref: str | None = None) -> dict[str, float]: ...


def packaged_data_path(name: str) -> Path:
    """Path of a data file shipped inside the package."""
    return Path(str(resources.files("toonmotion").joinpath("data", name)))


def load_emotion_categories(path: str | Path | None = None) -> list[str]:
    """The configured emotion category list (130 names by default)."""
    path = packaged_data_path("emotion_categories.json") if path is None else Path(path)
    with open(path, encoding="utf-8") as fh:
        names = json.load(fh)
    return list(names)


def load_emotion_lexicon(path: str | Path | None = None) -> dict[str, dict[str, float]]:
    path = packaged_data_path("emotion_lexicon.json") if path is None else Path(path)
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


class ReferenceEmbedder:
    """Offline deterministic embedder (hashed character n-grams)."""

    dim = REFERENCE_DIM
    model = "ngram-hash-256-v1"

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [reference_embed(t) for t in texts]


class LexiconEmotionProvider:
    """Keyword-lexicon emotion estimator for offline operation.

    Stems are matched against lowercased word tokens by prefix; stems
    containing non-ASCII characters (e.g. Japanese) match by substring.
    Hits aggregate per category by max. No hits yields {Calmness: 0.5}.
    """

    model = "keyword-lexicon-v1"

    def __init__(self, lexicon: dict[str, dict[str, float]] | None = None):
        self.lexicon = load_emotion_lexicon() if lexicon is None else dict(lexicon)

    def infer(self, text: str, image_ref: str | None = None) -> dict[str, float]:
        lowered = text.lower()
        tokens = _WORD_RE.findall(lowered)
        found: dict[str, float] = {}
        for stem, emotions in self.lexicon.items():
            if stem.isascii():
                hit = any(tok.startswith(stem) for tok in tokens)
            else:
                hit = stem in text
            if not hit:
                continue
            for name, intensity in emotions.items():
                if intensity > found.get(name, 0.0):
                    found[name] = intensity
        if not found:
            return {"Calmness": 0.5}
        return found


def _post_json_with_retries(
    session,
    url: str,
    payload: dict,
    timeout_s: float,
    retries: int,
    backoff_s: float,
) -> dict:
    """POST JSON, retrying on 5xx/transport errors; returns the parsed body."""
    import requests

    last_error: Exception | None = None
    for attempt in range(retries + 1):
        if attempt > 0 and backoff_s > 0:
            time.sleep(backoff_s * (2 ** (attempt - 1)))
        try:
            response = session.post(url, json=payload, timeout=timeout_s)
        except requests.RequestException as exc:
            last_error = exc
            continue
        if response.status_code >= 500:
            last_error = ProviderUnavailable(f"{url} returned {response.status_code}")
            continue
        if response.status_code != 200:
            raise ProviderUnavailable(f"{url} returned {response.status_code}")
        try:
            return response.json()
        except ValueError as exc:
            raise ProviderUnavailable(f"{url} returned invalid JSON: {exc}") from exc
    raise ProviderUnavailable(
        f"{url} unavailable after {retries + 1} attempts: {last_error}"
    )


class HttpEmbeddingProvider:
    """Client for the /v1/embed endpoint."""

    def __init__(
        self,
        endpoint: str,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        retries: int = DEFAULT_RETRIES,
        backoff_s: float = DEFAULT_BACKOFF_S,
        session=None,
    ):
        if session is None:
            import requests

            session = requests.Session()
        self.endpoint = endpoint.rstrip("/")
        self.timeout_s = timeout_s
        self.retries = retries
        self.backoff_s = backoff_s
        self.session = session
        self.dim: int | None = None
        self.model = "remote"

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        body = _post_json_with_retries(
            self.session,
            f"{self.endpoint}/v1/embed",
            {"texts": list(texts)},
            self.timeout_s,
            self.retries,
            self.backoff_s,
        )
        try:
            vectors = body["vectors"]
            dim = int(body["dim"])
            self.model = str(body.get("model", self.model))
        except (KeyError, TypeError, ValueError) as exc:
            raise ProviderUnavailable(f"malformed embed response: {exc}") from exc
        if self.dim is None:
            self.dim = dim
        elif dim != self.dim:
            raise DimensionMismatch(f"provider dim changed from {self.dim} to {dim}")
        out = []
        for vec in vectors:
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (dim,):
                raise DimensionMismatch(
                    f"vector shape {arr.shape} does not match declared dim {dim}"
                )
            out.append(arr)
        return out


class HttpEmotionProvider:
    """Client for the /v1/emotion endpoint."""

    model = "remote"

    def __init__(
        self,
        endpoint: str,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        retries: int = DEFAULT_RETRIES,
        backoff_s: float = DEFAULT_BACKOFF_S,
        session=None,
    ):
        if session is None:
            import requests

            session = requests.Session()
        self.endpoint = endpoint.rstrip("/")
        self.timeout_s = timeout_s
        self.retries = retries
        self.backoff_s = backoff_s
        self.session = session

    def infer(self, text: str, image_ref: str | None = None) -> dict[str, float]:
        body = _post_json_with_retries(
            self.session,
            f"{self.endpoint}/v1/emotion",
            {"text": text, "image_ref": image_ref},
            self.timeout_s,
            self.retries,
            self.backoff_s,
        )
        emotions = body.get("emotions")
        if not isinstance(emotions, dict):
            raise ProviderUnavailable("malformed emotion response: missing 'emotions'")
        return {str(k): float(v) for k, v in emotions.items()}


class FallbackEmotionProvider:
    """Try a primary provider, fall back to the lexicon when unreachable."""

    def __init__(self, primary: EmotionProvider, fallback: EmotionProvider):
        self.primary = primary
        self.fallback = fallback

    def infer(self, text: str, image_ref: str | None = None) -> dict[str, float]:
        try:
            return self.primary.infer(text, image_ref)
        except ProviderUnavailable as exc:
            log.warning("emotion provider unavailable, using lexicon fallback: %s", exc)
            return self.fallback.infer(text, image_ref)
