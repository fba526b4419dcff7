"""Command-line interface.

Exit codes: 0 success, 1 validation/data errors, 2 provider or I/O errors,
64 usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import MalformedEntry, ProviderError, ValidationError
from .expression_dataset import (
    ExpressionEntry,
    annotate_emotion,
    build_dataset,
    validate_entry,
)
from .gesture_retrieval import load_gesture_dataset, retrieve_sequence
from .jsonutil import atomic_write_text, canonical_json
from .pipeline import (
    Config,
    DialogueRequest,
    load_config,
    provider_clients,
    synthesize,
)
from .providers import LexiconEmotionProvider, ReferenceEmbedder, load_emotion_categories
from .text_semantics import segment_phrases

USAGE_EXIT = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def build_parser() -> _Parser:
    parser = _Parser(prog="toonmotion",
                     description="Gesture and face animation synthesis")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synthesize", help="produce a BVH + face track bundle")
    p.add_argument("--text", required=True, help="dialogue text")
    p.add_argument("--duration", required=True, type=float,
                   help="speech duration in seconds")
    p.add_argument("--phonemes", type=Path, default=None,
                   help="timed phoneme JSON file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path, help="output directory")

    p = sub.add_parser("build-expressions",
                       help="fuse source fixtures into an expression dataset")
    p.add_argument("--sources", required=True, type=Path,
                   help="directory of per-image JSON fixtures")
    p.add_argument("--out", required=True, type=Path, help="output JSONL path")
    p.add_argument("--report", type=Path, default=None,
                   help="where to write the build report JSON")
    p.add_argument("--config", type=Path, default=None)

    p = sub.add_parser("annotate-emotions",
                       help="recompute emotion vectors for a dataset")
    p.add_argument("--dataset", required=True, type=Path,
                   help="expression JSONL to annotate")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--config", type=Path, default=None)

    p = sub.add_parser("validate-dataset", help="check a dataset file")
    p.add_argument("--kind", required=True, choices=("gesture", "expression"))
    p.add_argument("--path", required=True, type=Path)

    p = sub.add_parser("retrieve",
                       help="debug dump of per-phrase gesture matches")
    p.add_argument("--text", required=True)
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=None)
    return parser


def _emotion_provider_for(config_path: Path | None):
    if config_path is None:
        return LexiconEmotionProvider(), None
    config = load_config(config_path)
    _, emotion = provider_clients(config)
    return emotion, config


def _cmd_synthesize(args) -> int:
    config = load_config(args.config)
    request = DialogueRequest(
        text=args.text,
        speech_duration_s=args.duration,
        phoneme_file=args.phonemes,
        seed=args.seed,
    )
    synthesize(request, config, out_dir=args.out)
    print(f"bundle written to {args.out}")
    return 0


def _cmd_build_expressions(args) -> int:
    if args.config is not None:
        provider, config = _emotion_provider_for(args.config)
        categories = load_emotion_categories(config.emotion_categories)
    else:
        provider = LexiconEmotionProvider()
        categories = load_emotion_categories()
    entries, report = build_dataset(
        args.sources, provider, out_path=args.out, categories=categories
    )
    report_json = canonical_json(report.to_json_dict())
    if args.report is not None:
        atomic_write_text(args.report, report_json + "\n")
    print(report_json)
    return 0


def _cmd_annotate_emotions(args) -> int:
    provider, config = _emotion_provider_for(args.config)
    categories = load_emotion_categories(
        config.emotion_categories if config else None
    )
    entries = []
    with open(args.dataset, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedEntry(f"invalid JSON: {exc}", line=line_no) from exc
            entries.append(
                ExpressionEntry(
                    id=str(raw["id"]),
                    blendshapes={k: float(v) for k, v in raw["blendshapes"].items()},
                    emotions={},
                    source=raw.get("source", {}),
                )
            )
    for entry in entries:
        annotate_emotion(entry, provider, categories)
    entries.sort(key=lambda e: e.id)
    text = "".join(canonical_json(e.to_json_dict()) + "\n" for e in entries)
    atomic_write_text(args.out, text)
    print(f"annotated {len(entries)} entries")
    return 0


def _cmd_validate_dataset(args) -> int:
    if args.kind == "gesture":
        load_gesture_dataset(args.path, ReferenceEmbedder())
        print(canonical_json({"violations": []}))
        return 0
    # Read entries directly instead of load_expression_dataset, which stops
    # at the first invalid one; validation should report all of them.
    violations: list[str] = []
    seen: set[str] = set()
    with open(args.path, encoding="utf-8") as fh:
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
                    raise MalformedEntry(
                        f"missing field {key!r}", line=line_no, field=key
                    )
            entry = ExpressionEntry(
                id=str(raw["id"]),
                blendshapes={k: float(v) for k, v in raw["blendshapes"].items()},
                emotions={k: float(v) for k, v in raw["emotions"].items()},
                source=raw["source"],
            )
            if entry.id in seen:
                violations.append(f"{entry.id}: duplicate id")
            seen.add(entry.id)
            for issue in validate_entry(entry):
                violations.append(f"{entry.id}: {issue}")
    print(canonical_json({"violations": violations}))
    return 0 if not violations else 1


def _cmd_retrieve(args) -> int:
    import random

    config = load_config(args.config)
    embedder, _ = provider_clients(config)
    dataset = load_gesture_dataset(config.gesture_dataset, embedder)
    threshold = (
        args.threshold if args.threshold is not None else config.similarity_threshold
    )
    phrases = segment_phrases(args.text)
    matches = retrieve_sequence(phrases, dataset, threshold, random.Random(args.seed))
    print(
        canonical_json(
            {
                "text": args.text,
                "threshold": threshold,
                "matches": [
                    {
                        "phrase": phrase.text,
                        "ordinal": match.phrase_ordinal,
                        "entry_id": match.entry.id,
                        "similarity": match.similarity,
                        "fallback": match.fallback,
                    }
                    for phrase, match in zip(phrases, matches)
                ],
            }
        )
    )
    return 0


_COMMANDS = {
    "synthesize": _cmd_synthesize,
    "build-expressions": _cmd_build_expressions,
    "annotate-emotions": _cmd_annotate_emotions,
    "validate-dataset": _cmd_validate_dataset,
    "retrieve": _cmd_retrieve,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else USAGE_EXIT
    try:
        return _COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
