"""Requested-permission extraction from decoded AndroidManifest.xml text."""
from __future__ import annotations

import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import quoteattr

import numpy as np

from .core import LabeledDataset, Vocabulary
from .errors import EmptyCorpus, NotAManifest, ParseError

ANDROID_NS = "http://schemas.android.com/apk/res/android"
_NAME_KEYS = (f"{{{ANDROID_NS}}}name", "android:name", "name")
PERMISSION_TAGS = ("uses-permission", "uses-permission-sdk-23")


@dataclass(frozen=True)
class ManifestParseResult:
    requested: frozenset
    unknown: tuple = ()
    source_id: str | None = None


def _local(tag):
    return tag.rsplit("}", 1)[-1] if isinstance(tag, str) else ""


def parse_manifest(xml_text: str, source_id: str | None = None) -> ManifestParseResult:
    """Collect ``android:name`` of every uses-permission element.

    Permissions bounded by ``maxSdkVersion`` are still counted as requested.
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        line, col = exc.position
        raise ParseError(f"malformed manifest XML: {exc}", line, col) from None
    if _local(root.tag) != "manifest":
        raise NotAManifest(f"root element is <{_local(root.tag)}>, expected <manifest>")
    requested = set()
    for el in root.iter():
        if _local(el.tag) in PERMISSION_TAGS:
            for key in _NAME_KEYS:
                name = el.get(key)
                if name:
                    requested.add(name.strip())
                    break
    return ManifestParseResult(frozenset(requested), (), source_id)


def build_feature_row(result: ManifestParseResult, vocabulary: Vocabulary):
    """Return ``(bits, result_with_unknown)``; names outside the vocabulary are reported, not set."""
    bits = np.zeros(vocabulary.size, dtype=np.uint8)
    unknown = []
    for name in sorted(result.requested):
        if name in vocabulary:
            bits[vocabulary.index(name)] = 1
        else:
            unknown.append(name)
    known = frozenset(n for n in result.requested if n in vocabulary)
    return bits, ManifestParseResult(known, tuple(unknown), result.source_id)


def manifest_from_vector(vector, vocabulary: Vocabulary, package="com.example.app") -> str:
    """Render a minimal manifest requesting exactly the permissions set in ``vector``."""
    lines = ['<?xml version="1.0" encoding="utf-8"?>',
             f'<manifest xmlns:android="{ANDROID_NS}" package={quoteattr(package)}>']
    for i in np.flatnonzero(np.asarray(vector)):
        lines.append(f"    <uses-permission android:name={quoteattr(vocabulary.names[i])} />")
    lines.append("    <application />")
    lines.append("</manifest>")
    return "\n".join(lines) + "\n"


@dataclass
class CorpusIngest:
    dataset: LabeledDataset
    skipped: list = field(default_factory=list)   # (file name, error message)
    unknown: dict = field(default_factory=dict)   # file name -> unknown permission names


def ingest_corpus(directory, vocabulary: Vocabulary, label: int) -> CorpusIngest:
    """Parse every file in ``directory`` (sorted by name) into one labeled dataset."""
    if label not in (0, 1):
        raise ValueError("label must be 0 or 1")
    directory = Path(directory)
    files = sorted(p for p in directory.iterdir() if p.is_file())
    rows, skipped, unknown = [], [], {}
    for path in files:
        try:
            text = path.read_text(encoding="utf-8")
            parsed = parse_manifest(text, source_id=path.name)
        except (ParseError, NotAManifest, UnicodeDecodeError) as exc:
            skipped.append((path.name, str(exc)))
            continue
        bits, parsed = build_feature_row(parsed, vocabulary)
        rows.append(bits)
        if parsed.unknown:
            unknown[path.name] = list(parsed.unknown)
    if not rows:
        raise EmptyCorpus(f"no manifest could be parsed in {os.fspath(directory)}")
    X = np.vstack(rows)
    y = np.full(len(rows), label, dtype=np.uint8)
    return CorpusIngest(LabeledDataset(X, y, vocabulary), skipped, unknown)
