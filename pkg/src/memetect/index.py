"""Local corpus index: manifest parsing, build, and a versioned on-disk format.

Rebuilding from the same manifest yields byte-identical index files: entry
order follows the manifest, payload JSON is key-sorted, and every derived
quantity (hash, features, text) is a pure function of pixel bytes.
"""
from __future__ import annotations

import base64
import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import decompose
from .errors import IndexFormatError, InputError, InsufficientFeaturesError
from .features import DEFAULT_FEATURES, FeatureSet, extract_features
from .imaging import RasterImage, dhash64

MAGIC = b"MEMIDX"
INDEX_VERSION = 1


@dataclass(frozen=True)
class ManifestItem:
    item_id: str
    path: str
    subset: str = "default"
    label: str | None = None


def read_manifest(path: str) -> list[ManifestItem]:
    """JSON Lines manifest: {"id", "path", "subset"?, "label"?} per record."""
    items: list[ManifestItem] = []
    seen: set[str] = set()
    base = os.path.dirname(os.path.abspath(path))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise InputError(f"{path}:{lineno}: bad JSON: {exc}") from exc
                if "id" not in record or "path" not in record:
                    raise InputError(f"{path}:{lineno}: record needs 'id' and 'path'")
                item_id = str(record["id"])
                if item_id in seen:
                    raise InputError(f"{path}:{lineno}: duplicate id {item_id!r}")
                seen.add(item_id)
                item_path = record["path"]
                if not os.path.isabs(item_path):
                    item_path = os.path.join(base, item_path)
                items.append(
                    ManifestItem(
                        item_id,
                        item_path,
                        str(record.get("subset", "default")),
                        record.get("label"),
                    )
                )
    except OSError as exc:
        raise InputError(f"cannot read manifest {path}: {exc}") from exc
    return items


@dataclass
class LocalIndexEntry:
    item_id: str
    path: str
    dhash64: int
    keypoints: np.ndarray  # (N, 2) float32
    descriptors: np.ndarray  # (N, 32) uint8
    text: str
    subset: str = "default"
    label: str | None = None

    def feature_set(self, width: int = 0, height: int = 0) -> FeatureSet:
        return FeatureSet(
            digest=f"entry:{self.item_id}",
            width=width,
            height=height,
            keypoints=self.keypoints,
            descriptors=self.descriptors,
        )


@dataclass
class BuildReport:
    built: int = 0
    warnings: list[str] = field(default_factory=list)


@dataclass
class LocalIndex:
    entries: list[LocalIndexEntry]
    version: int = INDEX_VERSION

    def __len__(self) -> int:
        return len(self.entries)

    def digest(self) -> str:
        return hashlib.sha256(_payload_bytes(self)).hexdigest()


def build_index(
    items: list[ManifestItem],
    ocr_backend: str = "glyph",
    n_features: int = DEFAULT_FEATURES,
) -> tuple[LocalIndex, BuildReport]:
    report = BuildReport()
    entries: list[LocalIndexEntry] = []
    for item in items:
        try:
            image = RasterImage.from_file(item.path)
        except Exception as exc:  # unreadable file: warn and exclude
            report.warnings.append(f"{item.item_id}: skipped ({exc})")
            continue
        regions = decompose.detect_text_regions(image, ocr_backend)
        text = decompose.extract_text(image, decompose.confident_regions(regions)).text or ""
        try:
            feats = extract_features(
                image, n_features, exclude_boxes=[r.bbox for r in regions]
            )
            keypoints, descriptors = feats.keypoints, feats.descriptors
        except InsufficientFeaturesError:
            report.warnings.append(f"{item.item_id}: too small for features, hash-only")
            keypoints = np.zeros((0, 2), dtype=np.float32)
            descriptors = np.zeros((0, 32), dtype=np.uint8)
        entries.append(
            LocalIndexEntry(
                item_id=item.item_id,
                path=item.path,
                dhash64=dhash64(image),
                keypoints=keypoints,
                descriptors=descriptors,
                text=text,
                subset=item.subset,
                label=item.label,
            )
        )
        report.built += 1
    return LocalIndex(entries), report


def _payload_bytes(index: LocalIndex) -> bytes:
    records = []
    for e in index.entries:
        records.append(
            {
                "item_id": e.item_id,
                "path": e.path,
                "dhash64": f"{e.dhash64:016x}",
                "keypoints": [[round(float(x), 2), round(float(y), 2)] for x, y in e.keypoints],
                "descriptors": base64.b64encode(e.descriptors.tobytes()).decode("ascii"),
                "text": e.text,
                "subset": e.subset,
                "label": e.label,
            }
        )
    doc = {"version": index.version, "entries": records}
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_index(index: LocalIndex, path: str) -> None:
    payload = _payload_bytes(index)
    blob = MAGIC + struct.pack("<II", index.version, 0) + payload
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_index(path: str) -> LocalIndex:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read index {path}: {exc}") from exc
    if blob[: len(MAGIC)] != MAGIC:
        raise IndexFormatError(f"{path}: not an index file")
    version, _ = struct.unpack_from("<II", blob, len(MAGIC))
    if version != INDEX_VERSION:
        raise IndexFormatError(
            f"{path}: format version {version} unsupported (expected {INDEX_VERSION})"
        )
    doc = json.loads(blob[len(MAGIC) + 8 :].decode("utf-8"))
    entries = []
    for record in doc["entries"]:
        descriptors = np.frombuffer(
            base64.b64decode(record["descriptors"]), dtype=np.uint8
        ).reshape(-1, 32)
        keypoints = np.array(record["keypoints"], dtype=np.float32).reshape(-1, 2)
        entries.append(
            LocalIndexEntry(
                item_id=record["item_id"],
                path=record["path"],
                dhash64=int(record["dhash64"], 16),
                keypoints=keypoints,
                descriptors=descriptors,
                text=record["text"],
                subset=record.get("subset", "default"),
                label=record.get("label"),
            )
        )
    return LocalIndex(entries, version=version)
