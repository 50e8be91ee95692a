"""Corpus manifests: line-delimited records pairing images with captions or labels.

A corpus lives in a directory as ``{root}/images/*`` plus ``{root}/manifest.jsonl``
(one JSON record per line, UTF-8). Records come from two kinds of sources:
``elite`` (image-text pairs with rich captions) and ``categorical`` (images with
only a category label).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SOURCES = ("elite", "categorical")
MODALITIES = ("CFP", "FFA", "OCT", "synthetic")

MANIFEST_NAME = "manifest.jsonl"
CLASSES_NAME = "classes.json"
IMAGES_DIR = "images"
TEXT_CORPUS_NAME = "text_corpus.txt"


class ManifestError(ValueError):
    """A manifest line failed to parse or violated a record invariant."""


@dataclass
class ManifestRecord:
    """One corpus entry: an image plus a caption and/or a category label.

    ``image_ref`` is either a path relative to the corpus root or an inline
    nested list (H x W x 3 floats in [0, 1]) for tiny in-memory corpora.
    """

    image_ref: str | list
    source: str
    caption: str | None = None
    category_id: int | None = None
    modality: str = "synthetic"

    def validate(self) -> None:
        if self.source not in SOURCES:
            raise ManifestError(f"unknown source {self.source!r}, expected one of {SOURCES}")
        if self.modality not in MODALITIES:
            raise ManifestError(f"unknown modality {self.modality!r}, expected one of {MODALITIES}")
        if self.caption is None and self.category_id is None:
            raise ManifestError("record has neither caption nor category_id")
        if self.source == "elite" and self.caption is None:
            raise ManifestError("elite record requires a caption")
        if self.source == "categorical" and self.category_id is None:
            raise ManifestError("categorical record requires a category_id")
        if self.category_id is not None and self.category_id < 0:
            raise ManifestError(f"category_id must be >= 0, got {self.category_id}")

    @property
    def record_id(self) -> str:
        """Stable identifier used for fold assignment and dedup."""
        if isinstance(self.image_ref, str):
            return self.image_ref
        digest = hashlib.sha256(json.dumps(self.image_ref).encode("utf-8")).hexdigest()
        return f"inline:{digest[:16]}"

    def to_json(self) -> str:
        payload = {"image_ref": self.image_ref, "source": self.source, "modality": self.modality}
        if self.caption is not None:
            payload["caption"] = self.caption
        if self.category_id is not None:
            payload["category_id"] = self.category_id
        return json.dumps(payload, sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "ManifestRecord":
        raw = json.loads(line)
        if not isinstance(raw, dict):
            raise ManifestError("record line is not a JSON object")
        known = {"image_ref", "source", "caption", "category_id", "modality"}
        unknown = set(raw) - known
        if unknown:
            raise ManifestError(f"unknown record fields: {sorted(unknown)}")
        rec = cls(
            image_ref=raw.get("image_ref"),
            source=raw.get("source", ""),
            caption=raw.get("caption"),
            category_id=raw.get("category_id"),
            modality=raw.get("modality", "synthetic"),
        )
        rec.validate()
        return rec


@dataclass
class ClassSpec:
    """Descriptor-table entry for one synthetic class."""

    class_id: int
    name: str
    motif: str
    color: str  # palette name, resolved to RGB at render time
    attributes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "class_id": self.class_id,
            "name": self.name,
            "motif": self.motif,
            "color": self.color,
            "attributes": list(self.attributes),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ClassSpec":
        return cls(
            class_id=int(raw["class_id"]),
            name=raw["name"],
            motif=raw["motif"],
            color=raw["color"],
            attributes=list(raw.get("attributes", [])),
        )


def load_manifest(path: str | Path) -> list[ManifestRecord]:
    """Load and validate a line-delimited manifest; errors carry line numbers."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(ManifestRecord.from_json(line))
            except (json.JSONDecodeError, ManifestError) as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from exc
    return records


def save_manifest(records: Iterable[ManifestRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            rec.validate()
            fh.write(rec.to_json())
            fh.write("\n")


def save_classes(classes: Sequence[ClassSpec], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump([c.to_dict() for c in classes], fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_classes(path: str | Path) -> list[ClassSpec]:
    with open(path, "r", encoding="utf-8") as fh:
        return [ClassSpec.from_dict(raw) for raw in json.load(fh)]


def load_image(record: ManifestRecord, root: str | Path | None = None) -> np.ndarray:
    """Resolve a record's image to a float32 H x W x 3 array in [0, 1]."""
    if isinstance(record.image_ref, list):
        arr = np.asarray(record.image_ref, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[-1] != 3:
            raise ManifestError(f"inline image must be H x W x 3, got shape {arr.shape}")
        return arr
    from PIL import Image

    path = Path(record.image_ref)
    if root is not None and not path.is_absolute():
        path = Path(root) / path
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0


def load_images(records: Sequence[ManifestRecord], root: str | Path | None = None) -> np.ndarray:
    """Stack record images into an N x H x W x 3 float32 batch."""
    if not records:
        raise ManifestError("no records to load images from")
    return np.stack([load_image(rec, root) for rec in records])


def corpus_paths(root: str | Path) -> tuple[Path, Path, Path]:
    """Return (manifest, classes, images_dir) paths under a corpus root."""
    root = Path(root)
    return root / MANIFEST_NAME, root / CLASSES_NAME, root / IMAGES_DIR


def load_corpus(root: str | Path) -> tuple[list[ManifestRecord], list[ClassSpec]]:
    manifest_path, classes_path, _ = corpus_paths(root)
    records = load_manifest(manifest_path)
    classes = load_classes(classes_path) if classes_path.exists() else []
    return records, classes


def default_runs_dir() -> Path:
    return Path(os.environ.get("KEEPFIT_RUNS_DIR", "runs"))
