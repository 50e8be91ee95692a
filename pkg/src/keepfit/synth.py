"""Synthetic stand-in corpora with controllable class structure.

Each class gets a distinct visual motif (shape + color) drawn over a noisy
fundus-like background with jittered position/scale, so a small encoder can
separate classes but not trivially. Elite records carry rich multi-phrase
captions that always name the class motif; categorical records carry only a
category id.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    IMAGES_DIR,
    MANIFEST_NAME,
    TEXT_CORPUS_NAME,
    ClassSpec,
    ManifestRecord,
    corpus_paths,
    save_classes,
    save_manifest,
)

# Shape/color pools; class k uses a unique (shape, color) pair.
_SHAPES = ("ring", "disk", "cross", "stripes", "triangle", "diamond", "dots", "wedge")
_COLORS = {
    "crimson": (0.82, 0.15, 0.18),
    "amber": (0.95, 0.70, 0.15),
    "teal": (0.10, 0.62, 0.60),
    "violet": (0.55, 0.25, 0.75),
    "olive": (0.45, 0.55, 0.15),
    "navy": (0.12, 0.20, 0.62),
    "coral": (0.95, 0.45, 0.35),
    "slate": (0.42, 0.48, 0.55),
}

_ATTRIBUTE_PHRASES = (
    "with granular texture across the lesion margin",
    "showing faint peripheral speckling",
    "sharply demarcated from the surrounding retina",
    "with mild surrounding haze",
    "located near the posterior pole",
    "accompanied by scattered fine deposits",
    "with an irregular but distinct outline",
    "set against a mottled background",
)

# First pattern is the canonical prompt; extras are synonymous expansions
# used for label augmentation and prompt ensembling.
_TEMPLATE_PATTERNS = (
    "A fundus photograph of [class name]",
    "a retinal image showing [class name]",
    "an eye fundus scan presenting [class name]",
    "fundus imaging consistent with [class name]",
    "a photograph of the retina with [class name]",
)


class SynthesisError(ValueError):
    """Invalid synthetic-corpus specification."""


@dataclass
class SyntheticCorpusSpec:
    """Controls for procedural corpus generation; output is a pure function of this."""

    n_classes: int
    n_elite: int
    n_categorical: int
    image_size: int = 32
    seed: int = 0
    template_variants: int = 3
    noise_level: float = 0.14
    jitter: float = 0.22

    def validate(self) -> None:
        if self.n_classes < 2:
            raise SynthesisError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.n_classes > len(_SHAPES) * len(_COLORS):
            raise SynthesisError(f"at most {len(_SHAPES) * len(_COLORS)} classes supported")
        if self.n_elite < 0 or self.n_categorical < 0:
            raise SynthesisError("record counts must be non-negative")
        if self.image_size < 16:
            raise SynthesisError(f"image_size must be >= 16, got {self.image_size}")
        if not 1 <= self.template_variants <= len(_TEMPLATE_PATTERNS):
            raise SynthesisError(
                f"template_variants must be in [1, {len(_TEMPLATE_PATTERNS)}]"
            )


@dataclass
class PromptTemplate:
    """Per-class synonymous prompt expansions built from a [class name] pattern."""

    pattern: str = _TEMPLATE_PATTERNS[0]
    variants: dict[int, list[str]] = field(default_factory=dict)

    def validate(self) -> None:
        for class_id, expansions in self.variants.items():
            if not expansions:
                raise SynthesisError(f"class {class_id} has no template expansions")


def build_class_table(n_classes: int) -> list[ClassSpec]:
    """Assign each class a unique (shape, color) motif and attribute pool.

    Adjacent classes share a color, so shape must be learned; pairs are unique
    across the full shape x color product.
    """
    color_names = list(_COLORS)
    pairs = [
        (s, (s // 2 + spread) % len(_COLORS))
        for spread in range(len(_COLORS))
        for s in range(len(_SHAPES))
    ]
    if n_classes > len(pairs):
        raise SynthesisError(
            f"at most {len(pairs)} distinct classes are available, got {n_classes}"
        )
    classes = []
    for k in range(n_classes):
        shape_idx, color_idx = pairs[k]
        shape, color = _SHAPES[shape_idx], color_names[color_idx]
        attrs = [_ATTRIBUTE_PHRASES[(k + i) % len(_ATTRIBUTE_PHRASES)] for i in range(4)]
        classes.append(
            ClassSpec(class_id=k, name=f"{color} {shape}", motif=shape, color=color, attributes=attrs)
        )
    return classes


def build_prompt_templates(classes: list[ClassSpec], n_variants: int = 3) -> PromptTemplate:
    variants = {
        c.class_id: [pat.replace("[class name]", c.name) for pat in _TEMPLATE_PATTERNS[:n_variants]]
        for c in classes
    }
    template = PromptTemplate(pattern=_TEMPLATE_PATTERNS[0], variants=variants)
    template.validate()
    return template


def expand_category_to_text(
    category_id: int, templates: PromptTemplate, rng: np.random.Generator
) -> str:
    """Sample one prompt expansion for a category (deterministic with one variant)."""
    if category_id not in templates.variants:
        raise KeyError(f"unknown category id {category_id}")
    expansions = templates.variants[category_id]
    if len(expansions) == 1:
        return expansions[0]
    return expansions[int(rng.integers(len(expansions)))]


def _balanced_class_ids(n_records: int, n_classes: int, rng: np.random.Generator) -> np.ndarray:
    """Round-robin class ids shuffled, keeping per-class counts within +/- 1."""
    ids = np.arange(n_records) % n_classes
    rng.shuffle(ids)
    return ids


def _draw_motif(img: np.ndarray, shape: str, color: tuple, cx: float, cy: float, r: float) -> None:
    size = img.shape[0]
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    dx, dy = xx - cx, yy - cy
    dist = np.sqrt(dx * dx + dy * dy)
    if shape == "ring":
        mask = (dist < r) & (dist > 0.55 * r)
    elif shape == "disk":
        mask = dist < r
    elif shape == "cross":
        w = 0.3 * r
        mask = ((np.abs(dx) < w) | (np.abs(dy) < w)) & (dist < r)
    elif shape == "stripes":
        mask = (np.abs(np.sin((xx - cx) * np.pi / (0.5 * r))) > 0.7) & (dist < r)
    elif shape == "triangle":
        mask = (dy > -r * 0.6) & (dy < 0.6 * r - 1.2 * np.abs(dx)) & (dist < 1.4 * r)
    elif shape == "diamond":
        mask = (np.abs(dx) + np.abs(dy)) < r
    elif shape == "dots":
        period = max(3.0, 0.6 * r)
        gx = np.abs(((xx - cx) % period) - period / 2) < 0.22 * period
        gy = np.abs(((yy - cy) % period) - period / 2) < 0.22 * period
        mask = gx & gy & (dist < 1.2 * r)
    elif shape == "wedge":
        ang = np.arctan2(dy, dx)
        mask = (dist < 1.2 * r) & (np.abs(ang) < 0.8)
    else:
        raise SynthesisError(f"unknown shape {shape!r}")
    for c in range(3):
        img[..., c][mask] = color[c]


def render_class_image(
    class_spec: ClassSpec, image_size: int, rng: np.random.Generator,
    noise_level: float = 0.14, jitter: float = 0.22,
) -> np.ndarray:
    """Draw one class-conditioned image: noisy background + jittered motif + distractors."""
    base = np.array([0.55, 0.30, 0.18], dtype=np.float32)  # fundus-like backdrop
    img = np.tile(base, (image_size, image_size, 1))
    img += rng.normal(0.0, noise_level, size=img.shape).astype(np.float32)

    center = image_size / 2
    cx = center * (1.0 + jitter * (rng.random() * 2 - 1))
    cy = center * (1.0 + jitter * (rng.random() * 2 - 1))
    r = image_size * (0.22 + 0.10 * rng.random())
    _draw_motif(img, class_spec.motif, _COLORS[class_spec.color], cx, cy, r)

    # 1-3 small neutral distractor primitives shared across classes
    for _ in range(int(rng.integers(1, 4))):
        dc = (0.3 + 0.4 * rng.random(),) * 3
        dxy = rng.random(2) * image_size
        _draw_motif(img, "disk", dc, float(dxy[0]), float(dxy[1]), image_size * 0.05)

    img += rng.normal(0.0, noise_level * 0.5, size=img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0)


def _elite_caption(class_spec: ClassSpec, rng: np.random.Generator) -> str:
    lead = f"a fundus photograph showing a {class_spec.color} {class_spec.motif} lesion"
    n_attrs = int(rng.integers(1, 4))
    picks = rng.choice(len(class_spec.attributes), size=n_attrs, replace=False)
    phrases = [lead] + [class_spec.attributes[int(i)] for i in sorted(picks)]
    return " . ".join(phrases)


def generate_synthetic_corpus(
    spec: SyntheticCorpusSpec,
) -> tuple[list[ManifestRecord], list[ClassSpec], np.ndarray]:
    """Generate records, the class table, and the image stack (N x H x W x 3).

    Records reference images as ``images/{source}_{index:05d}.png`` in
    generation order; pair with :func:`write_corpus` to put them on disk.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    classes = build_class_table(spec.n_classes)

    records: list[ManifestRecord] = []
    images: list[np.ndarray] = []

    elite_ids = _balanced_class_ids(spec.n_elite, spec.n_classes, rng)
    for i, class_id in enumerate(elite_ids):
        cls = classes[int(class_id)]
        images.append(render_class_image(cls, spec.image_size, rng, spec.noise_level, spec.jitter))
        records.append(
            ManifestRecord(
                image_ref=f"{IMAGES_DIR}/elite_{i:05d}.png",
                source="elite",
                caption=_elite_caption(cls, rng),
                category_id=int(class_id),  # synthetic ground truth
            )
        )

    cat_ids = _balanced_class_ids(spec.n_categorical, spec.n_classes, rng)
    for i, class_id in enumerate(cat_ids):
        cls = classes[int(class_id)]
        images.append(render_class_image(cls, spec.image_size, rng, spec.noise_level, spec.jitter))
        records.append(
            ManifestRecord(
                image_ref=f"{IMAGES_DIR}/categorical_{i:05d}.png",
                source="categorical",
                category_id=int(class_id),
            )
        )

    batch = np.stack(images) if images else np.zeros((0, spec.image_size, spec.image_size, 3), np.float32)
    return records, classes, batch


def write_corpus(spec: SyntheticCorpusSpec, out_dir: str | Path) -> Path:
    """Generate a corpus and write manifest, class table, images, and text corpus."""
    from PIL import Image

    out_dir = Path(out_dir)
    records, classes, images = generate_synthetic_corpus(spec)
    manifest_path, classes_path, images_dir = corpus_paths(out_dir)
    images_dir.mkdir(parents=True, exist_ok=True)

    for rec, img in zip(records, images):
        as_u8 = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(as_u8).save(out_dir / rec.image_ref, format="PNG")

    save_manifest(records, manifest_path)
    save_classes(classes, classes_path)

    templates = build_prompt_templates(classes, spec.template_variants)
    lines = [rec.caption for rec in records if rec.caption is not None]
    for class_id in sorted(templates.variants):
        lines.extend(templates.variants[class_id])
    with open(out_dir / TEXT_CORPUS_NAME, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")
    return out_dir
