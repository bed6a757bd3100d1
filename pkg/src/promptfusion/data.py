"""Procedural color-times-pattern image classes for base-to-novel runs.

Classes pair a color with a texture pattern ("red stripes", "blue checker",
...). The base split uses one pairing per color and per pattern; the novel
split recombines the same words into unseen pairings, so class names at
evaluation contain only words the text encoder saw during training.

Patterns span the frequency axis on purpose: stripes and rings live at low
spatial frequency, dots and checker near the sampling limit, which gives
low-pass smoothing sweeps something to act on.

Every image is a pure function of (spec.seed, class index, image index);
regenerating any subset reproduces it bitwise.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, UsageError

COLOR_VALUES = {
    "red": (0.85, 0.15, 0.15),
    "green": (0.15, 0.8, 0.2),
    "blue": (0.15, 0.25, 0.85),
    "yellow": (0.85, 0.8, 0.15),
}
PATTERNS = ("stripes", "dots", "checker", "rings")

DEFAULT_BASE = ("red stripes", "green dots", "blue checker", "yellow rings")
DEFAULT_NOVEL = ("green stripes", "red dots", "yellow checker", "blue rings")


@dataclass(frozen=True)
class ClassRecipe:
    name: str
    color: tuple
    pattern: str
    noise: float = 0.02

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ConfigError(f"unknown pattern {self.pattern!r} for class {self.name!r}")
        if not (0 <= self.noise < 0.5):
            raise ConfigError(f"noise must lie in [0, 0.5), got {self.noise}")


def _recipe_from_name(name: str) -> ClassRecipe:
    words = name.split()
    if len(words) != 2 or words[0] not in COLOR_VALUES or words[1] not in PATTERNS:
        raise ConfigError(f"cannot derive a recipe from class name {name!r}")
    return ClassRecipe(name=name, color=COLOR_VALUES[words[0]], pattern=words[1])


@dataclass(frozen=True)
class DatasetSpec:
    seed: int = 0
    base_classes: tuple = DEFAULT_BASE
    novel_classes: tuple = DEFAULT_NOVEL
    shots: int = 16
    eval_per_class: int = 64
    image_side: int = 32
    channels: int = 3
    recipes: dict = field(default_factory=dict)  # name -> ClassRecipe, derived if empty

    def __post_init__(self):
        base, novel = set(self.base_classes), set(self.novel_classes)
        problems = []
        if base & novel:
            problems.append(f"base and novel classes overlap: {sorted(base & novel)}")
        if len(base) != len(self.base_classes) or len(novel) != len(self.novel_classes):
            problems.append("duplicate class names within a split")
        if not self.base_classes:
            problems.append("at least one base class is required")
        if self.shots < 1 or self.eval_per_class < 1:
            problems.append("shots and eval_per_class must be positive")
        if self.image_side < 4 or (self.image_side & (self.image_side - 1)) != 0:
            problems.append(f"image_side must be a power of two >= 4, got {self.image_side}")
        if self.channels != 3:
            problems.append("only 3-channel rendering is supported")
        recipes = dict(self.recipes)
        for name in list(self.base_classes) + list(self.novel_classes):
            if name not in recipes:
                try:
                    recipes[name] = _recipe_from_name(name)
                except ConfigError as e:
                    problems.append(str(e))
        extra = set(recipes) - base - novel
        if extra:
            problems.append(f"recipes for classes outside the partition: {sorted(extra)}")
        if problems:
            raise ConfigError(problems)
        object.__setattr__(self, "recipes", recipes)

    @property
    def class_names(self) -> tuple:
        """Canonical order: base classes first, then novel."""
        return tuple(self.base_classes) + tuple(self.novel_classes)

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "base_classes": list(self.base_classes),
            "novel_classes": list(self.novel_classes),
            "shots": self.shots,
            "eval_per_class": self.eval_per_class,
            "image_side": self.image_side,
            "channels": self.channels,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "DatasetSpec":
        kwargs = {k: doc[k] for k in ("seed", "shots", "eval_per_class",
                                      "image_side", "channels") if k in doc}
        if "base_classes" in doc:
            kwargs["base_classes"] = tuple(doc["base_classes"])
        if "novel_classes" in doc:
            kwargs["novel_classes"] = tuple(doc["novel_classes"])
        return cls(**kwargs)


def _pattern_mask(pattern: str, side: int, rng: np.random.Generator) -> np.ndarray:
    y, x = np.meshgrid(np.arange(side, dtype=np.float64),
                       np.arange(side, dtype=np.float64), indexing="ij")
    if pattern == "stripes":
        freq = 2.5 + 0.6 * rng.random()
        phase = rng.random() * 2 * np.pi
        return 0.5 + 0.5 * np.sin(2 * np.pi * freq * y / side + phase)
    if pattern == "rings":
        freq = 3.0 + 0.6 * rng.random()
        cy = side / 2 + rng.uniform(-2, 2)
        cx = side / 2 + rng.uniform(-2, 2)
        r = np.sqrt((y - cy) ** 2 + (x - cx) ** 2)
        return 0.5 + 0.5 * np.cos(2 * np.pi * freq * r / side)
    if pattern == "dots":
        period = 4
        oy, ox = rng.integers(0, period, size=2)
        dy = (y - oy) % period
        dx = (x - ox) % period
        dist = np.minimum(dy, period - dy) ** 2 + np.minimum(dx, period - dx) ** 2
        return (dist <= 1.3).astype(np.float64)
    if pattern == "checker":
        tile = 2
        flip = int(rng.integers(0, 2))
        return ((x // tile + y // tile + flip) % 2).astype(np.float64)
    raise ConfigError(f"unknown pattern {pattern!r}")


def render_image(spec: DatasetSpec, class_index: int, image_index: int) -> np.ndarray:
    """Render one image deterministically from (seed, class, index)."""
    names = spec.class_names
    if not (0 <= class_index < len(names)):
        raise UsageError(f"class index {class_index} out of range")
    recipe = spec.recipes[names[class_index]]
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((spec.seed, class_index, image_index))))
    side = spec.image_side
    mask = _pattern_mask(recipe.pattern, side, rng)
    color = np.asarray(recipe.color, dtype=np.float64) + rng.uniform(-0.08, 0.08, size=3)
    color = np.clip(color, 0.0, 1.0)
    bg = 0.12 + rng.uniform(-0.03, 0.03)
    img = mask[:, :, None] * color[None, None, :] + (1.0 - mask[:, :, None]) * bg
    img += rng.normal(0.0, recipe.noise, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


@dataclass(frozen=True)
class Example:
    image: np.ndarray
    label: int  # index into Dataset.class_names
    class_name: str


@dataclass(frozen=True)
class Dataset:
    spec: DatasetSpec
    class_names: tuple
    base_ids: tuple
    novel_ids: tuple
    train: tuple  # Examples from base classes only
    eval_base: tuple
    eval_novel: tuple

    def split(self, name: str):
        if name == "base":
            return self.eval_base
        if name == "novel":
            return self.eval_novel
        if name == "all":
            return self.eval_base + self.eval_novel
        if name == "train":
            return self.train
        raise UsageError(f"unknown split {name!r}")


def generate_dataset(spec: DatasetSpec) -> Dataset:
    """Materialize train (base shots) and eval (base + novel) splits."""
    names = spec.class_names
    base_ids = tuple(range(len(spec.base_classes)))
    novel_ids = tuple(range(len(spec.base_classes), len(names)))
    train, eval_base, eval_novel = [], [], []
    for ci, name in enumerate(names):
        is_base = ci in base_ids
        if is_base:
            for k in range(spec.shots):
                train.append(Example(render_image(spec, ci, k), ci, name))
        bucket = eval_base if is_base else eval_novel
        for k in range(spec.shots, spec.shots + spec.eval_per_class):
            bucket.append(Example(render_image(spec, ci, k), ci, name))
    return Dataset(spec=spec, class_names=names, base_ids=base_ids,
                   novel_ids=novel_ids, train=tuple(train),
                   eval_base=tuple(eval_base), eval_novel=tuple(eval_novel))


def dataset_fingerprint(ds: Dataset) -> str:
    """sha256 over every split's images and labels, in canonical order."""
    h = hashlib.sha256()
    for split in ("train", "base", "novel"):
        for ex in ds.split(split):
            h.update(ex.image.astype("<f4").tobytes(order="C"))
            h.update(int(ex.label).to_bytes(4, "little"))
    return h.hexdigest()


def materialize(ds: Dataset, out_dir) -> dict:
    """Write every image as a raw f32 grid with sidecar plus manifest.json;
    returns the manifest."""
    import os

    from .fusion import save_image

    manifest = {"spec": ds.spec.to_json_dict(), "class_names": list(ds.class_names),
                "fingerprint": dataset_fingerprint(ds), "splits": {}}
    for split in ("train", "base", "novel"):
        entries = []
        for i, ex in enumerate(ds.split(split)):
            rel = os.path.join(split, f"{ex.class_name.replace(' ', '_')}_{i:04d}.f32")
            path = os.path.join(out_dir, rel)
            os.makedirs(os.path.dirname(path), exist_ok=True)
            save_image(path, ex.image)
            entries.append({"path": rel, "label": ex.label, "class": ex.class_name})
        manifest["splits"][split] = entries
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
