"""Procedural glass-scene generator and dataset IO.

Scenes are background textures with glass-like objects blended on top: a glass
pixel is mostly the background pixel showing through, tinted by its class color
and optionally crossed by bright reflective streaks. Ground truth is an integer
class mask plus a boundary band of configurable thickness around every label
transition.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from .errors import ConfigError, DataError

GENERATOR_VERSION = "synthglass-1"
N_CLASSES = 3  # background + two glass categories
SHAPE_FAMILIES = ("rect", "ellipse", "polygon")

# Class tints (RGB in [0,1]); index 0 unused (background is never tinted).
CLASS_TINTS = np.array(
    [
        [0.0, 0.0, 0.0],
        [0.35, 0.55, 0.85],  # bluish glass
        [0.45, 0.80, 0.55],  # greenish glass
    ]
)

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of one procedural scene."""

    canvas: tuple[int, int] = (64, 64)
    n_objects: int = 2
    shape_family: str = "rect"
    transparency_alpha: float = 0.6
    reflective_streaks: int = 2
    rng_seed: int = 0

    def validate(self):
        h, w = self.canvas
        if h < 32 or h % 32 != 0:
            raise ConfigError(f"canvas height {h} must be >= 32 and divisible by 32")
        if w < 32 or w % 32 != 0:
            raise ConfigError(f"canvas width {w} must be >= 32 and divisible by 32")
        if not 0.0 <= self.transparency_alpha <= 1.0:
            raise ConfigError(
                f"transparency_alpha {self.transparency_alpha} outside [0, 1]"
            )
        if self.shape_family not in SHAPE_FAMILIES:
            raise ConfigError(
                f"shape_family {self.shape_family!r} not one of {SHAPE_FAMILIES}"
            )
        if self.n_objects < 0:
            raise ConfigError("n_objects must be >= 0")
        if self.reflective_streaks < 0:
            raise ConfigError("reflective_streaks must be >= 0")


@dataclass
class GlassSample:
    """One training example: image, class mask, boundary band."""

    image: np.ndarray  # float32, 3 x H x W, values in [0, 1]
    mask: np.ndarray  # uint8, H x W, class ids in {0..n-1}
    boundary: np.ndarray  # uint8, H x W, {0, 1}
    sample_id: str = ""

    def __post_init__(self):
        if self.image.shape[1:] != self.mask.shape or self.mask.shape != self.boundary.shape:
            raise DataError(
                f"sample {self.sample_id!r}: image {self.image.shape}, mask "
                f"{self.mask.shape}, boundary {self.boundary.shape} disagree"
            )


def sample_seed(base_seed: int, index: int) -> int:
    """Stable per-sample seed; independent of process or worker layout."""
    digest = hashlib.blake2b(f"{base_seed}:{index}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def num_workers() -> int:
    """Parallelism bound from RFENET_NUM_WORKERS (default 1)."""
    try:
        return max(1, int(os.environ.get("RFENET_NUM_WORKERS", "1")))
    except ValueError:
        return 1


def _background_texture(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Smooth colored texture: low-res noise upsampled plus a soft gradient."""
    coarse = rng.uniform(0.15, 0.85, size=(3, h // 8 + 2, w // 8 + 2))
    up = np.empty((3, h, w))
    for c in range(3):
        img = Image.fromarray((coarse[c] * 255).astype(np.uint8))
        up[c] = np.asarray(img.resize((w, h), Image.BILINEAR)) / 255.0
    gy, gx = np.mgrid[0:h, 0:w]
    phase = rng.uniform(0, 2 * math.pi)
    freq = rng.uniform(1.0, 2.5)
    wave = 0.08 * np.sin(2 * math.pi * freq * (gx / w + gy / h) + phase)
    return np.clip(up + wave[None], 0.0, 1.0)


def _draw_shape(draw: ImageDraw.ImageDraw, family: str, box, rng: np.random.Generator):
    x0, y0, x1, y1 = box
    if family == "rect":
        draw.rectangle([x0, y0, x1, y1], fill=1)
    elif family == "ellipse":
        draw.ellipse([x0, y0, x1, y1], fill=1)
    else:  # convex polygon inscribed in the box
        cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
        rx, ry = (x1 - x0) / 2.0, (y1 - y0) / 2.0
        k = int(rng.integers(5, 9))
        angles = np.sort(rng.uniform(0, 2 * math.pi, size=k))
        radii = rng.uniform(0.55, 1.0, size=k)
        pts = [
            (cx + rx * r * math.cos(a), cy + ry * r * math.sin(a))
            for a, r in zip(angles, radii)
        ]
        draw.polygon(pts, fill=1)


def _place_boxes(rng: np.random.Generator, h, w, n, min_gap=2, tries=200):
    """Non-overlapping bounding boxes (separated by >= min_gap pixels)."""
    boxes = []
    for _ in range(n):
        for _attempt in range(tries):
            bh = int(rng.integers(h // 6, max(h // 6 + 1, h // 2)))
            bw = int(rng.integers(w // 6, max(w // 6 + 1, w // 2)))
            y0 = int(rng.integers(1, max(2, h - bh - 1)))
            x0 = int(rng.integers(1, max(2, w - bw - 1)))
            cand = (x0, y0, x0 + bw, y0 + bh)
            if all(
                cand[2] + min_gap < b[0]
                or b[2] + min_gap < cand[0]
                or cand[3] + min_gap < b[1]
                or b[3] + min_gap < cand[1]
                for b in boxes
            ):
                boxes.append(cand)
                break
        else:
            raise ConfigError(
                f"could not place {n} non-overlapping objects on a {h}x{w} canvas"
            )
    return boxes


def generate_scene(spec: SceneSpec) -> GlassSample:
    """Render one scene; a pure function of the spec (seed included)."""
    spec.validate()
    h, w = spec.canvas
    rng = np.random.default_rng(spec.rng_seed)

    image = _background_texture(rng, h, w)
    mask = np.zeros((h, w), dtype=np.uint8)

    boxes = _place_boxes(rng, h, w, spec.n_objects)
    object_masks = []
    for box in boxes:
        canvas = Image.new("L", (w, h), 0)
        _draw_shape(ImageDraw.Draw(canvas), spec.shape_family, box, rng)
        obj = np.asarray(canvas, dtype=bool)
        cls = int(rng.integers(1, N_CLASSES))
        mask[obj] = cls
        object_masks.append(obj)

        # Glass look: background shows through at strength alpha, tinted by class.
        tint = CLASS_TINTS[cls][:, None] * rng.uniform(0.8, 1.2)
        a = spec.transparency_alpha
        region = image[:, obj]
        image[:, obj] = np.clip(a * region + (1.0 - a) * tint, 0.0, 1.0)

    if object_masks and spec.reflective_streaks > 0:
        streaks = Image.new("L", (w, h), 0)
        sdraw = ImageDraw.Draw(streaks)
        for _ in range(spec.reflective_streaks):
            obj = object_masks[int(rng.integers(0, len(object_masks)))]
            ys, xs = np.nonzero(obj)
            i0, i1 = rng.integers(0, len(ys), size=2)
            width = int(rng.integers(1, 3))
            sdraw.line(
                [(int(xs[i0]), int(ys[i0])), (int(xs[i1]), int(ys[i1]))],
                fill=1,
                width=width,
            )
        streak = np.asarray(streaks, dtype=bool) & (mask > 0)
        image[:, streak] = np.clip(image[:, streak] * 0.3 + 0.7, 0.0, 1.0)

    boundary = mask_to_boundary(mask, thickness=8)
    return GlassSample(
        image=image.astype(np.float32),
        mask=mask,
        boundary=boundary,
        sample_id=f"g{spec.rng_seed:010d}",
    )


def mask_to_boundary(mask: np.ndarray, thickness: int = 8) -> np.ndarray:
    """Boundary band around label transitions.

    A pixel is boundary iff its chebyshev distance to the nearest transition
    pixel (a pixel differing from a 4-neighbor) is < ceil(thickness/2).
    Realized as the morphological gradient dilated by ceil(thickness/2) - 1.
    Transitions between two touching glass classes count too.
    """
    if thickness < 1:
        raise ConfigError(f"thickness {thickness} must be >= 1")
    trans = np.zeros(mask.shape, dtype=bool)
    trans[:-1, :] |= mask[:-1, :] != mask[1:, :]
    trans[1:, :] |= mask[1:, :] != mask[:-1, :]
    trans[:, :-1] |= mask[:, :-1] != mask[:, 1:]
    trans[:, 1:] |= mask[:, 1:] != mask[:, :-1]

    radius = (thickness + 1) // 2 - 1
    if radius > 0:
        size = 2 * radius + 1
        trans = ndimage.binary_dilation(trans, structure=np.ones((size, size), bool))
    return trans.astype(np.uint8)


def generate_dataset(
    base: SceneSpec, n_samples: int, base_seed: int, families: tuple[str, ...] | None = None
) -> list[GlassSample]:
    """n scenes with per-sample derived seeds; optional family rotation.

    Deterministic for a fixed (base, n_samples, base_seed) regardless of the
    worker count: every sample owns an independent RNG.
    """
    families = families or (base.shape_family,)

    def build(i: int) -> GlassSample:
        spec = SceneSpec(
            canvas=base.canvas,
            n_objects=base.n_objects,
            shape_family=families[i % len(families)],
            transparency_alpha=base.transparency_alpha,
            reflective_streaks=base.reflective_streaks,
            rng_seed=sample_seed(base_seed, i),
        )
        sample = generate_scene(spec)
        sample.sample_id = f"g{i:05d}"
        return sample

    workers = num_workers()
    if workers > 1 and n_samples > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(build, range(n_samples)))
    return [build(i) for i in range(n_samples)]


def _save_png(arr: np.ndarray, path: Path, mode: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(arr, mode=mode).save(path)
    except OSError as exc:
        raise DataError(f"failed to write {path}: {exc}") from exc


def write_dataset(
    samples,
    root,
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    thickness: int = 8,
) -> dict:
    """Write samples to the on-disk layout and return the manifest.

    Layout: root/{train,val,test}/{images,masks,boundaries}/<id>.png plus
    root/manifest.json. Split sizes are floor(n*train), floor(n*val), rest;
    assignment follows sample order. Images are 8-bit RGB, masks raw class
    ids, boundaries {0,255}. Splits with zero samples get no directories.
    """
    samples = list(samples)
    root = Path(root)
    n = len(samples)
    n_train = int(n * split_fractions[0])
    n_val = int(n * split_fractions[1])
    counts = {"train": n_train, "val": n_val, "test": n - n_train - n_val}

    manifest = {
        "version": GENERATOR_VERSION,
        "n_classes": N_CLASSES,
        "canvas": list(samples[0].mask.shape) if samples else None,
        "boundary_thickness": thickness,
        "splits": {s: [] for s in SPLITS},
    }

    it = iter(samples)
    for split in SPLITS:
        for _ in range(counts[split]):
            sample = next(it)
            base = root / split
            _save_png(
                (np.clip(sample.image, 0, 1) * 255.0).round().astype(np.uint8).transpose(1, 2, 0),
                base / "images" / f"{sample.sample_id}.png",
                "RGB",
            )
            _save_png(sample.mask, base / "masks" / f"{sample.sample_id}.png", "L")
            _save_png(
                sample.boundary * np.uint8(255),
                base / "boundaries" / f"{sample.sample_id}.png",
                "L",
            )
            manifest["splits"][split].append(sample.sample_id)

    try:
        root.mkdir(parents=True, exist_ok=True)
        with open(root / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
    except OSError as exc:
        raise DataError(f"failed to write {root / 'manifest.json'}: {exc}") from exc
    return manifest


def read_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    if not path.is_file():
        raise DataError(f"no manifest at {path}")
    with open(path) as fh:
        return json.load(fh)


def read_sample(root, split: str, sample_id: str) -> GlassSample:
    base = Path(root) / split
    img_path = base / "images" / f"{sample_id}.png"
    if not img_path.is_file():
        raise DataError(f"missing image {img_path}")
    image = np.asarray(Image.open(img_path), dtype=np.float32).transpose(2, 0, 1) / 255.0
    mask = np.asarray(Image.open(base / "masks" / f"{sample_id}.png"), dtype=np.uint8)
    boundary = (
        np.asarray(Image.open(base / "boundaries" / f"{sample_id}.png"), dtype=np.uint8) > 127
    ).astype(np.uint8)
    return GlassSample(image=image, mask=mask, boundary=boundary, sample_id=sample_id)


def read_split(root, split: str) -> list[GlassSample]:
    """All samples of one split, in manifest order."""
    manifest = read_manifest(root)
    if split not in manifest["splits"]:
        raise DataError(f"unknown split {split!r}")
    ids = manifest["splits"][split]
    if ids and not (Path(root) / split).is_dir():
        raise DataError(f"split directory missing: {Path(root) / split}")

    workers = num_workers()
    if workers > 1 and len(ids) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda s: read_sample(root, split, s), ids))
    return [read_sample(root, split, s) for s in ids]
