"""Sample streams: directory corpora and deterministic synthetic generators.

Synthetic kinds are pure functions of (seed, draw) so two instantiations of
the same spec produce identical streams. Textures carry class labels (for
the zero-shot proxy); glyphs render bitmap-font strings as the
text-sensitivity stand-in; faces compose seeded ellipse/blob geometry.
Images are float32 (H, W, 3) channel-last in [-1, 1].
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .rng import np_generator

SYNTHETIC_KINDS = ("synthetic-texture", "synthetic-glyph", "synthetic-face")

# 5x7 column-major bitmap font, one byte per column, LSB at the top row.
_FONT = {
    "0": (0x3E, 0x51, 0x49, 0x45, 0x3E), "1": (0x00, 0x42, 0x7F, 0x40, 0x00),
    "2": (0x42, 0x61, 0x51, 0x49, 0x46), "3": (0x21, 0x41, 0x45, 0x4B, 0x31),
    "4": (0x18, 0x14, 0x12, 0x7F, 0x10), "5": (0x27, 0x45, 0x45, 0x45, 0x39),
    "6": (0x3C, 0x4A, 0x49, 0x49, 0x30), "7": (0x01, 0x71, 0x09, 0x05, 0x03),
    "8": (0x36, 0x49, 0x49, 0x49, 0x36), "9": (0x06, 0x49, 0x49, 0x29, 0x1E),
    "A": (0x7E, 0x11, 0x11, 0x11, 0x7E), "B": (0x7F, 0x49, 0x49, 0x49, 0x36),
    "C": (0x3E, 0x41, 0x41, 0x41, 0x22), "D": (0x7F, 0x41, 0x41, 0x22, 0x1C),
    "E": (0x7F, 0x49, 0x49, 0x49, 0x41), "F": (0x7F, 0x09, 0x09, 0x09, 0x01),
    "G": (0x3E, 0x41, 0x49, 0x49, 0x7A), "H": (0x7F, 0x08, 0x08, 0x08, 0x7F),
    "I": (0x00, 0x41, 0x7F, 0x41, 0x00), "J": (0x20, 0x40, 0x41, 0x3F, 0x01),
    "K": (0x7F, 0x08, 0x14, 0x22, 0x41), "L": (0x7F, 0x40, 0x40, 0x40, 0x40),
    "M": (0x7F, 0x02, 0x0C, 0x02, 0x7F), "N": (0x7F, 0x04, 0x08, 0x10, 0x7F),
    "O": (0x3E, 0x41, 0x41, 0x41, 0x3E), "P": (0x7F, 0x09, 0x09, 0x09, 0x06),
    "Q": (0x3E, 0x41, 0x51, 0x21, 0x5E), "R": (0x7F, 0x09, 0x19, 0x29, 0x46),
    "S": (0x46, 0x49, 0x49, 0x49, 0x31), "T": (0x01, 0x01, 0x7F, 0x01, 0x01),
    "U": (0x3F, 0x40, 0x40, 0x40, 0x3F), "V": (0x1F, 0x20, 0x40, 0x20, 0x1F),
    "W": (0x7F, 0x20, 0x18, 0x20, 0x7F), "X": (0x63, 0x14, 0x08, 0x14, 0x63),
    "Y": (0x03, 0x04, 0x78, 0x04, 0x03), "Z": (0x61, 0x51, 0x49, 0x45, 0x43),
}
_CHARS = sorted(_FONT)


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    seed: int = 0
    root: str | None = None
    classes: int = 8
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in SYNTHETIC_KINDS + ("directory",):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "directory" and not self.root:
            raise ConfigError("directory dataset needs a root path")
        if self.weight < 0:
            raise ConfigError(f"dataset weight must be nonnegative, got {self.weight}")


@dataclass
class Sample:
    image: np.ndarray  # (size, size, 3) float32 in [-1, 1]
    sample_id: str
    label: object = None


def _class_palette(cls: int, classes: int) -> np.ndarray:
    hue = cls / max(classes, 1)
    return np.array(colorsys.hsv_to_rgb(hue, 0.85, 0.9), dtype=np.float32)


def _smooth_noise(rng, size, cells=4):
    coarse = rng.standard_normal((cells, cells)).astype(np.float32)
    idx = np.linspace(0, cells - 1, size)
    x0 = np.clip(idx.astype(int), 0, cells - 2)
    frac = (idx - x0).astype(np.float32)
    rows = coarse[x0] * (1 - frac[:, None]) + coarse[x0 + 1] * frac[:, None]
    cols = rows[:, x0] * (1 - frac[None, :]) + rows[:, x0 + 1] * frac[None, :]
    return cols


def render_texture(draw_seed: int, size: int, classes: int) -> tuple:
    rng = np_generator("texture", draw_seed)
    cls = int(rng.integers(classes))
    angle = np.pi * (cls / classes) + rng.normal(0, 0.08)
    freq = (2.0 + 2.0 * (cls % 4)) * (1 + rng.normal(0, 0.1))
    phase = rng.uniform(0, 2 * np.pi)
    ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    wave = np.sin(
        2 * np.pi * freq * (ii * np.cos(angle) + jj * np.sin(angle)) / size + phase
    ).astype(np.float32)
    noise = _smooth_noise(rng, size) * 0.35
    base = _class_palette(cls, classes)
    img = base[None, None, :] * (0.55 + 0.45 * wave)[..., None] + noise[..., None] * 0.3
    img = np.clip(img, 0, 1) * 2 - 1
    return img.astype(np.float32), cls


def _draw_glyph(canvas, char, top, left, scale, color):
    columns = _FONT[char]
    h, w = canvas.shape[:2]
    for col, bits in enumerate(columns):
        for row in range(7):
            if (bits >> row) & 1:
                r0, c0 = top + row * scale, left + col * scale
                r1, c1 = min(r0 + scale, h), min(c0 + scale, w)
                if r0 < h and c0 < w:
                    canvas[max(r0, 0):r1, max(c0, 0):c1] = color


def render_glyphs(draw_seed: int, size: int) -> np.ndarray:
    rng = np_generator("glyph", draw_seed)
    bg = rng.uniform(0.75, 1.0, size=3).astype(np.float32)
    ink = rng.uniform(0.0, 0.25, size=3).astype(np.float32)
    canvas = np.ones((size, size, 3), dtype=np.float32) * bg
    scale = max(1, size // 24)
    line_height = 8 * scale
    rows = max(1, size // line_height - 1)
    for row in range(rows):
        count = int(rng.integers(2, 6))
        text = "".join(_CHARS[int(rng.integers(len(_CHARS)))] for _ in range(count))
        top = row * line_height + int(rng.integers(0, scale + 1))
        left = int(rng.integers(0, max(1, size - count * 6 * scale)))
        for i, char in enumerate(text):
            _draw_glyph(canvas, char, top, left + i * 6 * scale, scale, ink)
    return np.clip(canvas, 0, 1) * 2 - 1


def render_face(draw_seed: int, size: int) -> np.ndarray:
    rng = np_generator("face", draw_seed)
    bg = rng.uniform(0.2, 0.9, size=3).astype(np.float32)
    skin = np.array(
        colorsys.hsv_to_rgb(rng.uniform(0.02, 0.12), rng.uniform(0.3, 0.6), rng.uniform(0.6, 0.95)),
        dtype=np.float32,
    )
    canvas = np.ones((size, size, 3), dtype=np.float32) * bg
    ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    cy, cx = size / 2 + rng.normal(0, size * 0.05), size / 2 + rng.normal(0, size * 0.05)
    ry, rx = size * rng.uniform(0.28, 0.38), size * rng.uniform(0.22, 0.32)
    head = ((ii - cy) / ry) ** 2 + ((jj - cx) / rx) ** 2 <= 1
    canvas[head] = skin
    eye_dy, eye_dx = ry * 0.35, rx * rng.uniform(0.35, 0.5)
    eye_r = max(1.2, size * 0.04)
    for side in (-1, 1):
        eye = (ii - (cy - eye_dy)) ** 2 + (jj - (cx + side * eye_dx)) ** 2 <= eye_r ** 2
        canvas[eye] = 0.05
    mouth_y = cy + ry * 0.45
    mouth = (
        (((ii - mouth_y) / (ry * 0.18)) ** 2 + ((jj - cx) / (rx * 0.5)) ** 2 <= 1)
        & (ii >= mouth_y)
    )
    canvas[mouth] = np.array([0.6, 0.1, 0.1], dtype=np.float32)
    return np.clip(canvas, 0, 1) * 2 - 1


class SyntheticStream:
    def __init__(self, spec: DatasetSpec):
        self.spec = spec

    def draw(self, rng, size: int) -> Sample:
        n = int(rng.integers(0, 2 ** 31))
        draw_seed = self.spec.seed * (2 ** 31) + n
        kind = self.spec.kind
        if kind == "synthetic-texture":
            image, label = render_texture(draw_seed, size, self.spec.classes)
        elif kind == "synthetic-glyph":
            image, label = render_glyphs(draw_seed, size), None
        else:
            image, label = render_face(draw_seed, size), None
        return Sample(image=image, sample_id=f"{kind}:{self.spec.seed}:{n}", label=label)


class DirectoryStream:
    EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")

    def __init__(self, spec: DatasetSpec):
        self.spec = spec
        root = Path(spec.root)
        if not root.is_dir():
            raise DataError(f"dataset directory {root} does not exist")
        self.files = sorted(
            p for p in root.rglob("*") if p.suffix.lower() in self.EXTENSIONS
        )
        if not self.files:
            raise DataError(f"dataset directory {root} contains no images")

    def draw(self, rng, size: int) -> Sample:
        from PIL import Image

        path = self.files[int(rng.integers(len(self.files)))]
        with Image.open(path) as img:
            img = img.convert("RGB")
            short = min(img.size)
            if short < size:
                ratio = size / short
                img = img.resize(
                    (max(size, round(img.width * ratio)), max(size, round(img.height * ratio)))
                )
            left = int(rng.integers(0, img.width - size + 1))
            top = int(rng.integers(0, img.height - size + 1))
            crop = np.asarray(img.crop((left, top, left + size, top + size)), dtype=np.float32)
        image = crop / 127.5 - 1
        label = path.parent.name if path.parent != Path(self.spec.root) else None
        return Sample(image=image, sample_id=path.name, label=label)


def make_dataset(spec: DatasetSpec):
    if spec.kind == "directory":
        return DirectoryStream(spec)
    return SyntheticStream(spec)


class MixtureStream:
    """Weight-proportional mixture over component streams."""

    def __init__(self, specs):
        specs = list(specs)
        if not specs:
            raise ConfigError("dataset mixture must not be empty")
        total = sum(s.weight for s in specs)
        if total <= 0:
            raise ConfigError("dataset mixture weights must sum to a positive value")
        self.specs = specs
        self.weights = np.array([s.weight / total for s in specs])
        self.streams = [make_dataset(s) for s in specs]

    def draw(self, rng, size: int) -> Sample:
        idx = int(rng.choice(len(self.streams), p=self.weights))
        return self.streams[idx].draw(rng, size)


class MultiResolutionBatcher:
    """Resolution-homogeneous batches with the resolution drawn uniformly."""

    def __init__(self, stream, resolutions, batch_size: int, downsample_factor: int):
        resolutions = list(resolutions)
        if not resolutions:
            raise ConfigError("at least one training resolution required")
        for r in resolutions:
            if r % downsample_factor:
                raise ConfigError(
                    f"resolution {r} is not divisible by the downsample factor "
                    f"{downsample_factor}"
                )
        if batch_size < 1:
            raise ConfigError(f"batch size must be positive, got {batch_size}")
        self.stream = stream
        self.resolutions = resolutions
        self.batch_size = batch_size

    def draw(self, rng):
        size = self.resolutions[int(rng.integers(len(self.resolutions)))]
        samples = [self.stream.draw(rng, size) for _ in range(self.batch_size)]
        images = np.stack([s.image for s in samples])
        return {
            "images": images,
            "sample_ids": [s.sample_id for s in samples],
            "labels": [s.label for s in samples],
            "resolution": size,
        }
