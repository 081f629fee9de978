"""Triplets (x1, x2, y): procedural faces, on-disk manifests and task transforms.

Images are ``float32`` arrays of shape ``(H, W, C)`` with values in [-1, 1].
"""
from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image
from scipy import ndimage

ATTRIBUTES = ("glasses", "beard", "bowtie")
TASKS = ("attributed_sketch", "colorization", "completion")
SPLITS = ("train", "test")
MANIFEST_NAME = "manifest.jsonl"
MIN_SYNTH_RESOLUTION = 32
LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class AttributeLabel:
    index: int
    K: int = len(ATTRIBUTES)

    def __post_init__(self):
        if not 0 <= self.index < self.K:
            raise ValueError(f"attribute index {self.index} outside [0, {self.K})")

    @classmethod
    def parse(cls, value, K: int = len(ATTRIBUTES)) -> "AttributeLabel":
        """Accept an index, an attribute name, or an existing label."""
        if isinstance(value, AttributeLabel):
            return value
        if isinstance(value, str) and not value.isdigit():
            if value not in ATTRIBUTES:
                raise ValueError(
                    f"unknown attribute {value!r}; choose from {', '.join(ATTRIBUTES)}"
                )
            return cls(ATTRIBUTES.index(value), K)
        return cls(int(value), K)

    @property
    def name(self) -> str:
        return ATTRIBUTES[self.index] if self.index < len(ATTRIBUTES) else str(self.index)

    @property
    def as_one_hot(self) -> np.ndarray:
        v = np.zeros(self.K, dtype=np.float32)
        v[self.index] = 1.0
        return v


@dataclass(frozen=True, eq=False)
class Triplet:
    x1: np.ndarray
    x2: np.ndarray
    y: np.ndarray
    label: AttributeLabel
    id: str = ""

    def __post_init__(self):
        if not (self.x1.shape == self.x2.shape == self.y.shape):
            raise ValueError(
                f"triplet images differ in shape: {self.x1.shape}, "
                f"{self.x2.shape}, {self.y.shape}"
            )

    def __eq__(self, other):
        return (
            isinstance(other, Triplet)
            and self.label == other.label
            and self.id == other.id
            and all(np.array_equal(a, b) for a, b in
                    zip((self.x1, self.x2, self.y), (other.x1, other.x2, other.y)))
        )


@dataclass(frozen=True)
class TaskConfig:
    task: str = "attributed_sketch"
    mask_fraction: float = 0.25

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; choose from {', '.join(TASKS)}")
        if not 0.0 < self.mask_fraction < 1.0:
            raise ValueError(f"mask_fraction must lie in (0, 1), got {self.mask_fraction}")


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    x1: str
    x2: str
    y: str
    label: AttributeLabel
    split: str


@dataclass
class DatasetManifest:
    root: Path
    entries: list[ManifestEntry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def ids(self) -> list[str]:
        return [e.id for e in self.entries]


# --------------------------------------------------------------------------
# procedural faces


@dataclass(frozen=True)
class FaceGeometry:
    """Face layout in pixels, derived from a seed and a resolution."""

    cx: float
    cy: float
    rx: float
    ry: float
    eye_dx: float
    eye_y: float
    eye_r: float
    mouth_y: float
    chin_y: float
    skin: tuple
    hair: tuple
    background: tuple
    shirt: tuple

    @classmethod
    def from_seed(cls, seed: int, resolution: int) -> "FaceGeometry":
        rng = np.random.default_rng([seed, 7919])
        R = float(resolution)
        j = lambda lo, hi: float(rng.uniform(lo, hi))  # noqa: E731
        cx = R * (0.5 + j(-0.03, 0.03))
        cy = R * (0.42 + j(-0.02, 0.02))
        rx = R * j(0.20, 0.24)
        ry = R * j(0.26, 0.30)
        skin = tuple(np.array([0.93, 0.76, 0.62]) * j(0.8, 1.0))
        hair = tuple(np.array([0.25, 0.16, 0.10]) * j(0.4, 1.2))
        background = tuple(np.array([0.80, 0.85, 0.92]) + j(-0.06, 0.06))
        shirt = tuple(rng.uniform(0.2, 0.6, size=3))
        return cls(
            cx=cx, cy=cy, rx=rx, ry=ry,
            eye_dx=rx * 0.42, eye_y=cy - ry * 0.12, eye_r=max(R * 0.03, 1.0),
            mouth_y=cy + ry * 0.5, chin_y=cy + ry, skin=skin, hair=hair,
            background=background, shirt=shirt,
        )


def _grid(resolution: int):
    yy, xx = np.mgrid[0:resolution, 0:resolution].astype(np.float64)
    return yy + 0.5, xx + 0.5


def _ellipse(yy, xx, cy, cx, ry, rx):
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def _paint(img, mask, color):
    img[mask] = color


def _render_face(g: FaceGeometry, resolution: int) -> np.ndarray:
    yy, xx = _grid(resolution)
    img = np.empty((resolution, resolution, 3), dtype=np.float64)
    img[:] = g.background
    R = resolution
    # torso and neck
    torso = (yy >= g.chin_y + 0.08 * R) & (np.abs(xx - g.cx) <= 0.36 * R)
    _paint(img, torso, g.shirt)
    neck = (yy >= g.cy) & (yy < g.chin_y + 0.1 * R) & (np.abs(xx - g.cx) <= 0.09 * R)
    _paint(img, neck, g.skin)
    # hair sits behind the head
    _paint(img, _ellipse(yy, xx, g.cy - 0.08 * R, g.cx, g.ry * 0.95, g.rx * 1.08), g.hair)
    _paint(img, _ellipse(yy, xx, g.cy, g.cx, g.ry, g.rx), g.skin)
    fringe = _ellipse(yy, xx, g.cy - g.ry * 0.75, g.cx, g.ry * 0.4, g.rx * 0.95)
    _paint(img, fringe & _ellipse(yy, xx, g.cy, g.cx, g.ry, g.rx), g.hair)
    for sx in (-1, 1):
        eye = _ellipse(yy, xx, g.eye_y, g.cx + sx * g.eye_dx, g.eye_r, g.eye_r * 1.3)
        _paint(img, eye, (0.08, 0.06, 0.05))
    mouth = _ellipse(yy, xx, g.mouth_y, g.cx, max(0.012 * R, 0.6), g.rx * 0.35)
    _paint(img, mouth, (0.55, 0.2, 0.2))
    return img


def attribute_mask(seed: int, label, resolution: int) -> np.ndarray:
    """Boolean region that compositing the attribute may touch."""
    label = AttributeLabel.parse(label)
    g = FaceGeometry.from_seed(seed, resolution)
    yy, xx = _grid(resolution)
    R = resolution
    if label.index == 0:
        half_w = g.eye_dx + g.eye_r * 3.2
        half_h = g.eye_r * 3.2
        box = (np.abs(xx - g.cx) <= half_w) & (np.abs(yy - g.eye_y) <= half_h)
    elif label.index == 1:
        box = ((yy >= g.cy + g.ry * 0.25) & (yy <= g.chin_y + 0.04 * R)
               & (np.abs(xx - g.cx) <= g.rx * 1.02))
    else:
        knot_y = g.chin_y + 0.13 * R
        box = (np.abs(yy - knot_y) <= 0.07 * R) & (np.abs(xx - g.cx) <= 0.17 * R)
    return box


def _composite(img, g: FaceGeometry, label: AttributeLabel, seed: int, resolution: int):
    yy, xx = _grid(resolution)
    R = resolution
    out = img.copy()
    mask = attribute_mask(seed, label, resolution)
    if label.index == 0:
        ring_r = g.eye_r * 2.4
        thick = max(0.018 * R, 0.8)
        frame = np.zeros_like(mask)
        for sx in (-1, 1):
            d = np.hypot(yy - g.eye_y, xx - (g.cx + sx * g.eye_dx))
            frame |= np.abs(d - ring_r) <= thick
        bridge = (np.abs(yy - g.eye_y) <= thick) & (
            np.abs(xx - g.cx) <= g.eye_dx - ring_r + thick
        )
        frame |= bridge
        out[frame & mask] = (0.05, 0.05, 0.08)
    elif label.index == 1:
        rng = np.random.default_rng([seed, 104729])
        inside = _ellipse(yy, xx, g.cy, g.cx, g.ry, g.rx) & (yy >= g.cy + g.ry * 0.3)
        chin = _ellipse(yy, xx, g.chin_y - 0.02 * R, g.cx, 0.06 * R, g.rx * 0.6)
        region = (inside | chin) & mask
        texture = rng.uniform(0.0, 0.12, size=(resolution, resolution))
        base = np.array([0.18, 0.12, 0.08])
        out[region] = base + texture[region][:, None]
    else:
        knot_y = g.chin_y + 0.13 * R
        dx = xx - g.cx
        dy = np.abs(yy - knot_y)
        wings = (np.abs(dx) <= 0.15 * R) & (dy <= 0.25 * np.abs(dx) + 0.01 * R)
        knot = (np.abs(dx) <= 0.025 * R) & (dy <= 0.03 * R)
        color = np.array([0.7, 0.08, 0.12])
        out[(wings & mask)] = color
        out[(knot & mask)] = color * 0.7
    return out


def render_sketch(img01: np.ndarray, gain: float = 4.0, threshold: float = 0.08) -> np.ndarray:
    """Dark strokes where the luminance gradient is strong, white elsewhere."""
    gray = img01 @ LUMA.astype(np.float64)
    gray = ndimage.gaussian_filter(gray, 0.6, mode="nearest")
    mag = np.hypot(ndimage.sobel(gray, 0, mode="nearest"),
                   ndimage.sobel(gray, 1, mode="nearest")) / 4.0
    mag[mag < threshold] = 0.0
    ink = np.clip(mag * gain, 0.0, 1.0)
    return np.repeat((1.0 - ink)[..., None], 3, axis=2)


def _to_signed(img01: np.ndarray) -> np.ndarray:
    return np.clip(img01 * 2.0 - 1.0, -1.0, 1.0).astype(np.float32)


def synth_triplet(seed: int, label, resolution: int = 64) -> Triplet:
    """Procedural (face, face with attribute, sketch of attributed face).

    ``x1`` depends only on ``seed`` and ``resolution``; ``x2`` differs from it
    only inside :func:`attribute_mask`.
    """
    label = AttributeLabel.parse(label)
    if resolution < MIN_SYNTH_RESOLUTION:
        raise ValueError(
            f"resolution {resolution} too small for attribute geometry "
            f"(minimum {MIN_SYNTH_RESOLUTION})"
        )
    g = FaceGeometry.from_seed(seed, resolution)
    face = _render_face(g, resolution)
    attributed = _composite(face, g, label, seed, resolution)
    sketch = render_sketch(attributed)
    return Triplet(
        x1=_to_signed(face), x2=_to_signed(attributed), y=_to_signed(sketch),
        label=label, id=f"synth-{seed}-{label.name}",
    )


def synthetic_face_seed(index: int, seed: int = 0, num_attributes: int = len(ATTRIBUTES)) -> int:
    return seed + index // num_attributes


def synthetic_dataset(count: int, resolution: int = 64, seed: int = 0,
                      num_attributes: int = len(ATTRIBUTES)) -> list[Triplet]:
    """``count`` triplets; each procedural face is shown with every attribute in turn.

    Triplet ``i`` is face ``synthetic_face_seed(i, seed)`` with label
    ``i % num_attributes``, so the label is not predictable from the face.
    """
    out = []
    for i in range(count):
        t = synth_triplet(synthetic_face_seed(i, seed, num_attributes), i % num_attributes,
                          resolution)
        out.append(Triplet(t.x1, t.x2, t.y, t.label, id=f"s{i:05d}"))
    return out


# --------------------------------------------------------------------------
# files


def resize_normalize(raw, resolution: int) -> np.ndarray:
    """Decode, bilinear-resize to a square and map [0, 255] onto [-1, 1].

    ``raw`` may be a path, encoded bytes, a ``PIL.Image`` or a ``uint8`` array.
    """
    if isinstance(raw, Image.Image):
        img = raw
    elif isinstance(raw, np.ndarray):
        if raw.size == 0:
            raise ValueError("empty image")
        img = Image.fromarray(np.ascontiguousarray(raw, dtype=np.uint8))
    elif isinstance(raw, (bytes, bytearray)):
        try:
            img = Image.open(io.BytesIO(raw))
            img.load()
        except Exception as exc:
            raise OSError(f"cannot decode image bytes: {exc}") from exc
    else:
        try:
            img = Image.open(raw)
            img.load()
        except FileNotFoundError:
            raise
        except Exception as exc:
            raise OSError(f"cannot decode image {raw}: {exc}") from exc
    img = img.convert("RGB")
    if img.size != (resolution, resolution):
        img = img.resize((resolution, resolution), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32)
    return arr * np.float32(2.0 / 255.0) - np.float32(1.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round((np.clip(img, -1.0, 1.0) + 1.0) * 127.5).astype(np.uint8)


def save_png(img: np.ndarray, path) -> None:
    Image.fromarray(to_uint8(img)).save(path, format="PNG")


def load_manifest(root, split: str | None = "train") -> DatasetManifest:
    """Read ``root/manifest.jsonl``; keep entries of ``split`` (``None`` keeps all)."""
    root = Path(root)
    if split is not None and split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
    path = root / MANIFEST_NAME
    if not path.is_file():
        raise FileNotFoundError(f"no manifest at {path}")
    entries, seen = [], set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                entry = ManifestEntry(
                    id=str(rec["id"]), x1=rec["x1"], x2=rec["x2"], y=rec["y"],
                    label=AttributeLabel.parse(rec["label"]), split=rec["split"],
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ManifestError(f"{path}:{lineno}: malformed entry ({exc})") from exc
            if entry.split not in SPLITS:
                raise ManifestError(f"{path}:{lineno}: unknown split {entry.split!r}")
            if entry.id in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate id {entry.id!r}")
            seen.add(entry.id)
            if split is None or entry.split == split:
                entries.append(entry)
    missing = [e.id for e in entries
               if not all((root / p).is_file() for p in (e.x1, e.x2, e.y))]
    if missing:
        raise FileNotFoundError(f"manifest {path} references missing files for ids {missing}")
    return DatasetManifest(root=root, entries=entries)


def load_triplet(manifest: DatasetManifest, entry: ManifestEntry, resolution: int) -> Triplet:
    root = manifest.root
    imgs = [resize_normalize(root / p, resolution) for p in (entry.x1, entry.x2, entry.y)]
    return Triplet(*imgs, label=entry.label, id=entry.id)


def write_dataset(triplets: Iterable[Triplet], out_dir, splits: Iterable[str]) -> Path:
    """Write PNG triplets and a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    lines = []
    for t, split in zip(triplets, splits):
        rec = {"id": t.id, "label": t.label.name, "split": split}
        for key in ("x1", "x2", "y"):
            rel = f"images/{t.id}_{key}.png"
            save_png(getattr(t, key), out_dir / rel)
            rec[key] = rel
        lines.append(json.dumps(rec, sort_keys=True))
    path = out_dir / MANIFEST_NAME
    tmp = path.with_suffix(".tmp")
    tmp.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    os.replace(tmp, path)
    return path


# --------------------------------------------------------------------------
# transforms


def augment_flip(t: Triplet, apply: bool) -> Triplet:
    if not apply:
        return t
    flip = lambda a: np.ascontiguousarray(a[:, ::-1])  # noqa: E731
    return Triplet(flip(t.x1), flip(t.x2), flip(t.y), t.label, t.id)


def grayscale(img: np.ndarray) -> np.ndarray:
    gray = img @ LUMA
    return np.repeat(gray[..., None], 3, axis=2).astype(np.float32)


def completion_box(width: int, mask_fraction: float) -> tuple[int, int]:
    side = int(round(mask_fraction * width))
    start = (width - side) // 2
    return start, side


def task_transform(t: Triplet, cfg: TaskConfig, rng_seed: int = 0):
    """Return ``(input, target_attr, target_out)`` for the configured task.

    * attributed_sketch: ``(x1, x2, y)``
    * colorization: ``(gray(x1), x2, x2)``
    * completion: ``(x1 with a noisy central square, x2, x2)``
    """
    if not isinstance(cfg, TaskConfig):
        raise ValueError(f"expected a TaskConfig, got {cfg!r}")
    if cfg.task == "attributed_sketch":
        return t.x1, t.x2, t.y
    if cfg.task == "colorization":
        return grayscale(t.x1), t.x2, t.x2
    if cfg.task == "completion":
        h, w, c = t.x1.shape
        left, side = completion_box(w, cfg.mask_fraction)
        top = (h - side) // 2
        noisy = t.x1.copy()
        rng = np.random.default_rng(rng_seed)
        noisy[top:top + side, left:left + side] = rng.uniform(
            -1.0, 1.0, size=(side, side, c)
        ).astype(np.float32)
        return noisy, t.x2, t.x2
    raise ValueError(f"unknown task {cfg.task!r}")
