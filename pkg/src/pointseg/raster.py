"""Image/label grids, point-label sets, and the run-length mask codec.

Coordinate convention: x = column (left to right), y = row (top to bottom),
origin at the top-left pixel. Distances are Euclidean in pixel units.
Class ids are single bytes; 255 is reserved as the unlabeled sentinel.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import EmptyMask, MalformedRle

UNLABELED = 255


@dataclass(frozen=True)
class ImageDims:
    """Width/height of a raster plus its diagonal length."""

    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"invalid dims {self.width}x{self.height}")

    @property
    def d_max(self) -> float:
        return math.hypot(self.width, self.height)

    @property
    def n_pixels(self) -> int:
        return self.width * self.height

    @property
    def shape(self) -> tuple[int, int]:
        """(H, W) numpy shape."""
        return (self.height, self.width)

    def contains(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height


@dataclass(frozen=True)
class PixelCoord:
    x: int
    y: int

    def as_tuple(self) -> tuple[int, int]:
        return (self.x, self.y)


@dataclass(frozen=True)
class LabelSchema:
    """Class names, background id, and per-class overlay colors."""

    names: tuple[str, ...]
    background_id: int = 0
    colors: tuple[tuple[int, int, int], ...] = ()

    def __post_init__(self):
        if not (1 <= len(self.names) <= 255):
            raise ValueError("class count must be in 1..255")
        if not (0 <= self.background_id < len(self.names)):
            raise ValueError("background_id out of range")
        if not self.colors:
            object.__setattr__(self, "colors", default_colors(len(self.names)))
        if len(self.colors) != len(self.names):
            raise ValueError("colors must match names")

    @property
    def num_classes(self) -> int:
        return len(self.names)

    def to_json(self) -> str:
        return json.dumps(
            {
                "names": list(self.names),
                "background_id": self.background_id,
                "colors": [list(c) for c in self.colors],
            },
            indent=2,
        )

    @staticmethod
    def from_json(text: str) -> "LabelSchema":
        raw = json.loads(text)
        return LabelSchema(
            names=tuple(raw["names"]),
            background_id=int(raw.get("background_id", 0)),
            colors=tuple(tuple(int(v) for v in c) for c in raw.get("colors", [])),
        )

    @staticmethod
    def load(path) -> "LabelSchema":
        return LabelSchema.from_json(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())


def default_colors(m: int) -> tuple[tuple[int, int, int], ...]:
    """Deterministic, well-spread palette for m classes."""
    out = []
    for i in range(m):
        out.append(((i * 67 + 40) % 256, (i * 113 + 90) % 256, (i * 181 + 150) % 256))
    return tuple(out)


@dataclass(frozen=True)
class PointLabel:
    point: PixelCoord
    label: int
    order_index: int


@dataclass(frozen=True)
class PointLabelSet:
    """Ordered set of point labels; no two entries share a pixel."""

    entries: tuple[PointLabel, ...]

    def __post_init__(self):
        seen = set()
        for i, e in enumerate(self.entries):
            if e.order_index != i:
                raise ValueError("order_index values must be 0..n-1 contiguous")
            key = e.point.as_tuple()
            if key in seen:
                raise ValueError(f"duplicate point {key}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def points_array(self) -> np.ndarray:
        """(n, 2) float array of (x, y)."""
        return np.array([[e.point.x, e.point.y] for e in self.entries], dtype=float).reshape(-1, 2)

    def labels_array(self) -> np.ndarray:
        return np.array([e.label for e in self.entries], dtype=np.int64)

    @staticmethod
    def build(pairs) -> "PointLabelSet":
        """From an iterable of ((x, y), label) in acquisition order."""
        entries = tuple(
            PointLabel(PixelCoord(int(x), int(y)), int(lab), i)
            for i, ((x, y), lab) in enumerate(pairs)
        )
        return PointLabelSet(entries)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "y", "label"])
        for e in self.entries:
            w.writerow([e.point.x, e.point.y, e.label])
        return buf.getvalue()

    @staticmethod
    def from_csv(text: str) -> "PointLabelSet":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [c.strip() for c in rows[0]] != ["x", "y", "label"]:
            raise ValueError("point CSV must start with header x,y,label")
        pairs = []
        for i, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"row {i}: expected 3 columns")
            pairs.append(((int(row[0]), int(row[1])), int(row[2])))
        return PointLabelSet.build(pairs)


@dataclass(frozen=True)
class LabelMap:
    """H x W class ids; may contain the unlabeled sentinel."""

    dims: ImageDims
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.uint8)
        if arr.shape != self.dims.shape:
            raise ValueError(f"data shape {arr.shape} != dims {self.dims.shape}")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    def sentinel_count(self) -> int:
        return int(np.count_nonzero(self.data == UNLABELED))

    def to_png_bytes(self, schema: LabelSchema | None = None) -> bytes:
        """8-bit indexed PNG; pixel value = class id, 255 = unlabeled."""
        img = Image.fromarray(np.asarray(self.data), mode="P")
        img.putpalette(_palette_bytes(schema))
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        return buf.getvalue()

    def save_png(self, path, schema: LabelSchema | None = None) -> None:
        Path(path).write_bytes(self.to_png_bytes(schema))

    @staticmethod
    def from_png_bytes(data: bytes) -> "LabelMap":
        img = Image.open(io.BytesIO(data))
        if img.mode not in ("P", "L"):
            raise ValueError(f"label PNG must be single-channel indexed, got mode {img.mode}")
        arr = np.asarray(img, dtype=np.uint8)
        return LabelMap(ImageDims(arr.shape[1], arr.shape[0]), arr)

    @staticmethod
    def load_png(path) -> "LabelMap":
        return LabelMap.from_png_bytes(Path(path).read_bytes())


def _palette_bytes(schema: LabelSchema | None) -> bytes:
    pal = bytearray(256 * 3)
    if schema is not None:
        for i, (r, g, b) in enumerate(schema.colors):
            pal[3 * i : 3 * i + 3] = bytes((r, g, b))
    else:
        for i in range(256):
            pal[3 * i : 3 * i + 3] = bytes((i, i, i))
    # sentinel drawn as white in either case
    pal[3 * 255 : 3 * 255 + 3] = b"\xff\xff\xff"
    return bytes(pal)


@dataclass(frozen=True)
class RasterImage:
    """H x W x 3 RGB bytes."""

    dims: ImageDims
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.uint8)
        if arr.shape != (self.dims.height, self.dims.width, 3):
            raise ValueError(f"image shape {arr.shape} != dims {self.dims.shape} x 3")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @staticmethod
    def from_array(arr: np.ndarray) -> "RasterImage":
        arr = np.asarray(arr, dtype=np.uint8)
        return RasterImage(ImageDims(arr.shape[1], arr.shape[0]), arr)

    @staticmethod
    def from_png_bytes(data: bytes) -> "RasterImage":
        img = Image.open(io.BytesIO(data)).convert("RGB")
        return RasterImage.from_array(np.asarray(img))

    @staticmethod
    def load(path) -> "RasterImage":
        return RasterImage.from_png_bytes(Path(path).read_bytes())

    def to_png_bytes(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(np.asarray(self.data), mode="RGB").save(buf, format="PNG")
        return buf.getvalue()

    def save_png(self, path) -> None:
        Path(path).write_bytes(self.to_png_bytes())


@dataclass(frozen=True)
class RleMask:
    """Run lengths over row-major pixel order; first run counts zeros."""

    dims: ImageDims
    counts: tuple[int, ...]

    def __post_init__(self):
        if any(c < 0 for c in self.counts):
            raise MalformedRle("negative run length")
        if any(c == 0 for c in self.counts[1:]):
            raise MalformedRle("zero-length interior run")


def rle_encode(bitmap: np.ndarray) -> RleMask:
    """Encode a boolean H x W bitmap into canonical run lengths."""
    arr = np.asarray(bitmap, dtype=bool)
    dims = ImageDims(arr.shape[1], arr.shape[0])
    flat = arr.reshape(-1)
    # boundaries between runs of equal values
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(edges).tolist()
    if flat[0]:
        counts = [0] + counts
    return RleMask(dims, tuple(int(c) for c in counts))


def rle_decode(mask: RleMask) -> np.ndarray:
    """Decode run lengths back to a boolean H x W bitmap."""
    total = sum(mask.counts)
    if total != mask.dims.n_pixels:
        raise MalformedRle(
            f"counts sum {total} != {mask.dims.n_pixels} pixels for {mask.dims.width}x{mask.dims.height}"
        )
    flat = np.zeros(total, dtype=bool)
    pos = 0
    value = False
    for c in mask.counts:
        if value:
            flat[pos : pos + c] = True
        pos += c
        value = not value
    return flat.reshape(mask.dims.shape)


def mask_area_centroid(bitmap: np.ndarray) -> tuple[int, tuple[float, float]]:
    """Area (set-pixel count) and real-valued centroid (mean x, mean y)."""
    arr = np.asarray(bitmap, dtype=bool)
    ys, xs = np.nonzero(arr)
    if xs.size == 0:
        raise EmptyMask("mask has no set pixels")
    return int(xs.size), (float(xs.mean()), float(ys.mean()))
