"""Candidate object masks: manifest-backed loading, point-prompted queries,
and a self-contained fallback generator built on SLIC superpixels.

Manifest files are JSON, one per image:
    {"width": W, "height": H,
     "masks": [{"id": 0, "area": 42, "centroid": [x, y],
                "quality": 0.9, "rle": [c0, c1, ...]}, ...]}
RLE counts are row-major with a leading zero-run (possibly 0).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimsMismatch, InconsistentMetadata, ManifestParseError
from .raster import ImageDims, PixelCoord, RasterImage, RleMask, mask_area_centroid, rle_decode, rle_encode
from .superpixels import rgb_to_lab, slic_segment

CENTROID_TOL = 1e-6


@dataclass(frozen=True)
class CandidateMask:
    id: int
    mask: RleMask
    area: int
    centroid: tuple[float, float]
    quality: float
    bitmap: np.ndarray = field(repr=False, compare=False)

    def contains(self, x: int, y: int) -> bool:
        return bool(self.bitmap[y, x])


@dataclass(frozen=True)
class ProposalSet:
    """Candidate masks plus the union coverage bitmap."""

    dims: ImageDims
    masks: tuple[CandidateMask, ...]
    coverage: np.ndarray = field(repr=False, compare=False)
    mode: str = "memory"  # file-backed | fallback-generator | memory

    @staticmethod
    def from_masks(dims: ImageDims, masks, mode: str = "memory") -> "ProposalSet":
        coverage = np.zeros(dims.shape, dtype=bool)
        for m in masks:
            coverage |= m.bitmap
        return ProposalSet(dims=dims, masks=tuple(masks), coverage=coverage, mode=mode)

    def to_manifest_json(self) -> str:
        return json.dumps(
            {
                "width": self.dims.width,
                "height": self.dims.height,
                "masks": [
                    {
                        "id": m.id,
                        "area": m.area,
                        "centroid": [m.centroid[0], m.centroid[1]],
                        "quality": m.quality,
                        "rle": list(m.mask.counts),
                    }
                    for m in self.masks
                ],
            }
        )

    def save_manifest(self, path) -> None:
        Path(path).write_text(self.to_manifest_json())


def _candidate_from_bitmap(mask_id: int, bitmap: np.ndarray, quality: float) -> CandidateMask:
    area, centroid = mask_area_centroid(bitmap)
    return CandidateMask(
        id=mask_id,
        mask=rle_encode(bitmap),
        area=area,
        centroid=centroid,
        quality=float(quality),
        bitmap=np.asarray(bitmap, dtype=bool),
    )


def load_proposals(manifest_path) -> ProposalSet:
    """Load and validate a proposal manifest.

    Every mask is decoded; declared area must match exactly and the declared
    centroid must agree with the recomputed one within 1e-6.
    """
    path = Path(manifest_path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestParseError(f"cannot read manifest {path}: {exc}") from exc
    try:
        dims = ImageDims(int(raw["width"]), int(raw["height"]))
        entries = list(raw["masks"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestParseError(f"manifest {path} missing fields: {exc}") from exc

    masks = []
    for entry in entries:
        try:
            mask_id = int(entry["id"])
            declared_area = int(entry["area"])
            cx, cy = (float(v) for v in entry["centroid"])
            quality = float(entry["quality"])
            counts = tuple(int(c) for c in entry["rle"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestParseError(f"malformed mask entry in {path}: {exc}") from exc
        rle = RleMask(dims, counts)
        if sum(counts) != dims.n_pixels:
            raise DimsMismatch(
                f"mask {mask_id}: rle covers {sum(counts)} pixels, image has {dims.n_pixels}"
            )
        bitmap = rle_decode(rle)
        area, centroid = mask_area_centroid(bitmap)
        if area != declared_area:
            raise InconsistentMetadata(f"mask {mask_id}: declared area {declared_area} != {area}")
        if abs(centroid[0] - cx) > CENTROID_TOL or abs(centroid[1] - cy) > CENTROID_TOL:
            raise InconsistentMetadata(
                f"mask {mask_id}: declared centroid ({cx}, {cy}) != {centroid}"
            )
        masks.append(
            CandidateMask(
                id=mask_id, mask=rle, area=area, centroid=centroid, quality=quality, bitmap=bitmap
            )
        )
    return ProposalSet.from_masks(dims, masks, mode="file-backed")


def point_prompt(proposals: ProposalSet, p: PixelCoord) -> CandidateMask | None:
    """Best candidate mask containing p: highest quality, then smaller area,
    then lower id. None when p is uncovered."""
    if not proposals.dims.contains(p.x, p.y):
        raise ValueError(f"point {p.as_tuple()} out of bounds")
    hits = [m for m in proposals.masks if m.contains(p.x, p.y)]
    if not hits:
        return None
    return min(hits, key=lambda m: (-m.quality, m.area, m.id))


def coverage_complement(proposals: ProposalSet) -> list[PixelCoord]:
    """Pixels covered by no mask, row-major."""
    ys, xs = np.nonzero(~proposals.coverage)
    return [PixelCoord(int(x), int(y)) for x, y in zip(xs, ys)]


@dataclass(frozen=True)
class FallbackConfig:
    """Settings for the superpixel-merge proposal generator."""

    k_gen: int = 64
    tau: float = 10.0  # Lab-distance merge threshold between adjacent superpixels
    min_area: int | None = None  # None: max(64, 0.003 * W * H)
    compactness: float = 12.0
    iters: int = 10
    seed: int = 0

    def resolved_min_area(self, dims: ImageDims) -> int:
        if self.min_area is not None:
            return self.min_area
        return max(64, int(round(0.003 * dims.n_pixels)))


def generate_fallback_proposals(image: RasterImage, config: FallbackConfig | None = None) -> ProposalSet:
    """Merge adjacent SLIC superpixels with similar mean Lab color into
    connected components; each surviving component becomes one mask."""
    cfg = config or FallbackConfig()
    dims = image.dims
    min_area = cfg.resolved_min_area(dims)
    sp = slic_segment(image, K=cfg.k_gen, compactness=cfg.compactness, iters=cfg.iters)

    # adjacency between superpixels (4-neighborhood)
    a = sp.assignment
    pairs = set()
    h = a[:, :-1] != a[:, 1:]
    for u, v in zip(a[:, :-1][h].tolist(), a[:, 1:][h].tolist()):
        pairs.add((min(u, v), max(u, v)))
    vdiff = a[:-1, :] != a[1:, :]
    for u, v in zip(a[:-1, :][vdiff].tolist(), a[1:, :][vdiff].tolist()):
        pairs.add((min(u, v), max(u, v)))

    parent = list(range(sp.count))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    means = sp.features[:, :3]
    for u, v in sorted(pairs):
        if math.dist(means[u], means[v]) < cfg.tau:
            ru, rv = find(u), find(v)
            if ru != rv:
                parent[max(ru, rv)] = min(ru, rv)

    roots = np.array([find(i) for i in range(sp.count)])
    comp_of_pixel = roots[a]

    lab = rgb_to_lab(image.data)
    masks = []
    # order components by first row-major appearance
    flat = comp_of_pixel.reshape(-1)
    uniq, first = np.unique(flat, return_index=True)
    for root in uniq[np.argsort(first)]:
        bitmap = comp_of_pixel == root
        area = int(bitmap.sum())
        if area < min_area:
            continue
        pix = lab[bitmap]
        var = float(((pix - pix.mean(axis=0)) ** 2).sum(axis=1).mean())
        quality = min(1.0, max(0.0, 1.0 / (1.0 + var)))
        masks.append(_candidate_from_bitmap(len(masks), bitmap, quality))
    return ProposalSet.from_masks(dims, masks, mode="fallback-generator")
