"""Sparse-to-dense label augmentation.

Each labeled point is expanded to its best point-prompted candidate mask;
overlap conflicts are settled by a proximity-weighted vote among the labeled
points inside the overlap region; pixels no mask covers are filled from the
superpixel propagator; a final pass re-asserts every queried point's label.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import EmptyOverlap, EmptyPointSet, IncompleteFill
from .proposals import ProposalSet, point_prompt
from .raster import UNLABELED, ImageDims, LabelMap, LabelSchema, PointLabel, PointLabelSet, RasterImage
from .superpixels import DEFAULT_COMPACTNESS, DEFAULT_ITERS, DEFAULT_K, SuperpixelMap, propagate_point_labels, slic_segment


@dataclass(frozen=True)
class ExpandedMask:
    """A point's prompted mask; bitmap is None when no proposal contains it."""

    source: PointLabel
    bitmap: np.ndarray | None = field(repr=False)

    @property
    def area(self) -> int:
        return int(self.bitmap.sum()) if self.bitmap is not None else 0


@dataclass(frozen=True)
class PartialSegmentation:
    """Labels where at least one expanded mask covers; sentinel elsewhere."""

    map: LabelMap
    covered: np.ndarray = field(repr=False)


def expand_points(points: PointLabelSet, provider: ProposalSet) -> list[ExpandedMask]:
    """One ExpandedMask per point, in point order."""
    if len(points) == 0:
        raise EmptyPointSet("expansion needs at least one point")
    out = []
    for e in points:
        hit = point_prompt(provider, e.point)
        out.append(ExpandedMask(source=e, bitmap=None if hit is None else hit.bitmap))
    return out


def _bbox(bitmap: np.ndarray) -> tuple[int, int, int, int]:
    ys, xs = np.nonzero(bitmap)
    return int(ys.min()), int(ys.max()) + 1, int(xs.min()), int(xs.max()) + 1


def _overlap_region(indices, expanded) -> tuple[np.ndarray, tuple[int, int]] | None:
    """Intersection of the masks at `indices`, returned as a bbox slice plus
    its (y, x) offset; None when empty."""
    boxes = [_bbox(expanded[i].bitmap) for i in indices]
    y0 = max(b[0] for b in boxes)
    y1 = min(b[1] for b in boxes)
    x0 = max(b[2] for b in boxes)
    x1 = min(b[3] for b in boxes)
    if y0 >= y1 or x0 >= x1:
        return None
    inter = np.ones((y1 - y0, x1 - x0), dtype=bool)
    for i in indices:
        inter &= expanded[i].bitmap[y0:y1, x0:x1]
    if not inter.any():
        return None
    return inter, (y0, x0)


def _resolve_signature(indices: tuple[int, ...], expanded, points: PointLabelSet) -> int:
    """Label for pixels whose covering-mask set is exactly `indices`."""
    if len(indices) == 1:
        return expanded[indices[0]].source.label

    region = _overlap_region(indices, expanded)
    if region is None:
        raise EmptyOverlap(f"masks {indices} have empty intersection")
    inter, (y0, x0) = region
    ys, xs = np.nonzero(inter)
    c_px = float(xs.mean()) + x0
    c_py = float(ys.mean()) + y0

    h, w = inter.shape
    scores: dict[int, float] = {}
    for e in points:
        lx, ly = e.point.x - x0, e.point.y - y0
        if 0 <= lx < w and 0 <= ly < h and inter[ly, lx]:
            d = float(np.hypot(e.point.x - c_px, e.point.y - c_py))
            scores[e.label] = scores.get(e.label, 0.0) + 1.0 / (1.0 + d)

    member_labels = {expanded[i].source.label for i in indices}
    best = max((scores.get(lab, 0.0) for lab in member_labels), default=0.0)
    if best > 0.0:
        candidates = [i for i in indices if scores.get(expanded[i].source.label, 0.0) == best]
        winner = min(candidates, key=lambda i: (expanded[i].area, i))
    else:
        # no supporting point inside the overlap: nearest source seed wins
        def seed_dist(i):
            s = expanded[i].source.point
            return float(np.hypot(s.x - c_px, s.y - c_py))

        winner = min(indices, key=lambda i: (seed_dist(i), expanded[i].area, i))
    return expanded[winner].source.label


def resolve_pixel_label(p, s_p, expanded, points: PointLabelSet) -> int:
    """Per-pixel conflict rule over the pixel's covering-mask indices s_p."""
    indices = tuple(sorted(s_p))
    if not indices:
        raise ValueError("s_p must be non-empty")
    return _resolve_signature(indices, expanded, points)


def merge_masks(expanded, points: PointLabelSet, dims: ImageDims) -> PartialSegmentation:
    """Label every pixel covered by at least one expanded mask.

    Pixels are grouped by identical covering-mask signature; each group is
    resolved once, giving the same result as per-pixel evaluation.
    """
    present = [(i, e) for i, e in enumerate(expanded) if e.bitmap is not None]
    data = np.full(dims.shape, UNLABELED, dtype=np.uint8)
    if not present:
        return PartialSegmentation(map=LabelMap(dims, data), covered=np.zeros(dims.shape, bool))

    bits = np.stack([e.bitmap.reshape(-1) for _, e in present])  # (n, H*W)
    keys = np.packbits(bits, axis=0)
    keys = np.ascontiguousarray(keys.T)
    void = keys.view(np.dtype((np.void, keys.shape[1]))).reshape(-1)
    uniq, first_idx, inverse = np.unique(void, return_index=True, return_inverse=True)

    group_label = np.full(uniq.size, UNLABELED, dtype=np.uint8)
    for g in range(uniq.size):
        members = np.flatnonzero(bits[:, first_idx[g]])
        if members.size == 0:
            continue
        indices = tuple(present[j][0] for j in members)
        group_label[g] = _resolve_signature(indices, expanded, points)

    data = group_label[inverse].reshape(dims.shape)
    covered = bits.any(axis=0).reshape(dims.shape)
    return PartialSegmentation(map=LabelMap(dims, data), covered=covered)


def compose_final(partial: PartialSegmentation, fill: LabelMap, points: PointLabelSet) -> LabelMap:
    """Covered pixels from the merge, the rest from the fill map, then every
    queried point is forced back to its queried label."""
    if fill.sentinel_count() > 0:
        raise IncompleteFill(f"fill map has {fill.sentinel_count()} unlabeled pixels")
    out = np.where(partial.covered, partial.map.data, fill.data).astype(np.uint8)
    for e in points:
        out[e.point.y, e.point.x] = e.label
    return LabelMap(fill.dims, out)


def augment(
    image: RasterImage,
    points: PointLabelSet,
    proposals: ProposalSet,
    k: int = DEFAULT_K,
    compactness: float = DEFAULT_COMPACTNESS,
    iters: int = DEFAULT_ITERS,
    sp: SuperpixelMap | None = None,
) -> LabelMap:
    """Full pipeline: expand, merge, superpixel fill, compose.

    A precomputed SuperpixelMap may be passed when augmenting the same image
    repeatedly (the interactive service does); results are identical.
    """
    if len(points) == 0:
        raise EmptyPointSet("augmentation needs at least one point")
    expanded = expand_points(points, proposals)
    partial = merge_masks(expanded, points, image.dims)
    if sp is None:
        sp = slic_segment(image, K=k, compactness=compactness, iters=iters)
    fill = propagate_point_labels(sp, points)
    return compose_final(partial, fill, points)


def render_overlay(image: RasterImage, labels: LabelMap, schema: LabelSchema, opacity: float = 0.5) -> bytes:
    """Alpha-blend class colors over the image; sentinel pixels stay raw."""
    if not (0.0 <= opacity <= 1.0):
        raise ValueError("opacity must be in [0, 1]")
    colors = np.zeros((256, 3), dtype=np.float64)
    for i, c in enumerate(schema.colors):
        colors[i] = c
    lut_hit = np.zeros(256, dtype=bool)
    lut_hit[: schema.num_classes] = True
    painted = colors[labels.data]
    hit = lut_hit[labels.data][..., None]
    base = image.data.astype(np.float64)
    blended = np.where(hit, (1.0 - opacity) * base + opacity * painted, base)
    buf = io.BytesIO()
    Image.fromarray(blended.round().astype(np.uint8), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()
