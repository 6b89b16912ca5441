"""Deterministic SLIC superpixels and point-label propagation.

The propagator fills the whole image from a sparse point set: superpixels
containing labeled points take the majority label, the rest copy the label
of the nearest labeled superpixel in (L, a, b, x, y) feature space.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import EmptyPointSet
from .raster import ImageDims, LabelMap, PointLabelSet, RasterImage

DEFAULT_K = 100
DEFAULT_COMPACTNESS = 10.0
DEFAULT_ITERS = 10

# sRGB -> XYZ (D65) matrix
_RGB2XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_WHITE = np.array([0.95047, 1.0, 1.08883])


def rgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Convert H x W x 3 uint8 sRGB to CIELAB (D65), float64."""
    srgb = np.asarray(rgb, dtype=np.float64) / 255.0
    lin = np.where(srgb <= 0.04045, srgb / 12.92, ((srgb + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _RGB2XYZ.T
    t = xyz / _WHITE
    delta = 6.0 / 29.0
    f = np.where(t > delta**3, np.cbrt(t), t / (3 * delta**2) + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


@dataclass(frozen=True)
class SuperpixelMap:
    """Partition of the image into spatially connected superpixels."""

    dims: ImageDims
    assignment: np.ndarray = field(repr=False)  # H x W int32 ids in [0, count)
    count: int = 0
    features: np.ndarray = field(repr=False, default=None)  # count x 5 mean (L,a,b,x,y)
    compactness: float = DEFAULT_COMPACTNESS
    cell_size: float = 1.0  # SLIC grid interval S

    def areas(self) -> np.ndarray:
        return np.bincount(self.assignment.reshape(-1), minlength=self.count)

    def boundary_mask(self) -> np.ndarray:
        """True at pixels whose right or bottom neighbor has another id."""
        a = self.assignment
        b = np.zeros(a.shape, dtype=bool)
        b[:, :-1] |= a[:, :-1] != a[:, 1:]
        b[:-1, :] |= a[:-1, :] != a[1:, :]
        return b

    def boundary_overlay_png(self, image: RasterImage) -> bytes:
        out = np.asarray(image.data).copy()
        out[self.boundary_mask()] = (255, 220, 0)
        buf = io.BytesIO()
        Image.fromarray(out, mode="RGB").save(buf, format="PNG")
        return buf.getvalue()

    def assignment_png(self) -> bytes:
        """Assignment map as 16-bit grayscale PNG."""
        buf = io.BytesIO()
        Image.fromarray(self.assignment.astype(np.uint16)).save(buf, format="PNG")
        return buf.getvalue()

    def save_debug(self, image: RasterImage, overlay_path, assignment_path) -> None:
        Path(overlay_path).write_bytes(self.boundary_overlay_png(image))
        Path(assignment_path).write_bytes(self.assignment_png())


def _init_centers(lab: np.ndarray, K: int) -> np.ndarray:
    """Grid centers perturbed to the lowest-gradient pixel in a 3x3 window."""
    H, W = lab.shape[:2]
    S = math.sqrt(W * H / K)
    nx = max(1, min(W, round(W / S)))
    ny = max(1, min(H, round(H / S)))
    while nx * ny > K:
        if nx >= ny and nx > 1:
            nx -= 1
        elif ny > 1:
            ny -= 1
        else:
            break

    # squared gradient magnitude with clamped borders
    xp = np.empty_like(lab)
    xp[:, :-1] = lab[:, 1:]
    xp[:, -1] = lab[:, -1]
    xm = np.empty_like(lab)
    xm[:, 1:] = lab[:, :-1]
    xm[:, 0] = lab[:, 0]
    yp = np.empty_like(lab)
    yp[:-1] = lab[1:]
    yp[-1] = lab[-1]
    ym = np.empty_like(lab)
    ym[1:] = lab[:-1]
    ym[0] = lab[0]
    grad = ((xp - xm) ** 2).sum(axis=2) + ((yp - ym) ** 2).sum(axis=2)

    centers = []
    for i in range(ny):
        for j in range(nx):
            cx = min(W - 1, int((j + 0.5) * W / nx))
            cy = min(H - 1, int((i + 0.5) * H / ny))
            best = (cx, cy)
            best_g = grad[cy, cx]
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    px, py = cx + dx, cy + dy
                    if 0 <= px < W and 0 <= py < H and grad[py, px] < best_g:
                        best_g = grad[py, px]
                        best = (px, py)
            cx, cy = best
            centers.append([lab[cy, cx, 0], lab[cy, cx, 1], lab[cy, cx, 2], cx, cy])
    return np.array(centers, dtype=np.float64)


def _assign(lab, centers, S, compactness):
    """One SLIC assignment pass: windowed argmin over cluster distances.

    Distances are compared squared; the argmin is identical to comparing
    sqrt(d_lab^2 + (compactness * d_xy / S)^2). The spatial term is separable
    and built by broadcasting two 1-D arrays.
    """
    H, W = lab.shape[:2]
    ratio2 = np.float32((compactness / S) ** 2)
    xr = np.arange(W, dtype=np.float32)
    yr = np.arange(H, dtype=np.float32)
    best_d = np.full((H, W), np.inf, dtype=np.float32)
    best_k = np.full((H, W), -1, dtype=np.int32)
    for k in range(centers.shape[0]):
        cl = centers[k, :3]
        cx, cy = float(centers[k, 3]), float(centers[k, 4])
        x0 = max(0, int(math.floor(cx - S)))
        x1 = min(W, int(math.floor(cx + S)) + 1)
        y0 = max(0, int(math.floor(cy - S)))
        y1 = min(H, int(math.floor(cy + S)) + 1)
        if x0 >= x1 or y0 >= y1:
            continue
        win = lab[y0:y1, x0:x1]
        diff = win - cl
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        wx = ratio2 * (xr[x0:x1] - np.float32(cx)) ** 2
        wy = ratio2 * (yr[y0:y1] - np.float32(cy)) ** 2
        d2 += wx[None, :]
        d2 += wy[:, None]
        bd = best_d[y0:y1, x0:x1]
        bk = best_k[y0:y1, x0:x1]
        better = d2 < bd
        np.copyto(bd, d2, where=better)
        np.copyto(bk, k, where=better)

    # pixels outside every window: full argmin over all centers
    if (best_k < 0).any():
        uy, ux = np.nonzero(best_k < 0)
        pl = lab[uy, ux]  # (u, 3)
        d_lab2 = ((pl[:, None, :] - centers[None, :, :3]) ** 2).sum(axis=2)
        d_xy2 = (ux[:, None] - centers[None, :, 3]) ** 2 + (uy[:, None] - centers[None, :, 4]) ** 2
        best_k[uy, ux] = np.argmin(d_lab2 + ratio2 * d_xy2, axis=1)
    return best_k


def _update_centers(lab, xs, ys, assign, K0, centers):
    flat = assign.reshape(-1)
    counts = np.bincount(flat, minlength=K0).astype(np.float64)
    new = centers.copy()
    nonempty = counts > 0
    for ch in range(3):
        sums = np.bincount(flat, weights=lab[..., ch].reshape(-1), minlength=K0)
        new[nonempty, ch] = (sums[nonempty] / counts[nonempty]).astype(centers.dtype)
    sx = np.bincount(flat, weights=xs.reshape(-1), minlength=K0)
    sy = np.bincount(flat, weights=ys.reshape(-1), minlength=K0)
    new[nonempty, 3] = (sx[nonempty] / counts[nonempty]).astype(centers.dtype)
    new[nonempty, 4] = (sy[nonempty] / counts[nonempty]).astype(centers.dtype)
    return new


def _grid_components(assign: np.ndarray) -> tuple[int, np.ndarray]:
    """Connected components (4-neighborhood) of equal-assignment pixels."""
    H, W = assign.shape
    idx = np.arange(H * W).reshape(H, W)
    rows = []
    cols = []
    m = assign[:, :-1] == assign[:, 1:]
    rows.append(idx[:, :-1][m])
    cols.append(idx[:, 1:][m])
    m = assign[:-1, :] == assign[1:, :]
    rows.append(idx[:-1, :][m])
    cols.append(idx[1:, :][m])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    graph = csr_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(H * W, H * W))
    n_comp, comp = connected_components(graph, directed=False)
    return n_comp, comp.reshape(H, W)


def _enforce_connectivity(assign: np.ndarray) -> np.ndarray:
    """Keep each superpixel's largest component; absorb orphans into the
    largest adjacent superpixel (ties: lowest id)."""
    H, W = assign.shape
    n_comp, comp = _grid_components(assign)
    comp_flat = comp.reshape(-1)
    asg_flat = assign.reshape(-1)
    comp_sizes = np.bincount(comp_flat, minlength=n_comp)
    order = np.argsort(comp_flat, kind="stable")
    starts = np.searchsorted(comp_flat[order], np.arange(n_comp))
    comp_value = asg_flat[order[starts]]

    # main component per superpixel id: largest, ties lowest comp id
    keep: dict[int, int] = {}
    for c in range(n_comp):
        v = int(comp_value[c])
        if v not in keep or comp_sizes[c] > comp_sizes[keep[v]]:
            keep[v] = c
    orphan_ids = [c for c in range(n_comp) if keep[int(comp_value[c])] != c]
    if not orphan_ids:
        return assign.copy()

    # per-component pixel index slices, computed once
    ends = np.append(starts[1:], comp_flat.size)
    comp_pixels = {c: order[starts[c] : ends[c]] for c in orphan_ids}

    out = asg_flat.copy()
    settled = np.ones(comp_flat.size, dtype=bool)
    for c in orphan_ids:
        settled[comp_pixels[c]] = False
    areas = np.bincount(out[settled], minlength=int(assign.max()) + 1).astype(np.int64)

    # neighbor pixel indices never change; compute them once per orphan
    neighbor_flat = {}
    for c in orphan_ids:
        pix = comp_pixels[c]
        ys, xs = divmod(pix, W)
        chunks = []
        for dy, dx in ((0, 1), (0, -1), (1, 0), (-1, 0)):
            ny = ys + dy
            nx = xs + dx
            ok = (ny >= 0) & (ny < H) & (nx >= 0) & (nx < W)
            chunks.append(ny[ok] * W + nx[ok])
        neighbor_flat[c] = np.concatenate(chunks)

    pending = list(orphan_ids)
    while pending:
        progressed = False
        remaining = []
        for c in pending:
            nbr = neighbor_flat[c]
            sel = settled[nbr]
            if not sel.any():
                remaining.append(c)
                continue
            neigh_vals = set(out[nbr[sel]].tolist())
            target = max(sorted(neigh_vals), key=lambda v: (areas[v], -v))
            pix = comp_pixels[c]
            out[pix] = target
            settled[pix] = True
            areas[target] += pix.size
            progressed = True
        # a pending orphan always borders settled ground eventually: kept
        # components exist, so each pass absorbs at least the cluster frontier
        assert progressed or not remaining, "orphan absorption stalled"
        pending = remaining
    return out.reshape(H, W)


def _relabel_contiguous(assign: np.ndarray) -> tuple[np.ndarray, int]:
    """Relabel ids to 0..count-1 by first row-major appearance."""
    flat = assign.reshape(-1)
    uniq, first = np.unique(flat, return_index=True)
    order = uniq[np.argsort(first)]
    lut = np.zeros(int(flat.max()) + 1, dtype=np.int32)
    lut[order] = np.arange(order.size, dtype=np.int32)
    return lut[flat].reshape(assign.shape), int(order.size)


def slic_segment(
    image: RasterImage,
    K: int = DEFAULT_K,
    compactness: float = DEFAULT_COMPACTNESS,
    iters: int = DEFAULT_ITERS,
) -> SuperpixelMap:
    """Standard SLIC: grid init, windowed assignment, center updates,
    connectivity enforcement. Fully deterministic."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    H, W = image.dims.height, image.dims.width
    lab = rgb_to_lab(image.data)
    lab32 = lab.astype(np.float32)
    S = math.sqrt(W * H / K)
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)

    centers = _init_centers(lab, K).astype(np.float32)
    assign = None
    for _ in range(iters):
        assign = _assign(lab32, centers, S, compactness)
        centers = _update_centers(lab32, xs, ys, assign, centers.shape[0], centers)

    assign = _enforce_connectivity(assign)
    assign, count = _relabel_contiguous(assign)

    flat = assign.reshape(-1)
    counts = np.bincount(flat, minlength=count).astype(np.float64)
    feats = np.zeros((count, 5), dtype=np.float64)
    for ch in range(3):
        feats[:, ch] = np.bincount(flat, weights=lab[..., ch].reshape(-1), minlength=count) / counts
    feats[:, 3] = np.bincount(flat, weights=xs.reshape(-1), minlength=count) / counts
    feats[:, 4] = np.bincount(flat, weights=ys.reshape(-1), minlength=count) / counts

    return SuperpixelMap(
        dims=image.dims,
        assignment=assign,
        count=count,
        features=feats,
        compactness=compactness,
        cell_size=S,
    )


def propagate_point_labels(sp: SuperpixelMap, points: PointLabelSet) -> LabelMap:
    """Full-coverage label map from sparse points over a superpixel partition."""
    if len(points) == 0:
        raise EmptyPointSet("propagation needs at least one labeled point")
    for e in points:
        if not sp.dims.contains(e.point.x, e.point.y):
            raise ValueError(f"point {e.point.as_tuple()} out of bounds")

    # majority label per superpixel holding points; ties go to the tied label
    # carried by the earliest-acquired contained point
    contained: dict[int, list] = {}
    for e in points:
        sid = int(sp.assignment[e.point.y, e.point.x])
        contained.setdefault(sid, []).append(e)
    sp_label = np.full(sp.count, -1, dtype=np.int64)
    for sid, entries in contained.items():
        counts: dict[int, int] = {}
        for e in entries:
            counts[e.label] = counts.get(e.label, 0) + 1
        top = max(counts.values())
        tied = {lab for lab, c in counts.items() if c == top}
        winner = min((e for e in entries if e.label in tied), key=lambda e: e.order_index)
        sp_label[sid] = winner.label

    labeled = np.flatnonzero(sp_label >= 0)
    unlabeled = np.flatnonzero(sp_label < 0)
    if unlabeled.size:
        ratio = sp.compactness / sp.cell_size
        fl = sp.features[labeled]
        fu = sp.features[unlabeled]
        d_lab2 = ((fu[:, None, :3] - fl[None, :, :3]) ** 2).sum(axis=2)
        d_xy2 = ((fu[:, None, 3:] - fl[None, :, 3:]) ** 2).sum(axis=2)
        d = np.sqrt(d_lab2 + ratio * ratio * d_xy2)
        # labeled is ascending, argmin takes first occurrence: lowest id on ties
        nearest = labeled[np.argmin(d, axis=1)]
        sp_label[unlabeled] = sp_label[nearest]

    data = sp_label[sp.assignment].astype(np.uint8)
    return LabelMap(sp.dims, data)
