"""Point-selection strategies.

Static: uniform random, regular grid. Dynamic: centroid-guided, acquisition
only, and the full two-phase policy (acquisition phase, then background
sampling from pixels no candidate mask covers).

The acquisition score for a pixel is
    A(p) = lambda * O(p) + (1 - lambda) * E(p)
with O the object-proximity field (area-weighted closeness to mask
centroids, computed once per image) and E the normalized distance to the
nearest already-selected point (zero until the first point is committed,
maintained incrementally afterwards).

All randomness flows through numpy's PCG64 generator; experiment metadata
records the algorithm name so sequences can be reproduced elsewhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import BudgetExhausted, DimsMismatch, ImageExhausted
from .proposals import ProposalSet
from .raster import ImageDims, PixelCoord, PointLabel, PointLabelSet

RNG_ALGORITHM = "numpy-pcg64"

STRATEGIES = ("random", "grid", "centroid", "dynamic_only_a", "dynamic")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


class Phase(Enum):
    ACTIVE = "active"
    BACKGROUND = "background"
    DONE = "done"


@dataclass(frozen=True)
class ScalarField:
    dims: ImageDims
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.shape != self.dims.shape:
            raise DimsMismatch(f"field shape {arr.shape} != dims {self.dims.shape}")
        object.__setattr__(self, "values", arr)

    def to_png_bytes(self) -> bytes:
        """Grayscale debug render, [0, 1] mapped to 0..255."""
        import io

        from PIL import Image

        scaled = np.clip(self.values, 0.0, 1.0)
        buf = io.BytesIO()
        Image.fromarray((scaled * 255).round().astype(np.uint8), mode="L").save(buf, format="PNG")
        return buf.getvalue()


@dataclass(frozen=True)
class SamplerConfig:
    budget: int
    lambda_: float = 0.5
    random_ratio: float = 0.5
    seed: int = 0
    strategy: str = "dynamic"

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if not (0.0 <= self.lambda_ <= 1.0):
            raise ValueError("lambda must be in [0, 1]")
        if not (0.0 <= self.random_ratio <= 1.0):
            raise ValueError("random_ratio must be in [0, 1]")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")

    @property
    def n_active(self) -> int:
        """Acquisition-phase share of the budget: ceil(n * (1 - ratio))."""
        if self.strategy == "dynamic_only_a":
            return self.budget
        return self.budget - math.floor(self.budget * self.random_ratio + 1e-9)


def compute_object_proximity(proposals: ProposalSet, dims: ImageDims) -> ScalarField:
    """Area-weighted closeness to candidate-mask centroids, in [0, 1]."""
    values = np.zeros(dims.shape, dtype=np.float64)
    if proposals.masks:
        ys, xs = np.mgrid[0 : dims.height, 0 : dims.width].astype(np.float64)
        total = float(sum(m.area for m in proposals.masks))
        for m in proposals.masks:
            d = np.hypot(xs - m.centroid[0], ys - m.centroid[1])
            values += m.area * (1.0 - d / dims.d_max)
        values /= total
    return ScalarField(dims, values)


def compute_exploration(selected: PointLabelSet, dims: ImageDims) -> ScalarField:
    """Normalized distance to the nearest selected point; zero when empty."""
    if len(selected) == 0:
        return ScalarField(dims, np.zeros(dims.shape, dtype=np.float64))
    ys, xs = np.mgrid[0 : dims.height, 0 : dims.width].astype(np.float64)
    best = np.full(dims.shape, np.inf)
    for e in selected:
        np.minimum(best, np.hypot(xs - e.point.x, ys - e.point.y), out=best)
    return ScalarField(dims, best / dims.d_max)


def acquisition_map(o: ScalarField, e: ScalarField, lambda_: float) -> ScalarField:
    if o.dims != e.dims:
        raise DimsMismatch(f"O dims {o.dims} != E dims {e.dims}")
    return ScalarField(o.dims, lambda_ * o.values + (1.0 - lambda_) * e.values)


class SamplerState:
    """Sequential acquisition state for one image.

    O is computed once at construction; E is maintained incrementally as a
    running minimum over committed points (background-phase commits skip the
    E update, which is unused after the acquisition phase ends).
    """

    def __init__(self, config: SamplerConfig, proposals: ProposalSet, dims: ImageDims):
        self.config = config
        self.proposals = proposals
        self.dims = dims
        self.O = compute_object_proximity(proposals, dims)
        self.E_values = np.zeros(dims.shape, dtype=np.float64)
        self.selected: list[PointLabel] = []
        self.selected_mask = np.zeros(dims.shape, dtype=bool)
        self._ys, self._xs = np.mgrid[0 : dims.height, 0 : dims.width].astype(np.float64)

    @property
    def phase(self) -> Phase:
        k = len(self.selected)
        if k >= self.config.budget:
            return Phase.DONE
        if k >= self.config.n_active:
            return Phase.BACKGROUND
        return Phase.ACTIVE

    def point_label_set(self) -> PointLabelSet:
        return PointLabelSet(tuple(self.selected))

    def acquisition_values(self) -> np.ndarray:
        lam = self.config.lambda_
        return lam * self.O.values + (1.0 - lam) * self.E_values

    def commit(self, p: PixelCoord, label: int) -> None:
        if len(self.selected) >= self.config.budget:
            raise BudgetExhausted("budget already spent")
        if self.selected_mask[p.y, p.x]:
            raise ValueError(f"pixel {p.as_tuple()} already selected")
        in_active = self.phase == Phase.ACTIVE
        self.selected.append(PointLabel(p, int(label), len(self.selected)))
        self.selected_mask[p.y, p.x] = True
        if in_active:
            d = np.hypot(self._xs - p.x, self._ys - p.y) / self.dims.d_max
            if len(self.selected) == 1:
                self.E_values = d
            else:
                np.minimum(self.E_values, d, out=self.E_values)


def select_next_active_point(state: SamplerState) -> PixelCoord:
    """Argmax of A over unselected pixels; ties resolved row-major."""
    if state.phase != Phase.ACTIVE:
        raise BudgetExhausted(f"no active budget left (phase {state.phase.value})")
    a = state.acquisition_values().copy()
    a[state.selected_mask] = -np.inf
    idx = int(np.argmax(a))  # first max in row-major order
    y, x = divmod(idx, state.dims.width)
    return PixelCoord(x, y)


def sample_background_points(state: SamplerState, k: int, rng: np.random.Generator) -> list[PixelCoord]:
    """Uniform draw (no replacement) from uncovered, unselected pixels;
    tops up from all unselected pixels when that pool runs dry."""
    free = state.dims.n_pixels - len(state.selected)
    if k > free:
        raise ImageExhausted(f"requested {k} background points, {free} pixels free")
    if k == 0:
        return []
    pool = np.flatnonzero(~(state.proposals.coverage | state.selected_mask).reshape(-1))
    take = min(k, pool.size)
    chosen = pool[rng.choice(pool.size, size=take, replace=False)] if take else np.empty(0, int)
    if take < k:
        taken_mask = state.selected_mask.reshape(-1).copy()
        taken_mask[chosen] = True
        rest_pool = np.flatnonzero(~taken_mask)
        extra = rest_pool[rng.choice(rest_pool.size, size=k - take, replace=False)]
        chosen = np.concatenate([chosen, extra])
    w = state.dims.width
    return [PixelCoord(int(i % w), int(i // w)) for i in chosen]


def run_dynamic_sampling(dims: ImageDims, proposals: ProposalSet, config: SamplerConfig, annotator) -> PointLabelSet:
    """Acquisition phase (each point labeled as soon as it is chosen), then
    the background phase; `dynamic_only_a` spends the whole budget on A."""
    if config.strategy not in ("dynamic", "dynamic_only_a"):
        raise ValueError(f"run_dynamic_sampling got strategy {config.strategy!r}")
    state = SamplerState(config, proposals, dims)
    rng = make_rng(config.seed)
    while state.phase == Phase.ACTIVE:
        p = select_next_active_point(state)
        state.commit(p, annotator(p))
    if state.phase == Phase.BACKGROUND:
        remaining = config.budget - len(state.selected)
        for p in sample_background_points(state, remaining, rng):
            state.commit(p, annotator(p))
    return state.point_label_set()


def sample_random(dims: ImageDims, n: int, rng: np.random.Generator) -> list[PixelCoord]:
    if n > dims.n_pixels:
        raise ImageExhausted(f"{n} points from {dims.n_pixels} pixels")
    flat = rng.choice(dims.n_pixels, size=n, replace=False)
    return [PixelCoord(int(i % dims.width), int(i // dims.width)) for i in flat]


def _ceil_sqrt_ratio(n: int, w: int, h: int) -> int:
    """Smallest integer c with c*c*h >= n*w (exact integer arithmetic)."""
    c = math.isqrt((n * w + h - 1) // h)
    while c * c * h < n * w:
        c += 1
    while c > 1 and (c - 1) * (c - 1) * h >= n * w:
        c -= 1
    return c


def sample_grid(dims: ImageDims, n: int) -> list[PixelCoord]:
    """Cell centers of a near-square grid, row-major, first n."""
    if n > dims.n_pixels:
        raise ImageExhausted(f"{n} points from {dims.n_pixels} pixels")
    w, h = dims.width, dims.height
    cols = _ceil_sqrt_ratio(n, w, h)
    rows = (n + cols - 1) // cols
    out: list[PixelCoord] = []
    used = set()
    for i in range(rows):
        for j in range(cols):
            if len(out) == n:
                break
            x = int((j + 0.5) * w / cols)
            y = int((i + 0.5) * h / rows)
            while (x, y) in used and x + 1 < w:
                x += 1
            used.add((x, y))
            out.append(PixelCoord(x, y))
    return out


def sample_centroid_guided(proposals: ProposalSet, dims: ImageDims, n: int, rng: np.random.Generator) -> list[PixelCoord]:
    """Centroids of the n largest masks (snapped into the mask when needed),
    topped up with random picks on shortfall."""
    if n > dims.n_pixels:
        raise ImageExhausted(f"{n} points from {dims.n_pixels} pixels")
    ranked = sorted(proposals.masks, key=lambda m: (-m.area, m.id))
    out: list[PixelCoord] = []
    used = set()
    for m in ranked[:n]:
        x = min(dims.width - 1, max(0, int(math.floor(m.centroid[0] + 0.5))))
        y = min(dims.height - 1, max(0, int(math.floor(m.centroid[1] + 0.5))))
        if not m.bitmap[y, x]:
            ys, xs = np.nonzero(m.bitmap)
            d2 = (xs - x) ** 2 + (ys - y) ** 2
            i = int(np.argmin(d2))  # nonzero order is row-major: ties resolve row-major
            x, y = int(xs[i]), int(ys[i])
        if (x, y) not in used:
            used.add((x, y))
            out.append(PixelCoord(x, y))
    if len(out) < n:
        taken = np.zeros(dims.n_pixels, dtype=bool)
        for x, y in used:
            taken[y * dims.width + x] = True
        pool = np.flatnonzero(~taken)
        extra = pool[rng.choice(pool.size, size=n - len(out), replace=False)]
        out.extend(PixelCoord(int(i % dims.width), int(i // dims.width)) for i in extra)
    return out


def sample_points(
    dims: ImageDims,
    proposals: ProposalSet | None,
    config: SamplerConfig,
    annotator=None,
) -> PointLabelSet:
    """Run the configured strategy; static strategies label via the annotator
    after selection (sentinel-labeled when no annotator is given)."""
    from .raster import UNLABELED

    label = annotator if annotator is not None else (lambda p: UNLABELED)
    rng = make_rng(config.seed)
    if config.strategy == "random":
        pts = sample_random(dims, config.budget, rng)
    elif config.strategy == "grid":
        pts = sample_grid(dims, config.budget)
    elif config.strategy == "centroid":
        if proposals is None:
            raise ValueError("centroid strategy needs proposals")
        pts = sample_centroid_guided(proposals, dims, config.budget, rng)
    else:
        if proposals is None:
            raise ValueError("dynamic strategies need proposals")
        return run_dynamic_sampling(dims, proposals, config, label)
    return PointLabelSet.build(((p.as_tuple(), label(p)) for p in pts))
