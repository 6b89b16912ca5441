"""Simulated-annotator experiment harness.

Runs strategy x budget x seed grids over a densely labeled dataset, with an
oracle annotator answering label queries from ground truth; also the lambda
and random-ratio ablation sweeps and a synthetic dataset generator so the
whole harness runs without any external data.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .augment import augment
from .errors import DatasetInvalid
from .metrics import ConfusionMatrix, accumulate, compute_metrics
from .proposals import FallbackConfig, ProposalSet, generate_fallback_proposals, load_proposals
from .raster import UNLABELED, ImageDims, LabelMap, LabelSchema, PixelCoord, RasterImage
from .sampler import RNG_ALGORITHM, SamplerConfig, sample_points

RESULTS_HEADER = "strategy,n,seed,mPA,mIoU,masked_mPA,masked_mIoU,time_mean_s,time_std_s"
LAMBDA_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)
RATIO_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)


def child_seed(seed: int, image_index: int) -> int:
    """Stable per-image seed derived from the experiment seed."""
    return int(np.random.SeedSequence([seed, image_index]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class Dataset:
    root: Path
    schema: LabelSchema
    pairs: tuple[tuple[Path, Path], ...]  # (image, mask) with matching basenames

    @staticmethod
    def load(root) -> "Dataset":
        root = Path(root)
        images_dir = root / "images"
        masks_dir = root / "masks"
        schema_path = root / "schema.json"
        if not images_dir.is_dir() or not masks_dir.is_dir() or not schema_path.is_file():
            raise DatasetInvalid(f"{root} must contain images/, masks/, schema.json")
        schema = LabelSchema.load(schema_path)
        pairs = []
        for img in sorted(images_dir.glob("*.png")):
            mask = masks_dir / img.name
            if not mask.is_file():
                raise DatasetInvalid(f"no mask for {img.name}")
            pairs.append((img, mask))
        if not pairs:
            raise DatasetInvalid(f"{images_dir} holds no PNG images")
        return Dataset(root=root, schema=schema, pairs=tuple(pairs))

    def validate(self) -> None:
        """Dims agree and mask values are in-schema (sentinel allowed)."""
        for img_path, mask_path in self.pairs:
            image = RasterImage.load(img_path)
            mask = LabelMap.load_png(mask_path)
            if image.dims != mask.dims:
                raise DatasetInvalid(f"{img_path.name}: image {image.dims} != mask {mask.dims}")
            vals = np.unique(mask.data)
            bad = vals[(vals >= self.schema.num_classes) & (vals != UNLABELED)]
            if bad.size:
                raise DatasetInvalid(f"{mask_path.name}: class ids {bad.tolist()} out of schema")


class SimulatedAnnotator:
    """Oracle that answers point queries from a dense ground-truth map."""

    def __init__(self, gt: LabelMap, background_id: int):
        self.gt = gt
        self.background_id = background_id

    def query(self, p: PixelCoord) -> int:
        v = int(self.gt.data[p.y, p.x])
        return self.background_id if v == UNLABELED else v

    __call__ = query


def oracle_query(annotator: SimulatedAnnotator, p: PixelCoord) -> int:
    return annotator.query(p)


@dataclass(frozen=True)
class ExperimentSpec:
    dataset_root: Path
    strategies: tuple[str, ...] = ("random", "dynamic")
    budgets: tuple[int, ...] = (30,)
    seeds: tuple[int, ...] = (0,)
    lambda_: float = 0.5
    random_ratio: float = 0.5
    proposals: str = "fallback"  # "fallback" or a directory of <name>.json manifests
    fallback: FallbackConfig = FallbackConfig()
    slic_k: int = 100
    slic_compactness: float = 10.0
    slic_iters: int = 10
    out_dir: Path | None = None
    timing: bool = True

    @staticmethod
    def parse_file(path) -> "ExperimentSpec":
        """Key = value lines; '#' starts a comment. See README for keys."""
        kv: dict[str, str] = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            kv[key] = val

        def split_list(s):
            return tuple(v.strip() for v in s.split(",") if v.strip())

        if "dataset" not in kv:
            raise ValueError(f"{path}: missing required key 'dataset'")
        fb = FallbackConfig(
            k_gen=int(kv.get("fallback_k", 64)),
            tau=float(kv.get("fallback_tau", 10.0)),
            min_area=int(kv["fallback_min_area"]) if "fallback_min_area" in kv else None,
            compactness=float(kv.get("fallback_compactness", 12.0)),
            iters=int(kv.get("fallback_iters", 10)),
        )
        return ExperimentSpec(
            dataset_root=Path(kv["dataset"]),
            strategies=split_list(kv.get("strategies", "random,dynamic")),
            budgets=tuple(int(v) for v in split_list(kv.get("budgets", "30"))),
            seeds=tuple(int(v) for v in split_list(kv.get("seeds", "0"))),
            lambda_=float(kv.get("lambda", 0.5)),
            random_ratio=float(kv.get("random_ratio", 0.5)),
            proposals=kv.get("proposals", "fallback"),
            fallback=fb,
            slic_k=int(kv.get("slic_k", 100)),
            slic_compactness=float(kv.get("slic_compactness", 10.0)),
            slic_iters=int(kv.get("slic_iters", 10)),
            out_dir=Path(kv["out_dir"]) if "out_dir" in kv else None,
            timing=kv.get("timing", "on").lower() not in ("off", "false", "0"),
        )


@dataclass(frozen=True)
class ResultRow:
    strategy: str
    n: int
    seed: int
    mpa: float
    miou: float
    masked_mpa: float
    masked_miou: float
    time_mean_s: float
    time_std_s: float

    def csv_line(self) -> str:
        return (
            f"{self.strategy},{self.n},{self.seed},{self.mpa:.6f},{self.miou:.6f},"
            f"{self.masked_mpa:.6f},{self.masked_miou:.6f},"
            f"{self.time_mean_s:.6f},{self.time_std_s:.6f}"
        )


def results_csv(rows) -> str:
    ordered = sorted(rows, key=lambda r: (r.strategy, r.n, r.seed))
    return "\n".join([RESULTS_HEADER] + [r.csv_line() for r in ordered]) + "\n"


class _ProposalCache:
    """Per-image proposals, computed or loaded once and shared across runs."""

    def __init__(self, spec: ExperimentSpec):
        self.spec = spec
        self._cache: dict[str, ProposalSet] = {}

    def get(self, img_path: Path, image: RasterImage) -> ProposalSet:
        key = img_path.name
        if key not in self._cache:
            if self.spec.proposals == "fallback":
                self._cache[key] = generate_fallback_proposals(image, self.spec.fallback)
            else:
                manifest = Path(self.spec.proposals) / (img_path.stem + ".json")
                self._cache[key] = load_proposals(manifest)
        return self._cache[key]


def _run_one_config(
    spec: ExperimentSpec,
    dataset: Dataset,
    cache: _ProposalCache,
    strategy: str,
    n: int,
    seed: int,
    img_cache: dict | None = None,
) -> ResultRow:
    cm = ConfusionMatrix(dataset.schema.num_classes)
    times = []
    for idx, (img_path, mask_path) in enumerate(dataset.pairs):
        if img_cache is not None and img_path.name in img_cache:
            image, gt = img_cache[img_path.name]
        else:
            image = RasterImage.load(img_path)
            gt = LabelMap.load_png(mask_path)
            if img_cache is not None:
                img_cache[img_path.name] = (image, gt)
        proposals = cache.get(img_path, image)
        annotator = SimulatedAnnotator(gt, dataset.schema.background_id)
        config = SamplerConfig(
            budget=n,
            lambda_=spec.lambda_,
            random_ratio=spec.random_ratio,
            seed=child_seed(seed, idx),
            strategy=strategy,
        )
        t0 = time.perf_counter()
        points = sample_points(image.dims, proposals, config, annotator)
        pred = augment(
            image,
            points,
            proposals,
            k=spec.slic_k,
            compactness=spec.slic_compactness,
            iters=spec.slic_iters,
        )
        times.append(time.perf_counter() - t0)
        accumulate(cm, gt, pred)
    report = compute_metrics(cm, dataset.schema, masked=False)
    t_mean = float(np.mean(times)) if spec.timing else 0.0
    t_std = float(np.std(times)) if spec.timing else 0.0
    return ResultRow(
        strategy=strategy,
        n=n,
        seed=seed,
        mpa=report.mpa,
        miou=report.miou,
        masked_mpa=report.masked_mpa,
        masked_miou=report.masked_miou,
        time_mean_s=t_mean,
        time_std_s=t_std,
    )


def run_experiment(spec: ExperimentSpec) -> list[ResultRow]:
    """One dataset-level confusion matrix (and row) per configuration."""
    dataset = Dataset.load(spec.dataset_root)
    dataset.validate()
    cache = _ProposalCache(spec)
    img_cache: dict = {}
    rows = []
    for strategy in spec.strategies:
        for n in spec.budgets:
            for seed in spec.seeds:
                rows.append(_run_one_config(spec, dataset, cache, strategy, n, seed, img_cache))
    if spec.out_dir is not None:
        spec.out_dir.mkdir(parents=True, exist_ok=True)
        (spec.out_dir / "results.csv").write_text(results_csv(rows))
        (spec.out_dir / "run_metadata.json").write_text(_run_metadata_json(spec))
    return rows


def _run_metadata_json(spec: ExperimentSpec) -> str:
    import json

    return json.dumps(
        {
            "rng_algorithm": RNG_ALGORITHM,
            "lambda": spec.lambda_,
            "random_ratio": spec.random_ratio,
            "proposals": spec.proposals,
            "seeds": list(spec.seeds),
            "budgets": list(spec.budgets),
            "strategies": list(spec.strategies),
        },
        indent=2,
    )


@dataclass(frozen=True)
class AblationRow:
    parameter: str
    value: float
    mpa: float
    miou: float

    def csv_line(self) -> str:
        return f"{self.parameter},{self.value:g},{self.mpa:.6f},{self.miou:.6f}"


def ablation_csv(rows) -> str:
    return "\n".join(["parameter,value,mPA,mIoU"] + [r.csv_line() for r in rows]) + "\n"


def run_ablation(spec: ExperimentSpec, parameter: str, values=None) -> list[AblationRow]:
    """Sweep lambda or random_ratio for the dynamic strategy, everything else
    fixed; metrics are averaged over the spec's seeds.

    ratio = 1.0 runs as plain random sampling (the degenerate pairing used by
    the reference ablation), ratio = 0.0 is equivalent to acquisition-only.
    """
    if parameter not in ("lambda", "random_ratio"):
        raise ValueError(f"unknown ablation parameter {parameter!r}")
    if values is None:
        values = LAMBDA_GRID if parameter == "lambda" else RATIO_GRID
    dataset = Dataset.load(spec.dataset_root)
    dataset.validate()
    cache = _ProposalCache(spec)
    img_cache: dict = {}
    n = spec.budgets[0]
    rows = []
    for value in values:
        if parameter == "lambda":
            sub = replace(spec, lambda_=float(value))
            strategy = "dynamic"
        else:
            sub = replace(spec, random_ratio=float(value))
            strategy = "random" if float(value) >= 1.0 else "dynamic"
        per_seed = [
            _run_one_config(sub, dataset, cache, strategy, n, seed, img_cache)
            for seed in spec.seeds
        ]
        rows.append(
            AblationRow(
                parameter=parameter,
                value=float(value),
                mpa=float(np.mean([r.mpa for r in per_seed])),
                miou=float(np.mean([r.miou for r in per_seed])),
            )
        )
    if spec.out_dir is not None:
        spec.out_dir.mkdir(parents=True, exist_ok=True)
        (spec.out_dir / f"ablation_{parameter}.csv").write_text(ablation_csv(rows))
    return rows


# --- synthetic dataset -------------------------------------------------------

# dark, low-chroma background tiles vs bright, saturated blob colors: blob
# colors stay far from every background color in Lab space so the superpixel
# propagator cannot confuse the two.
_BG_TILE_COLORS = (
    (60, 64, 68),
    (96, 79, 52),
    (52, 94, 66),
    (52, 60, 102),
    (100, 58, 64),
    (69, 94, 99),
)
_BLOB_COLORS = (
    (220, 60, 50),
    (70, 190, 80),
    (80, 110, 230),
    (235, 200, 60),
    (210, 80, 200),
    (60, 210, 200),
    (240, 140, 50),
    (130, 230, 60),
)


def _blob_color(class_id: int) -> tuple[int, int, int]:
    return _BLOB_COLORS[(class_id - 1) % len(_BLOB_COLORS)]


def _polygon_mask(w, h, cx, cy, rx, ry, theta, rng) -> np.ndarray:
    """Convex polygon around (cx, cy) rasterized to a boolean mask."""
    from PIL import Image as PilImage
    from PIL import ImageDraw

    k = int(rng.integers(4, 7))
    angles = np.sort(rng.uniform(0, 2 * math.pi, size=k))
    radii = rng.uniform(0.7, 1.0, size=k)
    pts = []
    for ang, rad in zip(angles, radii):
        px = rx * rad * math.cos(ang)
        py = ry * rad * math.sin(ang)
        qx = cx + px * math.cos(theta) - py * math.sin(theta)
        qy = cy + px * math.sin(theta) + py * math.cos(theta)
        pts.append((qx, qy))
    canvas = PilImage.new("1", (w, h), 0)
    ImageDraw.Draw(canvas).polygon(pts, fill=1)
    return np.asarray(canvas, dtype=bool)


def make_synthetic_dataset(out_dir, count: int, dims: ImageDims, classes: int, seed: int) -> Dataset:
    """Colored elliptical blobs on a tiled, noisy background with dense GT.

    Class 0 is background; classes 1..m-1 are the blob classes, each placed
    in at least one image. Deterministic per seed.
    """
    if classes < 2:
        raise ValueError("need at least background + 1 foreground class")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    names = ["background"] + [f"class_{i}" for i in range(1, classes)]
    colors = [(40, 44, 48)] + [_blob_color(i) for i in range(1, classes)]
    schema = LabelSchema(names=tuple(names), background_id=0, colors=tuple(colors))
    schema.save(out / "schema.json")

    w, h = dims.width, dims.height
    tile = 16
    yy, xx = np.mgrid[0:h, 0:w]
    for i in range(count):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, i])))
        img = np.zeros((h, w, 3), dtype=np.float64)
        gt = np.zeros((h, w), dtype=np.uint8)

        # background: tiled colors, no two 4-adjacent tiles equal
        ty, tx = -(-h // tile), -(-w // tile)
        tile_ids = np.zeros((ty, tx), dtype=np.int64)
        for r in range(ty):
            for c in range(tx):
                banned = set()
                if r > 0:
                    banned.add(int(tile_ids[r - 1, c]))
                if c > 0:
                    banned.add(int(tile_ids[r, c - 1]))
                options = [k for k in range(len(_BG_TILE_COLORS)) if k not in banned]
                tile_ids[r, c] = options[int(rng.integers(len(options)))]
        tile_colors = np.array(_BG_TILE_COLORS, dtype=np.float64)[tile_ids]
        img[:] = tile_colors[yy // tile, xx // tile]

        # blobs: rotated ellipses and convex polygons clustered in one area of
        # the image (the rest stays object-free background); later blobs draw
        # over earlier ones
        n_blobs = int(rng.integers(4, 8))
        ccx = float(rng.uniform(0.3 * w, 0.7 * w))
        ccy = float(rng.uniform(0.3 * h, 0.7 * h))
        for b in range(n_blobs):
            cls = 1 + (i % (classes - 1)) if b == 0 else int(rng.integers(1, classes))
            rx = float(rng.uniform(13, 26))
            ry = float(rng.uniform(13, 26))
            cx = float(np.clip(rng.normal(ccx, 0.16 * w), rx + 2, w - rx - 2))
            cy = float(np.clip(rng.normal(ccy, 0.16 * h), ry + 2, h - ry - 2))
            theta = float(rng.uniform(0, math.pi))
            if rng.random() < 0.3:
                inside = _polygon_mask(w, h, cx, cy, rx, ry, theta, rng)
            else:
                ct, st = math.cos(theta), math.sin(theta)
                u = (xx - cx) * ct + (yy - cy) * st
                v = -(xx - cx) * st + (yy - cy) * ct
                inside = (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
            img[inside] = _blob_color(cls)
            gt[inside] = cls

        img += rng.normal(0.0, 2.0, size=img.shape)
        image = RasterImage.from_array(np.clip(img, 0, 255).round().astype(np.uint8))
        name = f"{i:04d}.png"
        image.save_png(out / "images" / name)
        LabelMap(dims, gt).save_png(out / "masks" / name, schema)
    return Dataset.load(out)
