"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines as they
complete. The directional-trend criteria run on the bundled synthetic
dataset and finish in a couple of minutes on one core.
"""

import math
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from conftest import proposal_set, random_blob_bitmap, random_image
from pointseg.augment import ExpandedMask, augment, merge_masks
from pointseg.bench import ExperimentSpec, run_ablation, run_experiment
from pointseg.cli import main
from pointseg.metrics import ConfusionMatrix, accumulate, compute_metrics
from pointseg.proposals import FallbackConfig, generate_fallback_proposals
from pointseg.raster import ImageDims, LabelMap, LabelSchema, PixelCoord, PointLabelSet, RasterImage, UNLABELED
from pointseg.sampler import (
    Phase,
    SamplerConfig,
    SamplerState,
    acquisition_map,
    compute_exploration,
    compute_object_proximity,
    select_next_active_point,
)
from pointseg.superpixels import slic_segment

from test_augment import oracle_merge
from test_sampler import oracle_E, oracle_O


@contextmanager
def criterion(num, name):
    try:
        yield
    except Exception:
        print(f"[criterion {num:>2}] {name}: FAIL")
        raise
    print(f"[criterion {num:>2}] {name}: PASS")


ACCEPT_FALLBACK = FallbackConfig(k_gen=64, tau=10.0, min_area=500)
ACCEPT_SEEDS = (0, 1, 2, 3, 4)


def test_criterion_1_field_oracles():
    with criterion(1, "O/E/A brute-force oracle, 100 instances, <=1e-9, <5s"):
        rng = np.random.default_rng(101)
        t0 = time.perf_counter()
        for _ in range(100):
            dims = ImageDims(32, 32)
            n_masks = int(rng.integers(0, 6))
            bitmaps = [random_blob_bitmap(rng, 32, 32) for _ in range(n_masks)]
            ps = proposal_set(dims, bitmaps)
            n_pts = int(rng.integers(0, 11))
            flat = rng.choice(dims.n_pixels, size=n_pts, replace=False)
            pts = [(int(i % 32), int(i // 32)) for i in flat]
            pls = PointLabelSet.build([(p, 0) for p in pts])
            lam = float(rng.random())

            o = compute_object_proximity(ps, dims)
            e = compute_exploration(pls, dims)
            a = acquisition_map(o, e, lam)

            o_ref = oracle_O([(m.area, m.centroid) for m in ps.masks], dims)
            e_ref = oracle_E(pts, dims)
            assert np.abs(o.values - o_ref).max() <= 1e-9
            assert np.abs(e.values - e_ref).max() <= 1e-9
            assert np.abs(a.values - (lam * o_ref + (1 - lam) * e_ref)).max() <= 1e-9
        elapsed = time.perf_counter() - t0
        assert elapsed < 5.0, f"oracle suite took {elapsed:.2f}s"


def test_criterion_2_hand_values():
    with criterion(2, "hand values O((1,1))=0.875 and E((3,0))=0.6, tol 1e-12"):
        dims = ImageDims(4, 4)
        bm = np.zeros((4, 4), bool)
        bm[1:3, 1:3] = True
        o = compute_object_proximity(proposal_set(dims, [bm]), dims)
        assert abs(o.values[1, 1] - 0.875) <= 1e-12

        e = compute_exploration(PointLabelSet.build([((0, 0), 1)]), ImageDims(4, 3))
        assert abs(e.values[0, 3] - 0.6) <= 1e-12


def test_criterion_3_incremental_e_equivalence():
    with criterion(3, "incremental E equals full recompute over 30 insertions"):
        rng = np.random.default_rng(103)
        for _ in range(3):
            w, h = int(rng.integers(12, 24)), int(rng.integers(12, 24))
            dims = ImageDims(w, h)
            bitmaps = [random_blob_bitmap(rng, h, w) for _ in range(2)]
            ps = proposal_set(dims, bitmaps)
            cfg = SamplerConfig(budget=30, strategy="dynamic_only_a", seed=0)
            st = SamplerState(cfg, ps, dims)
            for _ in range(30):
                p = select_next_active_point(st)
                st.commit(p, int(rng.integers(0, 3)))
                full = compute_exploration(st.point_label_set(), dims).values
                assert np.abs(st.E_values - full).max() <= 1e-12


def test_criterion_4_merge_oracle():
    with criterion(4, "merge label rule equals per-pixel oracle on >=10k pixels"):
        rng = np.random.default_rng(104)
        checked = 0
        while checked < 10_000:
            w, h = int(rng.integers(10, 20)), int(rng.integers(10, 20))
            dims = ImageDims(w, h)
            n_masks = int(rng.integers(2, 6))
            bitmaps = [random_blob_bitmap(rng, h, w) for _ in range(n_masks)]
            pts = []
            taken = set()
            for _ in range(int(rng.integers(2, 9))):
                x, y = int(rng.integers(0, w)), int(rng.integers(0, h))
                if (x, y) not in taken:
                    taken.add((x, y))
                    pts.append(((x, y), int(rng.integers(0, 4))))
            pls = PointLabelSet.build(pts)
            expanded = [
                ExpandedMask(source=e, bitmap=bitmaps[i % n_masks] if rng.random() > 0.1 else None)
                for i, e in enumerate(pls.entries)
            ]
            part = merge_masks(expanded, pls, dims)
            ref = oracle_merge(expanded, pls, dims)
            assert (part.map.data == ref).all()
            checked += dims.n_pixels
        assert checked >= 10_000


def test_criterion_5_final_map_postconditions():
    with criterion(5, "200 fuzzed runs: zero sentinels and queried labels kept"):
        rng = np.random.default_rng(105)
        for _ in range(200):
            w, h = int(rng.integers(12, 24)), int(rng.integers(12, 24))
            img = random_image(rng, h, w)
            n_masks = int(rng.integers(0, 4))
            ps = proposal_set(
                ImageDims(w, h),
                [random_blob_bitmap(rng, h, w) for _ in range(n_masks)],
                qualities=list(rng.random(n_masks)),
            )
            pts = []
            taken = set()
            for _ in range(int(rng.integers(1, 7))):
                x, y = int(rng.integers(0, w)), int(rng.integers(0, h))
                if (x, y) not in taken:
                    taken.add((x, y))
                    pts.append(((x, y), int(rng.integers(0, 5))))
            pls = PointLabelSet.build(pts)
            out = augment(img, pls, ps, k=8, iters=3)
            assert out.sentinel_count() == 0
            for e in pls:
                assert out.data[e.point.y, e.point.x] == e.label


def test_criterion_6_metrics_oracle_and_properties():
    with criterion(6, "metrics worked instance, masked variant, invariants"):
        schema = LabelSchema(names=("A", "B"), background_id=1)
        gt = LabelMap(ImageDims(2, 2), np.array([[0, 0], [1, 1]], np.uint8))
        pred = LabelMap(ImageDims(2, 2), np.array([[0, 1], [1, 1]], np.uint8))
        cm = accumulate(ConfusionMatrix(2), gt, pred)
        rep = compute_metrics(cm, schema)
        assert rep.mpa == pytest.approx(0.75, abs=1e-15)
        assert rep.miou == pytest.approx(7 / 12, abs=1e-15)
        masked = compute_metrics(cm, schema, masked=True)
        assert masked.mpa == pytest.approx(0.5, abs=1e-15)
        assert masked.miou == pytest.approx(0.5, abs=1e-15)

        rng = np.random.default_rng(106)
        for _ in range(30):
            g = LabelMap(ImageDims(9, 9), rng.integers(0, 3, (9, 9)).astype(np.uint8))
            p = LabelMap(ImageDims(9, 9), rng.integers(0, 3, (9, 9)).astype(np.uint8))
            r = compute_metrics(accumulate(ConfusionMatrix(3), g, p), LabelSchema(names=("a", "b", "c")))
            for i in np.flatnonzero(r.class_presence):
                assert r.per_class_iou[i] <= r.per_class_pa[i] + 1e-15
            assert r.miou <= r.mpa + 1e-15

        # all FP of the object class lie on GT background: masked IoU >= IoU
        g = np.ones((10, 10), np.uint8)
        g[4:6, 4:6] = 0
        p = np.ones((10, 10), np.uint8)
        p[2:8, 2:8] = 0
        cm2 = accumulate(
            ConfusionMatrix(2), LabelMap(ImageDims(10, 10), g), LabelMap(ImageDims(10, 10), p)
        )
        std = compute_metrics(cm2, schema)
        msk = compute_metrics(cm2, schema, masked=True)
        assert msk.per_class_iou[0] >= std.per_class_iou[0]


def test_criterion_7_trend_dynamic_beats_random(synth_dataset):
    with criterion(7, "synthetic trend: dynamic >= random + 2.0 mIoU points, <3 min"):
        spec = ExperimentSpec(
            dataset_root=synth_dataset.root,
            strategies=("random", "dynamic"),
            budgets=(30,),
            seeds=ACCEPT_SEEDS,
            lambda_=0.5,
            random_ratio=0.5,
            proposals="fallback",
            fallback=ACCEPT_FALLBACK,
        )
        t0 = time.perf_counter()
        rows = run_experiment(spec)
        elapsed = time.perf_counter() - t0
        by = {}
        for r in rows:
            by.setdefault(r.strategy, []).append(r.miou)
        random_miou = float(np.mean(by["random"]))
        dynamic_miou = float(np.mean(by["dynamic"]))
        print(
            f"    random mIoU={100 * random_miou:.2f}  dynamic mIoU={100 * dynamic_miou:.2f}  "
            f"delta={100 * (dynamic_miou - random_miou):+.2f} ({elapsed:.0f}s)"
        )
        assert dynamic_miou >= random_miou + 0.02
        assert elapsed < 180.0


def test_criterion_8_ablation_shape(synth_dataset):
    with criterion(8, "ablation peaks: mid lambda >= extremes, ratio 50% >= 0%/100%"):
        spec = ExperimentSpec(
            dataset_root=synth_dataset.root,
            strategies=("dynamic",),
            budgets=(30,),
            seeds=ACCEPT_SEEDS,
            lambda_=0.5,
            random_ratio=0.5,
            proposals="fallback",
            fallback=ACCEPT_FALLBACK,
        )
        lam = {r.value: r.miou for r in run_ablation(spec, "lambda")}
        print("    lambda sweep:", {k: round(v, 4) for k, v in lam.items()})
        assert max(lam[0.25], lam[0.5], lam[0.75]) >= max(lam[0.0], lam[1.0])
        rat = {r.value: r.miou for r in run_ablation(spec, "random_ratio", (0.0, 0.5, 1.0))}
        print("    ratio sweep:", {k: round(v, 4) for k, v in rat.items()})
        assert rat[0.5] >= rat[0.0]
        assert rat[0.5] >= rat[1.0]


def test_criterion_9_cli_determinism(tmp_path):
    with criterion(9, "byte-identical CLI outputs for identical flags + seed"):
        rng = np.random.default_rng(109)
        img_path = tmp_path / "img.png"
        arr = np.full((48, 48, 3), 70, np.float64)
        arr[10:26, 8:30] = (210, 60, 50)
        arr += rng.normal(0, 2, arr.shape)
        RasterImage.from_array(np.clip(arr, 0, 255).astype(np.uint8)).save_png(img_path)

        def run_twice(args, outputs):
            blobs = []
            for run in range(2):
                for out in outputs:
                    if out.exists():
                        out.unlink()
                assert main(args) == 0
                blobs.append([out.read_bytes() for out in outputs])
            assert blobs[0] == blobs[1], f"outputs differ for {args}"

        pts_csv = tmp_path / "pts.csv"
        run_twice(
            ["sample", str(img_path), "--strategy", "random", "--n", "12", "--seed", "5", "--out", str(pts_csv)],
            [pts_csv],
        )
        dyn_csv = tmp_path / "dyn.csv"
        run_twice(
            [
                "sample", str(img_path), "--strategy", "dynamic", "--n", "8", "--seed", "5",
                "--fallback", "--fallback-min-area", "96", "--out", str(dyn_csv),
            ],
            [dyn_csv],
        )
        pts_csv.write_text("x,y,label\n12,12,1\n40,40,0\n")
        out_png = tmp_path / "out.png"
        run_twice(
            ["augment", str(img_path), "--points", str(pts_csv), "--fallback", "--fallback-min-area", "96", "--out", str(out_png)],
            [out_png],
        )
        ds_dir = tmp_path / "ds"
        run_twice(
            ["synth", "--out", str(ds_dir), "--count", "2", "--width", "48", "--height", "48", "--classes", "3", "--seed", "2"],
            [ds_dir / "images" / "0000.png", ds_dir / "masks" / "0001.png"],
        )
        spec_file = tmp_path / "spec.txt"
        spec_file.write_text(
            f"dataset = {ds_dir}\nstrategies = random\nbudgets = 5\nseeds = 0\n"
            "fallback_min_area = 96\nslic_k = 32\n"
        )
        results = tmp_path / "res" / "results.csv"
        run_twice(
            ["bench", "--spec", str(spec_file), "--no-timing", "--out-dir", str(tmp_path / "res")],
            [results],
        )


def test_criterion_10_slic_properties():
    with criterion(10, "SLIC partition/connectivity/count properties"):
        from scipy.ndimage import label as cc_label

        rng = np.random.default_rng(110)
        img1 = random_image(rng, 20, 20)
        sp1 = slic_segment(img1, K=1)
        assert sp1.count == 1 and (sp1.assignment == 0).all()
        for _ in range(5):
            h, w = int(rng.integers(16, 48)), int(rng.integers(16, 48))
            k = int(rng.integers(1, 14))
            sp = slic_segment(random_image(rng, h, w), K=k, iters=4)
            assert sp.count <= k
            assert sp.areas().sum() == h * w
            ids = np.unique(sp.assignment)
            assert ids.size == sp.count and ids.min() == 0 and ids.max() == sp.count - 1
            for sid in range(sp.count):
                _, n = cc_label(sp.assignment == sid)
                assert n == 1


def test_criterion_11_augment_performance(tmp_path):
    with criterion(11, "cmd_augment 512x512, 30 points, file-backed, <1.0s"):
        from pointseg.bench import SimulatedAnnotator, make_synthetic_dataset
        from pointseg.sampler import sample_points

        ds = make_synthetic_dataset(tmp_path / "perf", 1, ImageDims(512, 512), 6, seed=1)
        img_path, mask_path = ds.pairs[0]
        image = RasterImage.load(img_path)
        ps = generate_fallback_proposals(image, FallbackConfig(k_gen=256, tau=10.0, min_area=600))
        assert len(ps.masks) >= 10
        manifest = tmp_path / "m.json"
        ps.save_manifest(manifest)
        annot = SimulatedAnnotator(LabelMap.load_png(mask_path), 0)
        pts = sample_points(image.dims, ps, SamplerConfig(budget=30, strategy="dynamic", seed=0), annot)
        pts_csv = tmp_path / "p.csv"
        pts_csv.write_text(pts.to_csv())
        out_png = tmp_path / "out.png"

        t0 = time.perf_counter()
        rc = main(["augment", str(img_path), "--points", str(pts_csv), "--proposals", str(manifest), "--out", str(out_png)])
        elapsed = time.perf_counter() - t0
        print(f"    cmd_augment elapsed: {elapsed:.3f}s")
        assert rc == 0
        assert elapsed < 1.0
        assert LabelMap.load_png(out_png).sentinel_count() == 0


def test_criterion_12_service_integration(tmp_path):
    with criterion(12, "HTTP session flow, export == CLI augment, undo snapshot"):
        from fastapi.testclient import TestClient

        from pointseg.service import ServiceConfig, create_app

        rng = np.random.default_rng(112)
        arr = np.full((64, 64, 3), 70, np.float64)
        arr[8:30, 8:30] = (210, 60, 50)
        arr[40:60, 36:60] = (60, 180, 220)
        arr += rng.normal(0, 2, arr.shape)
        image_bytes = RasterImage.from_array(np.clip(arr, 0, 255).astype(np.uint8)).to_png_bytes()
        schema = LabelSchema(names=("background", "red", "cyan"))

        config = ServiceConfig(data_dir=tmp_path / "sessions")
        n = 10
        with TestClient(create_app(config)) as client:
            resp = client.post(
                "/sessions",
                files={"image": ("image.png", image_bytes, "image/png")},
                data={"schema": schema.to_json(), "budget": str(n), "seed": "3", "fallback_min_area": "128"},
            )
            assert resp.status_code == 201
            sid = resp.json()["id"]

            # undo snapshot after two labels
            for _ in range(2):
                nxt = client.get(f"/sessions/{sid}/next-point").json()
                assert client.post(f"/sessions/{sid}/labels", json={"x": nxt["x"], "y": nxt["y"], "label": 1}).status_code == 200
            session_dir = config.data_dir / sid
            labels_before = (session_dir / "labels.csv").read_bytes()
            sugg_before = client.get(f"/sessions/{sid}/next-point").json()
            seg_before = client.get(f"/sessions/{sid}/segmentation").content
            nxt = client.get(f"/sessions/{sid}/next-point").json()
            client.post(f"/sessions/{sid}/labels", json={"x": nxt["x"], "y": nxt["y"], "label": 2})
            assert client.post(f"/sessions/{sid}/undo").json() == {"remaining": 2}
            assert (session_dir / "labels.csv").read_bytes() == labels_before
            assert client.get(f"/sessions/{sid}/next-point").json() == sugg_before
            assert client.get(f"/sessions/{sid}/segmentation").content == seg_before

            # finish the session: create -> (next-point -> submit) x n -> export
            while True:
                nxt = client.get(f"/sessions/{sid}/next-point")
                if nxt.status_code == 409:
                    break
                body = nxt.json()
                label = 1 if body["phase"] == "active" else 0
                assert client.post(f"/sessions/{sid}/labels", json={"x": body["x"], "y": body["y"], "label": label}).status_code == 200
            service_png = client.get(f"/sessions/{sid}/segmentation").content

            import io as _io
            import zipfile

            zf = zipfile.ZipFile(_io.BytesIO(client.get(f"/sessions/{sid}/export").content))
            points_csv = tmp_path / "exported.csv"
            points_csv.write_bytes(zf.read("points.csv"))
            assert len(zf.read("points.csv").decode().strip().splitlines()) == n + 1

        out_png = tmp_path / "cli.png"
        rc = main(
            [
                "augment",
                str(session_dir / "image.png"),
                "--points", str(points_csv),
                "--proposals", str(session_dir / "proposals.json"),
                "--out", str(out_png),
                "--schema", str(session_dir / "schema.json"),
            ]
        )
        assert rc == 0
        assert out_png.read_bytes() == service_png
