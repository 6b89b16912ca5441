import numpy as np
import pytest

from pointseg.errors import EmptyMask, MalformedRle
from pointseg.raster import (
    ImageDims,
    LabelMap,
    LabelSchema,
    PointLabelSet,
    RleMask,
    mask_area_centroid,
    rle_decode,
    rle_encode,
)


def test_dims_diagonal():
    d = ImageDims(4, 3)
    assert d.d_max == pytest.approx(5.0, rel=1e-12)
    assert abs(d.d_max**2 - (4**2 + 3**2)) <= 1e-12 * (4**2 + 3**2)


def test_dims_invalid():
    with pytest.raises(ValueError):
        ImageDims(0, 5)


def test_rle_simple_row():
    mask = rle_encode(np.array([[0, 0, 1, 1, 0]], dtype=bool))
    assert mask.counts == (2, 2, 1)
    assert (rle_decode(mask) == np.array([[0, 0, 1, 1, 0]], bool)).all()


def test_rle_all_ones_leading_zero_run():
    mask = rle_encode(np.ones((2, 2), dtype=bool))
    assert mask.counts == (0, 4)
    assert rle_decode(mask).all()


def test_rle_all_zeros():
    mask = rle_encode(np.zeros((2, 3), dtype=bool))
    assert mask.counts == (6,)
    assert not rle_decode(mask).any()


def test_rle_sum_mismatch():
    with pytest.raises(MalformedRle):
        rle_decode(RleMask(ImageDims(3, 2), (5,)))


def test_rle_zero_interior_run_rejected():
    with pytest.raises(MalformedRle):
        RleMask(ImageDims(3, 2), (2, 0, 4))


def test_rle_roundtrip_fuzz():
    rng = np.random.default_rng(42)
    for _ in range(500):
        bm = rng.random((17, 23)) < rng.uniform(0.05, 0.95)
        mask = rle_encode(bm)
        assert sum(mask.counts) == 17 * 23
        assert all(c >= 1 for c in mask.counts[1:])
        assert (rle_decode(mask) == bm).all()


def test_area_centroid_single_pixel():
    bm = np.zeros((6, 6), dtype=bool)
    bm[4, 3] = True
    area, (cx, cy) = mask_area_centroid(bm)
    assert area == 1 and (cx, cy) == (3.0, 4.0)


def test_area_centroid_block():
    bm = np.zeros((4, 4), dtype=bool)
    bm[1:3, 1:3] = True
    area, centroid = mask_area_centroid(bm)
    assert area == 4 and centroid == (1.5, 1.5)


def test_area_centroid_empty():
    with pytest.raises(EmptyMask):
        mask_area_centroid(np.zeros((3, 3), bool))


def test_centroid_matches_bruteforce_and_stays_in_bbox():
    rng = np.random.default_rng(3)
    for _ in range(50):
        bm = rng.random((12, 15)) < 0.3
        if not bm.any():
            continue
        area, (cx, cy) = mask_area_centroid(bm)
        sx = sy = n = 0
        for y in range(12):
            for x in range(15):
                if bm[y, x]:
                    sx += x
                    sy += y
                    n += 1
        assert area == n
        assert abs(cx - sx / n) < 1e-12 and abs(cy - sy / n) < 1e-12
        ys, xs = np.nonzero(bm)
        assert xs.min() <= cx <= xs.max() and ys.min() <= cy <= ys.max()


def test_point_set_rejects_duplicates_and_bad_order():
    with pytest.raises(ValueError):
        PointLabelSet.build([((1, 1), 0), ((1, 1), 2)])


def test_point_set_csv_roundtrip():
    pls = PointLabelSet.build([((3, 4), 1), ((0, 0), 5), ((7, 2), 0)])
    again = PointLabelSet.from_csv(pls.to_csv())
    assert again == pls
    assert pls.to_csv().splitlines()[0] == "x,y,label"


def test_label_map_png_roundtrip_byte_exact():
    rng = np.random.default_rng(11)
    data = rng.integers(0, 6, size=(9, 7)).astype(np.uint8)
    data[0, 0] = 255
    lm = LabelMap(ImageDims(7, 9), data)
    schema = LabelSchema(names=("background", "a", "b", "c", "d", "e"))
    blob = lm.to_png_bytes(schema)
    back = LabelMap.from_png_bytes(blob)
    assert (back.data == data).all()
    assert lm.to_png_bytes(schema) == blob  # deterministic bytes
    assert back.sentinel_count() == 1


def test_schema_validation():
    with pytest.raises(ValueError):
        LabelSchema(names=("only",), background_id=3)
    s = LabelSchema(names=("bg", "fg"))
    assert s.num_classes == 2
    assert len(s.colors) == 2
    again = LabelSchema.from_json(s.to_json())
    assert again == s
