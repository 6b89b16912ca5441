import numpy as np
import pytest

from pointseg.proposals import CandidateMask, ProposalSet
from pointseg.raster import ImageDims, RasterImage, rle_encode


def candidate(mask_id, bitmap, quality=1.0):
    """CandidateMask straight from a bitmap, metadata recomputed."""
    from pointseg.raster import mask_area_centroid

    bitmap = np.asarray(bitmap, dtype=bool)
    area, centroid = mask_area_centroid(bitmap)
    return CandidateMask(
        id=mask_id,
        mask=rle_encode(bitmap),
        area=area,
        centroid=centroid,
        quality=quality,
        bitmap=bitmap,
    )


def proposal_set(dims, bitmaps, qualities=None):
    qualities = qualities or [1.0] * len(bitmaps)
    masks = [candidate(i, b, q) for i, (b, q) in enumerate(zip(bitmaps, qualities))]
    return ProposalSet.from_masks(dims, masks)


def random_blob_bitmap(rng, h, w, min_pixels=1):
    """Random rectangular-ish blob with at least min_pixels set."""
    while True:
        bm = np.zeros((h, w), dtype=bool)
        y0 = int(rng.integers(0, h))
        x0 = int(rng.integers(0, w))
        bh = int(rng.integers(1, h - y0 + 1))
        bw = int(rng.integers(1, w - x0 + 1))
        bm[y0 : y0 + bh, x0 : x0 + bw] = True
        # poke random holes for irregularity
        holes = rng.random((h, w)) < 0.2
        bm &= ~holes
        if bm.sum() >= min_pixels:
            return bm


def random_image(rng, h, w):
    return RasterImage.from_array(rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8))


@pytest.fixture(scope="session")
def synth_dataset(tmp_path_factory):
    """The 20-image synthetic benchmark set used by the acceptance suite."""
    from pointseg.bench import make_synthetic_dataset

    root = tmp_path_factory.mktemp("synth")
    return make_synthetic_dataset(root, 20, ImageDims(128, 128), 6, seed=7)
