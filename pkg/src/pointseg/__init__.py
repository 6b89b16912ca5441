"""pointseg: active point-label sampling and sparse-to-dense augmentation."""

__version__ = "0.1.0"

from .raster import (  # noqa: F401
    UNLABELED,
    ImageDims,
    LabelMap,
    LabelSchema,
    PixelCoord,
    PointLabel,
    PointLabelSet,
    RasterImage,
    RleMask,
    mask_area_centroid,
    rle_decode,
    rle_encode,
)
from .proposals import (  # noqa: F401
    CandidateMask,
    FallbackConfig,
    ProposalSet,
    coverage_complement,
    generate_fallback_proposals,
    load_proposals,
    point_prompt,
)
from .superpixels import SuperpixelMap, propagate_point_labels, rgb_to_lab, slic_segment  # noqa: F401
from .sampler import (  # noqa: F401
    SamplerConfig,
    SamplerState,
    ScalarField,
    acquisition_map,
    compute_exploration,
    compute_object_proximity,
    run_dynamic_sampling,
    sample_background_points,
    sample_centroid_guided,
    sample_grid,
    sample_points,
    sample_random,
    select_next_active_point,
)
from .augment import (  # noqa: F401
    ExpandedMask,
    PartialSegmentation,
    augment,
    compose_final,
    expand_points,
    merge_masks,
    render_overlay,
    resolve_pixel_label,
)
from .metrics import (  # noqa: F401
    ConfusionMatrix,
    MetricReport,
    accumulate,
    compute_metrics,
    metrics_csv,
    report_per_class,
)
from .bench import (  # noqa: F401
    Dataset,
    ExperimentSpec,
    SimulatedAnnotator,
    make_synthetic_dataset,
    oracle_query,
    run_ablation,
    run_experiment,
)
