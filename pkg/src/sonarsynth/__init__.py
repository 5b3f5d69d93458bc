"""Synthetic side scan sonar shipwreck datasets and anomaly-driven segmentation evaluation.

Pipeline: ray-cast a sonar waterfall image of a randomized ship scene,
fracture the ship with a quadrant deformation field, composite onto real
terrain, then score images with cosine-distance anomaly volumes and
evaluate predicted masks with per-site IOU/F1.
"""

from sonarsynth.scene import (
    Material,
    RandomizationRanges,
    ScenePlacement,
    Scene,
    SeabedConfig,
    TriangleMesh,
    build_scene,
    load_mesh,
    randomize_placement,
)
from sonarsynth.render import (
    SonarParams,
    PingReturn,
    db_to_pixel,
    render_scan,
    sonar_intensity,
    target_strength,
    trace_ping,
    transmission_loss,
)
from sonarsynth.deformation import (
    DeformParams,
    DeformationField,
    apply_field,
    bin_to_value,
    decode_onehot,
    encode_onehot,
    generate_quadrant_field,
    identity_field,
    read_deff,
    write_deff,
)
from sonarsynth.compositor import (
    CompositeOptions,
    SyntheticSample,
    TerrainLibrary,
    TerrainTile,
    composite,
    load_terrain_library,
    tile_scan,
)
from sonarsynth.anomaly import (
    AnomalyConfig,
    Prototype,
    anomaly_map,
    anomaly_volume,
    export_anomaly_volume,
    feature_pyramid,
    otsu_threshold,
    segment_from_anomaly,
    terrain_prototype,
)
from sonarsynth.losses import (
    LossBreakdown,
    binary_cross_entropy,
    cross_entropy_onehot,
    prototype_mse,
    total_loss,
)
from sonarsynth.evalkit import (
    ConfusionCounts,
    EvalReport,
    SiteMetrics,
    aggregate_by_site,
    confusion,
    emit_report,
    metrics,
)
from sonarsynth.pipeline import (
    PipelineConfig,
    generate_dataset,
    generate_sample,
    sample_seed,
)

__version__ = "0.1.0"
