"""Instance-level attention masks and masked diffusion losses driven by
3D box trajectories.

The pipeline: a scene of 3D boxes and cameras is rasterized into
per-instance pixel masks, block-averaged into latent-grid masks,
binarized into a token/instance indicator, and expanded into additive
attention masks and loss masks.  A masked self-attention kernel and a
masked diffusion loss consume those, each with leakage and restriction
properties that are checkable to machine precision.
"""

from .artifacts import (
    ArtifactCheck,
    BuildOptions,
    MaskBundle,
    THREADS_ENV,
    build_bundle,
    check_theta_monotonic,
    load_loss_mask,
    thread_cap,
    verify_artifacts,
    write_artifacts,
)
from .attention import (
    AttentionParams,
    gated_fuse,
    init_attention_params,
    masked_softmax,
    masked_softmax_grad,
    sa_mask,
)
from .checks import CheckResult, SUITES, run_check_suites
from .conditioning import (
    FourierMap,
    IdentityEmbedding,
    MlpParams,
    build_condition_set,
    condition_matrix,
    embed_instance,
    fourier,
    init_mlp_params,
    load_mlp_params,
    pseudo_text_encode,
    save_mlp_params,
)
from .diffusion import (
    DynamicLossResult,
    GradientCheckReport,
    MaskedLossResult,
    NoiseSchedule,
    dynamic_loss,
    forward_noise,
    gradient_restriction_check,
    load_schedule,
    masked_loss,
    per_token_loss,
    save_schedule,
    write_branch_log,
)
from .errors import MaskedRowError, SceneFormatError, ValidationError
from .geometry import (
    EPS_NEAR,
    PixelMaskStack,
    ProjectedPolygon,
    build_mask_stack,
    convex_hull,
    hull_polygon,
    project_corner,
    rasterize,
    read_mask_stack,
    write_frame_pgm,
    write_mask_stack,
)
from .indicator import (
    IndicatorIndex,
    LatentMask,
    build_indicator,
    concat_views,
    downsample_trilinear,
    indicator_from_doc,
    indicator_to_doc,
    load_indicator,
    save_indicator,
)
from .masks import (
    AttentionMask,
    CONDITION_MODES,
    NEG_MASK,
    POLICIES,
    WEIGHT_SNAP,
    assemble_mask,
    build_attention_mask,
    build_condition_block,
    build_identity_block,
    build_loss_mask,
    build_trajectory_block,
    default_instance_order,
    load_dense_mask,
    load_sparse_mask,
    save_dense_mask,
    save_sparse_mask,
    sparse_unmasked_pairs,
)
from .rng import CounterRng, hash64, mix64
from .scene import (
    BoxCorners3D,
    CameraFrame,
    CATEGORY_SIZES,
    GeneratorSpec,
    Instance,
    MOTION_TYPES,
    Pose,
    Scene,
    corners_from_pose,
    generate_synthetic_scene,
    load_scene,
    save_scene,
    scene_from_doc,
    scene_to_doc,
)

__version__ = "0.1.0"

__all__ = [
    "ArtifactCheck",
    "AttentionMask",
    "AttentionParams",
    "BoxCorners3D",
    "BuildOptions",
    "CameraFrame",
    "CATEGORY_SIZES",
    "CheckResult",
    "CONDITION_MODES",
    "CounterRng",
    "DynamicLossResult",
    "EPS_NEAR",
    "FourierMap",
    "GeneratorSpec",
    "GradientCheckReport",
    "IdentityEmbedding",
    "IndicatorIndex",
    "Instance",
    "LatentMask",
    "MaskBundle",
    "MaskedLossResult",
    "MaskedRowError",
    "MlpParams",
    "MOTION_TYPES",
    "NEG_MASK",
    "NoiseSchedule",
    "PixelMaskStack",
    "Pose",
    "POLICIES",
    "ProjectedPolygon",
    "Scene",
    "SceneFormatError",
    "SUITES",
    "THREADS_ENV",
    "ValidationError",
    "WEIGHT_SNAP",
    "assemble_mask",
    "build_attention_mask",
    "build_bundle",
    "build_condition_block",
    "build_condition_set",
    "build_identity_block",
    "build_indicator",
    "build_loss_mask",
    "build_mask_stack",
    "build_trajectory_block",
    "check_theta_monotonic",
    "concat_views",
    "condition_matrix",
    "convex_hull",
    "corners_from_pose",
    "default_instance_order",
    "downsample_trilinear",
    "dynamic_loss",
    "embed_instance",
    "forward_noise",
    "fourier",
    "gated_fuse",
    "generate_synthetic_scene",
    "gradient_restriction_check",
    "hash64",
    "hull_polygon",
    "indicator_from_doc",
    "indicator_to_doc",
    "init_attention_params",
    "init_mlp_params",
    "load_dense_mask",
    "load_indicator",
    "load_loss_mask",
    "load_mlp_params",
    "load_scene",
    "load_schedule",
    "load_sparse_mask",
    "masked_loss",
    "masked_softmax",
    "masked_softmax_grad",
    "mix64",
    "per_token_loss",
    "project_corner",
    "pseudo_text_encode",
    "rasterize",
    "read_mask_stack",
    "run_check_suites",
    "sa_mask",
    "save_dense_mask",
    "save_indicator",
    "save_mlp_params",
    "save_scene",
    "save_schedule",
    "save_sparse_mask",
    "scene_from_doc",
    "scene_to_doc",
    "sparse_unmasked_pairs",
    "thread_cap",
    "verify_artifacts",
    "write_artifacts",
    "write_branch_log",
    "write_frame_pgm",
    "write_mask_stack",
]
