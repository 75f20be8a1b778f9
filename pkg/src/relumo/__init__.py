"""relumo: single-image outdoor scene decomposition and relighting.

Decomposes a photograph into albedo, normals, a shadow map and order-2
spherical-harmonics lighting by direct optimization, then relights it
under arbitrary target lighting, with the multi-view and benchmark
evaluation tooling to go with it.
"""

from .imaging import (
    ColorSpace,
    Image,
    Mask,
    downscale,
    downscale_masked,
    lab_to_rgb,
    load_image,
    load_mask,
    luminance,
    rgb_to_lab,
    save_image,
    save_mask,
    save_pfm,
    save_png,
)
from .shlight import (
    EnvMap,
    ShLighting,
    ShSubspace,
    build_subspace,
    directional_lighting,
    dominant_light_direction,
    estimate_lighting,
    fit_envmap_lighting,
    lighting_rotation_matrix,
    rotate_envmap,
    rotate_lighting,
    sh_basis,
    shade,
)
from .geometry import (
    CameraRecord,
    CameraView,
    CrossProjector,
    cross_project,
    load_cameras,
    make_gt_relit,
    relative_rotation,
    save_cameras,
)
from .decompose import (
    DecomposeInit,
    Decomposition,
    DivergenceError,
    OptimizerConfig,
    albedo_consistency_loss,
    appearance_loss,
    cross_render_loss,
    decompose,
    load_decomposition,
    normals_from_depth,
    save_decomposition,
)
from .relight import (
    CycleReport,
    RelightRequest,
    cast_occlusion,
    cycle_consistency_report,
    predict_shadow,
    relight,
)
from .metrics import (
    EvalReport,
    evaluate_cross_relighting,
    evaluate_pair,
    masked_l1,
    masked_mse,
    mean_angular_error,
    ssim,
    write_eval_csv,
)

__version__ = "0.1.0"
