"""Layer-wise modality-gap metrics for vision-language model activations.

The package scores how far apart vision-token and text-token activations sit
inside a model, layer by layer, as a Frechet distance between Gaussians fit
to each modality, summed over layers on a log scale. It also fits per-layer
elementwise affine calibration maps that pull the vision distribution toward
the text one, and generates seeded synthetic fixtures with closed-form
reference values.
"""

from . import errors
from .core import (
    DEFAULT_EPSILON_FLOOR,
    GapProfile,
    MirOptions,
    aggregate_mir,
    compute_mir,
    fid_layer,
    per_layer_report,
)
from .gapstats import (
    ModalityMoments,
    OutlierFallbackWarning,
    PrepOptions,
    moments,
    prepare_layer,
    remove_outliers,
    scaling_factor,
)
from .matsqrt import (
    METHOD_EXACT,
    METHOD_NEWTON_SCHULZ,
    SqrtConfig,
    sqrt_newton_schulz,
    sqrt_psd_exact,
    trace_sqrt_product,
)
from .moca import (
    CalibrationParams,
    apply_calibration,
    calibration_gap_report,
    diagonal_moment_loss,
    fit_gradient,
    fit_moment_matching,
)
from .synth import (
    LayerGapSpec,
    SynthSpec,
    analytic_gaussian_fid,
    generate_run,
    preset_schedule,
    random_spd,
)
from .tensor_io import (
    LayerActivations,
    LayerEntry,
    RunManifest,
    load_layer,
    read_manifest,
    read_tensor,
    read_tensor_header,
    write_manifest,
    write_tensor,
)

__version__ = "0.1.0"

__all__ = [
    "errors",
    "DEFAULT_EPSILON_FLOOR",
    "GapProfile",
    "MirOptions",
    "aggregate_mir",
    "compute_mir",
    "fid_layer",
    "per_layer_report",
    "ModalityMoments",
    "OutlierFallbackWarning",
    "PrepOptions",
    "moments",
    "prepare_layer",
    "remove_outliers",
    "scaling_factor",
    "METHOD_EXACT",
    "METHOD_NEWTON_SCHULZ",
    "SqrtConfig",
    "sqrt_newton_schulz",
    "sqrt_psd_exact",
    "trace_sqrt_product",
    "CalibrationParams",
    "apply_calibration",
    "calibration_gap_report",
    "diagonal_moment_loss",
    "fit_gradient",
    "fit_moment_matching",
    "LayerGapSpec",
    "SynthSpec",
    "analytic_gaussian_fid",
    "generate_run",
    "preset_schedule",
    "random_spd",
    "LayerActivations",
    "LayerEntry",
    "RunManifest",
    "load_layer",
    "read_manifest",
    "read_tensor",
    "read_tensor_header",
    "write_manifest",
    "write_tensor",
    "__version__",
]
