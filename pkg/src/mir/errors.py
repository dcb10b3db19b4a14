"""Exception types shared across the package.

Everything raised on purpose derives from MirError so callers can catch one
base class. The two mid-level groups matter for exit codes: input problems
(manifest, tensor files) map to exit 1, numerical failures map to exit 2.
"""


class MirError(Exception):
    """Base class for all errors raised by this package."""


# ---------------------------------------------------------------------------
# input-side errors: files, formats, manifests


class IoFailure(MirError):
    """Underlying OS-level read or write failed."""


class TensorFormatError(MirError):
    """A tensor file does not conform to the on-disk format."""


class BadMagic(TensorFormatError):
    pass


class BadHeader(TensorFormatError):
    pass


class UnsupportedDtype(TensorFormatError):
    pass


class UnsupportedLayout(TensorFormatError):
    pass


class NonFiniteData(TensorFormatError):
    """Loaded activations contain NaN or infinity."""


class ManifestError(MirError):
    """A run manifest is missing, malformed, or inconsistent with its files."""


class MalformedManifest(ManifestError):
    pass


class MissingFile(ManifestError):
    pass


class ShapeMismatch(ManifestError):
    """Tensor dimensions disagree with the manifest or with each other."""


# ---------------------------------------------------------------------------
# numerical errors


class NumericsError(MirError):
    """Base class for failures inside the numerical kernels."""


class DegenerateInput(NumericsError):
    """Input is structurally unusable, e.g. all-zero text activations."""


class InsufficientSamples(NumericsError):
    """Fewer than two rows survive; covariance is undefined."""


class NotSymmetric(NumericsError):
    pass


class EigenFailure(NumericsError):
    """Eigendecomposition did not converge."""


class NonConvergence(NumericsError):
    """Newton-Schulz iteration hit its cap with residual above tolerance."""


class DimensionMismatch(NumericsError):
    pass


class Divergence(NumericsError):
    """Gradient fitting drove the loss far above its starting value."""


class InternalConsistencyError(NumericsError):
    """A quantity that must be non-negative came out clearly negative."""


class LayerComputationError(MirError):
    """Wraps any per-layer failure with the offending layer index."""

    def __init__(self, layer_index: int, cause: BaseException):
        self.layer_index = layer_index
        self.cause = cause
        super().__init__(f"layer {layer_index}: {cause}")
