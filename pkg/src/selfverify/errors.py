"""Exception hierarchy. Every error carries a short ``code`` used as the reason in reports."""


class SelfVerifyError(Exception):
    code = "error"


class ShapeError(SelfVerifyError, ValueError):
    code = "shape_mismatch"


class NonFiniteError(SelfVerifyError, ArithmeticError):
    code = "non_finite"


class ObjectiveError(SelfVerifyError, ValueError):
    code = "bad_objective"


class DivergenceError(NonFiniteError):
    code = "divergence"


class BundleError(SelfVerifyError):
    code = "bundle_error"


class VersionMismatch(BundleError):
    code = "version_mismatch"


class ShapeInconsistency(BundleError, ShapeError):
    code = "shape_inconsistency"


class TruncatedBlob(BundleError):
    code = "truncated_blob"


class IngestError(SelfVerifyError):
    code = "ingest_error"


class WaveformError(SelfVerifyError, ValueError):
    code = "bad_waveform"


class AllZeroSaliency(SelfVerifyError):
    code = "all_zero_saliency"


class DegenerateSpectrum(SelfVerifyError):
    code = "degenerate_spectrum"


class EmptyUnion(SelfVerifyError, ValueError):
    code = "empty_union"


class ConstantDistribution(SelfVerifyError, ValueError):
    code = "constant_distribution"


class MissingProfile(SelfVerifyError, KeyError):
    code = "missing_profile"

    def __str__(self):
        return Exception.__str__(self)


class ProfileError(SelfVerifyError):
    code = "profile_error"


class EmptySetError(SelfVerifyError, ValueError):
    code = "empty_set"
