"""Exception and warning types raised across the package."""


class FacadeCityError(Exception):
    """Base class for all errors raised by facadecity."""


# raster I/O
class UnreadableFile(FacadeCityError):
    pass


class UnsupportedFormat(FacadeCityError):
    pass


class DimMismatch(FacadeCityError, ValueError):
    pass


# matting
class DegenerateTrimap(FacadeCityError):
    pass


class SolverDiverged(FacadeCityError):
    pass


# line detection
class OutOfWindow(FacadeCityError, IndexError):
    pass


class ContourTooShort(FacadeCityError):
    pass


# vanishing points
class InsufficientSegments(FacadeCityError):
    pass


class NoEvidence(FacadeCityError):
    pass


class NoOrthogonalPair(FacadeCityError):
    pass


# rectification
class DegenerateQuad(FacadeCityError):
    pass


class NumericallyUnstable(FacadeCityError):
    pass


class SingularSystem(FacadeCityError):
    pass


# inpainting
class NoSourcePatch(FacadeCityError):
    pass


class SliceError(FacadeCityError):
    """A backend failed on one tiler slice; ``slice_id`` says which."""

    def __init__(self, slice_id, cause):
        super().__init__(f"slice {slice_id}: {cause!r}")
        self.slice_id = slice_id
        self.cause = cause


class IsolatedRegion(UserWarning):
    """A masked component had no known neighbour and was filled with the global mean."""


# modelling
class OpenChain(FacadeCityError):
    pass


class NonPositiveDim(FacadeCityError, ValueError):
    pass


class OverlappingBlocks(UserWarning):
    pass


class WriteFailure(FacadeCityError):
    pass


# pipeline
class ManifestError(FacadeCityError):
    pass
