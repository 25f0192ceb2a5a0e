"""Exception hierarchy shared by all dpwlab modules."""


class DPWError(Exception):
    """Base class for numerical failures inside the pipeline."""


class DomainError(DPWError, ValueError):
    """An argument lies outside the domain where an operation is defined."""


class NotResolvedError(DPWError):
    """A loop's Fourier tail is above tolerance, so spectral operations are unreliable."""


class FactorizationError(DPWError):
    """Spectral factorization / Iwasawa decomposition failed."""


class ResonanceError(DPWError):
    """The resonant Frobenius term does not cancel: the monodromy hypothesis is likely violated."""


class ODEError(DPWError):
    """Integration of the holomorphic frame failed."""


class MeshTooCoarseError(DPWError):
    """Mesh sampling is too coarse for the embeddedness analysis."""
