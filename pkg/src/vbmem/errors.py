class InvalidArgument(ValueError):
    """Raised for dimension mismatches, non-PD covariances and invalid specs."""


class SchemaError(InvalidArgument):
    """A JSON document does not follow the expected schema."""


class NonUniformDimensionError(InvalidArgument):
    """Codes within one episode have differing dimensions."""


class NegativeVarianceError(InvalidArgument):
    """A code posterior carries a negative variance."""


class MixedObservationError(InvalidArgument):
    """An episode mixes zero-variance (observed) and latent codes."""
