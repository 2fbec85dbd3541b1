"""Exception types shared across the package."""


class FlowrecError(Exception):
    """Base class for everything raised deliberately by this package."""


class SchemaError(FlowrecError):
    """A payload, config, or wire file does not match its schema."""


class BackendError(FlowrecError):
    """A VLM backend call failed after retries, or was misconfigured."""


class FixtureMissError(BackendError):
    """Fixture replay was requested for a request that has no stored fixture."""

    def __init__(self, digest: str, image_ref: str):
        super().__init__(
            f"no stored fixture for request {digest} (image_ref={image_ref!r}); "
            "record it with the live backend first"
        )
        self.digest = digest
        self.image_ref = image_ref


class JudgeParseError(FlowrecError):
    """The judge reply could not be parsed into a verdict."""


class GenerationError(FlowrecError):
    """A synthetic diagram could not be built for the requested spec."""
