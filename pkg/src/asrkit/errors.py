"""Exception types shared across the toolkit."""


class AsrkitError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(AsrkitError):
    """Bad user input: malformed manifests, configs, CLI values."""


class GraphConstructionError(AsrkitError):
    """Illegal autodiff graph operation (shape mismatch, unknown op,
    backward through a detached or non-scalar root)."""


class ImpossibleAlignmentError(AsrkitError):
    """A CTC label sequence cannot fit in the available frames."""


class CheckpointError(AsrkitError):
    """Checkpoint directory is missing pieces or internally inconsistent."""
