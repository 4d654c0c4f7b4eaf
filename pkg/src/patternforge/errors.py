class DomainError(ValueError):
    """Input outside the domain an operation is defined on."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class TrainingError(RuntimeError):
    """Training could not proceed (e.g. no usable triplets)."""


class PipelineError(RuntimeError):
    """A pipeline stage failed or its upstream artifacts are inconsistent."""
