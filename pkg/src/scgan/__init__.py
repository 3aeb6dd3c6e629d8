"""Desk-scale semantic-consistent GAN for unsupervised domain adaptation."""

__version__ = "0.1.0"

from .core_types import (  # noqa: E402
    Domain,
    DomainKey,
    LabeledBatch,
    LossWeights,
    PseudoLabel,
    RunConfig,
    Sample,
    UnlabeledBatch,
    make_domain_key,
    validate_config,
)

__all__ = [
    "__version__",
    "Domain",
    "DomainKey",
    "LabeledBatch",
    "LossWeights",
    "PseudoLabel",
    "RunConfig",
    "Sample",
    "UnlabeledBatch",
    "make_domain_key",
    "validate_config",
]
