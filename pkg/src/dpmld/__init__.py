"""Element-wise Laplacian dropout for private multimodal feature release."""

from .audit import AdjacentPair, AuditReport, audit_mechanism, monte_carlo_ratio, sup_log_ratio
from .data import GeneratorConfig, ModalitySample, generate, load_external, split
from .gumbel import GumbelConfig, anneal, sample_hard, sample_soft
from .privacy import (
    BaselineConfig,
    DropoutRates,
    FeatureVector,
    NormalizationSpec,
    PrivacyBudget,
    allocate_budget,
    baseline_total_budget,
    normalize,
    release,
)
from .trainer import TrainConfig, train

__version__ = "0.1.0"
