"""Cross-lingual adversarial sequence tagging and dependency parsing."""
from .estimator import AdversarialParser, AdversarialTagger
from .model import AdversarialConfig, ModelParams, TrainingStepReport

__version__ = "0.1.0"

__all__ = [
    "AdversarialConfig",
    "AdversarialParser",
    "AdversarialTagger",
    "ModelParams",
    "TrainingStepReport",
]
