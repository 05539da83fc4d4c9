from lsdm.harness.ablation import run_ablation
from lsdm.harness.config import ExperimentConfig, load_config, save_config
from lsdm.harness.io import load_checkpoint, save_checkpoint
from lsdm.harness.pipeline import MetricsRecord, run_pipeline
from lsdm.harness.verify import run_verification_suite

__all__ = [
    "ExperimentConfig",
    "MetricsRecord",
    "load_checkpoint",
    "load_config",
    "run_ablation",
    "run_pipeline",
    "run_verification_suite",
    "save_checkpoint",
    "save_config",
]
