from lsdm.core.autoencoder import (
    AutoencoderPair,
    StepOneConfig,
    TrainingDivergedError,
    build_autoencoder,
    train_autoencoder,
    wae_penalty,
)
from lsdm.core.diagnostics import (
    QuantileOracle,
    latent_probes,
    quantile_oracle_generator,
    range_proximity,
    theorem1_decomposition,
    theorem2_check,
)
from lsdm.core.matching import (
    GeneratorBundle,
    LatentMatcher,
    StepTwoConfig,
    generate_conditional,
    gradient_penalty_term,
    train_latent_generator,
)

__all__ = [
    "AutoencoderPair",
    "GeneratorBundle",
    "LatentMatcher",
    "QuantileOracle",
    "StepOneConfig",
    "StepTwoConfig",
    "TrainingDivergedError",
    "build_autoencoder",
    "generate_conditional",
    "gradient_penalty_term",
    "latent_probes",
    "quantile_oracle_generator",
    "range_proximity",
    "theorem1_decomposition",
    "theorem2_check",
    "train_autoencoder",
    "train_latent_generator",
    "wae_penalty",
]
