"""Conditional GAN for fundus-to-angiogram translation.

A numpy library with hand-written, finite-difference-verified backward
passes: separable-conv residual blocks, a coarse/fine generator pair,
four multi-scale patch discriminators, the weighted LSGAN+L2 objective,
the alternating training schedule, paired-crop data pipeline, fundus
perturbations, and Frechet-distance evaluation.
"""

__version__ = "0.1.0"

from .blocks import (
    LayerParameterCount,
    ResidualBlock,
    ResidualBlockConfig,
    count_parameters,
)
from .dataset import (
    PairedSample,
    SourcePair,
    build_training_samples,
    denormalize,
    eval_quadrant_crops,
    load_pairs,
    normalize,
    random_crops,
)
from .discriminators import (
    DiscriminatorBank,
    DiscriminatorConfig,
    PatchDiscriminator,
    default_discriminator_configs,
    multi_scale_judge,
    receptive_field,
)
from .errors import (
    AngiosynthError,
    CheckpointError,
    ConfigError,
    DivergenceError,
    IngestionError,
    InputError,
    NumericsError,
)
from .evaluation import (
    EmbeddingStats,
    RandomProjectionEmbedder,
    StudyKit,
    StudyReport,
    build_study_kit,
    embed_set,
    evaluate_conditions,
    frechet_distance,
    score_study,
)
from .generators import (
    CoarseGenerator,
    CoarseOutput,
    FineGenerator,
    GeneratorConfig,
    build_generator,
    default_generator_configs,
    toy_generator_configs,
)
from .objective import (
    ObjectiveConfig,
    lsgan_d_loss,
    lsgan_g_loss,
    recon_l2,
    total_generator_objective,
)
from .perturb import PerturbationSpec, apply_perturbation, default_condition_specs
from .resample import ImagePyramid, build_pyramid, downsample2, lanczos_resize
from .trainer import (
    TrainingSchedule,
    TrainingState,
    fit,
    infer,
    infer_from_state,
    load_training_state,
    save_training_state,
    toy_training_state,
    train_cycle,
)
