"""Closed-form mean-field variational Bayes for episodic latent-variable memory models."""

from .baselines import BaselineConfig, BaselineKind, baseline_write
from .distributions import (
    DiagGaussian,
    FullGaussian,
    MatrixNormalDist,
    OneHotCategorical,
    expect_quadratic_form,
    kl_categorical,
    kl_full_gaussian,
    kl_matrix_normal,
    reparam_sample_matrix_normal,
)
from .elbo import (
    ElboBreakdown,
    RegularizerParams,
    apply_stochastic_regularizer,
    elbo_closed_form,
    elbo_monte_carlo,
    expected_code_mean,
    tree_expected_code_kl,
)
from .engine import (
    InferenceConfig,
    InferenceResult,
    InitMode,
    kmeanspp_init,
    update_bias,
    update_categorical_address,
    update_gaussian_address,
    update_memory,
    update_mixture_assignment,
    write_episode,
)
from .episodes import (
    CodePosterior,
    Episode,
    SynthConfig,
    generate_synthetic_episode,
    load_episode,
    save_episode,
)
from .errors import (
    InvalidArgument,
    MixedObservationError,
    NegativeVarianceError,
    NonUniformDimensionError,
    SchemaError,
)
from .models import (
    AddressBlock,
    AddressPosterior,
    MemoryState,
    ModelSpec,
    PseudocountTable,
    Variant,
    build_priors,
    reduce_mixture_to_mean_shifted,
)
from .readout import generate_direct, generate_iterative, resize_memory

__all__ = [name for name in dir() if not name.startswith("_")]
