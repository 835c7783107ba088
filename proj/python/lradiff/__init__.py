# SPDX-License-Identifier: Apache-2.0
"""Label-retrieval-augmented diffusion for noisy-label classification."""

from ._lradiff import (
    DimensionError,
    DivergenceError,
    FormatError,
    LabelDiffusion,
    NoiseSchedule,
    accuracy,
    asymmetric_noise,
    blob_posterior,
    candidate_clean_fraction,
    candidate_sets,
    ddim_trajectory,
    knn,
    knn_classify,
    linear_beta_schedule,
    noise_rate,
    pmd_noise,
    read_features,
    read_labels,
    set_max_threads,
    synth_blobs,
    uniform_noise,
    write_features,
    write_labels,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
