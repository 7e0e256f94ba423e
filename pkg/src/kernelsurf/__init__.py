"""Kernel two-sample classification over heterogeneous data sources.

A library and CLI for comparing raw multimodal recordings (images,
low-frequency time series, vibration spectra) directly in distribution
space: per-source averaged MMD estimates, HSIC-based independent-sample
spacing, cross-user mean compensation, weighted geometric-mean fusion, and
a nearest-neighbor class decision.
"""

from .classifier import (
    BenchmarkResult,
    ClassLibrary,
    DiscrepancyScore,
    EvaluationReport,
    PipelineConfig,
    Prediction,
    SourceConfig,
    Trial,
    apply_ablations,
    classify_trial,
    discrepancy_score,
    evaluate,
    fuse_scores,
    restrict_sources,
    run_benchmark,
    source_discrepancy,
)
from .dataset import (
    DatasetManifest,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    read_manifest,
    save_dataset,
    validate_dataset,
)
from .errors import ConfigError, ConstantStreamError, DataError, InputError
from .independence import (
    MixingResult,
    MixingSearchConfig,
    RealizationSet,
    hsic_b,
    hsic_threshold,
    minimum_independent_gap,
    mixing_report,
)
from .kernels import KernelConfig, gram, median_heuristic, squared_exponential
from .mmd import (
    SampleSet,
    TestResult,
    averaged_mmd,
    bootstrap_threshold,
    mmd2_biased,
    two_sample_test,
)
from .sampling import (
    DataStream,
    SamplingSpec,
    Spectrum,
    cross_user_shift,
    equidistant_spatial,
    equidistant_temporal,
    random_spectral_pair,
    rgb_to_hsv,
    spectral_magnitudes,
)

__version__ = "0.1.0"
