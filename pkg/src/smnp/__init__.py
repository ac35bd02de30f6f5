"""Symmetric multinomial probit: sum-to-zero identification with a sampled
faux base category, plus the standard trace-restricted base-category model,
prior-asymmetry probes, posterior prediction, and a simulation study."""

from .basemnp import BaseMnpSampler, run_mnp, sigma_star_from_full, transform_to_base
from .draws import DrawStore
from .io import load_draws, parse_dataset, save_draws, write_dataset
from .posterior import (
    PredictiveCurve,
    export_traces,
    postprocess_identify,
    predict_probs,
    price_curve,
)
from .prior_probe import PriorProbeConfig, PriorProbeResult, phi, psi, psi_curve
from .rng import (
    RngStream,
    sample_invwishart,
    sample_mvnorm,
    sample_trace_restricted,
    sample_truncnorm,
)
from .simstudy import SimScenario, StudyResult, gen_dataset, run_study, total_variation, true_probs
from .smnp import SmnpSampler, SmnpState, run_smnp
from .types import (
    ChoiceDataset,
    Hyperparameters,
    build_design,
    center_alternatives,
    construct_R,
    default_S,
    expand_beta,
    reduce_beta,
    reduce_design,
    tbc_matrix,
    ts_matrix,
)

__version__ = "0.1.0"

__all__ = [
    "BaseMnpSampler",
    "ChoiceDataset",
    "DrawStore",
    "Hyperparameters",
    "PredictiveCurve",
    "PriorProbeConfig",
    "PriorProbeResult",
    "RngStream",
    "SimScenario",
    "SmnpSampler",
    "SmnpState",
    "StudyResult",
    "build_design",
    "center_alternatives",
    "construct_R",
    "default_S",
    "expand_beta",
    "export_traces",
    "gen_dataset",
    "load_draws",
    "parse_dataset",
    "phi",
    "postprocess_identify",
    "predict_probs",
    "price_curve",
    "psi",
    "psi_curve",
    "reduce_beta",
    "reduce_design",
    "run_mnp",
    "run_smnp",
    "run_study",
    "sample_invwishart",
    "sample_mvnorm",
    "sample_trace_restricted",
    "sample_truncnorm",
    "save_draws",
    "sigma_star_from_full",
    "total_variation",
    "transform_to_base",
    "true_probs",
    "ts_matrix",
    "tbc_matrix",
    "write_dataset",
]
