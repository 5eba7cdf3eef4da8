"""Elastic-Sketch simulation, limiting-error analysis and threshold tuning."""

__version__ = "0.1.0"

from .analysis import (  # noqa: E402
    BucketClass,
    ElectionProfile,
    classify_buckets,
    election_probs,
    expected_limiting_error,
    g_beta,
    g_value,
    phi,
    root_r,
    weight_w,
)
from .sketch_core import ElasticSketch, SketchConfig  # noqa: E402
from .stream_model import (  # noqa: E402
    ArrivalDistribution,
    BucketAssignment,
    StreamSpec,
    assign_buckets,
    make_uniform,
    make_zipf,
    sample_stream,
)
from .tuning import (  # noqa: E402
    candidate_set,
    grid_search,
    hp_bound,
    lambda_hat_star,
    lambda_star,
    lambda_star_uniform,
)

__all__ = [
    "ArrivalDistribution", "BucketAssignment", "BucketClass", "ElasticSketch",
    "ElectionProfile", "SketchConfig", "StreamSpec", "assign_buckets", "candidate_set",
    "classify_buckets", "election_probs", "expected_limiting_error", "g_beta", "g_value",
    "grid_search", "hp_bound", "lambda_hat_star", "lambda_star", "lambda_star_uniform",
    "make_uniform", "make_zipf", "phi", "root_r", "sample_stream", "weight_w",
]
