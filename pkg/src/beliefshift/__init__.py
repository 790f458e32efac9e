"""Bayesian surprise over textual belief hypotheses, and surprise-weighted frame sampling."""
from beliefshift.belief import (
    BeliefState,
    SurpriseScore,
    distribution_from_nll,
    distribution_from_yes_probs,
    divergence,
    jsd,
    kl_divergence,
    surprise,
)
from beliefshift.errors import (
    BackendError,
    BeliefShiftError,
    CapabilityError,
    InvalidInputError,
    InvalidParameterError,
    ProtocolError,
    RewardParseError,
    RunError,
    ShapeError,
    TransportError,
)
from beliefshift.memory import RollingMemory, append_and_compress, describe_event
from beliefshift.pipeline import (
    FrameManifest,
    ScoringConfig,
    Segment,
    SurpriseTimeline,
    argmax_surprise,
    budget_for_duration,
    normalize_scores,
    plan_segments,
    score_video,
)
from beliefshift.sampler import SamplingPlan, sample_frames, segment_probabilities, uniform_plan

__version__ = "0.1.0"

__all__ = [
    "BackendError", "BeliefShiftError", "BeliefState", "CapabilityError", "FrameManifest",
    "InvalidInputError", "InvalidParameterError", "ProtocolError", "RewardParseError",
    "RollingMemory", "RunError", "SamplingPlan", "ScoringConfig", "Segment", "ShapeError",
    "SurpriseScore", "SurpriseTimeline", "TransportError", "append_and_compress",
    "argmax_surprise", "budget_for_duration", "describe_event", "distribution_from_nll",
    "distribution_from_yes_probs", "divergence", "jsd", "kl_divergence", "normalize_scores",
    "plan_segments", "sample_frames", "score_video", "segment_probabilities", "surprise",
    "uniform_plan",
]
