"""Belief distributions over textual hypotheses and the divergences between them.

Everything here is a pure function over small float vectors. Probabilities are
returned as float64 numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from beliefshift.errors import InvalidInputError, InvalidParameterError, ShapeError

PRIOR_FLOOR = 1e-12
DEFAULT_TAU = 1.0

DivergenceMode = Literal["kl", "jsd"]
MODES = ("kl", "jsd")


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not np.isfinite(tau) or tau <= 0:
        raise InvalidParameterError(f"temperature must be positive and finite, got {tau}")
    return tau


def _as_vector(values, name: str, min_len: int = 1) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size < min_len:
        raise InvalidInputError(f"{name} needs at least {min_len} entries, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values: {arr.tolist()}")
    return arr


def softmax(logits, tau: float = 1.0) -> np.ndarray:
    """Max-shifted softmax of ``logits / tau``."""
    tau = _check_tau(tau)
    z = _as_vector(logits, "logits") / tau
    z = z - z.max()
    w = np.exp(z)
    return w / w.sum()


def distribution_from_nll(nlls: Sequence[float], tau: float = DEFAULT_TAU) -> np.ndarray:
    """Turn per-hypothesis negative log-likelihoods into a belief distribution.

    Lower NLL means a more plausible hypothesis, so this is a softmax over
    ``-nll / tau``.

    >>> distribution_from_nll([np.log(2), np.log(4), np.log(4)]).round(6).tolist()
    [0.5, 0.25, 0.25]
    """
    nlls = _as_vector(nlls, "nlls", min_len=2)
    return softmax(-nlls, tau)


def distribution_from_yes_probs(yes_probs: Sequence[float]) -> np.ndarray:
    """Normalize per-hypothesis P(yes) answers into a distribution.

    All-zero input (every hypothesis rejected outright) yields the uniform
    distribution.
    """
    p = _as_vector(yes_probs, "yes_probs", min_len=2)
    if np.any(p < 0) or np.any(p > 1):
        raise InvalidInputError(f"yes-probabilities must lie in [0, 1], got {p.tolist()}")
    total = p.sum()
    if total <= 0:
        return np.full(p.size, 1.0 / p.size)
    return p / total


def _pair(post, prior) -> tuple[np.ndarray, np.ndarray]:
    post = _as_vector(post, "post")
    prior = _as_vector(prior, "prior")
    if post.shape != prior.shape:
        raise ShapeError(f"length mismatch: post has {post.size}, prior has {prior.size}")
    return post, prior


def kl_divergence(post, prior) -> float:
    """KL(post || prior) in nats.

    Zero-mass posterior entries contribute nothing; prior entries are floored
    at ``PRIOR_FLOOR`` so a vanished prior cannot divide by zero.
    """
    post, prior = _pair(post, prior)
    mask = post > 0
    p = post[mask]
    q = np.maximum(prior[mask], PRIOR_FLOOR)
    return max(float(np.sum(p * np.log(p / q))), 0.0)


def _kl_base2(p: np.ndarray, m: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log2(p[mask] / m[mask])))


def jsd(post, prior) -> float:
    """Jensen-Shannon divergence with base-2 logs, so the result lies in [0, 1]."""
    post, prior = _pair(post, prior)
    m = 0.5 * (post + prior)
    value = 0.5 * _kl_base2(post, m) + 0.5 * _kl_base2(prior, m)
    return min(max(value, 0.0), 1.0)


def divergence(post, prior, mode: DivergenceMode = "kl") -> float:
    if mode == "kl":
        return kl_divergence(post, prior)
    if mode == "jsd":
        return jsd(post, prior)
    raise InvalidParameterError(f"unknown divergence mode {mode!r}; expected one of {MODES}")


@dataclass(frozen=True)
class SurpriseScore:
    value: float
    mode: DivergenceMode = "kl"

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidParameterError(f"unknown divergence mode {self.mode!r}")
        if not np.isfinite(self.value) or self.value < 0:
            raise InvalidInputError(f"surprise must be finite and >= 0, got {self.value}")
        if self.mode == "jsd" and self.value > 1:
            raise InvalidInputError(f"jsd surprise must be <= 1, got {self.value}")

    def __float__(self):
        return float(self.value)


def surprise(
    prior_nlls: Sequence[float],
    post_nlls: Sequence[float],
    tau: float = DEFAULT_TAU,
    mode: DivergenceMode = "kl",
) -> SurpriseScore:
    """Information gain from prior to posterior, both built from NLLs."""
    prior_nlls = _as_vector(prior_nlls, "prior_nlls", min_len=2)
    post_nlls = _as_vector(post_nlls, "post_nlls", min_len=2)
    if prior_nlls.shape != post_nlls.shape:
        raise ShapeError(
            f"length mismatch: {prior_nlls.size} prior NLLs vs {post_nlls.size} posterior NLLs"
        )
    prior = distribution_from_nll(prior_nlls, tau)
    post = distribution_from_nll(post_nlls, tau)
    return SurpriseScore(divergence(post, prior, mode), mode)


@dataclass(frozen=True)
class BeliefState:
    """Hypotheses at one timestep with their prior and posterior probabilities."""

    hypotheses: tuple[str, ...]
    prior: np.ndarray = field(repr=False)
    posterior: np.ndarray = field(repr=False)
    timestep: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hypotheses", tuple(self.hypotheses))
        prior = np.asarray(self.prior, dtype=np.float64)
        posterior = np.asarray(self.posterior, dtype=np.float64)
        n = len(self.hypotheses)
        if prior.shape != (n,) or posterior.shape != (n,):
            raise ShapeError(
                f"{n} hypotheses but prior has shape {prior.shape}, posterior {posterior.shape}"
            )
        if any(not h.strip() for h in self.hypotheses):
            raise InvalidInputError("hypotheses must be nonempty text")
        for name, dist in (("prior", prior), ("posterior", posterior)):
            if np.any(dist < 0) or np.any(dist > 1) or abs(dist.sum() - 1.0) > 1e-9:
                raise InvalidInputError(f"{name} is not a probability distribution: {dist.tolist()}")
        if self.timestep < 0:
            raise InvalidInputError(f"timestep must be >= 0, got {self.timestep}")
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "posterior", posterior)

    def to_dict(self) -> dict:
        return {
            "timestep": float(self.timestep),
            "hypotheses": list(self.hypotheses),
            "prior": [float(x) for x in self.prior],
            "posterior": [float(x) for x in self.posterior],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BeliefState":
        return cls(d["hypotheses"], d["prior"], d["posterior"], d["timestep"])
