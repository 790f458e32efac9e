"""Group-relative rollouts over belief trajectories: rewards, advantages, loss value.

Nothing here updates model parameters. A rollout group is M independent
scoring runs over the same video; each run's surprise drives its own frame
sample and final caption, a judge scores the caption, and the rewards are
standardized within the group to give advantages. :func:`belief_loss` is the
scalar objective a trainer would differentiate.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from beliefshift.backends.base import Backend, map_bounded
from beliefshift.errors import InvalidInputError, InvalidParameterError, RewardParseError, RunError
from beliefshift.pipeline import (
    FrameManifest,
    ScoringConfig,
    SurpriseTimeline,
    budget_for_duration,
    fingerprint_of,
    normalize_scores,
    score_video,
    step_seed,
)
from beliefshift.sampler import DEFAULT_TAU_S, SamplingPlan, sample_frames, segment_probabilities

ADVANTAGE_EPS = 1e-8
_NUMBER = re.compile(r"\d+(?:\.\d+)?|\.\d+")


@dataclass
class Trajectory:
    seed: int
    timeline: SurpriseTimeline
    plan: SamplingPlan
    caption: str
    hypothesis_logprobs: list[list[float]]

    def __post_init__(self):
        if len(self.hypothesis_logprobs) != len(self.timeline.records):
            raise InvalidInputError("one row of hypothesis log-probabilities per timestep expected")
        for rec, row in zip(self.timeline.records, self.hypothesis_logprobs):
            if rec.belief is None or len(row) != len(rec.belief.hypotheses):
                raise InvalidInputError(f"log-probability row {rec.index} does not match its hypotheses")
            if any(lp > 0 for lp in row):
                raise InvalidInputError("log-probabilities must be <= 0")

    @property
    def surprise_scores(self) -> list[float]:
        return [float(s) for s in self.timeline.scores]

    @property
    def belief_sets(self):
        return [r.belief for r in self.timeline.records]

    @property
    def logprob_sum(self) -> float:
        return float(sum(sum(row) for row in self.hypothesis_logprobs))


@dataclass
class RolloutGroup:
    video_id: str
    trajectories: list[Trajectory]
    rewards: list[float] | None = None
    advantages: list[float] | None = None
    judge_outputs: list[str] = field(default_factory=list)
    reference: str = ""
    fingerprint: str = ""

    def __post_init__(self):
        m = len(self.trajectories)
        if m < 2:
            raise InvalidParameterError(f"a rollout group needs at least 2 trajectories, got {m}")
        for name in ("rewards", "advantages"):
            vals = getattr(self, name)
            if vals is not None and len(vals) != m:
                raise InvalidInputError(f"{len(vals)} {name} for {m} trajectories")

    def to_dict(self, loss: float | None = None) -> dict:
        rows = []
        for i, tr in enumerate(self.trajectories):
            rows.append({
                "seed": tr.seed,
                "caption": tr.caption,
                "judge_output": self.judge_outputs[i] if self.judge_outputs else None,
                "reward": None if self.rewards is None else self.rewards[i],
                "advantage": None if self.advantages is None else self.advantages[i],
                "logprob_sum": tr.logprob_sum,
                "surprise_scores": tr.surprise_scores,
                "frame_indices": tr.plan.frame_indices,
                "per_segment_counts": {str(k): v for k, v in sorted(tr.plan.per_segment_counts.items())},
                "timeline_fingerprint": tr.timeline.fingerprint,
            })
        return {
            "video_id": self.video_id,
            "fingerprint": self.fingerprint,
            "reference": self.reference,
            "loss": loss,
            "trajectories": rows,
        }


def parse_reward(judge_output: str) -> float:
    """First number in the judge's reply that lies in [0, 1].

    >>> parse_reward("Score: 0.9")
    0.9
    """
    for match in _NUMBER.findall(judge_output or ""):
        value = float(match)
        if 0.0 <= value <= 1.0:
            return value
    raise RewardParseError(f"no score in [0, 1] found in judge output {judge_output!r}", judge_output)


def normalize_advantages(rewards: Sequence[float], eps: float = ADVANTAGE_EPS) -> list[float]:
    """Z-score rewards within the group using the population standard deviation."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise InvalidInputError("advantages need at least two rewards")
    if r.max() == r.min():
        # no signal in the group; avoid rounding residue from the mean
        return [0.0] * r.size
    std = max(float(r.std()), eps)
    return ((r - r.mean()) / std).tolist()


def belief_loss_value(advantages: Sequence[float], logprob_sums: Sequence[float]) -> float:
    """``-(1/M) * sum_r A_r * L_r`` where ``L_r`` is trajectory r's total hypothesis log-probability."""
    a = np.asarray(advantages, dtype=np.float64)
    s = np.asarray(logprob_sums, dtype=np.float64)
    if a.shape != s.shape or a.ndim != 1 or a.size == 0:
        raise InvalidInputError("advantages and log-probability sums must be aligned 1-d sequences")
    return float(-np.dot(a, s) / a.size)


def belief_loss(group: RolloutGroup) -> float:
    if group.advantages is None:
        raise InvalidInputError("group has no advantages yet; score it first")
    return belief_loss_value(group.advantages, [t.logprob_sum for t in group.trajectories])


def run_trajectory(
    manifest: FrameManifest,
    cfg: ScoringConfig,
    backend: Backend,
    seed: int,
    budget: int,
    tau_s: float = DEFAULT_TAU_S,
    normalization: str | None = None,
) -> Trajectory:
    cfg = replace(cfg, seed=seed)
    timeline = score_video(manifest, cfg, backend)
    failed = [r.index for r in timeline.records if r.failed]
    if failed:
        raise RunError(f"trajectory with seed {seed} has failed segments {failed}")
    method = normalization or ("none" if cfg.mode == "jsd" else "minmax")
    probs = segment_probabilities(normalize_scores(timeline, method), tau_s)
    plan = sample_frames(probs, timeline.segments(manifest), manifest, budget, seed)
    plan.timeline_fingerprint = timeline.fingerprint
    caption = backend.caption_video([manifest.frames[i] for i in plan.frame_indices])
    # the policy's log-probability of each hypothesis is minus its prior NLL
    logprobs = [[-x for x in rec.prior_nlls] for rec in timeline.records]
    return Trajectory(seed, timeline, plan, caption, logprobs)


def run_rollout(
    manifest: FrameManifest,
    cfg: ScoringConfig,
    backend: Backend,
    m: int = 3,
    seed: int = 42,
    budget: int | None = None,
    tau_s: float = DEFAULT_TAU_S,
    normalization: str | None = None,
    max_workers: int = 1,
) -> RolloutGroup:
    """Draw ``m`` trajectories with distinct derived seeds. Rewards are left unset."""
    if m < 2:
        raise InvalidParameterError(f"a rollout group needs m >= 2 trajectories, got {m}")
    budget = budget or budget_for_duration(manifest.duration)
    seeds = [step_seed(seed, r) for r in range(m)]
    trajectories = map_bounded(
        lambda s: run_trajectory(manifest, cfg, backend, s, budget, tau_s, normalization), seeds, max_workers
    )
    fp = fingerprint_of({
        "scoring": cfg.fingerprint(), "m": m, "seed": seed, "budget": budget,
        "tau_s": tau_s, "normalization": normalization,
    })
    return RolloutGroup(manifest.video_id, trajectories, fingerprint=fp)


def score_group(group: RolloutGroup, backend: Backend, reference: str) -> RolloutGroup:
    """Judge every caption against ``reference`` and attach rewards and advantages."""
    if not reference.strip():
        raise InvalidInputError("a reference caption is needed to compute rewards")
    outputs = [backend.judge(reference, t.caption) for t in group.trajectories]
    rewards = [parse_reward(o) for o in outputs]
    return replace(
        group,
        rewards=rewards,
        advantages=normalize_advantages(rewards),
        judge_outputs=outputs,
        reference=reference,
    )
