"""Turn per-segment surprise into a frame sampling plan under a fixed budget."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from beliefshift.belief import softmax
from beliefshift.errors import InvalidInputError, InvalidParameterError, ShapeError
from beliefshift.pipeline import FrameManifest, Segment, dump_json

DEFAULT_TAU_S = 0.7
EQUAL_SCORE_TOL = 1e-12


@dataclass
class SamplingPlan:
    frame_indices: list[int]
    per_segment_counts: dict[int, int]
    seed: int | None = None
    timeline_fingerprint: str = ""
    probabilities: list[float] = field(default_factory=list)

    def __post_init__(self):
        if sum(self.per_segment_counts.values()) != len(self.frame_indices):
            raise InvalidInputError("per-segment counts do not add up to the number of frames")

    @property
    def budget(self) -> int:
        return len(self.frame_indices)

    def to_dict(self) -> dict:
        return {
            "frame_indices": [int(i) for i in self.frame_indices],
            "per_segment_counts": {str(k): int(v) for k, v in sorted(self.per_segment_counts.items())},
            "seed": self.seed,
            "timeline_fingerprint": self.timeline_fingerprint,
            "probabilities": [float(p) for p in self.probabilities],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingPlan":
        return cls(
            [int(i) for i in d["frame_indices"]],
            {int(k): int(v) for k, v in d["per_segment_counts"].items()},
            d.get("seed"),
            d.get("timeline_fingerprint", ""),
            list(d.get("probabilities", [])),
        )

    def save(self, path) -> None:
        dump_json(self.to_dict(), path)

    @classmethod
    def load(cls, path) -> "SamplingPlan":
        return cls.from_dict(json.loads(Path(path).read_text()))


def segment_probabilities(scores: Sequence[float], tau_s: float = DEFAULT_TAU_S) -> np.ndarray:
    """Softmax of ``scores / tau_s``; exactly uniform when all scores are equal.

    A small ``tau_s`` concentrates the budget on surprising segments, a large
    one spreads it out.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise InvalidInputError("need a nonempty 1-d sequence of scores")
    if not tau_s > 0:
        raise InvalidParameterError(f"tau_s must be positive, got {tau_s}")
    if s.max() - s.min() <= EQUAL_SCORE_TOL:
        return np.full(s.size, 1.0 / s.size)
    return softmax(s, tau_s)


def sample_frames(
    probs: Sequence[float],
    segments: Sequence[Segment],
    manifest: FrameManifest,
    budget: int,
    seed: int | np.random.Generator | None = None,
    distinct: bool = False,
    max_redraws: int = 10_000,
) -> SamplingPlan:
    """Draw ``budget`` frames: pick a segment by ``probs``, then a uniform time inside it.

    Draws are independent and with replacement, so a surprising segment can
    contribute several frames and the same frame can be drawn twice. With
    ``distinct=True`` repeated frames are redrawn instead (which needs
    ``budget <= len(manifest)``).
    """
    if len(manifest) == 0:
        raise InvalidInputError("manifest has no frames")
    if budget < 1:
        raise InvalidParameterError(f"budget must be >= 1, got {budget}")
    p = np.asarray(probs, dtype=np.float64)
    if p.shape != (len(segments),):
        raise ShapeError(f"{p.size} probabilities for {len(segments)} segments")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise InvalidInputError("segment probabilities must be non-negative and sum to 1")
    if distinct and budget > len(manifest):
        raise InvalidParameterError(f"cannot draw {budget} distinct frames from {len(manifest)}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    starts = np.array([s.start for s in segments])
    ends = np.array([s.end for s in segments])

    def draw(n):
        seg = rng.choice(len(segments), size=n, p=p)
        t = rng.uniform(starts[seg], ends[seg])
        return seg, _nearest_indices(manifest, t)

    seg_ids, idx = draw(budget)
    if distinct:
        seg_ids, idx = list(seg_ids), list(idx)
        seen: set[int] = set()
        redraws = 0
        for j in range(budget):
            while idx[j] in seen:
                redraws += 1
                if redraws > max_redraws:
                    raise InvalidParameterError("could not find enough distinct frames; lower the budget")
                s, i = draw(1)
                seg_ids[j], idx[j] = int(s[0]), int(i[0])
            seen.add(idx[j])
    counts = {s.index: 0 for s in segments}
    for pos in seg_ids:
        counts[segments[int(pos)].index] += 1
    order = np.argsort(idx, kind="stable")
    return SamplingPlan(
        [int(idx[i]) for i in order],
        counts,
        seed if isinstance(seed, int) else None,
        probabilities=[float(x) for x in p],
    )


def _nearest_indices(manifest: FrameManifest, times: np.ndarray) -> np.ndarray:
    ts = manifest.timestamps
    if len(ts) == 1:
        return np.zeros(len(times), dtype=int)
    j = np.clip(np.searchsorted(ts, times), 1, len(ts) - 1)
    left, right = ts[j - 1], ts[j]
    pick_left = (times - left) <= (right - times)
    return np.where(pick_left, j - 1, j).astype(int)


def uniform_plan(manifest: FrameManifest, budget: int, segments: Sequence[Segment] | None = None) -> SamplingPlan:
    """Evenly spaced frames at the midpoints of ``budget`` equal index bins.

    If ``segments`` are given the plan also reports how many frames land in
    each of them.
    """
    n = len(manifest)
    if n == 0:
        raise InvalidInputError("manifest has no frames")
    if not 1 <= budget <= n:
        raise InvalidParameterError(f"budget must be in 1..{n}, got {budget}")
    idx = [int(math.floor((i + 0.5) * n / budget)) for i in range(budget)]
    counts: dict[int, int] = {}
    if segments is not None:
        counts = {s.index: 0 for s in segments}
        for i in idx:
            counts[segment_of(manifest.frames[i].timestamp, segments).index] += 1
    else:
        counts = {0: budget}
    return SamplingPlan(idx, counts)


def segment_of(t: float, segments: Sequence[Segment]) -> Segment:
    """Segment containing time ``t`` (segments are half-open except the last)."""
    for seg in segments:
        if seg.start <= t < seg.end:
            return seg
    return segments[-1] if t >= segments[-1].start else segments[0]


def expected_counts(probs: Sequence[float], budget: int) -> np.ndarray:
    """Expected frames per segment under surprise-weighted sampling."""
    return budget * np.asarray(probs, dtype=np.float64)

