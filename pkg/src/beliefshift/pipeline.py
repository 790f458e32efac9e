"""Segment a video, track beliefs per segment, and collect a surprise timeline."""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Literal

import numpy as np

from beliefshift.backends.base import Backend, Context, FrameRef, GenerationParams, map_bounded
from beliefshift.belief import (
    DEFAULT_TAU,
    MODES,
    BeliefState,
    SurpriseScore,
    distribution_from_nll,
    distribution_from_yes_probs,
    divergence,
)
from beliefshift.errors import BackendError, InvalidInputError, InvalidParameterError, RunError
from beliefshift.memory import DEFAULT_WORD_BUDGET, RollingMemory, append_and_compress, describe_event

logger = logging.getLogger(__name__)

BASE_BUDGET = 8
BASE_BUDGET_SECONDS = 60.0


def dump_json(obj, path) -> None:
    """Write JSON deterministically so reruns are byte-identical."""
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def fingerprint_of(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


@dataclass(frozen=True)
class FrameManifest:
    """Ordered frames of one video. A frame's index is its position in ``frames``."""

    video_id: str
    fps: float
    duration: float
    frames: tuple[FrameRef, ...]
    reference_caption: str = ""

    def __post_init__(self):
        frames = tuple(
            f if f.index == i else FrameRef(i, f.timestamp, f.uri) for i, f in enumerate(self.frames)
        )
        object.__setattr__(self, "frames", frames)
        if not frames:
            raise InvalidInputError(f"manifest {self.video_id!r} has no frames")
        if not self.fps > 0:
            raise InvalidInputError(f"fps must be positive, got {self.fps}")
        ts = np.array([f.timestamp for f in frames])
        if ts[0] < 0 or np.any(np.diff(ts) <= 0):
            raise InvalidInputError("frame timestamps must be >= 0 and strictly increasing")
        if self.duration < ts[-1] or self.duration <= 0:
            raise InvalidInputError(
                f"duration {self.duration} must be positive and cover the last frame at {ts[-1]}"
            )

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([f.timestamp for f in self.frames])

    def index_at(self, t: float) -> int:
        """Nearest frame to time ``t``, clamped to the manifest; ties go to the earlier frame."""
        ts = self.timestamps
        j = int(np.searchsorted(ts, t))
        if j <= 0:
            return 0
        if j >= len(ts):
            return len(ts) - 1
        return j - 1 if t - ts[j - 1] <= ts[j] - t else j

    @classmethod
    def synthetic(cls, video_id: str, duration: float, fps: float, reference_caption: str = "") -> "FrameManifest":
        """Dense manifest with a frame every ``1/fps`` seconds from 0 to ``duration``."""
        n = int(math.floor(duration * fps + 1e-9)) + 1
        frames = tuple(FrameRef(i, i / fps, f"frame://{video_id}/{i:06d}") for i in range(n))
        return cls(video_id, fps, duration, frames, reference_caption)

    def to_dict(self) -> dict:
        d = {
            "video_id": self.video_id,
            "fps": self.fps,
            "duration": self.duration,
            "frames": [{"timestamp": f.timestamp, "uri": f.uri} for f in self.frames],
        }
        if self.reference_caption:
            d["reference_caption"] = self.reference_caption
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FrameManifest":
        try:
            frames = tuple(
                FrameRef(i, float(f["timestamp"]), str(f["uri"])) for i, f in enumerate(d["frames"])
            )
            return cls(
                str(d["video_id"]), float(d["fps"]), float(d["duration"]), frames, d.get("reference_caption", "")
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed manifest: {exc!r}") from exc

    def save(self, path) -> None:
        dump_json(self.to_dict(), path)

    @classmethod
    def load(cls, path) -> "FrameManifest":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"manifest {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)


@dataclass(frozen=True)
class Segment:
    index: int
    start: float
    end: float
    observed: FrameRef

    @property
    def observed_timestep(self) -> float:
        return self.observed.timestamp


@dataclass(frozen=True)
class ScoringConfig:
    window: int = 4
    n_hypotheses: int = 3
    tau: float = DEFAULT_TAU
    mode: Literal["kl", "jsd"] = "kl"
    posterior_mode: Literal["nll", "yes-prob"] = "nll"
    segments: int | None = None
    seed: int = 0
    nucleus_p: float = 0.9
    max_words: int = 10
    use_memory: bool = True
    word_budget: int = DEFAULT_WORD_BUDGET
    max_budget: int | None = None
    max_failure_fraction: float = 0.5
    max_in_flight: int = 4

    def __post_init__(self):
        if self.window < 1:
            raise InvalidParameterError(f"window must be >= 1, got {self.window}")
        if self.n_hypotheses < 2:
            raise InvalidParameterError(f"n_hypotheses must be >= 2, got {self.n_hypotheses}")
        if not self.tau > 0:
            raise InvalidParameterError(f"tau must be positive, got {self.tau}")
        if self.mode not in MODES:
            raise InvalidParameterError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.posterior_mode not in ("nll", "yes-prob"):
            raise InvalidParameterError(f"posterior_mode must be 'nll' or 'yes-prob', got {self.posterior_mode!r}")
        if self.segments is not None and self.segments < 2:
            raise InvalidParameterError(f"segments must be >= 2, got {self.segments}")

    def fingerprint(self) -> str:
        # concurrency does not change results, so it stays out of the hash
        d = asdict(self)
        d.pop("max_in_flight")
        return fingerprint_of(d)

    @classmethod
    def from_dict(cls, d: dict) -> "ScoringConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidParameterError(f"unknown scoring options: {sorted(unknown)}")
        return cls(**d)


def budget_for_duration(duration: float, cap: int | None = None) -> int:
    """Frame budget for scoring: 8 frames up to a minute, doubling per extra (partial) minute.

    >>> [budget_for_duration(d) for d in (30, 60, 61, 121)]
    [8, 8, 16, 32]
    """
    if not duration > 0:
        raise InvalidInputError(f"duration must be positive, got {duration}")
    extra_minutes = max(0, math.ceil((duration - BASE_BUDGET_SECONDS) / BASE_BUDGET_SECONDS))
    budget = BASE_BUDGET * 2**extra_minutes
    return min(budget, cap) if cap is not None else budget


def plan_segments(manifest: FrameManifest, k: int) -> list[Segment]:
    """Split ``[0, duration]`` into ``k`` equal segments.

    Each segment is observed at the manifest frame nearest its end; observed
    frames are kept strictly increasing so no two segments share one.
    """
    n = len(manifest)
    if k < 2:
        raise InvalidParameterError(f"need at least 2 segments, got {k}")
    if k > n:
        raise InvalidParameterError(f"{k} segments requested but manifest has only {n} frames")
    d = manifest.duration
    edges = [d * i / k for i in range(k + 1)]
    edges[-1] = d
    segments = []
    prev = -1
    for i in range(k):
        idx = manifest.index_at(edges[i + 1])
        idx = min(max(idx, prev + 1), n - (k - i))
        segments.append(Segment(i, edges[i], edges[i + 1], manifest.frames[idx]))
        prev = idx
    return segments


@dataclass
class TimelineRecord:
    index: int
    start: float
    end: float
    timestep: float
    score: SurpriseScore | None = None
    belief: BeliefState | None = None
    prior_nlls: list[float] = field(default_factory=list)
    posterior_evidence: list[float] = field(default_factory=list)
    memory: str = ""
    caption: str = ""
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.score is None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "start": self.start,
            "end": self.end,
            "timestep": self.timestep,
            "score": None if self.score is None else self.score.value,
            "mode": None if self.score is None else self.score.mode,
            "belief": None if self.belief is None else self.belief.to_dict(),
            "prior_nlls": [float(x) for x in self.prior_nlls],
            "posterior_evidence": [float(x) for x in self.posterior_evidence],
            "memory": self.memory,
            "caption": self.caption,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TimelineRecord":
        score = None if d.get("score") is None else SurpriseScore(d["score"], d.get("mode", "kl"))
        belief = None if d.get("belief") is None else BeliefState.from_dict(d["belief"])
        return cls(
            d["index"], d["start"], d["end"], d["timestep"], score, belief,
            d.get("prior_nlls", []), d.get("posterior_evidence", []),
            d.get("memory", ""), d.get("caption", ""), d.get("error"),
        )


@dataclass
class SurpriseTimeline:
    video_id: str
    records: list[TimelineRecord]
    fingerprint: str = ""
    duration: float = 0.0
    config: dict = field(default_factory=dict)
    fps: float = 0.0

    def __post_init__(self):
        ts = [r.timestep for r in self.records]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise InvalidInputError("timeline timesteps must be strictly increasing")
        if not self.duration and self.records:
            self.duration = self.records[-1].end

    def __len__(self) -> int:
        return len(self.records)

    @property
    def timesteps(self) -> np.ndarray:
        return np.array([r.timestep for r in self.records])

    @property
    def scores(self) -> np.ndarray:
        """Raw surprise per record; NaN where the segment failed."""
        return np.array([np.nan if r.failed else r.score.value for r in self.records])

    @property
    def mode(self) -> str | None:
        modes = {r.score.mode for r in self.records if not r.failed}
        return modes.pop() if len(modes) == 1 else None

    def segments(self, manifest: FrameManifest | None = None) -> list[Segment]:
        """Segments the records were scored on (observed frames resolved via ``manifest`` if given)."""
        out = []
        for r in self.records:
            if manifest is not None:
                observed = manifest.frames[manifest.index_at(r.timestep)]
            else:
                observed = FrameRef(-1, r.timestep, "")
            out.append(Segment(r.index, r.start, r.end, observed))
        return out

    def to_dict(self) -> dict:
        return {
            "video_id": self.video_id,
            "fingerprint": self.fingerprint,
            "duration": self.duration,
            "config": self.config,
            "fps": self.fps,
            "records": [r.to_dict() for r in self.records],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SurpriseTimeline":
        try:
            return cls(
                d["video_id"],
                [TimelineRecord.from_dict(r) for r in d["records"]],
                d.get("fingerprint", ""),
                d.get("duration", 0.0),
                d.get("config", {}),
                d.get("fps", 0.0),
            )
        except (KeyError, TypeError) as exc:
            raise InvalidInputError(f"malformed timeline: {exc!r}") from exc

    def save(self, path) -> None:
        dump_json(self.to_dict(), path)

    @classmethod
    def load(cls, path) -> "SurpriseTimeline":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"timeline {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def plot_rows(self) -> list[tuple[float, float]]:
        return [(r.timestep, r.score.value) for r in self.records if not r.failed]


def step_seed(seed: int, step: int) -> int:
    return int(np.random.SeedSequence([seed, step]).generate_state(1)[0])


def _score_segment(
    seg: Segment, manifest: FrameManifest, cfg: ScoringConfig, backend: Backend, history: str
) -> TimelineRecord:
    idx = seg.observed.index
    window = manifest.frames[max(0, idx - cfg.window):idx]
    prior_ctx = Context(history, window, None)
    post_ctx = Context(history, window, seg.observed)
    record = TimelineRecord(seg.index, seg.start, seg.end, seg.observed_timestep, memory=history)

    params = GenerationParams(cfg.n_hypotheses, cfg.nucleus_p, cfg.max_words, step_seed(cfg.seed, seg.index))
    hyps = backend.generate_hypotheses(prior_ctx, params)
    if len(hyps) != cfg.n_hypotheses:
        raise BackendError(f"backend returned {len(hyps)} hypotheses, expected {cfg.n_hypotheses}")
    prior_nlls = map_bounded(lambda h: backend.score_nll(h, prior_ctx), hyps, cfg.max_in_flight)
    prior = distribution_from_nll(prior_nlls, cfg.tau)
    if cfg.posterior_mode == "nll":
        evidence = map_bounded(lambda h: backend.score_nll(h, post_ctx), hyps, cfg.max_in_flight)
        post = distribution_from_nll(evidence, cfg.tau)
    else:
        evidence = map_bounded(lambda h: backend.score_posterior_yes(h, post_ctx), hyps, cfg.max_in_flight)
        post = distribution_from_yes_probs(evidence)

    record.prior_nlls = [float(x) for x in prior_nlls]
    record.posterior_evidence = [float(x) for x in evidence]
    record.belief = BeliefState(hyps, prior, post, seg.observed_timestep)
    record.score = SurpriseScore(divergence(post, prior, cfg.mode), cfg.mode)
    if cfg.use_memory:
        record.caption = describe_event(post_ctx, backend)
    return record


def score_video(
    manifest: FrameManifest,
    cfg: ScoringConfig,
    backend: Backend,
    mem: RollingMemory | None = None,
) -> SurpriseTimeline:
    """Run belief tracking over every segment of ``manifest``.

    With ``cfg.use_memory`` the segments run in order and each step's event
    caption is folded into the rolling memory used by the next step. Without
    it the history is empty and segments are scored concurrently.

    A segment whose backend calls fail is kept as a failed record; the run
    aborts with :class:`RunError` once more than ``max_failure_fraction`` of
    the segments have failed.
    """
    k = cfg.segments
    if k is None:
        k = max(2, min(budget_for_duration(manifest.duration, cfg.max_budget), len(manifest)))
    segments = plan_segments(manifest, k)

    def run(seg: Segment, history: str) -> TimelineRecord:
        try:
            return _score_segment(seg, manifest, cfg, backend, history)
        except BackendError as exc:
            logger.warning("segment %d of %s failed: %s", seg.index, manifest.video_id, exc)
            return TimelineRecord(
                seg.index, seg.start, seg.end, seg.observed_timestep, memory=history,
                error=f"{type(exc).__name__}: {exc}",
            )

    if cfg.use_memory:
        mem = mem or RollingMemory(word_budget=cfg.word_budget)
        records = []
        for seg in segments:
            rec = run(seg, mem.text)
            if not rec.failed:
                mem = append_and_compress(mem, rec.caption, backend.summarize)
            records.append(rec)
    else:
        records = map_bounded(lambda s: run(s, ""), segments, cfg.max_in_flight)

    failures = sum(r.failed for r in records)
    if failures > cfg.max_failure_fraction * len(records):
        raise RunError(f"{failures}/{len(records)} segments of {manifest.video_id} failed")
    return SurpriseTimeline(
        manifest.video_id, records, cfg.fingerprint(), manifest.duration,
        {k: v for k, v in asdict(cfg).items() if k != "max_in_flight"},
        manifest.fps,
    )


def normalize_scores(timeline: SurpriseTimeline, method: Literal["none", "minmax"] = "none") -> np.ndarray:
    """Scores ready for segment weighting.

    ``none`` passes scores through (JSD scores already lie in [0, 1]);
    ``minmax`` maps the smallest score to 0 and the largest to 1, and a
    constant timeline to 0.5 everywhere. Failed records take the smallest
    valid score.
    """
    if not len(timeline):
        raise InvalidInputError("timeline is empty")
    raw = timeline.scores
    valid = ~np.isnan(raw)
    if not valid.any():
        raise InvalidInputError("every record in the timeline failed")
    raw = np.where(valid, raw, raw[valid].min())
    if method == "none":
        return raw
    if method != "minmax":
        raise InvalidParameterError(f"unknown normalization {method!r}")
    lo, hi = raw.min(), raw.max()
    if hi - lo <= 1e-12:
        return np.full(raw.size, 0.5)
    return (raw - lo) / (hi - lo)


def argmax_surprise(timeline: SurpriseTimeline) -> float:
    """Timestep of the most surprising record; ties go to the earliest."""
    scores = timeline.scores
    if np.all(np.isnan(scores)):
        raise InvalidInputError("timeline has no scored records")
    return float(timeline.timesteps[int(np.nanargmax(scores))])
