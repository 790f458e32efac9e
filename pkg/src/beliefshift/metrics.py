"""Surprise localization metrics, hypothesis diversity, and rank correlation."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Literal, Sequence

import numpy as np
from scipy.stats import rankdata

from beliefshift.errors import InvalidInputError, InvalidParameterError, ShapeError
from beliefshift.pipeline import FrameManifest, SurpriseTimeline, argmax_surprise

Interval = tuple[float, float]


def normalize_intervals(intervals: Iterable[Sequence[float]]) -> list[Interval]:
    """Sort intervals and merge any that overlap or touch; drop empty ones."""
    spans = sorted((float(a), float(b)) for a, b in intervals if b > a)
    merged: list[list[float]] = []
    for a, b in spans:
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return [(a, b) for a, b in merged]


@dataclass(frozen=True)
class IntervalSet:
    intervals: tuple[Interval, ...] = ()

    def __post_init__(self):
        for a, b in self.intervals:
            if not b > a:
                raise InvalidInputError(f"interval ({a}, {b}) must have start < end")
        object.__setattr__(self, "intervals", tuple(normalize_intervals(self.intervals)))

    @property
    def coverage(self) -> float:
        return sum(b - a for a, b in self.intervals)

    def __iter__(self):
        return iter(self.intervals)

    def __len__(self):
        return len(self.intervals)


def accuracy_at_delta(pred: float, gt: float, delta: float) -> int:
    """1 if the predicted peak lies within ``delta`` seconds of the ground truth."""
    if not delta > 0:
        raise InvalidParameterError(f"delta must be positive, got {delta}")
    return int(abs(pred - gt) <= delta)


def predicted_windows(timeline: SurpriseTimeline, rel_threshold: float = 0.8) -> IntervalSet:
    """Maximal runs of records scoring at least ``rel_threshold * max``.

    Each run spans from the start of its first segment to the end of its
    last. The comparison is inclusive so the peak record is always covered.
    Failed records never belong to a run.
    """
    if not 0 < rel_threshold <= 1:
        raise InvalidParameterError(f"rel_threshold must be in (0, 1], got {rel_threshold}")
    if not len(timeline):
        raise InvalidInputError("timeline is empty")
    scores = timeline.scores
    if np.all(np.isnan(scores)):
        raise InvalidInputError("timeline has no scored records")
    cut = rel_threshold * np.nanmax(scores)
    above = np.where(np.isnan(scores), False, scores >= cut)
    windows = []
    run_start = None
    for rec, hit in zip(timeline.records, above):
        if hit and run_start is None:
            run_start = rec.start
        if hit:
            run_end = rec.end
        elif run_start is not None:
            windows.append((run_start, run_end))
            run_start = None
    if run_start is not None:
        windows.append((run_start, run_end))
    return IntervalSet(tuple(windows))


def _intersection_coverage(a: Sequence[Interval], b: Sequence[Interval]) -> float:
    i = j = 0
    total = 0.0
    while i < len(a) and j < len(b):
        lo = max(a[i][0], b[j][0])
        hi = min(a[i][1], b[j][1])
        if hi > lo:
            total += hi - lo
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return total


def temporal_iou(pred: IntervalSet | Iterable[Interval], gt: IntervalSet | Iterable[Interval]) -> float:
    """Total overlap duration over total covered duration; 0 when both are empty."""
    p = pred if isinstance(pred, IntervalSet) else IntervalSet(tuple(pred))
    g = gt if isinstance(gt, IntervalSet) else IntervalSet(tuple(gt))
    inter = _intersection_coverage(p.intervals, g.intervals)
    union = p.coverage + g.coverage - inter
    if union <= 0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise InvalidInputError("cannot take the cosine of a zero embedding")
    return float(np.dot(u, v) / (nu * nv))


def diversity(hypotheses: Sequence[str], embed: Callable[[str], np.ndarray]) -> float:
    """Mean of ``1 - cos`` over all unordered pairs of hypothesis embeddings, in [0, 1]."""
    if len(hypotheses) < 2:
        raise InvalidInputError("diversity needs at least two hypotheses")
    vecs = [np.asarray(embed(h), dtype=np.float64) for h in hypotheses]
    dists = [1.0 - _cosine(u, v) for u, v in itertools.combinations(vecs, 2)]
    return min(max(float(np.mean(dists)), 0.0), 1.0)


def spearman(a: Sequence[float], b: Sequence[float]) -> float:
    """Spearman rank correlation (Pearson on average-tied ranks).

    Returns NaN when either side is constant.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"need two equal-length 1-d sequences, got {a.shape} and {b.shape}")
    if a.size < 2:
        raise InvalidInputError("spearman needs at least two points")
    ra, rb = rankdata(a), rankdata(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt(np.dot(ra, ra) * np.dot(rb, rb))
    if denom == 0:
        return float("nan")
    return float(np.clip(np.dot(ra, rb) / denom, -1.0, 1.0))


@dataclass(frozen=True)
class GroundTruth:
    """Either a single transition time or a set of surprising windows.

    ``weights`` optionally ranks windows by how surprising they are; without
    it the longest window counts as the most surprising.
    """

    kind: Literal["transition_time", "windows"]
    transition: float | None = None
    windows: tuple[Interval, ...] = ()
    weights: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind == "transition_time":
            if self.transition is None or self.windows:
                raise InvalidInputError("a transition_time annotation needs a transition and no windows")
        elif self.kind == "windows":
            if self.transition is not None or not self.windows:
                raise InvalidInputError("a windows annotation needs windows and no transition")
            wins = sorted((float(a), float(b)) for a, b in self.windows)
            for a, b in wins:
                if not b > a:
                    raise InvalidInputError(f"window ({a}, {b}) must have start < end")
            if any(w2[0] < w1[1] for w1, w2 in zip(wins, wins[1:])):
                raise InvalidInputError("ground-truth windows overlap")
            if self.weights and len(self.weights) != len(self.windows):
                raise ShapeError("one weight per window expected")
        else:
            raise InvalidInputError(f"unknown annotation kind {self.kind!r}")

    def transition_time(self) -> float:
        if self.kind == "transition_time":
            return float(self.transition)
        if self.weights:
            best = int(np.argmax(self.weights))
        else:
            best = int(np.argmax([b - a for a, b in self.windows]))
        a, b = self.windows[best]
        return 0.5 * (a + b)

    def interval_set(self) -> IntervalSet | None:
        return IntervalSet(tuple(self.windows)) if self.kind == "windows" else None

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        try:
            return cls(
                d["kind"],
                None if d.get("transition") is None else float(d["transition"]),
                tuple((float(a), float(b)) for a, b in d.get("windows", [])),
                tuple(float(w) for w in d.get("weights", [])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed annotation: {exc!r}") from exc

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind == "transition_time":
            d["transition"] = self.transition
        else:
            d["windows"] = [list(w) for w in self.windows]
            if self.weights:
                d["weights"] = list(self.weights)
        return d


def load_annotations(path) -> dict[str, GroundTruth]:
    """Read ``{"videos": {video_id: {"kind": ..., ...}}}``."""
    try:
        data = json.loads(Path(path).read_text())
        videos = data["videos"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InvalidInputError(f"malformed annotation file {path}: {exc!r}") from exc
    return {vid: GroundTruth.from_dict(d) for vid, d in videos.items()}


def save_annotations(annotations: dict[str, GroundTruth], path) -> None:
    Path(path).write_text(
        json.dumps({"videos": {k: v.to_dict() for k, v in annotations.items()}}, indent=2, sort_keys=True) + "\n"
    )


def random_baseline(
    video: FrameManifest | float,
    gt: float | GroundTruth,
    delta: float,
    trials: int = 10_000,
    seed: int | None = None,
) -> float:
    """Mean Accuracy@delta of peaks predicted uniformly at random over the video.

    ``video`` is a manifest or just its duration in seconds.
    """
    if trials < 1:
        raise InvalidParameterError(f"trials must be >= 1, got {trials}")
    if not delta > 0:
        raise InvalidParameterError(f"delta must be positive, got {delta}")
    duration = video.duration if isinstance(video, FrameManifest) else float(video)
    if isinstance(gt, GroundTruth):
        gt = gt.transition_time()
    rng = np.random.default_rng(seed)
    preds = rng.uniform(0.0, duration, size=trials)
    return float(np.mean(np.abs(preds - gt) <= delta))


def delta_key(delta: float) -> str:
    return f"acc@{delta:g}s"


def evaluate(
    timelines: Sequence[SurpriseTimeline],
    annotations: dict[str, GroundTruth],
    deltas: Sequence[float] = (0.25, 1.0),
    rel_threshold: float = 0.8,
) -> dict:
    """Per-video and mean Accuracy@delta and temporal IoU.

    IoU is only defined for window annotations. Timelines without a matching
    annotation are listed under ``unmatched`` and skipped.
    """
    per_video: dict[str, dict] = {}
    unmatched = []
    for tl in timelines:
        gt = annotations.get(tl.video_id)
        if gt is None:
            unmatched.append(tl.video_id)
            continue
        pred = argmax_surprise(tl)
        row: dict = {"predicted_time": pred, "transition_time": gt.transition_time()}
        for d in deltas:
            row[delta_key(d)] = accuracy_at_delta(pred, gt.transition_time(), d)
        gt_set = gt.interval_set()
        row["iou"] = None if gt_set is None else temporal_iou(predicted_windows(tl, rel_threshold), gt_set)
        per_video[tl.video_id] = row
    aggregate: dict = {"videos": len(per_video)}
    for key in [delta_key(d) for d in deltas] + ["iou"]:
        vals = [r[key] for r in per_video.values() if r[key] is not None]
        aggregate[key] = float(np.mean(vals)) if vals else None
    return {
        "per_video": per_video,
        "aggregate": aggregate,
        "unmatched": sorted(unmatched),
        "deltas": list(deltas),
        "rel_threshold": rel_threshold,
    }
