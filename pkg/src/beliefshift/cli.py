"""Command-line entry point: ``beliefshift {score,sample,eval,rollout,manifest}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from beliefshift.backends import RemoteBackend, RemoteConfig, ScriptedBackend, WorldScript
from beliefshift.errors import (
    BeliefShiftError,
    InvalidInputError,
    InvalidParameterError,
    RewardParseError,
    ShapeError,
)
from beliefshift.grpo import belief_loss, run_rollout, score_group
from beliefshift.metrics import evaluate, load_annotations
from beliefshift.pipeline import (
    FrameManifest,
    ScoringConfig,
    SurpriseTimeline,
    budget_for_duration,
    dump_json,
    fingerprint_of,
    normalize_scores,
    score_video,
)
from beliefshift.sampler import DEFAULT_TAU_S, sample_frames, segment_probabilities

logger = logging.getLogger("beliefshift")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(BeliefShiftError):
    pass


@dataclass
class RunConfig:
    """Everything a run depends on, loaded from a JSON config file.

    ``backend`` is ``{"kind": "scripted", "world": "<path>"}`` or
    ``{"kind": "remote", "endpoint": ..., "model": ..., "token_env": ...}``;
    relative paths resolve against the config file's directory.
    """

    backend: dict = field(default_factory=lambda: {"kind": "scripted"})
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    tau_s: float = DEFAULT_TAU_S
    budget: int | None = None
    normalization: str | None = None
    deltas: tuple[float, ...] = (0.25, 1.0)
    rel_threshold: float = 0.8
    output_dir: Path = Path("out")
    base_dir: Path = Path(".")

    def __post_init__(self):
        kind = self.backend.get("kind")
        if kind == "scripted":
            if "world" not in self.backend:
                raise InvalidParameterError("scripted backend needs a 'world' script path")
        elif kind == "remote":
            for key in ("endpoint", "model"):
                if key not in self.backend:
                    raise InvalidParameterError(f"remote backend needs {key!r}")
        else:
            raise InvalidParameterError(f"unknown backend kind {kind!r}")
        if not self.tau_s > 0:
            raise InvalidParameterError(f"tau_s must be positive, got {self.tau_s}")
        if self.budget is not None and self.budget < 1:
            raise InvalidParameterError(f"budget must be >= 1, got {self.budget}")
        if self.normalization not in (None, "none", "minmax"):
            raise InvalidParameterError(f"normalization must be 'none' or 'minmax', got {self.normalization!r}")
        if not 0 < self.rel_threshold <= 1:
            raise InvalidParameterError(f"rel_threshold must be in (0, 1], got {self.rel_threshold}")

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        data = _read_json(path)
        sampler = data.get("sampler", {})
        ev = data.get("eval", {})
        return cls(
            backend=dict(data.get("backend", {"kind": "scripted"})),
            scoring=ScoringConfig.from_dict(data.get("scoring", {})),
            tau_s=float(sampler.get("tau_s", DEFAULT_TAU_S)),
            budget=sampler.get("budget"),
            normalization=sampler.get("normalization"),
            deltas=tuple(ev.get("deltas", (0.25, 1.0))),
            rel_threshold=float(ev.get("rel_threshold", 0.8)),
            output_dir=Path(data.get("output_dir", "out")),
            base_dir=path.parent,
        )

    def world_path(self) -> Path:
        p = Path(self.backend["world"])
        return p if p.is_absolute() else self.base_dir / p

    def fingerprint(self) -> str:
        backend = {k: v for k, v in self.backend.items() if k not in ("token_env", "world")}
        if backend["kind"] == "scripted":
            backend["world"] = fingerprint_of(_read_json(self.world_path()))
        return fingerprint_of({
            "backend": backend,
            "scoring": self.scoring.fingerprint(),
            "tau_s": self.tau_s,
            "budget": self.budget,
            "normalization": self.normalization,
        })

    def make_backend(self):
        if self.backend["kind"] == "scripted":
            return ScriptedBackend(WorldScript.load(_existing(self.world_path())))
        return RemoteBackend(RemoteConfig.from_dict(self.backend), window_size=self.scoring.window)


def _existing(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"no such file: {path}")
    return path


def _read_json(path) -> dict:
    path = _existing(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path} is not valid JSON: {exc}") from exc


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    overrides = {}
    for name in ("segments", "mode", "posterior_mode", "tau", "window", "seed"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "hypotheses", None) is not None:
        overrides["n_hypotheses"] = args.hypotheses
    if getattr(args, "no_memory", False):
        overrides["use_memory"] = False
    if overrides:
        cfg.scoring = replace(cfg.scoring, **overrides)
    if getattr(args, "out", None):
        cfg.output_dir = Path(args.out)
    return cfg


def write_plot_data(timeline: SurpriseTimeline, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "score"])
        for t, s in timeline.plot_rows():
            w.writerow([repr(float(t)), repr(float(s))])


def cmd_score(args) -> int:
    cfg = _load_config(args)
    manifests = [FrameManifest.load(_existing(p)) for p in args.manifests]
    backend = cfg.make_backend()
    fp = cfg.fingerprint()
    cfg.output_dir.mkdir(parents=True, exist_ok=True)

    def one(manifest: FrameManifest) -> Path:
        timeline = score_video(manifest, cfg.scoring, backend)
        timeline.fingerprint = fp
        stem = cfg.output_dir / f"{manifest.video_id}.{fp}"
        timeline.save(f"{stem}.timeline.json")
        write_plot_data(timeline, f"{stem}.surprise.csv")
        return Path(f"{stem}.timeline.json")

    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        for path in pool.map(one, manifests):
            print(path)
    return EXIT_OK


def cmd_sample(args) -> int:
    if args.budget is not None and args.budget < 1:
        raise UsageError(f"--budget must be >= 1, got {args.budget}")
    timeline = SurpriseTimeline.load(_existing(args.timeline))
    if args.manifest:
        manifest = FrameManifest.load(_existing(args.manifest))
    elif timeline.fps > 0:
        manifest = FrameManifest.synthetic(timeline.video_id, timeline.duration, timeline.fps)
    else:
        raise UsageError("timeline records no fps; pass --manifest")
    budget = args.budget or budget_for_duration(timeline.duration)
    method = args.normalization or ("none" if timeline.mode == "jsd" else "minmax")
    probs = segment_probabilities(normalize_scores(timeline, method), args.tau_s)
    plan = sample_frames(probs, timeline.segments(manifest), manifest, budget, args.seed, distinct=args.distinct)
    plan.timeline_fingerprint = timeline.fingerprint
    out = Path(args.out) if args.out else Path(args.timeline).with_name(
        Path(args.timeline).name.replace(".timeline.json", "") + f".plan-F{budget}-s{args.seed}.json"
    )
    plan.save(out)
    for seg, count in sorted(plan.per_segment_counts.items()):
        print(f"segment {seg}: {count} frames (p={probs[seg]:.4f})")
    print(out)
    return EXIT_OK


def _collect_timelines(paths) -> list[SurpriseTimeline]:
    files: list[Path] = []
    for p in map(Path, paths):
        _existing(p)
        files += sorted(p.glob("*.timeline.json")) if p.is_dir() else [p]
    return [SurpriseTimeline.load(f) for f in files]


def cmd_eval(args) -> int:
    annotations = load_annotations(_existing(args.annotations))
    if not annotations:
        raise UsageError(f"annotation file {args.annotations} lists no videos")
    timelines = _collect_timelines(args.timelines)
    deltas = tuple(args.delta) if args.delta else (0.25, 1.0)
    report = evaluate(timelines, annotations, deltas, args.rel_threshold)
    if not report["per_video"]:
        print("no timeline matched an annotated video", file=sys.stderr)
        return EXIT_RUNTIME
    for vid in report["unmatched"]:
        print(f"skipping {vid}: not annotated", file=sys.stderr)
    if args.out:
        dump_json(report, args.out)
    keys = [k for k in report["aggregate"] if k != "videos"]
    print("video\t" + "\t".join(keys))
    for vid, row in sorted(report["per_video"].items()):
        print(vid + "\t" + "\t".join(_fmt(row[k]) for k in keys))
    print("MEAN\t" + "\t".join(_fmt(report["aggregate"][k]) for k in keys))
    return EXIT_OK


def _fmt(x) -> str:
    return "-" if x is None else f"{x:.4f}"


def cmd_rollout(args) -> int:
    if args.m < 2:
        raise UsageError(f"-m must be >= 2 (advantages are undefined for one trajectory), got {args.m}")
    cfg = _load_config(args)
    manifest = FrameManifest.load(_existing(args.manifest))
    backend = cfg.make_backend()
    reference = args.reference or manifest.reference_caption
    if not reference and isinstance(backend, ScriptedBackend):
        reference = backend.world.reference_caption
    if not reference:
        raise UsageError("no reference caption: pass --reference or add one to the manifest")
    group = run_rollout(
        manifest, cfg.scoring, backend, args.m, args.seed,
        cfg.budget, cfg.tau_s, cfg.normalization, max_workers=args.workers,
    )
    group = score_group(group, backend, reference)
    loss = belief_loss(group)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    out = cfg.output_dir / f"{manifest.video_id}.{group.fingerprint}.rollout.json"
    dump_json(group.to_dict(loss), out)
    for i, (r, a) in enumerate(zip(group.rewards, group.advantages)):
        print(f"trajectory {i}: reward={r:.4f} advantage={a:+.4f}")
    print(f"loss={loss:.6f}")
    print(out)
    return EXIT_OK


def cmd_manifest(args) -> int:
    """Extract frames with ffmpeg and write a manifest pointing at them."""
    video = _existing(args.video)
    ffmpeg, ffprobe = shutil.which("ffmpeg"), shutil.which("ffprobe")
    if not ffmpeg or not ffprobe:
        print("ffmpeg/ffprobe not found on PATH; write the manifest by hand instead "
              "(see README for the format)", file=sys.stderr)
        return EXIT_RUNTIME
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    probe = subprocess.run(
        [ffprobe, "-v", "error", "-show_entries", "format=duration", "-of", "json", str(video)],
        check=True, capture_output=True, text=True,
    )
    duration = float(json.loads(probe.stdout)["format"]["duration"])
    subprocess.run(
        [ffmpeg, "-v", "error", "-y", "-i", str(video), "-vf", f"fps={args.fps}",
         str(out_dir / "frame_%06d.jpg")],
        check=True,
    )
    paths = sorted(out_dir.glob("frame_*.jpg"))
    frames = [{"timestamp": i / args.fps, "uri": str(p.resolve())} for i, p in enumerate(paths)]
    frames = [f for f in frames if f["timestamp"] <= duration]
    manifest = FrameManifest.from_dict({
        "video_id": args.video_id or video.stem, "fps": args.fps, "duration": duration, "frames": frames,
    })
    out = out_dir / "manifest.json"
    manifest.save(out)
    print(out)
    return EXIT_OK


def _add_scoring_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="run configuration (JSON)")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--seed", type=int)
    p.add_argument("--segments", type=int, help="number of scored segments K (default: duration budget)")
    p.add_argument("--mode", choices=["kl", "jsd"])
    p.add_argument("--posterior-mode", dest="posterior_mode", choices=["nll", "yes-prob"])
    p.add_argument("--tau", type=float, help="belief softmax temperature")
    p.add_argument("--window", type=int, help="prior-window frame count W")
    p.add_argument("--hypotheses", type=int, help="hypotheses per step N")
    p.add_argument("--no-memory", action="store_true", help="score segments independently with empty history")
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beliefshift", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="score videos into surprise timelines")
    p.add_argument("manifests", nargs="+")
    _add_scoring_overrides(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("sample", help="draw a surprise-weighted frame plan from a timeline")
    p.add_argument("timeline")
    p.add_argument("--budget", "-F", type=int, help="frames to draw (default: duration budget)")
    p.add_argument("--tau-s", dest="tau_s", type=float, default=DEFAULT_TAU_S)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--normalization", choices=["none", "minmax"])
    p.add_argument("--distinct", action="store_true", help="redraw repeated frames")
    p.add_argument("--manifest", help="manifest for frame lookup (default: dense frames at the timeline's fps)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="localization metrics against annotations")
    p.add_argument("timelines", nargs="+", help="timeline files or directories of them")
    p.add_argument("--annotations", required=True)
    p.add_argument("--delta", type=float, action="append", help="Accuracy@delta tolerance in seconds (repeatable)")
    p.add_argument("--rel-threshold", dest="rel_threshold", type=float, default=0.8)
    p.add_argument("--out", help="write the metrics report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rollout", help="GRPO rollout group: rewards, advantages, loss")
    p.add_argument("manifest")
    p.add_argument("-m", type=int, default=3, help="trajectories per group")
    p.add_argument("--reference", help="ground-truth caption for the reward judge")
    _add_scoring_overrides(p)
    p.set_defaults(func=cmd_rollout, seed=42)

    p = sub.add_parser("manifest", help="extract frames with ffmpeg and write a manifest")
    p.add_argument("video")
    p.add_argument("--fps", type=float, default=2.0)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--video-id", dest="video_id")
    p.set_defaults(func=cmd_manifest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, InvalidInputError, InvalidParameterError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BeliefShiftError, RewardParseError, OSError, subprocess.CalledProcessError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
