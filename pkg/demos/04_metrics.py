"""
Evaluating localization
=======================

Accuracy@delta asks whether the surprise peak is close to the annotated
transition. Temporal IoU compares the windows scoring near the peak with the
annotated windows.
"""
from beliefshift import FrameManifest, ScoringConfig, plan_segments, score_video
from beliefshift.backends import ScriptedBackend, deviation_world
from beliefshift.metrics import GroundTruth, diversity, evaluate, predicted_windows, random_baseline, spearman

timelines, annotations = [], {}
for i, dev in enumerate([1, 3, 6]):
    manifest = FrameManifest.synthetic(f"clip{i}", 24.0, 2)
    segments = plan_segments(manifest, 8)
    world = deviation_world([s.observed_timestep for s in segments], dev, noise=0.2, seed=i)
    tl = score_video(manifest, ScoringConfig(segments=8), ScriptedBackend(world))
    timelines.append(tl)
    # the scripted event starts at the observed frame of its segment
    t = segments[dev].observed_timestep
    annotations[manifest.video_id] = GroundTruth("windows", windows=((t - 1.0, t + 1.5),))

report = evaluate(timelines, annotations, deltas=(0.25, 1.0, 3.0))
for vid, row in report["per_video"].items():
    print(vid, {k: (round(v, 3) if isinstance(v, float) else v) for k, v in row.items()})
print("mean", report["aggregate"])
print("windows of clip0:", predicted_windows(timelines[0]).intervals)

# how well a random guess would do on the same video
print("random Acc@1s:", random_baseline(24.0, annotations["clip0"], 1.0, seed=0))

# hypothesis diversity with the scripted bag-of-words embedding
backend = ScriptedBackend(world)
print("diversity:", round(diversity(timelines[0].records[2].belief.hypotheses, backend.embed), 3))

# rank agreement between two surprise curves
print("spearman:", spearman(timelines[0].scores, timelines[1].scores))
