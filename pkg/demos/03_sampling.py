"""
Spending a frame budget where the surprise is
=============================================

Segments are picked with probability softmax(score / tau_s), then a uniform
time inside the chosen segment gives the frame. Compare with evenly spaced
frames.
"""
import numpy as np

from beliefshift import FrameManifest, ScoringConfig, normalize_scores, plan_segments, score_video
from beliefshift.backends import ScriptedBackend, deviation_world
from beliefshift.sampler import expected_counts, sample_frames, segment_probabilities, uniform_plan

manifest = FrameManifest.synthetic("street", duration=60.0, fps=2)
segments = plan_segments(manifest, 8)
world = deviation_world([s.observed_timestep for s in segments], 5)
timeline = score_video(manifest, ScoringConfig(segments=8), ScriptedBackend(world))

scores = normalize_scores(timeline, "minmax")
budget = 16
for tau_s in (0.2, 0.7, 3.0):
    probs = segment_probabilities(scores, tau_s)
    print(f"tau_s={tau_s:<4} expected frames per segment:", expected_counts(probs, budget).round(1))

probs = segment_probabilities(scores, 0.7)
plan = sample_frames(probs, timeline.segments(manifest), manifest, budget, seed=0)
uniform = uniform_plan(manifest, budget, segments)
print("surprise-weighted:", [plan.per_segment_counts[i] for i in range(8)])
print("uniform:          ", [uniform.per_segment_counts[i] for i in range(8)])
print("sampled times:", np.round(manifest.timestamps[plan.frame_indices], 1).tolist())
