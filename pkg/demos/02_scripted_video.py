"""
Scoring a video offline
=======================

The scripted backend answers every model call from a small world script, so a
whole run is deterministic and needs no model server. Here a 20 second clip is
split into 8 segments and something goes wrong in segment 4.
"""
from beliefshift import FrameManifest, ScoringConfig, argmax_surprise, plan_segments, score_video
from beliefshift.backends import ScriptedBackend, deviation_world

manifest = FrameManifest.synthetic("kitchen", duration=20.0, fps=5)
segments = plan_segments(manifest, 8)
world = deviation_world([s.observed_timestep for s in segments], 4, phases=("cooking", "eating"))

backend = ScriptedBackend(world)
timeline = score_video(manifest, ScoringConfig(segments=8), backend)

# surprise per segment, drawn as a bar
for rec in timeline.records:
    bar = "#" * int(round(rec.score.value * 10))
    print(f"{rec.start:5.1f}-{rec.end:5.1f}s  {rec.score.value:6.3f}  {bar}")

print("peak at", argmax_surprise(timeline), "s")

# the beliefs at the peak: prior vs posterior per hypothesis
peak = max(timeline.records, key=lambda r: r.score.value)
for h, p, q in zip(peak.belief.hypotheses, peak.belief.prior, peak.belief.posterior):
    print(f"  {p:.3f} -> {q:.3f}  {h}")

# the rolling memory the last step was conditioned on
print("memory:", timeline.records[-1].memory)

# one generation call per segment, and N prior plus N posterior scorings
print(dict(backend.calls))
