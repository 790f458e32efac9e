"""
A rollout group
===============

Several independent runs over the same video give different hypotheses, so
different surprise curves, frame plans, and captions. A judge scores each
caption against the reference; rewards are standardized within the group to
give advantages, and the loss weights each run's hypothesis log-probabilities
by its advantage. Nothing is trained here, only the objective is computed.
"""
from beliefshift import FrameManifest, ScoringConfig, plan_segments
from beliefshift.backends import ScriptedBackend, deviation_world
from beliefshift.grpo import belief_loss, run_rollout, score_group

manifest = FrameManifest.synthetic("park", 20.0, 5)
segments = plan_segments(manifest, 8)
# six hypotheses per phase but only three drawn per step, so runs differ
world = deviation_world([s.observed_timestep for s in segments], 4, n_continue=4, n_alert=2)

backend = ScriptedBackend(world)
group = run_rollout(manifest, ScoringConfig(segments=8), backend, m=4, seed=4, budget=8)
group = score_group(group, backend, world.reference_caption)

print("reference:", world.reference_caption)
for t, r, a in zip(group.trajectories, group.rewards, group.advantages):
    peak = max(range(len(t.surprise_scores)), key=t.surprise_scores.__getitem__)
    print(f"seed {t.seed:>10}  peak seg {peak}  reward {r:.2f}  advantage {a:+.2f}")
    print("   caption:", t.caption)
print("loss:", round(belief_loss(group), 4))
