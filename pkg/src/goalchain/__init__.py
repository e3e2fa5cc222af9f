"""Learning a goal-chaining control policy from one demonstration.

Subpackages cover the full pipeline: a Dubins-car maze simulator, an RRT
demonstration generator, goal extraction and demo datasets, the
index-augmented episode loop with approximate goal switching, soft
actor-critic training with demo-buffer / value-cloning variants, and an
experiment harness with ablation and analysis exports.
"""

__version__ = "0.1.0"
