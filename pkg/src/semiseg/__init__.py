"""Semi-supervised semantic segmentation on a synthetic shape benchmark.

Two segmentation branches with per-pixel variance heads are trained on a
mix of ground-truth labels and fused pseudo-labels (intersection / union
of the branch predictions), with a Monte-Carlo data-uncertainty loss and
a LogSumExp energy loss on top of the cross-entropy terms.
"""

__version__ = "0.1.0"
