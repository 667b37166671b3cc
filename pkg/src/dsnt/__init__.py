"""Disentangled representations for robust text classification.

Three training criteria on a shared encoder: an L2 pairwise penalty over
projected sub-representations, the variational information bottleneck, and
the bottleneck with a total-correlation penalty.
"""

__version__ = "0.1.0"
