"""Mask-guided pseudo-shadow synthesis and two-stage shadow removal.

The pipeline works on LAB images throughout: a shadow image is decoupled
into a shadow region and a randomly sampled non-shadow region, an
encoder/generator pair is trained to swap shadow characteristics between
the two regions, and the resulting pseudo shadow/non-shadow pairs
supervise a downstream two-stage removal network.
"""

__version__ = "0.1.0"
