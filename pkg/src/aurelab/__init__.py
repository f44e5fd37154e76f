"""Noisy-label expression classification lab.

Confidence-weighted training, an auxiliary action-unit graph branch, and
semantic-template label correction over fully synthetic, deterministic
datasets, with gradient-checked hand-rolled reverse-mode differentiation.
"""

__version__ = "0.1.0"

from . import autodiff, aux_branch, data, relabel, target_branch, trainer  # noqa: F401
