"""Hypernetwork-conditioned flow estimation and temporal interpolation for
volumetric simulation ensembles, on a small from-scratch autodiff core."""

from .tensor import Tensor, Tape, Randn, alloc, backward

__all__ = ["Tensor", "Tape", "Randn", "alloc", "backward"]
__version__ = "0.1.0"
