"""Minimal reverse-mode autodiff on numpy arrays.

The public surface is the :class:`Tensor` value type, the
:class:`GradientTape` context manager, the functional op library in
:mod:`~forgelens.autodiff.ops`, and seeded RNG stream helpers.
"""

from . import ops
from .rng import derive_seed, make_rng
from .tensor import GradientTape, Tensor, active_tape, collect_parameters

__all__ = [
    "Tensor",
    "GradientTape",
    "active_tape",
    "collect_parameters",
    "ops",
    "derive_seed",
    "make_rng",
]
