"""Numerical laboratory for parabolic De Giorgi estimates on weighted graphs."""
from ._backend import BACKEND
from .space import WeightedGraphSpace, load_space, ball
from .calculus import SpaceTimeFunction

__version__ = "0.1.0"

__all__ = ["BACKEND", "WeightedGraphSpace", "load_space", "ball", "SpaceTimeFunction", "__version__"]
