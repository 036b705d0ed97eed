"""Capacity bounds, projections and constrained training for small convolutional networks."""

from ._capbound import *  # noqa: F401,F403
from ._capbound import UsageError, NumericalError, ResourceError  # noqa: F401
