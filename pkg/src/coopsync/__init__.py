"""Frequency-offset bounds, relay retuning and estimators for a three-node cooperative link."""

from .errors import (CoopSyncError, InvalidCovariance, InvalidDimensions, InvalidParameter, NumericalDegeneracy,
                     PolicyDegeneracy, SearchRefused, SingularDesign, UnsupportedDraw)
from .scenario import Scenario, parse_scenario, serialize_scenario

__version__ = "0.1.0"
