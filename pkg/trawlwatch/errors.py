#!/usr/bin/env python3
"""
Exception types for trawlwatch
Every error raised on purpose by the package derives from TrawlwatchError
"""

from typing import Optional


class TrawlwatchError(Exception):
    """Base class for all trawlwatch errors"""


class VmsFormatError(TrawlwatchError, ValueError):
    """A VMS CSV row could not be parsed"""

    def __init__(self, message: str, row: Optional[int] = None, field: Optional[str] = None):
        self.row = row
        self.field = field
        location = []
        if row is not None:
            location.append(f"row {row}")
        if field is not None:
            location.append(f"field '{field}'")
        prefix = f"{', '.join(location)}: " if location else ""
        super().__init__(f"{prefix}{message}")


class TripError(TrawlwatchError, ValueError):
    """Pings cannot form a usable trip"""


class DegenerateCovarianceError(TrawlwatchError, ValueError):
    """Covariance matrix is not symmetric positive definite"""

    def __init__(self, message: str = "degenerate covariance"):
        super().__init__(message)


class ModelParameterError(TrawlwatchError, ValueError):
    """Model parameters violate their invariants"""


class LabellingError(TrawlwatchError, ValueError):
    """Fitted components cannot be mapped to activities"""


class ThresholdEstimationError(TrawlwatchError, ValueError):
    """Speed thresholds cannot be calibrated from the data"""


class ScenarioError(TrawlwatchError, ValueError):
    """Simulation scenario is invalid"""


class ModelFileError(TrawlwatchError):
    """Model file is unreadable or incompatible with the request"""


class ConfigError(TrawlwatchError, ValueError):
    """Configuration is invalid"""
