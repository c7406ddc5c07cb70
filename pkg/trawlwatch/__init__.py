"""
trawlwatch - fishing activity detection from Vessel Monitoring System data
"""

__version__ = "1.0.0"
