#!/usr/bin/env python3
from pathlib import Path

from setuptools import find_packages, setup

from trawlwatch import __version__

requirements = [
    line.strip()
    for line in Path(__file__).with_name("requirements").joinpath("common.txt").read_text().splitlines()
    if line.strip() and not line.startswith("#")
]

setup(
    name="trawlwatch",
    version=__version__,
    description="Fishing activity detection and effort mapping from VMS data",
    packages=find_packages(include=["trawlwatch", "trawlwatch.*"]),
    python_requires=">=3.9",
    install_requires=requirements,
    entry_points={"console_scripts": ["trawlwatch=trawlwatch.main:main"]},
)
