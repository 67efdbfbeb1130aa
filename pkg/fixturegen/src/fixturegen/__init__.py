"""Fixture generator: trains toy10, exports binaries, and cross-checks them.

This package never imports the inference package it generates fixtures
for; it talks to it only through the binary file formats, the CLI, and
TCP. Everything here is an independent second implementation of those
interfaces, which is what makes the cross-checks meaningful.
"""

from .generate import TrainingDiverged, generate_fixtures

__all__ = ["generate_fixtures", "TrainingDiverged"]
