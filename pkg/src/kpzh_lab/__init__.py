"""Simulation and verification toolkit for coupled Brownian paths built by queueing transforms."""

from __future__ import annotations

__version__ = "0.1.0"
