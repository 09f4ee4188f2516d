"""Liquid staking laboratory: staking, LST accounting, market simulation and
the econometric pipeline for tracking and premium analysis."""

__version__ = "0.1.0"
