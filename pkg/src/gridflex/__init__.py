"""Seedable simulator for an incentive-driven emergency demand-response program."""

__version__ = "0.1.0"
