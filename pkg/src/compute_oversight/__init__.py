"""Compute-provider oversight simulator: telemetry, accounting, classification,
KYC, record keeping, enforcement and cross-provider structuring detection."""

__version__ = "0.1.0"
