"""Reliability-evaluation harness for LLM-driven discharge planning.

Separates a pluggable Planner (LLM or scripted double) from a deterministic
Auditor, adds two-tier self-improvement (within-episode refinement and a
discrepancy buffer with replay), and runs reproducible ablations with
coverage, calibration, drift and latency metrics.
"""

__version__ = "0.1.0"
