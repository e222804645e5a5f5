"""Evaluation workbench for instruction-based image editing.

Covers the full loop: feature bundles on disk, region planning and masking,
region-specific consistency metrics, preference pair synthesis, candidate
curation, pairwise judge evaluation, human annotation service, and
Bradley-Terry/Elo leaderboard fitting.
"""

__version__ = "0.1.0"

BUNDLE_FORMAT_VERSION = "1"
