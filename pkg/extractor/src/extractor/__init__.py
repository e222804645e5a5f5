"""Offline feature-extraction sidecar.

Walks raw image groups, runs the configured feature producers, and writes
feature-bundle directories in the workbench's on-disk interchange format.
The sidecar only writes; the scoring core only reads. The bundle layout is
the entire contract between the two.
"""

__version__ = "0.1.0"

BUNDLE_FORMAT_VERSION = "1"


class ExtractorError(Exception):
    """Raised for configuration problems and unrecoverable extraction failures."""
