"""유틸리티 모듈"""

from .io import atomic_directory, content_hash, promote_directory, staging_dir, write_json, write_run_manifest
from .log import console, log, progress, setup_logging

__all__ = [
    "atomic_directory",
    "content_hash",
    "promote_directory",
    "staging_dir",
    "write_json",
    "write_run_manifest",
    "console",
    "log",
    "progress",
    "setup_logging",
]
