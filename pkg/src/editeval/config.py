"""Run configuration with paper-default thresholds and a key=value file format.

The config file is flat text: one ``key = value`` per line, ``#`` comments,
optional quotes around strings. Command-line flags always win over file
values, which in turn win over the built-in defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

DEFAULT_SEED = 0
DEFAULT_PARALLELISM = 1
DEFAULT_FRACTION = 0.30
DEFAULT_PAIRS_PER_GROUP = 6
DEFAULT_POOL_SIZE = 1500
DEFAULT_BOOTSTRAP_ITERS = 1000


class ConfigError(ValueError):
    """Raised for unreadable or malformed config files."""


@dataclass
class RunConfig:
    seed: int = DEFAULT_SEED
    parallelism: int = DEFAULT_PARALLELISM
    fraction: float = DEFAULT_FRACTION
    pairs_per_group: int = DEFAULT_PAIRS_PER_GROUP
    pool_size: int = DEFAULT_POOL_SIZE
    bootstrap_iters: int = DEFAULT_BOOTSTRAP_ITERS
    paths: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.parallelism < 1:
            raise ConfigError(f"parallelism must be >= 1, got {self.parallelism}")
        if not 0.0 < self.fraction <= 0.5:
            raise ConfigError(f"fraction must lie in (0, 0.5], got {self.fraction}")
        if self.pairs_per_group < 0:
            raise ConfigError(f"pairs_per_group must be non-negative, got {self.pairs_per_group}")
        if self.pool_size < 1:
            raise ConfigError(f"pool_size must be >= 1, got {self.pool_size}")
        if self.bootstrap_iters < 1:
            raise ConfigError(f"bootstrap_iters must be >= 1, got {self.bootstrap_iters}")

    def describe(self) -> str:
        parts = [
            f"seed={self.seed}",
            f"parallelism={self.parallelism}",
            f"fraction={self.fraction}",
            f"pairs_per_group={self.pairs_per_group}",
            f"pool_size={self.pool_size}",
            f"bootstrap_iters={self.bootstrap_iters}",
        ]
        parts.extend(f"path.{k}={v}" for k, v in sorted(self.paths.items()))
        return " ".join(parts)


def _parse_value(raw: str):
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        return raw[1:-1]
    lowered = raw.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines into a dict of typed values."""
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        values[key] = _parse_value(raw)
    return values


def load_config(path: str | Path) -> RunConfig:
    """Read a RunConfig from a key=value file; unknown keys become paths."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    values = parse_config_text(p.read_text(encoding="utf-8"))
    known = {f.name for f in fields(RunConfig)} - {"paths"}
    kwargs: dict = {}
    paths: dict[str, str] = {}
    for key, value in values.items():
        if key in known:
            kwargs[key] = value
        elif key.startswith("path."):
            paths[key[len("path.") :]] = str(value)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return RunConfig(paths=paths, **kwargs)
