"""
Shared helpers: seed derivation, table / JSON persistence, provenance.

All randomness in the package flows through ``make_rng`` / ``derive_seed`` so a
single integer seed reproduces every mask, dataset split and MC pass. The
generator is numpy's PCG64 seeded via ``SeedSequence``, which gives the same
streams on every platform.
"""

from __future__ import annotations

import hashlib
import logging
import os
from pathlib import Path
from typing import Any

import numpy as np
import orjson
import pandas as pd

from .exceptions import ConfigError, PersistenceError

logger = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1


def derive_seed(*keys: int) -> int:
    """Child seed for an integer key path, e.g. ``derive_seed(seed, site, it)``."""
    entropy = [int(k) & _MASK64 for k in keys]
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)
    return int(state[0])


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & _MASK64))


def config_hash(payload: dict[str, Any]) -> str:
    raw = orjson.dumps(payload, option=orjson.OPT_SORT_KEYS)
    return hashlib.sha256(raw).hexdigest()[:16]


def provenance_line(config_digest: str, seed: int) -> str:
    return f"rate-in config_hash={config_digest} seed={seed}"


def _float_repr(value: float) -> str:
    # shortest string that parses back to the same double
    return repr(float(value))


def write_table(frame: pd.DataFrame, path: str | Path, provenance: str | None = None) -> Path:
    """Write ``frame`` as RFC-4180 CSV, preceded by an optional ``# ...`` comment."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        frame.to_csv(fh, index=False, lineterminator="\n", float_format=_float_repr)
    logger.debug("wrote %d rows to %s", len(frame), path)
    return path


def read_table(path: str | Path, dtype: dict[str, Any] | None = None) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"table not found: {path}")
    return pd.read_csv(path, comment="#", float_precision="round_trip", dtype=dtype)


def dump_json(path: str | Path, payload: dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(orjson.dumps(payload, option=orjson.OPT_INDENT_2))
    return path


def load_json(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    try:
        payload = orjson.loads(path.read_bytes())
    except orjson.JSONDecodeError as exc:
        raise PersistenceError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(payload, dict):
        raise PersistenceError(f"{path}: expected a JSON object")
    return payload


def check_writable_dir(path: str | Path) -> Path:
    """Fail early if ``path`` can neither be used nor created as an output dir."""
    path = Path(path).resolve()
    existing = path
    while not existing.exists():
        if existing.parent == existing:
            break
        existing = existing.parent
    if existing.exists() and not existing.is_dir():
        raise ConfigError(f"output path is not a directory: {existing}")
    if not os.access(existing, os.W_OK):
        raise ConfigError(f"output directory is not writable: {path}")
    return path
