"""
General utility functions.
"""

import os
import json
import hashlib
import logging
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .base import APP_NAME, THREADS_ENV, InputFormatError, ValidationError


logger: logging.Logger = logging.getLogger(APP_NAME)


def setup_logging(level: int = logging.INFO) -> None:
    """Send package log records to stderr"""
    if any(getattr(h, "_driftguard", False) for h in logger.handlers):
        logger.setLevel(level)
        return

    handler: logging.StreamHandler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter("%(asctime)s\t%(message)s"))
    handler._driftguard = True

    logger.addHandler(handler)
    logger.setLevel(level)
    logger.propagate = False


def to_builtin(value: Any) -> Any:
    """Convert numpy containers and scalars into JSON friendly objects"""
    if isinstance(value, dict):
        return {str(k): to_builtin(v) for k, v in value.items()}
    elif isinstance(value, (list, tuple)):
        return [to_builtin(v) for v in value]
    elif isinstance(value, np.ndarray):
        return to_builtin(value.tolist())
    elif isinstance(value, np.bool_):
        return bool(value)
    elif isinstance(value, np.integer):
        return int(value)
    elif isinstance(value, np.floating):
        return float(value)
    return value


def load_json(filepath: str | Path) -> dict:
    """Load data from json file"""
    filepath: Path = Path(filepath)

    try:
        with open(filepath, mode="r", encoding="UTF-8") as f:
            data: dict = json.load(f)
    except FileNotFoundError:
        raise InputFormatError(f"File not found: {filepath}")
    except json.JSONDecodeError as e:
        raise InputFormatError(f"Invalid json in {filepath}: {e}")
    except UnicodeDecodeError as e:
        raise InputFormatError(f"{filepath} is not valid UTF-8: {e}")

    if not isinstance(data, dict):
        raise InputFormatError(f"Expected a json object in {filepath}")

    return data


def save_json(filepath: str | Path, data: dict) -> Path:
    """Save data into json file"""
    filepath: Path = Path(filepath)
    filepath.parent.mkdir(parents=True, exist_ok=True)

    with open(filepath, mode="w+", encoding="UTF-8", newline="\n") as f:
        json.dump(
            to_builtin(data),
            f,
            indent=4,
            sort_keys=True,
            ensure_ascii=False,
            allow_nan=False
        )
        f.write("\n")

    return filepath


def canonical_json(data: dict) -> str:
    """Key-order independent json text used for hashing"""
    return json.dumps(
        to_builtin(data),
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=True,
        allow_nan=False
    )


def config_hash(data: dict) -> str:
    """SHA-256 hex digest of the canonical form"""
    text: str = canonical_json(data)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def get_worker_count(requested: Optional[int] = None) -> int:
    """Worker pool size capped by the DRIFTGUARD_THREADS variable"""
    count: int = requested or os.cpu_count() or 1

    value: str = os.environ.get(THREADS_ENV, "").strip()
    if value:
        try:
            cap: int = int(value)
        except ValueError:
            raise ValidationError(f"{THREADS_ENV} must be an integer, got {value!r}")

        if cap < 1:
            raise ValidationError(f"{THREADS_ENV} must be at least 1, got {cap}")
        count = min(count, cap)

    return max(count, 1)


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for one (seed, key...) index"""
    sequence: np.random.SeedSequence = np.random.SeedSequence(
        entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
        spawn_key=tuple(int(k) for k in key)
    )
    return np.random.default_rng(sequence)


def derive_seed(seed: int, *key: int) -> int:
    """Child 64-bit seed for one (seed, key...) index"""
    sequence: np.random.SeedSequence = np.random.SeedSequence(
        entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
        spawn_key=tuple(int(k) for k in key)
    )
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def check_finite(value: Any, name: str) -> np.ndarray:
    """Return value as float array, rejecting NaN and infinity"""
    array: np.ndarray = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(array)):
        raise ValidationError(f"{name} must be finite")
    return array
