"""
Shared helpers: logging setup, hashing, local-time arithmetic and artifact I/O.
"""

import contextvars
import hashlib
import io
import json
import logging
import os
from contextlib import contextmanager
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Tuple

import numpy as np
import pandas as pd

LOG_FORMAT = 'time=%(asctime)s level=%(levelname)s stage=%(stage)s logger=%(name)s msg=%(message)s'

# Wall-clock buckets used across features and analysis, [start_hour, end_hour)
TIME_OF_DAY_BUCKETS = (
    ('midnight', 0, 6),
    ('morning', 6, 12),
    ('afternoon', 12, 18),
    ('evening', 18, 24),
)
WEEKDAYS = ('Monday', 'Tuesday', 'Wednesday', 'Thursday', 'Friday', 'Saturday', 'Sunday')

HASH_PREFIX = '# config_hash: '

_current_stage = contextvars.ContextVar('stage', default='-')


class StageFilter(logging.Filter):
    """Attach the active pipeline stage to every record."""

    def filter(self, record):
        record.stage = _current_stage.get()
        return True


def configure_logging(level: Optional[str] = None):
    """
    Configure root logging once for command-line runs.

    Args:
        level: Log level name; falls back to RTLAB_LOG_LEVEL, then INFO

    Returns:
        The root logger
    """
    level = (level or os.getenv('RTLAB_LOG_LEVEL', 'INFO')).upper()
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)
    root = logging.getLogger()
    for handler in root.handlers:
        if not any(isinstance(f, StageFilter) for f in handler.filters):
            handler.addFilter(StageFilter())
    return root


@contextmanager
def stage_context(name: str) -> Iterator[None]:
    """Mark log lines emitted inside the block with a stage name."""
    token = _current_stage.set(name)
    try:
        yield
    finally:
        _current_stage.reset(token)


def current_stage() -> str:
    return _current_stage.get()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    """
    Hash a file's content in chunks.

    Args:
        path: File to hash

    Returns:
        Hex SHA-256 digest
    """
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_tree(path) -> str:
    """Hash every file under a directory, in sorted relative-path order."""
    root = Path(path)
    digest = hashlib.sha256()
    for file in sorted(p for p in root.rglob('*') if p.is_file()):
        digest.update(file.relative_to(root).as_posix().encode('utf-8'))
        digest.update(sha256_file(file).encode('ascii'))
    return digest.hexdigest()


def _json_default(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return value.as_posix()
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def canonical_json(obj: Any, indent: Optional[int] = None) -> str:
    """Deterministic JSON text: sorted keys, NaN written as null."""
    return json.dumps(_replace_nan(obj), sort_keys=True, indent=indent,
                      separators=(',', ': ') if indent else (',', ':'),
                      default=_json_default, allow_nan=False)


def _replace_nan(obj):
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, np.floating) and not np.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {str(k): _replace_nan(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_replace_nan(v) for v in obj]
    return obj


def local_datetime(utc_millis: int, tz_offset_minutes: int) -> datetime:
    """
    Wall-clock time for a UTC instant and offset.

    Args:
        utc_millis: Milliseconds since the Unix epoch
        tz_offset_minutes: Local offset from UTC

    Returns:
        Naive datetime in local time
    """
    utc = datetime.fromtimestamp(utc_millis / 1000.0, tz=timezone.utc)
    return (utc + timedelta(minutes=tz_offset_minutes)).replace(tzinfo=None)


def time_of_day_bucket(hour: int) -> str:
    for name, start, end in TIME_OF_DAY_BUCKETS:
        if start <= hour < end:
            return name
    raise ValueError(f"Hour out of range: {hour}")


def local_calendar(utc_millis, tz_offset_minutes) -> pd.DataFrame:
    """
    Vectorized local hour, weekday and bucket for arrays of instants.

    Returns:
        DataFrame with columns hour, weekday (0=Monday), time_of_day
    """
    utc_millis = np.asarray(utc_millis, dtype=np.int64)
    offsets = np.broadcast_to(np.asarray(tz_offset_minutes, dtype=np.int64), utc_millis.shape)
    local = pd.to_datetime(utc_millis + offsets * 60_000, unit='ms')
    hours = np.asarray(local.hour)
    buckets = np.empty(len(hours), dtype=object)
    for name, start, end in TIME_OF_DAY_BUCKETS:
        buckets[(hours >= start) & (hours < end)] = name
    return pd.DataFrame({
        'hour': hours,
        'weekday': np.asarray(local.dayofweek),
        'time_of_day': buckets,
    })


def convert_df_to_csv(df: pd.DataFrame) -> str:
    """
    Render a DataFrame as canonical CSV text (repr floats, LF line endings).

    Args:
        df: DataFrame to render

    Returns:
        CSV text
    """
    buffer = io.StringIO()
    df.to_csv(buffer, index=False, lineterminator='\n', float_format=None)
    return buffer.getvalue()


def write_artifact_csv(df: pd.DataFrame, path, config_hash: str) -> Path:
    """
    Write a CSV artifact whose first line records the producing config hash.

    Args:
        df: Table to write
        path: Destination file
        config_hash: Hash of the run configuration

    Returns:
        The written path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = HASH_PREFIX + config_hash + '\n' + convert_df_to_csv(df)
    path.write_text(text, encoding='utf-8')
    return path


def read_artifact_csv(path, **kwargs) -> Tuple[pd.DataFrame, Optional[str]]:
    """
    Read a CSV artifact and the config hash from its first line.

    Returns:
        (table, config hash or None when the header line is absent)
    """
    path = Path(path)
    with open(path, encoding='utf-8') as handle:
        first = handle.readline()
    config_hash = first[len(HASH_PREFIX):].strip() if first.startswith(HASH_PREFIX) else None
    df = pd.read_csv(path, skiprows=1 if config_hash else 0, **kwargs)
    return df, config_hash


def write_artifact_json(payload: Dict[str, Any], path, config_hash: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = dict(payload)
    body['config_hash'] = config_hash
    path.write_text(canonical_json(body, indent=2) + '\n', encoding='utf-8')
    return path


def read_artifact_json(path) -> Dict[str, Any]:
    with open(path, encoding='utf-8') as handle:
        return json.load(handle)
