"""
Event Model Module
Raw smartphone, questionnaire and wristband events: types, parsers and canonical writers.

A participant directory holds one comma-separated file per event channel plus an
optional physio/ folder in the wristband's export layout. Event tables are kept as
pandas DataFrames with a fixed column schema; physiological signals are numpy arrays.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from datetime import datetime
from functools import singledispatch
from pathlib import Path
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from openlocationcode import openlocationcode as olc

from errors import (BadHeader, MissingFile, NonMonotonicTimestamp, NonNumericSample,
                    SchemaError, ZeroRate)
from utils import convert_df_to_csv, local_datetime

logger = logging.getLogger(__name__)

MAX_TZ_OFFSET_MINUTES = 840

ACTIVITIES = ('still', 'walking', 'running', 'cycling', 'in_vehicle', 'on_foot', 'tilting', 'unknown')
SCREEN_STATES = ('on', 'off')
SOCIAL_ROLES = ('work', 'private', 'both')
INTERRUPTIBILITY = ('work', 'private', 'both', 'none')
RELATIONS = ('family', 'friend', 'work', 'none')

PHYSIO_KINDS = ('EDA', 'BVP', 'HR', 'ST', 'ACC_X', 'ACC_Y', 'ACC_Z')
ACC_KINDS = ('ACC_X', 'ACC_Y', 'ACC_Z')
# Wristband export file per channel kind
PHYSIO_FILES = {'EDA': 'EDA.csv', 'BVP': 'BVP.csv', 'HR': 'HR.csv', 'ST': 'TEMP.csv', 'ACC': 'ACC.csv'}
IBI_FILE = 'IBI.csv'
# Exported accelerometer values are in 1/64 g
ACC_COUNTS_PER_G = 64.0
IBI_MIN_S = 0.25
IBI_MAX_S = 3.0


@dataclass(frozen=True)
class Timestamp:
    """A UTC instant with the local offset it was recorded under."""

    utc_millis: int
    tz_offset_minutes: int = 0

    def __post_init__(self):
        if self.utc_millis < 0:
            raise SchemaError('<timestamp>', None, f"negative utc_millis {self.utc_millis}")
        if abs(self.tz_offset_minutes) > MAX_TZ_OFFSET_MINUTES:
            raise SchemaError('<timestamp>', None, f"tz offset out of range: {self.tz_offset_minutes}")

    @property
    def seconds(self) -> float:
        return self.utc_millis / 1000.0

    @property
    def local(self) -> datetime:
        return local_datetime(self.utc_millis, self.tz_offset_minutes)

    def shifted(self, seconds: float) -> 'Timestamp':
        return Timestamp(self.utc_millis + int(round(seconds * 1000)), self.tz_offset_minutes)


@dataclass(frozen=True)
class TableSpec:
    """Column schema of one event file."""

    filename: str
    time_column: Optional[str]
    int_columns: Tuple[str, ...] = ()
    optional_int_columns: Tuple[str, ...] = ()
    str_columns: Tuple[str, ...] = ()
    optional_str_columns: Tuple[str, ...] = ()
    enums: Mapping[str, Tuple[str, ...]] = field(default_factory=dict)
    ranges: Mapping[str, Tuple[int, int]] = field(default_factory=dict)
    columns: Tuple[str, ...] = ()


TABLES: Dict[str, TableSpec] = {
    'notifications': TableSpec(
        filename='notifications.csv', time_column='arrival_utc_ms',
        int_columns=('arrival_utc_ms', 'tz_offset_min', 'content_length'),
        optional_int_columns=('removed_utc_ms',),
        str_columns=('id', 'app_package'), optional_str_columns=('contact_hash',),
        ranges={'content_length': (0, 2 ** 31)},
        columns=('id', 'app_package', 'arrival_utc_ms', 'tz_offset_min', 'content_length',
                 'contact_hash', 'removed_utc_ms')),
    'app_events': TableSpec(
        filename='app_events.csv', time_column='utc_ms',
        int_columns=('utc_ms', 'tz_offset_min'),
        str_columns=('app_package',), optional_str_columns=('app_name',),
        columns=('app_package', 'app_name', 'utc_ms', 'tz_offset_min')),
    'screen_events': TableSpec(
        filename='screen.csv', time_column='utc_ms',
        int_columns=('utc_ms', 'tz_offset_min'), str_columns=('state',),
        enums={'state': SCREEN_STATES},
        columns=('state', 'utc_ms', 'tz_offset_min')),
    'activity_events': TableSpec(
        filename='activity.csv', time_column='utc_ms',
        int_columns=('confidence', 'utc_ms', 'tz_offset_min'), str_columns=('activity',),
        enums={'activity': ACTIVITIES}, ranges={'confidence': (0, 100)},
        columns=('activity', 'confidence', 'utc_ms', 'tz_offset_min')),
    'location_events': TableSpec(
        filename='location.csv', time_column='utc_ms',
        int_columns=('utc_ms', 'tz_offset_min'), str_columns=('plus_code',),
        columns=('plus_code', 'utc_ms', 'tz_offset_min')),
    'esm_responses': TableSpec(
        filename='esm.csv', time_column='utc_ms',
        int_columns=('utc_ms', 'tz_offset_min', 'valence', 'arousal'),
        str_columns=('social_role', 'interruptibility'),
        enums={'social_role': SOCIAL_ROLES, 'interruptibility': INTERRUPTIBILITY},
        ranges={'valence': (1, 5), 'arousal': (1, 5)},
        columns=('utc_ms', 'tz_offset_min', 'valence', 'arousal', 'social_role', 'interruptibility')),
    'contact_relations': TableSpec(
        filename='relations.csv', time_column=None,
        str_columns=('contact_hash', 'relations'),
        columns=('contact_hash', 'relations')),
}

META_FILE = 'meta.csv'
META_COLUMNS = ('participant', 'study_start_utc_ms', 'study_end_utc_ms', 'tz_offset_min')


@dataclass(frozen=True, eq=False)
class PhysioChannel:
    """
    A uniformly sampled signal. Sample i of ``samples`` was taken at
    start + (first_index + i) / rate_hz; first_index is non-zero only for windows.
    """

    kind: str
    start: Timestamp
    rate_hz: float
    samples: np.ndarray
    first_index: int = 0

    def __post_init__(self):
        if self.kind not in PHYSIO_KINDS:
            raise SchemaError('<physio>', None, f"unknown channel kind {self.kind}")
        if not self.rate_hz > 0:
            raise ZeroRate(f"{self.kind}: sample rate must be positive, got {self.rate_hz}")

    def __len__(self):
        return len(self.samples)

    def times(self) -> np.ndarray:
        """Absolute sample times in seconds since the epoch."""
        return self.start.seconds + (self.first_index + np.arange(len(self.samples))) / self.rate_hz

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.rate_hz


@dataclass(frozen=True, eq=False)
class IbiSeries:
    """Inter-beat intervals; each offset marks the beat that closes its interval."""

    start: Timestamp
    offsets: np.ndarray
    intervals: np.ndarray
    dropped: int = 0

    def __len__(self):
        return len(self.intervals)

    def beat_times(self) -> np.ndarray:
        return self.start.seconds + self.offsets

    @property
    def nn_ms(self) -> np.ndarray:
        return self.intervals * 1000.0


@dataclass(frozen=True, eq=False)
class PhysioRecording:
    channels: Mapping[str, PhysioChannel] = field(default_factory=dict)
    ibi: Optional[IbiSeries] = None

    def channel(self, kind: str) -> Optional[PhysioChannel]:
        return self.channels.get(kind)

    @property
    def is_empty(self) -> bool:
        return not self.channels and self.ibi is None


@dataclass(frozen=True, eq=False)
class EventLog:
    """
    All events of one participant. Tables are sorted by their time column.
    """

    participant: str
    notifications: pd.DataFrame
    app_events: pd.DataFrame
    screen_events: pd.DataFrame
    activity_events: pd.DataFrame
    location_events: pd.DataFrame
    esm_responses: pd.DataFrame
    contact_relations: pd.DataFrame
    physio: PhysioRecording = field(default_factory=PhysioRecording)
    study_start_ms: Optional[int] = None
    study_end_ms: Optional[int] = None
    tz_offset_minutes: int = 0
    warnings: Tuple[str, ...] = ()

    def table(self, name: str) -> pd.DataFrame:
        return getattr(self, name)

    def relations_map(self) -> Dict[str, FrozenSet[str]]:
        """Contact hash to its relation set."""
        return {row.contact_hash: frozenset(row.relations.split(';'))
                for row in self.contact_relations.itertuples(index=False)}


def empty_table(name: str) -> pd.DataFrame:
    spec = TABLES[name]
    df = pd.DataFrame({col: pd.Series(dtype=_column_dtype(spec, col)) for col in spec.columns})
    return df


def _column_dtype(spec: TableSpec, col: str):
    if col in spec.int_columns:
        return 'int64'
    if col in spec.optional_int_columns:
        return 'Int64'
    return 'object'


def _line_of(position: int) -> int:
    # Header is line 1
    return position + 2


def _parse_int_column(raw: pd.Series, file, col: str, optional: bool) -> pd.Series:
    text = raw.astype(str).str.strip()
    missing = text == ''
    numeric = pd.to_numeric(text.mask(missing), errors='coerce')
    bad = (numeric.isna() & ~missing) | (numeric.notna() & (numeric != numeric.round()))
    if not optional:
        bad |= missing
    if bad.any():
        position = int(np.flatnonzero(bad.to_numpy())[0])
        raise SchemaError(file, _line_of(position), f"column {col}: not an integer: {raw.iloc[position]!r}")
    if optional:
        return numeric.astype('Int64')
    return numeric.astype('int64')


def _validate_table(df: pd.DataFrame, spec: TableSpec, file) -> pd.DataFrame:
    missing = [c for c in spec.columns if c not in df.columns
               and c not in spec.optional_int_columns and c not in spec.optional_str_columns]
    if missing:
        raise SchemaError(file, 1, f"missing column(s): {', '.join(missing)}")
    out = {}
    for col in spec.columns:
        raw = df[col] if col in df.columns else pd.Series([''] * len(df), index=df.index)
        if col in spec.int_columns or col in spec.optional_int_columns:
            values = _parse_int_column(raw, file, col, optional=col in spec.optional_int_columns)
        else:
            values = raw.astype(str).str.strip()
            if col in spec.str_columns:
                empty = values == ''
                if empty.any():
                    position = int(np.flatnonzero(empty.to_numpy())[0])
                    raise SchemaError(file, _line_of(position), f"column {col}: empty value")
        if col in spec.enums:
            allowed = set(spec.enums[col])
            bad = ~values.isin(allowed)
            if bad.any():
                position = int(np.flatnonzero(bad.to_numpy())[0])
                raise SchemaError(file, _line_of(position),
                                  f"column {col}: {values.iloc[position]!r} not in {sorted(allowed)}")
        if col in spec.ranges:
            low, high = spec.ranges[col]
            bad = (values < low) | (values > high)
            if bad.any():
                position = int(np.flatnonzero(bad.to_numpy())[0])
                raise SchemaError(file, _line_of(position),
                                  f"column {col}: {values.iloc[position]} outside [{low}, {high}]")
        out[col] = values
    table = pd.DataFrame(out, index=df.index)
    if 'tz_offset_min' in table.columns:
        bad = table['tz_offset_min'].abs() > MAX_TZ_OFFSET_MINUTES
        if bad.any():
            position = int(np.flatnonzero(bad.to_numpy())[0])
            raise SchemaError(file, _line_of(position), "tz_offset_min outside [-840, 840]")
    if spec.time_column is not None:
        bad = table[spec.time_column] < 0
        if bad.any():
            position = int(np.flatnonzero(bad.to_numpy())[0])
            raise SchemaError(file, _line_of(position), "negative timestamp")
    return table.reset_index(drop=True)


def _validate_plus_codes(table: pd.DataFrame, file):
    for position, code in enumerate(table['plus_code']):
        if not (olc.isValid(code) and olc.isFull(code) and len(code.replace('+', '')) == 10):
            raise SchemaError(file, _line_of(position), f"invalid 10-digit plus code {code!r}")


def _validate_relations(table: pd.DataFrame, file) -> pd.DataFrame:
    canonical = []
    for position, value in enumerate(table['relations']):
        items = frozenset(part.strip() for part in value.split(';') if part.strip())
        if not items or not items <= set(RELATIONS):
            raise SchemaError(file, _line_of(position), f"invalid relation set {value!r}")
        if 'none' in items and len(items) > 1:
            raise SchemaError(file, _line_of(position), "relation 'none' cannot be combined")
        canonical.append(';'.join(r for r in RELATIONS if r in items))
    table = table.copy()
    table['relations'] = canonical
    return table.drop_duplicates(subset='contact_hash', keep='first').reset_index(drop=True)


def _read_table(path: Path, spec: TableSpec) -> pd.DataFrame:
    if not path.exists():
        raise MissingFile(path)
    if path.stat().st_size == 0:
        return pd.DataFrame({c: pd.Series(dtype=object) for c in spec.columns})
    return pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)


def _sort_by_time(table: pd.DataFrame, spec: TableSpec, file, warnings: List[str]) -> pd.DataFrame:
    times = table[spec.time_column].to_numpy()
    if len(times) > 1 and np.any(np.diff(times) < 0):
        message = f"{file}: rows out of time order, sorted"
        logger.warning(message)
        warnings.append(message)
        table = table.sort_values(spec.time_column, kind='mergesort').reset_index(drop=True)
    return table


def _read_meta(directory: Path):
    path = directory / META_FILE
    if not path.exists():
        return directory.name, None, None, None
    meta = pd.read_csv(path, dtype=str, keep_default_na=False)
    if len(meta) != 1 or not set(META_COLUMNS) <= set(meta.columns):
        raise SchemaError(path, 1, f"expected one row with columns {', '.join(META_COLUMNS)}")
    row = meta.iloc[0]
    try:
        start = int(row['study_start_utc_ms']) if row['study_start_utc_ms'] else None
        end = int(row['study_end_utc_ms']) if row['study_end_utc_ms'] else None
        tz = int(row['tz_offset_min']) if row['tz_offset_min'] else 0
    except ValueError as exc:
        raise SchemaError(path, 2, str(exc)) from exc
    return row['participant'] or directory.name, start, end, tz


def parse_event_log(path) -> EventLog:
    """
    Parse and validate one participant directory.

    Args:
        path: Participant directory

    Returns:
        A validated EventLog with every table sorted by time
    """
    directory = Path(path)
    if not directory.is_dir():
        raise MissingFile(directory)
    participant, study_start, study_end, tz = _read_meta(directory)
    warnings: List[str] = []
    tables: Dict[str, pd.DataFrame] = {}

    for name, spec in TABLES.items():
        file = directory / spec.filename
        raw = _read_table(file, spec)
        table = _validate_table(raw, spec, file) if len(raw) else empty_table(name)
        if name == 'location_events':
            _validate_plus_codes(table, file)
        if name == 'contact_relations':
            table = _validate_relations(table, file)
        if spec.time_column is not None:
            table = _sort_by_time(table, spec, file, warnings)
            _check_study_window(table, spec, file, study_start, study_end)
        tables[name] = table

    tables['notifications'] = _deduplicate_notifications(tables['notifications'], directory, warnings)
    tables['screen_events'] = _collapse_screen_repeats(tables['screen_events'], directory, warnings)

    if tz is None:
        non_empty = [t for t in tables.values() if 'tz_offset_min' in t.columns and len(t)]
        tz = int(non_empty[0]['tz_offset_min'].iloc[0]) if non_empty else 0

    physio = parse_physio_recording(directory / 'physio', tz) if (directory / 'physio').is_dir() \
        else PhysioRecording()
    if physio.ibi is not None and physio.ibi.dropped:
        message = f"{directory.name}: dropped {physio.ibi.dropped} IBI intervals outside ({IBI_MIN_S}, {IBI_MAX_S}) s"
        logger.warning(message)
        warnings.append(message)

    logger.info(f"Parsed participant {participant}: {len(tables['notifications'])} notifications, "
                f"{len(tables['app_events'])} app events, {len(tables['esm_responses'])} ESM responses")
    return EventLog(participant=participant, physio=physio, study_start_ms=study_start,
                    study_end_ms=study_end, tz_offset_minutes=tz, warnings=tuple(warnings), **tables)


def _check_study_window(table, spec, file, start, end):
    if start is None and end is None:
        return
    times = table[spec.time_column].to_numpy()
    outside = np.zeros(len(times), dtype=bool)
    if start is not None:
        outside |= times < start
    if end is not None:
        outside |= times > end
    if outside.any():
        position = int(np.flatnonzero(outside)[0])
        raise SchemaError(file, None, f"row {position + 1}: timestamp outside the study window")


def _deduplicate_notifications(table: pd.DataFrame, directory: Path, warnings: List[str]) -> pd.DataFrame:
    bad = table['removed_utc_ms'].notna() & (table['removed_utc_ms'] < table['arrival_utc_ms'])
    if bad.any():
        position = int(np.flatnonzero(bad.to_numpy())[0])
        raise SchemaError(directory / 'notifications.csv', None,
                          f"notification {table['id'].iloc[position]}: removed before arrival")
    duplicated = table['id'].duplicated(keep='first')
    if duplicated.any():
        message = f"{directory.name}: {int(duplicated.sum())} re-posted notification(s), kept earliest arrival"
        logger.warning(message)
        warnings.append(message)
        table = table[~duplicated].reset_index(drop=True)
    return table


def _collapse_screen_repeats(table: pd.DataFrame, directory: Path, warnings: List[str]) -> pd.DataFrame:
    if len(table) < 2:
        return table
    repeated = table['state'].eq(table['state'].shift())
    if repeated.any():
        message = f"{directory.name}: collapsed {int(repeated.sum())} repeated screen state(s)"
        logger.warning(message)
        warnings.append(message)
        table = table[~repeated].reset_index(drop=True)
    return table


# --- wristband files ------------------------------------------------------

def _read_header(path: Path) -> Tuple[float, float, List[str]]:
    with open(path, encoding='utf-8') as handle:
        lines = handle.read().splitlines()
    if len(lines) < 2:
        raise BadHeader(f"{path}: expected start and rate header lines")
    try:
        start = float(lines[0].split(',')[0])
        rate = float(lines[1].split(',')[0])
    except ValueError as exc:
        raise BadHeader(f"{path}: unreadable header ({exc})") from exc
    if not math.isfinite(start) or start < 0:
        raise BadHeader(f"{path}: invalid start {lines[0]!r}")
    if not rate > 0:
        raise ZeroRate(f"{path}: sample rate must be positive, got {rate}")
    return start, rate, lines[2:]


def _numeric_rows(path: Path, rows: Sequence[str], width: int, first_line: int) -> np.ndarray:
    if not rows:
        return np.empty((0, width), dtype=float)
    try:
        if width == 1:
            values = np.array(rows, dtype=float).reshape(-1, 1)
        else:
            values = np.array([row.split(',') for row in rows], dtype=float)
        if values.ndim == 2 and values.shape[1] == width and np.all(np.isfinite(values)):
            return values
    except ValueError:
        pass
    # Slow path only to locate the offending line
    values = np.empty((len(rows), width), dtype=float)
    for i, row in enumerate(rows):
        parts = row.split(',')
        if len(parts) != width:
            raise NonNumericSample(path, first_line + i, row)
        try:
            values[i] = [float(p) for p in parts]
        except ValueError:
            raise NonNumericSample(path, first_line + i, row) from None
        if not np.all(np.isfinite(values[i])):
            raise NonNumericSample(path, first_line + i, row)
    return values


def _start_timestamp(start_s: float, tz: int) -> Timestamp:
    return Timestamp(int(round(start_s * 1000)), tz)


def parse_physio_channel(path, kind: str, tz_offset_minutes: int = 0) -> PhysioChannel:
    """
    Parse one wristband export file.

    Args:
        path: File with start line, rate line, then one sample per line
        kind: Channel kind; ACC_X/ACC_Y/ACC_Z select a column of ACC.csv
        tz_offset_minutes: Local offset recorded on the channel start

    Returns:
        PhysioChannel with samples in the channel's physical unit
    """
    path = Path(path)
    if not path.exists():
        raise MissingFile(path)
    start, rate, rows = _read_header(path)
    if kind in ACC_KINDS:
        values = _numeric_rows(path, rows, 3, 3)[:, ACC_KINDS.index(kind)] / ACC_COUNTS_PER_G
    else:
        values = _numeric_rows(path, rows, 1, 3)[:, 0]
    values = np.ascontiguousarray(values)
    values.setflags(write=False)
    return PhysioChannel(kind=kind, start=_start_timestamp(start, tz_offset_minutes),
                         rate_hz=rate, samples=values)


def parse_acc_channels(path, tz_offset_minutes: int = 0) -> Tuple[PhysioChannel, ...]:
    """Parse ACC.csv once into its three axis channels."""
    path = Path(path)
    start, rate, rows = _read_header(path)
    values = _numeric_rows(path, rows, 3, 3) / ACC_COUNTS_PER_G
    timestamp = _start_timestamp(start, tz_offset_minutes)
    channels = []
    for axis, kind in enumerate(ACC_KINDS):
        samples = np.ascontiguousarray(values[:, axis])
        samples.setflags(write=False)
        channels.append(PhysioChannel(kind=kind, start=timestamp, rate_hz=rate, samples=samples))
    return tuple(channels)


def parse_ibi(path, tz_offset_minutes: int = 0) -> IbiSeries:
    """
    Parse IBI.csv: a start line, then offset,interval rows in seconds.

    Intervals outside (0.25 s, 3.0 s) are dropped and counted.
    """
    path = Path(path)
    with open(path, encoding='utf-8') as handle:
        lines = handle.read().splitlines()
    if not lines:
        raise BadHeader(f"{path}: missing start line")
    try:
        start = float(lines[0].split(',')[0])
    except ValueError as exc:
        raise BadHeader(f"{path}: unreadable start ({exc})") from exc
    values = _numeric_rows(path, lines[1:], 2, 2) if len(lines) > 1 else np.empty((0, 2))
    offsets, intervals = values[:, 0], values[:, 1]
    if np.any(offsets < 0):
        raise SchemaError(path, int(np.flatnonzero(offsets < 0)[0]) + 2, "negative offset")
    steps = np.diff(offsets)
    if np.any(steps <= 0):
        raise NonMonotonicTimestamp(path, int(np.flatnonzero(steps <= 0)[0]) + 3)
    keep = (intervals > IBI_MIN_S) & (intervals < IBI_MAX_S)
    offsets = np.ascontiguousarray(offsets[keep])
    intervals = np.ascontiguousarray(intervals[keep])
    offsets.setflags(write=False)
    intervals.setflags(write=False)
    return IbiSeries(start=_start_timestamp(start, tz_offset_minutes), offsets=offsets,
                     intervals=intervals, dropped=int((~keep).sum()))


def parse_physio_recording(directory, tz_offset_minutes: int = 0) -> PhysioRecording:
    """Load whichever wristband files exist in a physio/ directory."""
    directory = Path(directory)
    channels: Dict[str, PhysioChannel] = {}
    for kind in ('EDA', 'BVP', 'HR', 'ST'):
        file = directory / PHYSIO_FILES[kind]
        if file.exists():
            channels[kind] = parse_physio_channel(file, kind, tz_offset_minutes)
    acc_file = directory / PHYSIO_FILES['ACC']
    if acc_file.exists():
        for channel in parse_acc_channels(acc_file, tz_offset_minutes):
            channels[channel.kind] = channel
    ibi_file = directory / IBI_FILE
    ibi = parse_ibi(ibi_file, tz_offset_minutes) if ibi_file.exists() else None
    return PhysioRecording(channels=channels, ibi=ibi)


# --- canonical writers ----------------------------------------------------

def _seconds_text(timestamp: Timestamp) -> str:
    return repr(timestamp.utc_millis / 1000)


def _acc_text(value: float) -> str:
    counts = value * ACC_COUNTS_PER_G
    return str(int(counts)) if float(counts).is_integer() else repr(float(counts))


def write_physio_channel(channel: PhysioChannel, path) -> Path:
    """Write a single-column channel in the wristband export layout."""
    if channel.first_index:
        channel = replace(channel, start=channel.start.shifted(channel.first_index / channel.rate_hz),
                          first_index=0)
    lines = [_seconds_text(channel.start), repr(float(channel.rate_hz))]
    lines.extend(map(repr, channel.samples.tolist()))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    return path


def write_acc_channels(channels: Sequence[PhysioChannel], path) -> Path:
    """Write three axis channels of equal length to one ACC file."""
    x, y, z = channels
    start = _seconds_text(x.start)
    rate = repr(float(x.rate_hz))
    lines = [', '.join([start] * 3), ', '.join([rate] * 3)]
    lines.extend(f"{_acc_text(a)},{_acc_text(b)},{_acc_text(c)}"
                 for a, b, c in zip(x.samples.tolist(), y.samples.tolist(), z.samples.tolist()))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    return path


def write_ibi(ibi: IbiSeries, path) -> Path:
    lines = [f"{_seconds_text(ibi.start)}, IBI"]
    lines.extend(f"{o!r},{i!r}" for o, i in zip(ibi.offsets.tolist(), ibi.intervals.tolist()))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    return path


def write_event_log(log: EventLog, path) -> Path:
    """
    Write an EventLog in the canonical participant-directory layout.

    Args:
        log: Log to write
        path: Target directory (created if needed)

    Returns:
        The directory path
    """
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    meta = pd.DataFrame([{
        'participant': log.participant,
        'study_start_utc_ms': '' if log.study_start_ms is None else log.study_start_ms,
        'study_end_utc_ms': '' if log.study_end_ms is None else log.study_end_ms,
        'tz_offset_min': log.tz_offset_minutes,
    }], columns=list(META_COLUMNS))
    (directory / META_FILE).write_text(convert_df_to_csv(meta), encoding='utf-8')
    for name, spec in TABLES.items():
        table = log.table(name).loc[:, list(spec.columns)]
        (directory / spec.filename).write_text(convert_df_to_csv(table), encoding='utf-8')

    physio_dir = directory / 'physio'
    recording = log.physio
    if not recording.is_empty:
        for kind in ('EDA', 'BVP', 'HR', 'ST'):
            channel = recording.channel(kind)
            if channel is not None:
                write_physio_channel(channel, physio_dir / PHYSIO_FILES[kind])
        if all(kind in recording.channels for kind in ACC_KINDS):
            write_acc_channels([recording.channels[k] for k in ACC_KINDS], physio_dir / PHYSIO_FILES['ACC'])
        if recording.ibi is not None:
            write_ibi(recording.ibi, physio_dir / IBI_FILE)
    return directory


# --- windows ---------------------------------------------------------------

def _end_millis(end: Union[Timestamp, int]) -> int:
    return end.utc_millis if isinstance(end, Timestamp) else int(end)


def window_bounds(times_ms: np.ndarray, end_ms: int, duration_s: float) -> Tuple[int, int]:
    """Index range of sorted times inside [end - duration, end)."""
    if duration_s <= 0:
        raise ValueError(f"Window duration must be positive, got {duration_s}")
    low = end_ms - int(round(duration_s * 1000))
    return (int(np.searchsorted(times_ms, low, side='left')),
            int(np.searchsorted(times_ms, end_ms, side='left')))


def time_column(table: pd.DataFrame) -> str:
    for name in ('arrival_utc_ms', 'utc_ms'):
        if name in table.columns:
            return name
    raise ValueError("Table has no time column")


@singledispatch
def slice_window(source, end, duration: float):
    """
    Events or samples with time in [end - duration, end).

    Args:
        source: EventLog, event table, PhysioChannel, IbiSeries or PhysioRecording
        end: Right edge of the window (Timestamp or epoch milliseconds), excluded
        duration: Window length in seconds

    Returns:
        An object of the same type restricted to the window
    """
    raise TypeError(f"Cannot slice {type(source).__name__}")


@slice_window.register
def _(source: pd.DataFrame, end, duration: float) -> pd.DataFrame:
    times = source[time_column(source)].to_numpy()
    lo, hi = window_bounds(times, _end_millis(end), duration)
    return source.iloc[lo:hi]


@slice_window.register
def _(source: PhysioChannel, end, duration: float) -> PhysioChannel:
    if duration <= 0:
        raise ValueError(f"Window duration must be positive, got {duration}")
    end_ms = _end_millis(end)
    rate = source.rate_hz
    base = source.start.utc_millis
    # Sample k (absolute index) sits at base + 1000 k / rate
    lo_abs = math.ceil((end_ms - duration * 1000 - base) * rate / 1000 - 1e-9)
    hi_abs = math.ceil((end_ms - base) * rate / 1000 - 1e-9)
    lo = min(max(lo_abs - source.first_index, 0), len(source.samples))
    hi = min(max(hi_abs - source.first_index, 0), len(source.samples))
    return replace(source, samples=source.samples[lo:hi], first_index=source.first_index + lo)


@slice_window.register
def _(source: IbiSeries, end, duration: float) -> IbiSeries:
    end_ms = _end_millis(end)
    beat_ms = source.start.utc_millis + source.offsets * 1000.0
    lo, hi = window_bounds(beat_ms, end_ms, duration)
    return replace(source, offsets=source.offsets[lo:hi], intervals=source.intervals[lo:hi], dropped=0)


@slice_window.register
def _(source: PhysioRecording, end, duration: float) -> PhysioRecording:
    channels = {kind: slice_window(channel, end, duration) for kind, channel in source.channels.items()}
    ibi = slice_window(source.ibi, end, duration) if source.ibi is not None else None
    return PhysioRecording(channels=channels, ibi=ibi)


@slice_window.register
def _(source: EventLog, end, duration: float) -> EventLog:
    tables = {name: (slice_window(source.table(name), end, duration).reset_index(drop=True)
                     if spec.time_column else source.table(name))
              for name, spec in TABLES.items()}
    return replace(source, physio=slice_window(source.physio, end, duration), **tables)


def summarize_event_log(log: EventLog) -> Dict[str, object]:
    """Per-channel counts and data-quality notes for the ingest summary."""
    summary: Dict[str, object] = {'participant': log.participant}
    for name in TABLES:
        summary[name] = len(log.table(name))
    for kind in PHYSIO_KINDS:
        channel = log.physio.channel(kind)
        summary[f"physio_{kind}_samples"] = len(channel) if channel is not None else 0
    summary['ibi_intervals'] = len(log.physio.ibi) if log.physio.ibi is not None else 0
    summary['ibi_dropped'] = log.physio.ibi.dropped if log.physio.ibi is not None else 0
    summary['warnings'] = len(log.warnings)
    return summary
