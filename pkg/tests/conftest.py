"""
Shared fixtures: small hand-built event logs and a miniature generator config.
"""

import os
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from hypothesis import settings

from event_model import TABLES, EventLog, PhysioRecording, empty_table, write_event_log
from simulation import GeneratorConfig

settings.register_profile('default', max_examples=50, deadline=None)
settings.register_profile('thorough', max_examples=500, deadline=None)
settings.load_profile(os.getenv('HYPOTHESIS_PROFILE', 'default'))

MINUTE_MS = 60_000
# Monday 2020-01-27 00:00 UTC
DAY0_MS = 1_580_083_200_000

_DEFAULTS = {
    'notifications': {'tz_offset_min': 0, 'content_length': 10, 'contact_hash': ''},
    'app_events': {'app_name': '', 'tz_offset_min': 0},
    'screen_events': {'tz_offset_min': 0},
    'activity_events': {'confidence': 90, 'tz_offset_min': 0},
    'location_events': {'tz_offset_min': 0},
    'esm_responses': {'tz_offset_min': 0, 'social_role': 'private', 'interruptibility': 'private',
                      'valence': 3, 'arousal': 3},
}


def make_table(name: str, rows) -> pd.DataFrame:
    """An event table from row dicts; unspecified columns take harmless defaults."""
    spec = TABLES[name]
    if not rows:
        return empty_table(name)
    defaults = _DEFAULTS.get(name, {})
    records = []
    for i, row in enumerate(rows):
        record = dict(defaults)
        if name == 'notifications':
            record['id'] = f"n{i:04d}"
        record.update(row)
        records.append(record)
    frame = pd.DataFrame(records)
    for col in spec.optional_int_columns:
        if col not in frame.columns:
            frame[col] = pd.NA
    frame = frame.loc[:, list(spec.columns)]
    for col in spec.int_columns:
        frame[col] = frame[col].astype('int64')
    for col in spec.optional_int_columns:
        frame[col] = frame[col].astype('Int64')
    return frame.reset_index(drop=True)


def build_log(participant: str = 'P01', physio: PhysioRecording = None, **tables) -> EventLog:
    """EventLog with the given tables (lists of row dicts) and every other table empty."""
    frames = {name: make_table(name, tables.get(name, [])) for name in TABLES}
    return EventLog(participant=participant, physio=physio or PhysioRecording(), **frames)


@pytest.fixture
def make_log():
    return build_log


@pytest.fixture
def write_log(tmp_path):
    def _write(log: EventLog, name: str = None) -> Path:
        return write_event_log(log, tmp_path / (name or log.participant))
    return _write


@pytest.fixture
def responsive_log():
    """Three apps; every notification is answered after a known delay."""
    notifications, opens = [], []
    delays = {'com.whatsapp': 60, 'com.google.android.gm': 600, 'com.android.chrome': 3_000}
    for i in range(30):
        app = list(delays)[i % 3]
        arrival = DAY0_MS + 9 * 60 * MINUTE_MS + i * 20 * MINUTE_MS
        notifications.append({'app_package': app, 'arrival_utc_ms': arrival})
        opens.append({'app_package': app, 'utc_ms': arrival + delays[app] * 1000})
    opens.sort(key=lambda row: row['utc_ms'])
    return build_log(notifications=notifications, app_events=opens)


@pytest.fixture
def tiny_generator_config():
    return GeneratorConfig.model_validate({
        'seed': 11, 'n_participants': 2, 'days': 3,
        'calibration': {'enabled': False},
    })


@pytest.fixture
def rng():
    return np.random.default_rng(20200127)
